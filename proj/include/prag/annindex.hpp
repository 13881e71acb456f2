#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "prag/common.hpp"
#include "prag/tokendb.hpp"

namespace prag {

struct PostingEntry {
    std::uint64_t chunk_id = 0;
    std::vector<std::uint8_t> code;  // n_subquantizers bytes
};

struct IvfIndex {
    std::uint32_t nlist = 0;
    std::uint32_t d = 0;
    std::vector<std::vector<float>> centroids;      // nlist x d
    std::vector<std::vector<PostingEntry>> postings;  // nlist lists
};

struct PqCodebook {
    std::uint32_t n_subquantizers = 0;
    std::uint32_t sub_dim = 0;  // d / n_subquantizers
    // codewords[sq][code] is a sub_dim vector; 256 codes per subquantizer.
    std::vector<std::vector<std::vector<float>>> codewords;
};

struct SearchParams {
    std::uint32_t nprobe = 1;
    std::uint32_t k = 2;
    bool exact_rerank = false;
};

struct ScoredId {
    std::uint64_t chunk_id = 0;
    float distance = 0.0f;
};

struct SearchResult {
    std::vector<ScoredId> neighbors;  // ascending distance, ties by lower id
    std::uint64_t scanned_vectors = 0;
    std::uint32_t scanned_lists = 0;
};

namespace detail {

inline void sort_and_truncate(std::vector<ScoredId>& cands, std::uint32_t k) {
    std::sort(cands.begin(), cands.end(), [](const ScoredId& a, const ScoredId& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.chunk_id < b.chunk_id;
    });
    if (cands.size() > k) cands.resize(k);
}

// Lloyd iterations with k-means++ seeding. Empty clusters are re-seeded from
// the point farthest from its assigned centroid. Deterministic given seed.
inline std::vector<std::vector<float>> kmeans(std::span<const float* const> points,
                                              std::uint32_t dim, std::uint32_t n_clusters,
                                              std::uint64_t seed, int iterations = 25) {
    std::size_t n = points.size();
    if (n < n_clusters) throw ConfigError("kmeans: fewer points than clusters");
    SplitMix64 rng(seed);

    std::vector<std::vector<float>> centroids;
    centroids.reserve(n_clusters);
    std::vector<float> min_dist(n, std::numeric_limits<float>::max());
    std::size_t first = rng.next_below(n);
    centroids.emplace_back(points[first], points[first] + dim);
    while (centroids.size() < n_clusters) {
        const float* last = centroids.back().data();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            float dsq = squared_l2(points[i], last, dim);
            if (dsq < min_dist[i]) min_dist[i] = dsq;
            total += min_dist[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.next_double() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += min_dist[i];
                if (acc >= r) { pick = i; break; }
            }
        } else {
            pick = rng.next_below(n);
        }
        centroids.emplace_back(points[pick], points[pick] + dim);
    }

    std::vector<std::uint32_t> assign(n, 0);
    std::vector<float> assign_dist(n, 0.0f);
    for (int iter = 0; iter < iterations; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            float best = std::numeric_limits<float>::max();
            std::uint32_t best_c = 0;
            for (std::uint32_t c = 0; c < n_clusters; ++c) {
                float dsq = squared_l2(points[i], centroids[c].data(), dim);
                if (dsq < best) { best = dsq; best_c = c; }
            }
            assign[i] = best_c;
            assign_dist[i] = best;
        }
        std::vector<std::vector<double>> sums(n_clusters, std::vector<double>(dim, 0.0));
        std::vector<std::uint64_t> counts(n_clusters, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::uint32_t j = 0; j < dim; ++j) sums[assign[i]][j] += points[i][j];
        }
        for (std::uint32_t c = 0; c < n_clusters; ++c) {
            if (counts[c] == 0) {
                // Re-seed from the farthest point.
                std::size_t far = 0;
                float far_d = -1.0f;
                for (std::size_t i = 0; i < n; ++i) {
                    if (assign_dist[i] > far_d) { far_d = assign_dist[i]; far = i; }
                }
                centroids[c].assign(points[far], points[far] + dim);
                assign_dist[far] = 0.0f;
            } else {
                for (std::uint32_t j = 0; j < dim; ++j) {
                    centroids[c][j] = static_cast<float>(sums[c][j] / counts[c]);
                }
            }
        }
    }
    return centroids;
}

inline std::uint32_t nearest_centroid(const std::vector<std::vector<float>>& centroids,
                                      const float* v, std::uint32_t dim) {
    float best = std::numeric_limits<float>::max();
    std::uint32_t best_c = 0;
    for (std::uint32_t c = 0; c < centroids.size(); ++c) {
        float dsq = squared_l2(v, centroids[c].data(), dim);
        if (dsq < best) { best = dsq; best_c = c; }
    }
    return best_c;
}

// Deterministic subsample of point indices for k-means training.
inline std::vector<std::size_t> training_sample(std::size_t n, std::size_t cap, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n <= cap) return idx;
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < cap; ++i) {
        std::size_t j = i + rng.next_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(cap);
    return idx;
}

}  // namespace detail

struct TrainParams {
    std::uint32_t nlist = 64;
    std::uint32_t n_subquantizers = 0;  // 0 -> d / 4
    std::uint64_t seed = 7;
    int kmeans_iterations = 25;
    // Lloyd iterations run on at most this many sampled vectors; the final
    // assignment always covers the full set.
    std::size_t train_sample_cap = 32768;
};

// Trains IVF centroids and PQ codebooks (k-means over residuals), then
// encodes and assigns every vector to exactly one posting list.
inline std::pair<IvfIndex, PqCodebook> train_index(const std::vector<std::vector<float>>& embeddings,
                                                   TrainParams params) {
    if (embeddings.empty()) throw ConfigError("train_index: empty embedding set");
    std::uint32_t d = static_cast<std::uint32_t>(embeddings[0].size());
    if (embeddings.size() < params.nlist) {
        throw ConfigError("train_index: nlist exceeds number of vectors");
    }
    std::uint32_t nsq = params.n_subquantizers ? params.n_subquantizers : std::max(1u, d / 4);
    if (d % nsq != 0) throw ConfigError("train_index: d not divisible by n_subquantizers");
    std::uint32_t sub_dim = d / nsq;

    std::size_t n = embeddings.size();
    auto sample = detail::training_sample(n, params.train_sample_cap, params.seed ^ 0x5a5a);
    std::vector<const float*> sample_ptrs(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) sample_ptrs[i] = embeddings[sample[i]].data();

    IvfIndex index;
    index.nlist = params.nlist;
    index.d = d;
    index.centroids = detail::kmeans(sample_ptrs, d, params.nlist, params.seed, params.kmeans_iterations);
    index.postings.resize(params.nlist);

    // Residuals (vector minus assigned centroid) for PQ training and encoding.
    std::vector<std::uint32_t> assignment(n);
    std::vector<std::vector<float>> residuals(n, std::vector<float>(d));
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t c = detail::nearest_centroid(index.centroids, embeddings[i].data(), d);
        assignment[i] = c;
        for (std::uint32_t j = 0; j < d; ++j) residuals[i][j] = embeddings[i][j] - index.centroids[c][j];
    }

    PqCodebook codebook;
    codebook.n_subquantizers = nsq;
    codebook.sub_dim = sub_dim;
    codebook.codewords.resize(nsq);
    std::size_t pq_clusters = std::min<std::size_t>(256, n);
    for (std::uint32_t sq = 0; sq < nsq; ++sq) {
        std::vector<const float*> sub_ptrs(sample.size());
        for (std::size_t i = 0; i < sample.size(); ++i) {
            sub_ptrs[i] = residuals[sample[i]].data() + sq * sub_dim;
        }
        std::size_t clusters = std::min(pq_clusters, sub_ptrs.size());
        auto words = detail::kmeans(sub_ptrs, sub_dim, static_cast<std::uint32_t>(clusters),
                                    hash_combine(params.seed, sq + 1), params.kmeans_iterations);
        words.resize(256, std::vector<float>(sub_dim, 0.0f));  // unused tail codes stay zero
        codebook.codewords[sq] = std::move(words);
    }

    for (std::size_t i = 0; i < n; ++i) {
        PostingEntry entry;
        entry.chunk_id = i;
        entry.code.resize(nsq);
        for (std::uint32_t sq = 0; sq < nsq; ++sq) {
            const float* sub = residuals[i].data() + sq * sub_dim;
            float best = std::numeric_limits<float>::max();
            std::uint32_t best_code = 0;
            for (std::uint32_t code = 0; code < pq_clusters; ++code) {
                float dsq = squared_l2(sub, codebook.codewords[sq][code].data(), sub_dim);
                if (dsq < best) { best = dsq; best_code = code; }
            }
            entry.code[sq] = static_cast<std::uint8_t>(best_code);
        }
        index.postings[assignment[i]].push_back(std::move(entry));
    }
    return {std::move(index), std::move(codebook)};
}

// Exact top-k by full-precision squared L2, ties broken by lower chunk_id.
inline SearchResult brute_force_search(const std::vector<std::vector<float>>& embeddings,
                                       const std::vector<float>& query, std::uint32_t k) {
    if (k < 1) throw ConfigError("brute_force_search: k must be >= 1");
    SearchResult result;
    result.neighbors.reserve(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        result.neighbors.push_back(
            {i, squared_l2(embeddings[i].data(), query.data(), query.size())});
    }
    result.scanned_vectors = embeddings.size();
    result.scanned_lists = 0;
    detail::sort_and_truncate(result.neighbors, k);
    return result;
}

// IVF-PQ search: probes the nprobe nearest lists and ranks candidates by PQ
// asymmetric distance. With exact_rerank, candidate distances are recomputed
// at full precision from `embeddings` (required non-null in that case).
inline SearchResult search(const IvfIndex& index, const PqCodebook& codebook,
                           const std::vector<float>& query, SearchParams params,
                           const std::vector<std::vector<float>>* embeddings = nullptr) {
    if (params.k < 1) throw ConfigError("search: k must be >= 1");
    if (params.nprobe < 1 || params.nprobe > index.nlist) {
        throw ConfigError("search: nprobe out of [1, nlist]");
    }
    if (params.exact_rerank && embeddings == nullptr) {
        throw ConfigError("search: exact_rerank requires raw embeddings");
    }
    std::uint32_t d = index.d;
    std::uint32_t nsq = codebook.n_subquantizers;
    std::uint32_t sub_dim = codebook.sub_dim;

    // Rank lists by centroid distance; probe the closest nprobe.
    std::vector<std::pair<float, std::uint32_t>> list_order(index.nlist);
    for (std::uint32_t c = 0; c < index.nlist; ++c) {
        list_order[c] = {squared_l2(query.data(), index.centroids[c].data(), d), c};
    }
    std::sort(list_order.begin(), list_order.end());

    SearchResult result;
    result.scanned_lists = std::min(params.nprobe, index.nlist);
    std::vector<float> table(nsq * 256);
    std::vector<float> residual(d);
    for (std::uint32_t p = 0; p < result.scanned_lists; ++p) {
        std::uint32_t list = list_order[p].second;
        const auto& entries = index.postings[list];
        if (entries.empty()) continue;
        // Asymmetric distance tables on the query residual w.r.t. this list.
        for (std::uint32_t j = 0; j < d; ++j) residual[j] = query[j] - index.centroids[list][j];
        for (std::uint32_t sq = 0; sq < nsq; ++sq) {
            const float* sub = residual.data() + sq * sub_dim;
            for (std::uint32_t code = 0; code < 256; ++code) {
                table[sq * 256 + code] =
                    squared_l2(sub, codebook.codewords[sq][code].data(), sub_dim);
            }
        }
        for (const auto& entry : entries) {
            float dist = 0.0f;
            for (std::uint32_t sq = 0; sq < nsq; ++sq) dist += table[sq * 256 + entry.code[sq]];
            result.neighbors.push_back({entry.chunk_id, dist});
        }
        result.scanned_vectors += entries.size();
    }
    if (params.exact_rerank) {
        for (auto& cand : result.neighbors) {
            cand.distance =
                squared_l2((*embeddings)[cand.chunk_id].data(), query.data(), query.size());
        }
    }
    detail::sort_and_truncate(result.neighbors, params.k);
    return result;
}

// |approx ∩ exact| / |exact| over chunk_id sets; defined as 1.0 when the
// exact set is empty.
inline double recall_at_k(const SearchResult& approx, const SearchResult& exact) {
    if (exact.neighbors.empty()) return 1.0;
    std::size_t hits = 0;
    for (const auto& e : exact.neighbors) {
        for (const auto& a : approx.neighbors) {
            if (a.chunk_id == e.chunk_id) { ++hits; break; }
        }
    }
    return static_cast<double>(hits) / exact.neighbors.size();
}

namespace detail {
inline constexpr char kIdxMagic[8] = {'P', 'R', 'A', 'G', 'I', 'X', '0', '1'};
inline constexpr std::uint32_t kIdxVersion = 1;
}  // namespace detail

inline void store_index(const IvfIndex& index, const PqCodebook& codebook, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(detail::kIdxMagic, 8);
    detail::write_pod(os, detail::kIdxVersion);
    detail::write_pod(os, index.nlist);
    detail::write_pod(os, index.d);
    detail::write_pod(os, codebook.n_subquantizers);
    for (const auto& c : index.centroids) {
        os.write(reinterpret_cast<const char*>(c.data()), index.d * sizeof(float));
    }
    for (const auto& sq : codebook.codewords) {
        for (const auto& w : sq) {
            os.write(reinterpret_cast<const char*>(w.data()), codebook.sub_dim * sizeof(float));
        }
    }
    for (const auto& list : index.postings) {
        detail::write_pod(os, static_cast<std::uint64_t>(list.size()));
        for (const auto& entry : list) {
            detail::write_pod(os, entry.chunk_id);
            os.write(reinterpret_cast<const char*>(entry.code.data()), entry.code.size());
        }
    }
    if (!os) throw FormatError("write failed: " + path);
}

inline std::pair<IvfIndex, PqCodebook> load_index(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kIdxMagic, 8) != 0) {
        throw FormatError("bad index magic at offset 0 in " + path);
    }
    std::uint64_t offset = 8;
    auto version = detail::read_pod<std::uint32_t>(is, offset, "version");
    if (version != detail::kIdxVersion) {
        throw FormatError("unsupported index version " + std::to_string(version) + " in " + path);
    }
    IvfIndex index;
    PqCodebook codebook;
    index.nlist = detail::read_pod<std::uint32_t>(is, offset, "nlist");
    index.d = detail::read_pod<std::uint32_t>(is, offset, "d");
    codebook.n_subquantizers = detail::read_pod<std::uint32_t>(is, offset, "n_subquantizers");
    if (codebook.n_subquantizers == 0 || index.d % codebook.n_subquantizers != 0) {
        throw FormatError("invalid n_subquantizers in " + path);
    }
    codebook.sub_dim = index.d / codebook.n_subquantizers;
    index.centroids.assign(index.nlist, std::vector<float>(index.d));
    for (auto& c : index.centroids) {
        is.read(reinterpret_cast<char*>(c.data()), index.d * sizeof(float));
        if (!is) throw FormatError("truncated centroids at offset " + std::to_string(offset));
        offset += index.d * sizeof(float);
    }
    codebook.codewords.assign(codebook.n_subquantizers,
                              std::vector<std::vector<float>>(256, std::vector<float>(codebook.sub_dim)));
    for (auto& sq : codebook.codewords) {
        for (auto& w : sq) {
            is.read(reinterpret_cast<char*>(w.data()), codebook.sub_dim * sizeof(float));
            if (!is) throw FormatError("truncated codebook at offset " + std::to_string(offset));
            offset += codebook.sub_dim * sizeof(float);
        }
    }
    index.postings.resize(index.nlist);
    for (auto& list : index.postings) {
        auto len = detail::read_pod<std::uint64_t>(is, offset, "posting list length");
        list.resize(len);
        for (auto& entry : list) {
            entry.chunk_id = detail::read_pod<std::uint64_t>(is, offset, "posting chunk_id");
            entry.code.resize(codebook.n_subquantizers);
            is.read(reinterpret_cast<char*>(entry.code.data()), entry.code.size());
            if (!is) throw FormatError("truncated posting code at offset " + std::to_string(offset));
            offset += entry.code.size();
        }
    }
    return {std::move(index), std::move(codebook)};
}

}  // namespace prag
