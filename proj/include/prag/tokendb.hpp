#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "prag/common.hpp"

namespace prag {

// A token chunk is exactly m tokens; PAD only appears as a suffix.
using TokenChunk = std::vector<TokenId>;

// The database value (S_i, F_i): a chunk plus its in-document continuation.
struct ChunkRecord {
    std::uint64_t chunk_id = 0;
    std::uint64_t doc_id = 0;
    TokenChunk tokens;        // S_i
    TokenChunk continuation;  // F_i; all-PAD when S_i ends the document

    bool operator==(const ChunkRecord&) const = default;
};

struct Corpus {
    std::vector<std::vector<TokenId>> documents;
    std::uint32_t vocab_size = kByteVocabSize;
    std::string tokenizer_id = "byte-v1";
};

// Segments each document into m-token chunks in order. The final partial
// chunk is PAD-padded; continuations never cross document boundaries.
inline std::vector<ChunkRecord> build_chunks(const Corpus& corpus, std::uint32_t m) {
    if (m < 1) throw ConfigError("build_chunks: m must be >= 1");
    std::vector<ChunkRecord> records;
    std::uint64_t next_id = 0;
    for (std::size_t doc = 0; doc < corpus.documents.size(); ++doc) {
        const auto& tokens = corpus.documents[doc];
        if (tokens.empty()) continue;
        std::size_t n_chunks = (tokens.size() + m - 1) / m;
        for (std::size_t c = 0; c < n_chunks; ++c) {
            ChunkRecord rec;
            rec.chunk_id = next_id++;
            rec.doc_id = doc;
            rec.tokens.assign(m, kPadToken);
            for (std::size_t i = 0; i < m; ++i) {
                std::size_t pos = c * m + i;
                if (pos < tokens.size()) rec.tokens[i] = tokens[pos];
            }
            rec.continuation.assign(m, kPadToken);
            for (std::size_t i = 0; i < m; ++i) {
                std::size_t pos = (c + 1) * m + i;
                if (pos < tokens.size()) rec.continuation[i] = tokens[pos];
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

// Fixed random unit vector for a token id, derived from (seed, token) only.
inline std::vector<float> token_unit_vector(TokenId token, std::uint32_t d, std::uint64_t seed) {
    SplitMix64 rng(hash_combine(seed, token));
    std::vector<double> v(d);
    double norm_sq = 0.0;
    for (std::uint32_t i = 0; i < d; ++i) {
        v[i] = rng.next_gaussian();
        norm_sq += v[i] * v[i];
    }
    double norm = std::sqrt(norm_sq);
    std::vector<float> out(d);
    if (norm < 1e-12) {
        out[0] = 1.0f;
        return out;
    }
    for (std::uint32_t i = 0; i < d; ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

// Caches token vectors so repeated chunk embeddings stay cheap. One embedder
// per (d, seed); immutable after warm-up from the caller's point of view.
class ChunkEmbedder {
public:
    ChunkEmbedder(std::uint32_t d, std::uint64_t seed) : d_(d), seed_(seed) {
        if (d < 2) throw ConfigError("ChunkEmbedder: d must be >= 2");
    }

    std::uint32_t dim() const { return d_; }
    std::uint64_t seed() const { return seed_; }

    // Bag-of-tokens embedding: L2-normalized sum of the non-PAD token
    // vectors. An all-PAD chunk returns the basis vector e_0.
    std::vector<float> embed(const TokenChunk& chunk) const {
        std::vector<double> acc(d_, 0.0);
        for (TokenId t : chunk) {
            if (t == kPadToken) continue;
            const auto& tv = token_vector(t);
            for (std::uint32_t i = 0; i < d_; ++i) acc[i] += tv[i];
        }
        double norm_sq = 0.0;
        for (double x : acc) norm_sq += x * x;
        std::vector<float> out(d_, 0.0f);
        if (norm_sq < 1e-24) {
            out[0] = 1.0f;
            return out;
        }
        double norm = std::sqrt(norm_sq);
        for (std::uint32_t i = 0; i < d_; ++i) out[i] = static_cast<float>(acc[i] / norm);
        return out;
    }

private:
    const std::vector<float>& token_vector(TokenId t) const {
        if (t >= cache_.size()) cache_.resize(t + 1);
        if (cache_[t].empty()) cache_[t] = token_unit_vector(t, d_, seed_);
        return cache_[t];
    }

    std::uint32_t d_;
    std::uint64_t seed_;
    mutable std::vector<std::vector<float>> cache_;
};

inline std::vector<float> embed_chunk(const TokenChunk& chunk, std::uint32_t d, std::uint64_t seed) {
    return ChunkEmbedder(d, seed).embed(chunk);
}

// Immutable chunk database: records plus their embeddings, aligned by
// chunk_id (record i has chunk_id i).
struct Database {
    std::uint32_t m = kDefaultChunkSize;
    std::uint32_t d = kDefaultDim;
    std::vector<ChunkRecord> records;
    std::vector<std::vector<float>> embeddings;

    std::size_t size() const { return records.size(); }
};

inline Database build_database(const Corpus& corpus, std::uint32_t m, std::uint32_t d, std::uint64_t seed) {
    Database db;
    db.m = m;
    db.d = d;
    db.records = build_chunks(corpus, m);
    ChunkEmbedder embedder(d, seed);
    db.embeddings.reserve(db.records.size());
    for (const auto& rec : db.records) db.embeddings.push_back(embedder.embed(rec.tokens));
    return db;
}

// Rebuilds per-document token streams from chunk records: non-PAD tokens
// concatenated in chunk_id order (the partition property).
inline std::vector<std::vector<TokenId>> documents_from_database(const Database& db) {
    std::vector<std::vector<TokenId>> docs;
    for (const auto& rec : db.records) {
        if (rec.doc_id >= docs.size()) docs.resize(rec.doc_id + 1);
        for (TokenId t : rec.tokens) {
            if (t != kPadToken) docs[rec.doc_id].push_back(t);
        }
    }
    return docs;
}

namespace detail {

inline constexpr char kDbMagic[8] = {'P', 'R', 'A', 'G', 'D', 'B', '0', '1'};
inline constexpr std::uint32_t kDbVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, std::uint64_t& offset, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) {
        throw FormatError(std::string("truncated or unreadable ") + what + " at offset " +
                          std::to_string(offset));
    }
    offset += sizeof(T);
    return v;
}

}  // namespace detail

// Little-endian binary layout: magic "PRAGDB01", u32 version, u32 m, u32 d,
// u64 record count; per record u64 chunk_id, u64 doc_id, m*u32 tokens,
// m*u32 continuation, d*f32 embedding.
inline void store_database(const Database& db, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(detail::kDbMagic, sizeof(detail::kDbMagic));
    detail::write_pod(os, detail::kDbVersion);
    detail::write_pod(os, db.m);
    detail::write_pod(os, db.d);
    detail::write_pod(os, static_cast<std::uint64_t>(db.records.size()));
    for (std::size_t i = 0; i < db.records.size(); ++i) {
        const auto& rec = db.records[i];
        detail::write_pod(os, rec.chunk_id);
        detail::write_pod(os, rec.doc_id);
        os.write(reinterpret_cast<const char*>(rec.tokens.data()), db.m * sizeof(TokenId));
        os.write(reinterpret_cast<const char*>(rec.continuation.data()), db.m * sizeof(TokenId));
        os.write(reinterpret_cast<const char*>(db.embeddings[i].data()), db.d * sizeof(float));
    }
    if (!os) throw FormatError("write failed: " + path);
}

inline Database load_database(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    std::uint64_t offset = 0;
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, detail::kDbMagic, 8) != 0) {
        throw FormatError("bad database magic at offset 0 in " + path);
    }
    offset = 8;
    auto version = detail::read_pod<std::uint32_t>(is, offset, "version");
    if (version != detail::kDbVersion) {
        throw FormatError("unsupported database version " + std::to_string(version) +
                          " at offset 8 in " + path);
    }
    Database db;
    db.m = detail::read_pod<std::uint32_t>(is, offset, "m");
    db.d = detail::read_pod<std::uint32_t>(is, offset, "d");
    auto count = detail::read_pod<std::uint64_t>(is, offset, "record count");
    db.records.resize(count);
    db.embeddings.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto& rec = db.records[i];
        rec.chunk_id = detail::read_pod<std::uint64_t>(is, offset, "chunk_id");
        rec.doc_id = detail::read_pod<std::uint64_t>(is, offset, "doc_id");
        rec.tokens.resize(db.m);
        is.read(reinterpret_cast<char*>(rec.tokens.data()), db.m * sizeof(TokenId));
        rec.continuation.resize(db.m);
        is.read(reinterpret_cast<char*>(rec.continuation.data()), db.m * sizeof(TokenId));
        db.embeddings[i].resize(db.d);
        is.read(reinterpret_cast<char*>(db.embeddings[i].data()), db.d * sizeof(float));
        if (!is) {
            throw FormatError("truncated record " + std::to_string(i) + " at offset " +
                              std::to_string(offset) + " in " + path);
        }
        offset += 2ull * db.m * sizeof(TokenId) + db.d * sizeof(float);
    }
    return db;
}

}  // namespace prag
