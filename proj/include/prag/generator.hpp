#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prag/common.hpp"
#include "prag/tokendb.hpp"

namespace prag {

// A retrieved neighbor as the generator consumes it: after shifting, the
// usable stream is chunk_tokens followed by continuation_tokens (2m tokens).
struct Neighbor {
    TokenChunk chunk_tokens;
    TokenChunk continuation_tokens;
    float distance = 0.0f;

    bool operator==(const Neighbor&) const = default;
};

using NextTokenDistribution = std::vector<double>;  // indexed by token id, sums to 1

struct ChunkOutput {
    std::vector<TokenId> tokens;
    std::vector<double> logprobs;
};

// Order-n (default 3) model with add-one smoothing: the context is the
// n-1 preceding tokens, PAD-filled at the sequence start.
class NgramModel {
public:
    NgramModel(int order, std::uint32_t vocab_size) : order_(order), vocab_(vocab_size) {
        if (order < 1) throw ConfigError("NgramModel: order must be >= 1");
        if (vocab_size < 2) throw ConfigError("NgramModel: vocab_size must be >= 2");
    }

    void train(const std::vector<std::vector<TokenId>>& documents) {
        for (const auto& doc : documents) {
            for (std::size_t i = 0; i < doc.size(); ++i) {
                auto& slot = counts_[context_key(doc, i)];
                ++slot.per_token[doc[i]];
                ++slot.total;
            }
        }
    }

    NextTokenDistribution next_distribution(std::span<const TokenId> ctx) const {
        std::uint64_t key = key_from_context(ctx);
        auto it = counts_.find(key);
        std::uint64_t total = it == counts_.end() ? 0 : it->second.total;
        NextTokenDistribution dist(vocab_, 1.0 / (total + vocab_));
        if (it != counts_.end()) {
            for (const auto& [token, count] : it->second.per_token) {
                dist[token] = static_cast<double>(count + 1) / (total + vocab_);
            }
        }
        return dist;
    }

    int order() const { return order_; }
    std::uint32_t vocab_size() const { return vocab_; }

private:
    struct ContextCounts {
        std::unordered_map<TokenId, std::uint32_t> per_token;
        std::uint64_t total = 0;
    };

    std::uint64_t context_key(const std::vector<TokenId>& doc, std::size_t i) const {
        std::uint64_t key = 0;
        for (int back = order_ - 1; back >= 1; --back) {
            TokenId t = (i >= static_cast<std::size_t>(back)) ? doc[i - back] : kPadToken;
            key = hash_combine(key, t + 1);
        }
        return key;
    }

    std::uint64_t key_from_context(std::span<const TokenId> ctx) const {
        std::uint64_t key = 0;
        for (int back = order_ - 1; back >= 1; --back) {
            TokenId t = (ctx.size() >= static_cast<std::size_t>(back)) ? ctx[ctx.size() - back]
                                                                       : kPadToken;
            key = hash_combine(key, t + 1);
        }
        return key;
    }

    int order_;
    std::uint32_t vocab_;
    std::unordered_map<std::uint64_t, ContextCounts> counts_;
};

// Softmax(-distance) weights over neighbors, normalized to sum to 1.
inline std::vector<double> neighbor_weights(const std::vector<Neighbor>& neighbors) {
    std::vector<double> w(neighbors.size());
    double max_neg = -std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        max_neg = std::max(max_neg, -static_cast<double>(neighbors[i].distance));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        w[i] = std::exp(-static_cast<double>(neighbors[i].distance) - max_neg);
        total += w[i];
    }
    for (auto& x : w) x /= total;
    return w;
}

// P = (1-lambda) * base + lambda * P_ret, where P_ret is the add-one-smoothed
// distribution of the neighbors' continuation tokens at `offset` (the token
// position within the chunk being generated), neighbors weighted by
// softmax(-distance). With no neighbors, P == base.
inline NextTokenDistribution knn_next_distribution(const NextTokenDistribution& base,
                                                   const std::vector<Neighbor>& neighbors,
                                                   std::size_t offset, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("knn_next_distribution: lambda not in [0,1]");
    if (neighbors.empty() || lambda == 0.0) return base;
    std::size_t vocab = base.size();
    auto weights = neighbor_weights(neighbors);
    NextTokenDistribution ret(vocab, 1.0 / (1.0 + vocab));
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        const auto& cont = neighbors[i].continuation_tokens;
        TokenId aligned = offset < cont.size() ? cont[offset] : kPadToken;
        ret[aligned] += weights[i] / (1.0 + vocab);
    }
    NextTokenDistribution mixed(vocab);
    for (std::size_t t = 0; t < vocab; ++t) {
        mixed[t] = (1.0 - lambda) * base[t] + lambda * ret[t];
    }
    return mixed;
}

inline TokenId argmax_token(const NextTokenDistribution& dist) {
    TokenId best = 0;
    double best_p = -1.0;
    for (std::size_t t = 0; t < dist.size(); ++t) {
        if (dist[t] > best_p) { best_p = dist[t]; best = static_cast<TokenId>(t); }
    }
    return best;
}

// Generation contract the pipeline drives. Conditioning swaps exactly at
// chunk boundaries; the pipeline sets it before each generate_chunk call.
class Generator {
public:
    virtual ~Generator() = default;

    virtual void set_conditioning(std::vector<Neighbor> neighbors) = 0;
    virtual void clear_conditioning() = 0;

    // Produces m' tokens for the chunk starting at position ctx.size().
    // Greedy argmax decoding; when `teacher` is non-null, the ground-truth
    // tokens are consumed instead and their log-probabilities recorded.
    virtual ChunkOutput generate_chunk(const std::vector<TokenId>& ctx, std::uint32_t m_prime,
                                       const TokenId* teacher = nullptr) = 0;

    virtual std::uint32_t vocab_size() const = 0;
};

// Retrieval-conditioned kNN/n-gram language model. Optional per-token
// pacing (a + b * position seconds of sleep) stands in for the compute cost
// of a real model so timing experiments have something to measure.
class KnnNgramGenerator : public Generator {
public:
    KnnNgramGenerator(std::shared_ptr<const NgramModel> base, double lambda,
                      double pace_a_s = 0.0, double pace_b_s_per_token = 0.0)
        : base_(std::move(base)), lambda_(lambda), pace_a_s_(pace_a_s), pace_b_s_(pace_b_s_per_token) {
        if (lambda_ < 0.0 || lambda_ > 1.0) throw ConfigError("KnnNgramGenerator: lambda not in [0,1]");
    }

    void set_conditioning(std::vector<Neighbor> neighbors) override {
        conditioning_ = std::move(neighbors);
    }
    void clear_conditioning() override { conditioning_.clear(); }

    ChunkOutput generate_chunk(const std::vector<TokenId>& ctx, std::uint32_t m_prime,
                               const TokenId* teacher = nullptr) override {
        ChunkOutput out;
        std::vector<TokenId> seq = ctx;
        for (std::uint32_t o = 0; o < m_prime; ++o) {
            pace(seq.size());
            auto base = base_->next_distribution(seq);
            auto dist = knn_next_distribution(base, conditioning_, o, lambda_);
            TokenId token = teacher ? teacher[o] : argmax_token(dist);
            out.tokens.push_back(token);
            out.logprobs.push_back(std::log(dist[token]));
            seq.push_back(token);
        }
        return out;
    }

    std::uint32_t vocab_size() const override { return base_->vocab_size(); }

    const std::vector<Neighbor>& conditioning() const { return conditioning_; }

private:
    void pace(std::size_t position) const {
        double s = pace_a_s_ + pace_b_s_ * static_cast<double>(position);
        if (s > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
    }

    std::shared_ptr<const NgramModel> base_;
    double lambda_;
    double pace_a_s_;
    double pace_b_s_;
    std::vector<Neighbor> conditioning_;
};

// Synthetic latency-profile generator: emits (position mod vocab) and sleeps
// a + b * position per token, so per-token cost is affine in position.
class SyntheticGenerator : public Generator {
public:
    SyntheticGenerator(double a_s, double b_s_per_token, std::uint32_t vocab = kByteVocabSize)
        : a_s_(a_s), b_s_(b_s_per_token), vocab_(vocab) {}

    void set_conditioning(std::vector<Neighbor> neighbors) override {
        conditioning_ = std::move(neighbors);
    }
    void clear_conditioning() override { conditioning_.clear(); }

    ChunkOutput generate_chunk(const std::vector<TokenId>& ctx, std::uint32_t m_prime,
                               const TokenId* teacher = nullptr) override {
        ChunkOutput out;
        std::size_t position = ctx.size();
        double uniform_logprob = -std::log(static_cast<double>(vocab_));
        for (std::uint32_t o = 0; o < m_prime; ++o, ++position) {
            double s = a_s_ + b_s_ * static_cast<double>(position);
            if (s > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
            out.tokens.push_back(teacher ? teacher[o]
                                         : static_cast<TokenId>(position % vocab_));
            out.logprobs.push_back(uniform_logprob);
        }
        return out;
    }

    std::uint32_t vocab_size() const override { return vocab_; }

private:
    double a_s_;
    double b_s_;
    std::uint32_t vocab_;
    std::vector<Neighbor> conditioning_;
};

struct GeneratorConfig {
    std::string type = "knn_ngram";  // or "synthetic"
    int order = 3;
    double lambda = 0.5;
    double a_ms = 0.0;
    double b_ms_per_token = 0.0;
};

inline GeneratorConfig load_generator_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid generator config JSON in " + path + ": " + e.what());
    }
    GeneratorConfig cfg;
    cfg.type = j.value("type", cfg.type);
    cfg.order = j.value("order", cfg.order);
    cfg.lambda = j.value("lambda", cfg.lambda);
    cfg.a_ms = j.value("a_ms", cfg.a_ms);
    cfg.b_ms_per_token = j.value("b_ms_per_token", cfg.b_ms_per_token);
    if (cfg.type != "knn_ngram" && cfg.type != "synthetic") {
        throw ConfigError("unknown generator type: " + cfg.type);
    }
    return cfg;
}

// Builds a generator from config; knn_ngram trains its base model on the
// given documents (typically the database corpus or a training split).
inline std::unique_ptr<Generator> make_generator(const GeneratorConfig& cfg,
                                                 const std::vector<std::vector<TokenId>>& train_docs,
                                                 std::uint32_t vocab = kByteVocabSize) {
    if (cfg.type == "synthetic") {
        return std::make_unique<SyntheticGenerator>(cfg.a_ms * 1e-3, cfg.b_ms_per_token * 1e-3, vocab);
    }
    auto model = std::make_shared<NgramModel>(cfg.order, vocab);
    model->train(train_docs);
    return std::make_unique<KnnNgramGenerator>(std::move(model), cfg.lambda, cfg.a_ms * 1e-3,
                                               cfg.b_ms_per_token * 1e-3);
}

}  // namespace prag
