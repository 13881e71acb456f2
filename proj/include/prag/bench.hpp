#pragma once

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "prag/annindex.hpp"
#include "prag/generator.hpp"
#include "prag/perfmodel.hpp"
#include "prag/pipeline.hpp"
#include "prag/tokendb.hpp"

namespace prag {

// Shared inputs for the experiment suite. The generator is reused across
// runs (runs are sequential; conditioning is reset by each run).
struct BenchContext {
    const Database* db = nullptr;
    const IvfIndex* index = nullptr;
    const PqCodebook* codebook = nullptr;
    std::uint64_t embed_seed = 7;
    Generator* generator = nullptr;
    PerfModel perf;
    std::vector<TokenId> eval_tokens;  // prompt chunk + scored tokens
    std::vector<TokenId> prompt;       // prompt for timed runs
    int runs = 5;
    double safety_margin = 0.10;
};

struct ParetoRow {
    std::string mode;
    std::uint32_t interval = 0;
    std::string nprobe_policy;
    double latency_s = 0.0;
    double perplexity = 0.0;
    bool failed = false;
};

inline std::string policy_label(const NprobePolicy& policy) {
    return policy.auto_mode ? "auto" : "fixed(" + std::to_string(policy.fixed_nprobe) + ")";
}

namespace detail {

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace detail

// Runs one config: median-of-runs latency plus the deterministic
// teacher-forced perplexity under the same conditioning schedule.
inline ParetoRow run_config(const BenchContext& ctx, const PipelineConfig& config) {
    ParetoRow row;
    row.mode = mode_name(config.mode);
    row.interval = config.interval;
    row.nprobe_policy = policy_label(config.nprobe_policy);
    try {
        LocalRetriever retriever(*ctx.db, *ctx.index, *ctx.codebook, ctx.embed_seed,
                                 ctx.perf.retrieval, ctx.safety_margin);
        Retriever* r = config.mode == PipelineMode::none ? nullptr : &retriever;
        PipelineEngine engine(*ctx.generator, r, &ctx.perf.inference);
        std::vector<double> latencies;
        for (int i = 0; i < ctx.runs; ++i) {
            latencies.push_back(engine.run(config, ctx.prompt).total_latency_s);
        }
        row.latency_s = detail::median_of(latencies);
        row.perplexity =
            evaluate_perplexity(config, *ctx.generator, r, ctx.eval_tokens, &ctx.perf.inference);
    } catch (const std::exception&) {
        row.failed = true;
    }
    return row;
}

inline std::vector<ParetoRow> pareto_sweep(const BenchContext& ctx,
                                           const std::vector<PipelineConfig>& grid) {
    std::vector<ParetoRow> rows;
    for (const auto& config : grid) rows.push_back(run_config(ctx, config));
    std::sort(rows.begin(), rows.end(), [](const ParetoRow& a, const ParetoRow& b) {
        if (a.mode != b.mode) return a.mode < b.mode;
        if (a.interval != b.interval) return a.interval < b.interval;
        return a.nprobe_policy < b.nprobe_policy;
    });
    return rows;
}

inline void write_pareto_csv(const std::vector<ParetoRow>& rows, std::ostream& os) {
    os << "mode,interval,nprobe_policy,latency_s,perplexity,status\n";
    for (const auto& r : rows) {
        os << r.mode << ',' << r.interval << ',' << r.nprobe_policy << ',';
        if (r.failed) {
            os << ",,failed\n";
        } else {
            os << std::setprecision(9) << r.latency_s << ',' << std::setprecision(9)
               << r.perplexity << ",ok\n";
        }
    }
}

struct DynamicNprobeRow {
    std::string mode;  // none, retro, piperag_auto
    double latency_s = 0.0;
    double perplexity = 0.0;
};

// The three-way comparison behind performance-driven retrieval: no
// retrieval, blocking retrieval at a fixed search space, and the pipelined
// run with auto-selected nprobe.
inline std::vector<DynamicNprobeRow> dynamic_nprobe_report(const BenchContext& ctx,
                                                           std::uint32_t total_tokens,
                                                           std::uint32_t retro_nprobe,
                                                           std::uint32_t piperag_interval) {
    std::vector<DynamicNprobeRow> rows;
    auto add = [&](const std::string& label, const PipelineConfig& config) {
        auto row = run_config(ctx, config);
        rows.push_back({label, row.latency_s, row.perplexity});
    };
    add("none", PipelineConfig::none(total_tokens, ctx.db->m));
    add("retro", PipelineConfig::retro(total_tokens, NprobePolicy::fixed(retro_nprobe), ctx.db->m));
    add("piperag_auto",
        PipelineConfig::piperag(piperag_interval, total_tokens, NprobePolicy::automatic(), ctx.db->m));
    return rows;
}

inline void write_dynamic_nprobe_csv(const std::vector<DynamicNprobeRow>& rows, std::ostream& os) {
    os << "mode,latency_s,perplexity\n";
    for (const auto& r : rows) {
        os << r.mode << ',' << std::setprecision(9) << r.latency_s << ','
           << std::setprecision(9) << r.perplexity << "\n";
    }
}

struct StalenessRow {
    std::uint32_t s = 0;
    double mean_cosine = 0.0;
};

// For sampled chunk boundaries of the evaluation stream, retrieves with the
// fresh and the s-stale query window (interval held at 64) and reports the
// mean cosine similarity between the embeddings of the retrieved top-1
// chunks.
inline std::vector<StalenessRow> staleness_similarity(const BenchContext& ctx,
                                                      const std::vector<std::uint32_t>& s_grid,
                                                      std::uint32_t nprobe,
                                                      std::size_t max_positions = 64) {
    const std::uint32_t m = ctx.db->m;
    ChunkEmbedder embedder(ctx.db->d, ctx.embed_seed);
    // Boundaries p where both windows fit: fresh [p-m, p), stale [p-m-s, p-s).
    std::vector<std::size_t> boundaries;
    for (std::size_t p = 2 * m; p + 1 <= ctx.eval_tokens.size(); p += m) boundaries.push_back(p);
    if (boundaries.size() > max_positions) boundaries.resize(max_positions);
    if (boundaries.empty()) throw ConfigError("staleness_similarity: evaluation stream too short");

    auto top1_embedding = [&](std::size_t begin) -> const std::vector<float>& {
        TokenChunk window(ctx.eval_tokens.begin() + begin, ctx.eval_tokens.begin() + begin + m);
        auto query = embedder.embed(window);
        auto result = search(*ctx.index, *ctx.codebook, query, {nprobe, 1, false});
        if (result.neighbors.empty()) throw ConfigError("staleness_similarity: empty search result");
        return ctx.db->embeddings[result.neighbors[0].chunk_id];
    };

    std::vector<StalenessRow> rows;
    for (std::uint32_t s : s_grid) {
        double acc = 0.0;
        for (std::size_t p : boundaries) {
            const auto& fresh = top1_embedding(p - m);
            const auto& stale = top1_embedding(p - m - s);
            // Same retrieved chunk: similarity is 1 by definition, bypassing
            // float rounding in the cosine.
            acc += &fresh == &stale ? 1.0 : cosine(fresh, stale);
        }
        rows.push_back({s, acc / boundaries.size()});
    }
    return rows;
}

inline void write_staleness_csv(const std::vector<StalenessRow>& rows, std::ostream& os) {
    os << "s,mean_cosine\n";
    for (const auto& r : rows) os << r.s << ',' << std::setprecision(9) << r.mean_cosine << "\n";
}

struct DbSizeRow {
    double fraction = 0.0;
    std::string mode;
    double perplexity = 0.0;
};

// Rebuilds the index over database prefixes and evaluates perplexity per
// mode. Modes: none, retrieve_once, retro, piperag.
inline std::vector<DbSizeRow> dbsize_ablation(const BenchContext& ctx,
                                              const std::vector<double>& fractions,
                                              std::uint32_t nprobe,
                                              std::uint32_t piperag_interval,
                                              TrainParams train_params) {
    std::vector<DbSizeRow> rows;
    for (double fraction : fractions) {
        std::size_t count = std::max<std::size_t>(
            train_params.nlist, static_cast<std::size_t>(fraction * ctx.db->size()));
        count = std::min(count, ctx.db->size());
        Database prefix;
        prefix.m = ctx.db->m;
        prefix.d = ctx.db->d;
        prefix.records.assign(ctx.db->records.begin(), ctx.db->records.begin() + count);
        prefix.embeddings.assign(ctx.db->embeddings.begin(), ctx.db->embeddings.begin() + count);
        auto [index, codebook] = train_index(prefix.embeddings, train_params);
        LocalRetriever retriever(prefix, index, codebook, ctx.embed_seed, ctx.perf.retrieval,
                                 ctx.safety_margin);

        auto eval_mode = [&](const std::string& label, const PipelineConfig& config) {
            Retriever* r = config.mode == PipelineMode::none ? nullptr : &retriever;
            double ppl = evaluate_perplexity(config, *ctx.generator, r, ctx.eval_tokens,
                                             &ctx.perf.inference);
            rows.push_back({fraction, label, ppl});
        };
        std::uint32_t total = static_cast<std::uint32_t>(ctx.eval_tokens.size() - ctx.db->m);
        total -= total % piperag_interval;
        eval_mode("none", PipelineConfig::none(total, ctx.db->m));
        eval_mode("retrieve_once",
                  PipelineConfig::retrieve_once(total, NprobePolicy::fixed(nprobe), ctx.db->m));
        eval_mode("retro", PipelineConfig::retro(total, NprobePolicy::fixed(nprobe), ctx.db->m));
        eval_mode("piperag", PipelineConfig::piperag(piperag_interval, total,
                                                     NprobePolicy::fixed(nprobe), ctx.db->m));
    }
    return rows;
}

inline void write_dbsize_csv(const std::vector<DbSizeRow>& rows, std::ostream& os) {
    os << "fraction,mode,perplexity\n";
    for (const auto& r : rows) {
        os << std::setprecision(9) << r.fraction << ',' << r.mode << ','
           << std::setprecision(9) << r.perplexity << "\n";
    }
}

// Projects a measured trace onto hypothetical hardware: every generation
// duration is divided by inference_speedup and every retrieval duration by
// retrieval_speedup, then recomposed under the mode's schedule law:
// blocking modes sum gen and ret per chunk; the pipelined mode takes the
// max per steady-state chunk, with the first chunk's retrieval exposed.
inline double hardware_projection(const GenerationTrace& trace, double retrieval_speedup,
                                  double inference_speedup) {
    if (retrieval_speedup <= 0.0 || inference_speedup <= 0.0) {
        throw ConfigError("hardware_projection: speedups must be positive");
    }
    auto gen = trace.durations(TraceEventKind::gen_chunk_start);
    auto ret = trace.durations(TraceEventKind::ret_start);
    double total = 0.0;
    if (trace.mode == "piperag") {
        for (const auto& [chunk, g] : gen) {
            double g_scaled = g / inference_speedup;
            double r_scaled = ret.count(chunk) ? ret.at(chunk) / retrieval_speedup : 0.0;
            if (chunk == 1) {
                total += g_scaled + r_scaled;
            } else {
                total += std::max(g_scaled, r_scaled);
            }
        }
    } else {
        for (const auto& [chunk, g] : gen) total += g / inference_speedup;
        for (const auto& [chunk, r] : ret) total += r / retrieval_speedup;
    }
    return total;
}

}  // namespace prag
