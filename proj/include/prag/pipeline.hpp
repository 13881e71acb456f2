#pragma once

#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prag/annindex.hpp"
#include "prag/common.hpp"
#include "prag/generator.hpp"
#include "prag/perfmodel.hpp"
#include "prag/tokendb.hpp"

namespace prag {

enum class PipelineMode { piperag, retro, retro_plus, retrieve_once, none };

inline const char* mode_name(PipelineMode mode) {
    switch (mode) {
        case PipelineMode::piperag: return "piperag";
        case PipelineMode::retro: return "retro";
        case PipelineMode::retro_plus: return "retro_plus";
        case PipelineMode::retrieve_once: return "retrieve_once";
        case PipelineMode::none: return "none";
    }
    return "?";
}

inline PipelineMode mode_from_name(const std::string& name) {
    if (name == "piperag") return PipelineMode::piperag;
    if (name == "retro") return PipelineMode::retro;
    if (name == "retro_plus") return PipelineMode::retro_plus;
    if (name == "retrieve_once") return PipelineMode::retrieve_once;
    if (name == "none") return PipelineMode::none;
    throw ConfigError("unknown pipeline mode: " + name);
}

struct NprobePolicy {
    bool auto_mode = false;
    std::uint32_t fixed_nprobe = 1;

    static NprobePolicy fixed(std::uint32_t n) { return {false, n}; }
    static NprobePolicy automatic() { return {true, 0}; }
};

struct PipelineConfig {
    PipelineMode mode = PipelineMode::retro;
    std::uint32_t interval = kDefaultChunkSize;      // m'
    std::uint32_t query_window = kDefaultChunkSize;  // m, fixed 64 by default
    std::uint32_t staleness = 0;                     // s
    NprobePolicy nprobe_policy = NprobePolicy::fixed(1);
    std::uint32_t k = 2;
    std::uint32_t total_tokens = 1024;

    void validate() const {
        if (interval < 1 || interval > query_window) {
            throw ConfigError("PipelineConfig: require 1 <= interval <= query_window");
        }
        if (total_tokens % interval != 0) {
            throw ConfigError("PipelineConfig: total_tokens must be a multiple of interval");
        }
        switch (mode) {
            case PipelineMode::piperag:
                if (staleness != interval) {
                    throw ConfigError("PipelineConfig: piperag requires staleness == interval");
                }
                break;
            case PipelineMode::retro:
                if (interval != query_window || staleness != 0) {
                    throw ConfigError("PipelineConfig: retro requires interval == query_window, staleness == 0");
                }
                break;
            case PipelineMode::retro_plus:
                if (staleness != 0) {
                    throw ConfigError("PipelineConfig: retro_plus requires staleness == 0");
                }
                break;
            default:
                break;
        }
    }

    // Canonical configs per mode.
    static PipelineConfig piperag(std::uint32_t interval, std::uint32_t total_tokens,
                                  NprobePolicy policy, std::uint32_t m = kDefaultChunkSize) {
        return {PipelineMode::piperag, interval, m, interval, policy, 2, total_tokens};
    }
    static PipelineConfig retro(std::uint32_t total_tokens, NprobePolicy policy,
                                std::uint32_t m = kDefaultChunkSize) {
        return {PipelineMode::retro, m, m, 0, policy, 2, total_tokens};
    }
    static PipelineConfig retro_plus(std::uint32_t interval, std::uint32_t total_tokens,
                                     NprobePolicy policy, std::uint32_t m = kDefaultChunkSize) {
        return {PipelineMode::retro_plus, interval, m, 0, policy, 2, total_tokens};
    }
    static PipelineConfig retrieve_once(std::uint32_t total_tokens, NprobePolicy policy,
                                        std::uint32_t m = kDefaultChunkSize) {
        return {PipelineMode::retrieve_once, m, m, 0, policy, 2, total_tokens};
    }
    static PipelineConfig none(std::uint32_t total_tokens, std::uint32_t m = kDefaultChunkSize) {
        return {PipelineMode::none, m, m, 0, NprobePolicy::fixed(1), 2, total_tokens};
    }
};

struct QueryWindow {
    TokenChunk tokens;  // exactly m tokens
    std::int64_t end_position = 0;
    std::uint32_t staleness = 0;
    bool padded = false;  // window reached before the start of the stream
};

// Window of m tokens ending s tokens before the boundary of generated chunk
// j (1-based). The sequence layout is: positions [0, m) hold the prompt
// chunk C_1, generated chunk j spans [m + (j-1)*m', m + j*m'). The initial
// retrieval (j == 1) is always non-stale and uses C_1 itself.
inline QueryWindow make_query_window(const std::vector<TokenId>& sequence, std::uint32_t j,
                                     std::uint32_t m, std::uint32_t m_prime, std::uint32_t s) {
    if (j < 1) throw ConfigError("make_query_window: chunk index is 1-based");
    std::uint32_t s_eff = (j == 1) ? 0 : s;
    std::int64_t chunk_start = static_cast<std::int64_t>(m) +
                               static_cast<std::int64_t>(j - 1) * m_prime;
    std::int64_t begin = chunk_start - static_cast<std::int64_t>(s_eff) - m;
    QueryWindow window;
    window.staleness = s_eff;
    window.end_position = begin + m - 1;
    window.tokens.assign(m, kPadToken);
    for (std::uint32_t i = 0; i < m; ++i) {
        std::int64_t pos = begin + i;
        if (pos < 0) {
            window.padded = true;
        } else if (pos < static_cast<std::int64_t>(sequence.size())) {
            window.tokens[i] = sequence[pos];
        } else {
            throw ConfigError("make_query_window: window extends past generated tokens");
        }
    }
    return window;
}

struct RetrievedContext {
    std::vector<Neighbor> neighbors;
    std::uint32_t shifted_by = 0;
    std::uint32_t nprobe_used = 0;
    double retrieval_latency_s = 0.0;
};

// Shift(Ret(Q̂), s): advance each neighbor's concatenated stream
// chunk‖continuation by s tokens, PAD-extending the tail, so the usable
// length stays exactly 2m.
inline RetrievedContext shift_retrieved(const std::vector<Neighbor>& neighbors, std::uint32_t s,
                                        std::uint32_t m) {
    if (s > m) throw ConfigError("shift_retrieved: require 0 <= s <= m");
    RetrievedContext ctx;
    ctx.shifted_by = s;
    ctx.neighbors.reserve(neighbors.size());
    for (const auto& n : neighbors) {
        TokenChunk stream;
        stream.reserve(2 * m);
        stream.insert(stream.end(), n.chunk_tokens.begin(), n.chunk_tokens.end());
        stream.insert(stream.end(), n.continuation_tokens.begin(), n.continuation_tokens.end());
        Neighbor shifted;
        shifted.distance = n.distance;
        shifted.chunk_tokens.assign(m, kPadToken);
        shifted.continuation_tokens.assign(m, kPadToken);
        for (std::uint32_t i = 0; i < 2 * m; ++i) {
            std::size_t src = i + s;
            TokenId t = src < stream.size() ? stream[src] : kPadToken;
            if (i < m) {
                shifted.chunk_tokens[i] = t;
            } else {
                shifted.continuation_tokens[i - m] = t;
            }
        }
        ctx.neighbors.push_back(std::move(shifted));
    }
    return ctx;
}

struct NprobeDirective {
    bool auto_mode = false;
    std::uint32_t nprobe = 1;      // when fixed
    double budget_s = 0.0;         // when auto

    static NprobeDirective fixed(std::uint32_t n) { return {false, n, 0.0}; }
    static NprobeDirective automatic(double budget_s) { return {true, 0, budget_s}; }
};

struct RetrievalOutcome {
    std::vector<Neighbor> neighbors;
    std::uint32_t nprobe_used = 0;
    double server_latency_s = 0.0;
};

// Retrieval path the pipeline drives: in-process, over the network, or a
// test stub.
class Retriever {
public:
    virtual ~Retriever() = default;
    virtual RetrievalOutcome retrieve(const TokenChunk& query_tokens, std::uint32_t k,
                                      NprobeDirective directive) = 0;
    virtual std::uint32_t nlist() const = 0;
};

// Embeds the query server-side, searches the IVF-PQ index, and resolves
// chunk ids to token records. Owns auto-nprobe selection (the retrieval
// side of the system decides the search space).
class LocalRetriever : public Retriever {
public:
    LocalRetriever(const Database& db, const IvfIndex& index, const PqCodebook& codebook,
                   std::uint64_t embed_seed, RetrievalPerfModel perf = {},
                   double safety_margin = 0.10)
        : db_(&db), index_(&index), codebook_(&codebook),
          embedder_(db.d, embed_seed), perf_(perf), safety_margin_(safety_margin) {}

    RetrievalOutcome retrieve(const TokenChunk& query_tokens, std::uint32_t k,
                              NprobeDirective directive) override {
        Stopwatch clock;
        std::uint32_t nprobe = directive.auto_mode
                                   ? select_nprobe(perf_, directive.budget_s, index_->nlist, safety_margin_)
                                   : std::min(directive.nprobe, index_->nlist);
        auto query = embedder_.embed(query_tokens);
        SearchParams params{nprobe, k, false};
        auto found = search(*index_, *codebook_, query, params);
        RetrievalOutcome outcome;
        outcome.nprobe_used = nprobe;
        for (const auto& hit : found.neighbors) {
            const auto& rec = db_->records[hit.chunk_id];
            outcome.neighbors.push_back({rec.tokens, rec.continuation, hit.distance});
        }
        outcome.server_latency_s = clock.elapsed_s();
        return outcome;
    }

    std::uint32_t nlist() const override { return index_->nlist; }

private:
    const Database* db_;
    const IvfIndex* index_;
    const PqCodebook* codebook_;
    ChunkEmbedder embedder_;
    RetrievalPerfModel perf_;
    double safety_margin_;
};

enum class TraceEventKind {
    gen_chunk_start,
    gen_chunk_end,
    ret_start,
    ret_end,
    stall_start,
    stall_end
};

inline const char* trace_event_name(TraceEventKind kind) {
    switch (kind) {
        case TraceEventKind::gen_chunk_start: return "gen_chunk_start";
        case TraceEventKind::gen_chunk_end: return "gen_chunk_end";
        case TraceEventKind::ret_start: return "ret_start";
        case TraceEventKind::ret_end: return "ret_end";
        case TraceEventKind::stall_start: return "stall_start";
        case TraceEventKind::stall_end: return "stall_end";
    }
    return "?";
}

struct TraceEvent {
    TraceEventKind kind;
    std::uint32_t chunk_index;  // 1-based generated chunk the event belongs to
    double t;                   // seconds since run start, monotonic clock
};

struct GenerationTrace {
    std::string mode;
    std::vector<TraceEvent> events;
    std::vector<TokenId> final_tokens;  // generated tokens only (prompt excluded)
    double total_latency_s = 0.0;
    double stall_time_s = 0.0;
    std::uint32_t retrieval_count = 0;
    std::uint32_t stall_count = 0;
    std::vector<std::uint32_t> nprobe_used;  // one entry per retrieval

    // Per-chunk duration of events of `kind` (ret or gen), keyed by chunk index.
    std::map<std::uint32_t, double> durations(TraceEventKind start_kind) const {
        TraceEventKind end_kind;
        switch (start_kind) {
            case TraceEventKind::gen_chunk_start: end_kind = TraceEventKind::gen_chunk_end; break;
            case TraceEventKind::ret_start: end_kind = TraceEventKind::ret_end; break;
            default: end_kind = TraceEventKind::stall_end; break;
        }
        std::map<std::uint32_t, double> starts, out;
        for (const auto& e : events) {
            if (e.kind == start_kind) starts[e.chunk_index] = e.t;
            if (e.kind == end_kind) out[e.chunk_index] = e.t - starts[e.chunk_index];
        }
        return out;
    }
};

struct PipelineError : std::runtime_error {
    PipelineError(const std::string& what, GenerationTrace partial_trace)
        : std::runtime_error(what), partial(std::move(partial_trace)) {}
    GenerationTrace partial;
};

namespace detail {

// Single-producer single-consumer handoff slots keyed by chunk index.
// Conditioning binds to the chunk index at launch time; a late retrieval
// stalls the consumer rather than being dropped.
class ConditioningMailbox {
public:
    void deliver(std::uint32_t chunk, RetrievedContext ctx) {
        std::lock_guard lock(mu_);
        slots_[chunk] = std::move(ctx);
        cv_.notify_all();
    }

    bool ready(std::uint32_t chunk) {
        std::lock_guard lock(mu_);
        return slots_.count(chunk) > 0;
    }

    RetrievedContext take(std::uint32_t chunk) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return slots_.count(chunk) > 0 || failed_; });
        if (failed_ && slots_.count(chunk) == 0) throw ConfigError(error_);
        RetrievedContext ctx = std::move(slots_[chunk]);
        slots_.erase(chunk);
        return ctx;
    }

    void fail(const std::string& error) {
        std::lock_guard lock(mu_);
        failed_ = true;
        error_ = error;
        cv_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::uint32_t, RetrievedContext> slots_;
    bool failed_ = false;
    std::string error_;
};

struct RetrievalJob {
    std::uint32_t chunk_index;
    TokenChunk query_tokens;
    std::uint32_t shift_by;
    NprobeDirective directive;
};

}  // namespace detail

// Orchestrates one generation under the configured mode. `inference_model`
// is required only for the auto nprobe policy (it supplies the per-chunk
// latency budget of the currently generating chunk).
class PipelineEngine {
public:
    PipelineEngine(Generator& generator, Retriever* retriever,
                   const InferencePerfModel* inference_model = nullptr)
        : generator_(&generator), retriever_(retriever), inference_model_(inference_model) {}

    GenerationTrace run(const PipelineConfig& config, const std::vector<TokenId>& prompt) {
        config.validate();
        if (config.mode != PipelineMode::none && retriever_ == nullptr) {
            throw ConfigError("pipeline: mode requires a retriever");
        }
        if (config.nprobe_policy.auto_mode && inference_model_ == nullptr) {
            throw ConfigError("pipeline: auto nprobe policy requires an inference perf model");
        }
        GenerationTrace trace;
        trace.mode = mode_name(config.mode);
        try {
            run_impl(config, prompt, trace);
        } catch (const std::exception& e) {
            trace.total_latency_s = trace.events.empty() ? 0.0 : trace.events.back().t;
            throw PipelineError(std::string("pipeline aborted: ") + e.what(), std::move(trace));
        }
        return trace;
    }

private:
    void run_impl(const PipelineConfig& config, const std::vector<TokenId>& prompt,
                  GenerationTrace& trace) {
        const std::uint32_t m = config.query_window;
        const std::uint32_t mp = config.interval;
        const std::uint32_t n_chunks = config.total_tokens / mp;

        // Sequence = prompt chunk C_1 (last m prompt tokens, PAD-left-padded
        // when the prompt is short) followed by generated chunks.
        std::vector<TokenId> sequence(m, kPadToken);
        std::size_t take = std::min<std::size_t>(prompt.size(), m);
        for (std::size_t i = 0; i < take; ++i) {
            sequence[m - take + i] = prompt[prompt.size() - take + i];
        }

        Stopwatch clock;
        std::mutex event_mu;
        auto record = [&](TraceEventKind kind, std::uint32_t chunk) {
            std::lock_guard lock(event_mu);
            trace.events.push_back({kind, chunk, clock.elapsed_s()});
        };

        generator_->clear_conditioning();

        auto directive_for = [&](std::uint32_t generating_chunk) {
            if (!config.nprobe_policy.auto_mode) {
                return NprobeDirective::fixed(config.nprobe_policy.fixed_nprobe);
            }
            std::uint64_t position = m + static_cast<std::uint64_t>(generating_chunk - 1) * mp;
            return NprobeDirective::automatic(predict_chunk_budget(*inference_model_, position).seconds);
        };

        auto blocking_retrieve = [&](std::uint32_t j, std::uint32_t s,
                                     NprobeDirective directive) {
            auto window = make_query_window(sequence, j, m, mp, s);
            record(TraceEventKind::ret_start, j);
            auto outcome = retriever_->retrieve(window.tokens, config.k, directive);
            record(TraceEventKind::ret_end, j);
            ++trace.retrieval_count;
            trace.nprobe_used.push_back(outcome.nprobe_used);
            return shift_retrieved(outcome.neighbors, window.staleness, m);
        };

        auto generate = [&](std::uint32_t j) {
            record(TraceEventKind::gen_chunk_start, j);
            auto out = generator_->generate_chunk(sequence, mp);
            record(TraceEventKind::gen_chunk_end, j);
            sequence.insert(sequence.end(), out.tokens.begin(), out.tokens.end());
            trace.final_tokens.insert(trace.final_tokens.end(), out.tokens.begin(), out.tokens.end());
        };

        switch (config.mode) {
            case PipelineMode::none: {
                for (std::uint32_t j = 1; j <= n_chunks; ++j) generate(j);
                break;
            }
            case PipelineMode::retrieve_once: {
                auto ctx = blocking_retrieve(1, 0, directive_for(1));
                generator_->set_conditioning(ctx.neighbors);
                for (std::uint32_t j = 1; j <= n_chunks; ++j) generate(j);
                break;
            }
            case PipelineMode::retro:
            case PipelineMode::retro_plus: {
                for (std::uint32_t j = 1; j <= n_chunks; ++j) {
                    auto ctx = blocking_retrieve(j, 0, directive_for(j));
                    generator_->set_conditioning(ctx.neighbors);
                    generate(j);
                }
                break;
            }
            case PipelineMode::piperag: {
                run_piperag(config, n_chunks, sequence, trace, record, directive_for, generate);
                break;
            }
        }
        std::stable_sort(trace.events.begin(), trace.events.end(),
                         [](const TraceEvent& a, const TraceEvent& b) { return a.t < b.t; });
        trace.total_latency_s = clock.elapsed_s();
    }

    template <typename Record, typename DirectiveFor, typename Generate>
    void run_piperag(const PipelineConfig& config, std::uint32_t n_chunks,
                     std::vector<TokenId>& sequence, GenerationTrace& trace, Record&& record,
                     DirectiveFor&& directive_for, Generate&& generate) {
        const std::uint32_t m = config.query_window;
        const std::uint32_t mp = config.interval;

        detail::ConditioningMailbox mailbox;
        std::mutex job_mu;
        std::condition_variable job_cv;
        std::optional<detail::RetrievalJob> pending;
        bool shutdown = false;

        std::thread worker([&] {
            for (;;) {
                detail::RetrievalJob job;
                {
                    std::unique_lock lock(job_mu);
                    job_cv.wait(lock, [&] { return pending.has_value() || shutdown; });
                    if (!pending.has_value()) return;
                    job = std::move(*pending);
                    pending.reset();
                }
                try {
                    record(TraceEventKind::ret_start, job.chunk_index);
                    auto outcome = retriever_->retrieve(job.query_tokens, config.k, job.directive);
                    record(TraceEventKind::ret_end, job.chunk_index);
                    auto ctx = shift_retrieved(outcome.neighbors, job.shift_by, m);
                    ctx.nprobe_used = outcome.nprobe_used;
                    mailbox.deliver(job.chunk_index, std::move(ctx));
                } catch (const std::exception& e) {
                    mailbox.fail(std::string("retrieval worker: ") + e.what());
                    return;
                }
            }
        });

        auto launch = [&](std::uint32_t j) {
            // Query windows contain only tokens generated strictly before
            // the launch; chunk 1 uses the non-stale prompt chunk.
            auto window = make_query_window(sequence, j, m, mp, config.staleness);
            std::lock_guard lock(job_mu);
            pending = detail::RetrievalJob{j, window.tokens, window.staleness, directive_for(j)};
            job_cv.notify_one();
        };

        try {
            launch(1);
            for (std::uint32_t j = 1; j <= n_chunks; ++j) {
                if (!mailbox.ready(j)) {
                    record(TraceEventKind::stall_start, j);
                    Stopwatch stall;
                    auto ctx = mailbox.take(j);
                    record(TraceEventKind::stall_end, j);
                    trace.stall_time_s += stall.elapsed_s();
                    ++trace.stall_count;
                    ++trace.retrieval_count;
                    trace.nprobe_used.push_back(ctx.nprobe_used);
                    generator_->set_conditioning(ctx.neighbors);
                } else {
                    auto ctx = mailbox.take(j);
                    ++trace.retrieval_count;
                    trace.nprobe_used.push_back(ctx.nprobe_used);
                    generator_->set_conditioning(ctx.neighbors);
                }
                if (j + 1 <= n_chunks) launch(j + 1);
                generate(j);
            }
        } catch (...) {
            {
                std::lock_guard lock(job_mu);
                shutdown = true;
                job_cv.notify_one();
            }
            worker.join();
            throw;
        }
        {
            std::lock_guard lock(job_mu);
            shutdown = true;
            job_cv.notify_one();
        }
        worker.join();
    }

    Generator* generator_;
    Retriever* retriever_;
    const InferencePerfModel* inference_model_;
};

// Teacher-forced perplexity with retrieval conditioning scheduled exactly as
// the chosen mode dictates. The first m tokens of eval_tokens act as the
// prompt chunk C_1; the remainder is scored in chunks of m'. Timing plays no
// role, so the schedule is evaluated sequentially.
inline double evaluate_perplexity(const PipelineConfig& config, Generator& generator,
                                  Retriever* retriever, const std::vector<TokenId>& eval_tokens,
                                  const InferencePerfModel* inference_model = nullptr) {
    config.validate();
    const std::uint32_t m = config.query_window;
    const std::uint32_t mp = config.interval;
    if (eval_tokens.size() < m + mp) {
        throw ConfigError("evaluate_perplexity: eval_tokens must cover prompt plus one chunk");
    }
    std::uint32_t n_chunks = static_cast<std::uint32_t>((eval_tokens.size() - m) / mp);
    if (config.mode != PipelineMode::none && retriever == nullptr) {
        throw ConfigError("evaluate_perplexity: mode requires a retriever");
    }
    if (config.nprobe_policy.auto_mode && inference_model == nullptr) {
        throw ConfigError("evaluate_perplexity: auto nprobe policy requires an inference perf model");
    }

    std::vector<TokenId> sequence(eval_tokens.begin(), eval_tokens.begin() + m);
    generator.clear_conditioning();

    auto directive_for = [&](std::uint32_t j) {
        if (!config.nprobe_policy.auto_mode) {
            return NprobeDirective::fixed(config.nprobe_policy.fixed_nprobe);
        }
        std::uint64_t position = m + static_cast<std::uint64_t>(j - 1) * mp;
        return NprobeDirective::automatic(predict_chunk_budget(*inference_model, position).seconds);
    };
    auto retrieve_for = [&](std::uint32_t j, std::uint32_t s) {
        auto window = make_query_window(sequence, j, m, mp, s);
        auto outcome = retriever->retrieve(window.tokens, config.k, directive_for(j));
        return shift_retrieved(outcome.neighbors, window.staleness, m);
    };

    double log_prob_sum = 0.0;
    std::size_t scored = 0;
    if (config.mode == PipelineMode::retrieve_once) {
        generator.set_conditioning(retrieve_for(1, 0).neighbors);
    }
    for (std::uint32_t j = 1; j <= n_chunks; ++j) {
        switch (config.mode) {
            case PipelineMode::retro:
            case PipelineMode::retro_plus:
                generator.set_conditioning(retrieve_for(j, 0).neighbors);
                break;
            case PipelineMode::piperag:
                generator.set_conditioning(retrieve_for(j, config.staleness).neighbors);
                break;
            default:
                break;
        }
        const TokenId* truth = eval_tokens.data() + m + static_cast<std::size_t>(j - 1) * mp;
        auto out = generator.generate_chunk(sequence, mp, truth);
        for (double lp : out.logprobs) log_prob_sum += lp;
        scored += out.logprobs.size();
        sequence.insert(sequence.end(), truth, truth + mp);
    }
    return std::exp(-log_prob_sum / static_cast<double>(scored));
}

inline void store_trace(const GenerationTrace& trace, const std::string& path) {
    nlohmann::json j;
    j["mode"] = trace.mode;
    j["total_latency_s"] = trace.total_latency_s;
    j["stall_time_s"] = trace.stall_time_s;
    j["retrieval_count"] = trace.retrieval_count;
    j["stall_count"] = trace.stall_count;
    j["nprobe_used"] = trace.nprobe_used;
    j["final_tokens"] = trace.final_tokens;
    j["events"] = nlohmann::json::array();
    for (const auto& e : trace.events) {
        j["events"].push_back(
            {{"kind", trace_event_name(e.kind)}, {"chunk_index", e.chunk_index}, {"t", e.t}});
    }
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

inline GenerationTrace load_trace(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid trace JSON in " + path + ": " + e.what());
    }
    GenerationTrace trace;
    trace.mode = j.at("mode").get<std::string>();
    trace.total_latency_s = j.at("total_latency_s").get<double>();
    trace.stall_time_s = j.at("stall_time_s").get<double>();
    trace.retrieval_count = j.at("retrieval_count").get<std::uint32_t>();
    trace.stall_count = j.at("stall_count").get<std::uint32_t>();
    trace.nprobe_used = j.at("nprobe_used").get<std::vector<std::uint32_t>>();
    trace.final_tokens = j.at("final_tokens").get<std::vector<TokenId>>();
    for (const auto& e : j.at("events")) {
        std::string kind = e.at("kind").get<std::string>();
        TraceEventKind k;
        if (kind == "gen_chunk_start") k = TraceEventKind::gen_chunk_start;
        else if (kind == "gen_chunk_end") k = TraceEventKind::gen_chunk_end;
        else if (kind == "ret_start") k = TraceEventKind::ret_start;
        else if (kind == "ret_end") k = TraceEventKind::ret_end;
        else if (kind == "stall_start") k = TraceEventKind::stall_start;
        else if (kind == "stall_end") k = TraceEventKind::stall_end;
        else throw FormatError("unknown trace event kind: " + kind);
        trace.events.push_back({k, e.at("chunk_index").get<std::uint32_t>(), e.at("t").get<double>()});
    }
    return trace;
}

}  // namespace prag
