#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "prag/bench.hpp"

using namespace prag;

namespace {

struct BenchFixture {
    Database db;
    IvfIndex index;
    PqCodebook codebook;
    std::shared_ptr<NgramModel> model;
    std::unique_ptr<KnnNgramGenerator> generator;
    BenchContext ctx;

    BenchFixture() {
        SplitMix64 rng(51);
        std::vector<TokenId> eval(320);
        for (auto& t : eval) t = 1 + static_cast<TokenId>(rng.next_below(256));

        Corpus corpus;
        // Noise first so small database prefixes contain no evaluation copy.
        for (int d = 0; d < 4; ++d) {
            std::vector<TokenId> noise(320);
            for (auto& t : noise) t = 1 + static_cast<TokenId>(rng.next_below(256));
            corpus.documents.push_back(std::move(noise));
        }
        corpus.documents.push_back(eval);
        std::vector<TokenId> offset_copy(32);
        for (auto& t : offset_copy) t = 1 + static_cast<TokenId>(rng.next_below(256));
        offset_copy.insert(offset_copy.end(), eval.begin(), eval.end());
        corpus.documents.push_back(std::move(offset_copy));

        db = build_database(corpus, 64, 32, 7);
        TrainParams params;
        params.nlist = 8;
        std::tie(index, codebook) = train_index(db.embeddings, params);

        model = std::make_shared<NgramModel>(3, 257);
        std::vector<std::vector<TokenId>> noise_docs(
            corpus.documents.begin(), corpus.documents.begin() + 4);
        model->train(noise_docs);
        generator = std::make_unique<KnnNgramGenerator>(model, 0.5);

        ctx.db = &db;
        ctx.index = &index;
        ctx.codebook = &codebook;
        ctx.generator = generator.get();
        ctx.eval_tokens = eval;
        ctx.prompt.assign(eval.begin(), eval.begin() + 64);
        ctx.runs = 3;
        ctx.perf.retrieval = {1e-6, 1e-5, 0.0, false};
        ctx.perf.inference.buckets = {{64, 32, 0.01}, {512, 32, 0.01}};
    }
};

GenerationTrace synthetic_trace(const std::string& mode,
                                const std::vector<std::pair<double, double>>& chunks) {
    GenerationTrace trace;
    trace.mode = mode;
    double t = 0.0;
    std::uint32_t idx = 1;
    for (auto [gen_s, ret_s] : chunks) {
        if (ret_s > 0.0) {
            trace.events.push_back({TraceEventKind::ret_start, idx, t});
            trace.events.push_back({TraceEventKind::ret_end, idx, t + ret_s});
        }
        double gen_begin = mode == "piperag" && idx > 1 ? t : t + ret_s;
        trace.events.push_back({TraceEventKind::gen_chunk_start, idx, gen_begin});
        trace.events.push_back({TraceEventKind::gen_chunk_end, idx, gen_begin + gen_s});
        t = mode == "piperag" && idx > 1 ? t + std::max(gen_s, ret_s)
                                         : t + gen_s + ret_s;
        ++idx;
    }
    trace.total_latency_s = t;
    return trace;
}

}  // namespace

TEST_CASE("empty pareto grid yields a header-only CSV") {
    std::ostringstream os;
    write_pareto_csv({}, os);
    CHECK(os.str() == "mode,interval,nprobe_policy,latency_s,perplexity,status\n");
}

TEST_CASE("pareto rows are sorted and complete") {
    BenchFixture fx;
    std::vector<PipelineConfig> grid = {
        PipelineConfig::retro(256, NprobePolicy::fixed(8)),
        PipelineConfig::none(256),
        PipelineConfig::piperag(32, 256, NprobePolicy::fixed(8)),
    };
    auto rows = pareto_sweep(fx.ctx, grid);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].mode == "none");
    CHECK(rows[1].mode == "piperag");
    CHECK(rows[2].mode == "retro");
    for (const auto& row : rows) {
        CHECK_FALSE(row.failed);
        CHECK(row.perplexity > 1.0);
    }
    // Retrieval conditioning beats no retrieval on this fixture.
    CHECK(rows[2].perplexity < rows[0].perplexity);

    std::ostringstream os;
    write_pareto_csv(rows, os);
    std::string csv = os.str();
    CHECK(csv.find("none,64,fixed(1),") != std::string::npos);
    CHECK(csv.find(",ok\n") != std::string::npos);
}

TEST_CASE("failed runs are marked, not fatal") {
    BenchFixture fx;
    PipelineConfig bad = PipelineConfig::retro(256, NprobePolicy::fixed(8));
    bad.interval = 32;  // invalid retro coupling
    auto row = run_config(fx.ctx, bad);
    CHECK(row.failed);
    std::ostringstream os;
    write_pareto_csv({row}, os);
    CHECK(os.str().find("failed") != std::string::npos);
}

TEST_CASE("dynamic nprobe report compares the three policies") {
    BenchFixture fx;
    auto rows = dynamic_nprobe_report(fx.ctx, 256, 8, 32);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].mode == "none");
    CHECK(rows[1].mode == "retro");
    CHECK(rows[2].mode == "piperag_auto");
    CHECK(rows[2].perplexity <= rows[0].perplexity);

    std::ostringstream os;
    write_dynamic_nprobe_csv(rows, os);
    CHECK(os.str().rfind("mode,latency_s,perplexity\n", 0) == 0);
}

TEST_CASE("staleness similarity is exactly 1 at s=0 and bounded") {
    BenchFixture fx;
    auto rows = staleness_similarity(fx.ctx, {0, 1, 32, 64}, 8);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].s == 0);
    CHECK(rows[0].mean_cosine == 1.0);
    for (const auto& row : rows) {
        CHECK(row.mean_cosine <= 1.0 + 1e-9);
        CHECK(row.mean_cosine >= -1.0 - 1e-9);
    }
    CHECK(rows[3].mean_cosine <= rows[1].mean_cosine + 1e-9);

    std::ostringstream os;
    write_staleness_csv(rows, os);
    CHECK(os.str().rfind("s,mean_cosine\n", 0) == 0);

    BenchContext short_ctx = fx.ctx;
    short_ctx.eval_tokens.resize(100);
    CHECK_THROWS_AS(staleness_similarity(short_ctx, {0}, 8), ConfigError);
}

TEST_CASE("database-size ablation holds none fixed and helps retro") {
    BenchFixture fx;
    TrainParams params;
    params.nlist = 8;
    auto rows = dbsize_ablation(fx.ctx, {0.3, 1.0}, 8, 32, params);
    REQUIRE(rows.size() == 8);

    auto ppl = [&](double fraction, const std::string& mode) {
        for (const auto& r : rows) {
            if (r.fraction == fraction && r.mode == mode) return r.perplexity;
        }
        FAIL("missing row");
        return 0.0;
    };
    CHECK(ppl(0.3, "none") == ppl(1.0, "none"));
    // The evaluation copies only exist in the full database.
    CHECK(ppl(1.0, "retro") < ppl(0.3, "retro"));
    CHECK(ppl(1.0, "retro") < ppl(1.0, "retrieve_once"));
    CHECK(ppl(1.0, "retrieve_once") < ppl(1.0, "none"));

    std::ostringstream os;
    write_dbsize_csv(rows, os);
    CHECK(os.str().rfind("fraction,mode,perplexity\n", 0) == 0);
}

TEST_CASE("hardware projection recomposes blocking traces as sums") {
    auto trace = synthetic_trace("retro", {{0.010, 0.005}, {0.010, 0.005}, {0.010, 0.005}});
    CHECK(hardware_projection(trace, 1.0, 1.0) == doctest::Approx(trace.total_latency_s));
    CHECK(hardware_projection(trace, 5.0, 1.0) == doctest::Approx(0.033));
    CHECK(hardware_projection(trace, 1.0, 2.0) == doctest::Approx(0.030));
    CHECK_THROWS_AS(hardware_projection(trace, 0.0, 1.0), ConfigError);
    CHECK_THROWS_AS(hardware_projection(trace, 1.0, -2.0), ConfigError);
}

TEST_CASE("hardware projection takes per-chunk maxima for piperag") {
    auto trace = synthetic_trace("piperag", {{0.010, 0.004}, {0.010, 0.006}, {0.010, 0.020}});
    // Chunk 1 exposed: 0.014; chunks 2-3: max(0.010, 0.006) + max(0.010, 0.020).
    CHECK(hardware_projection(trace, 1.0, 1.0) == doctest::Approx(0.014 + 0.010 + 0.020));

    // Infinitely fast retrieval leaves only generation time.
    CHECK(hardware_projection(trace, 1e12, 1.0) == doctest::Approx(0.030));

    // Faster inference shrinks the piperag advantage over a blocking schedule.
    auto retro = synthetic_trace("retro", {{0.010, 0.010}, {0.010, 0.010}, {0.010, 0.010}});
    auto pipe = synthetic_trace("piperag", {{0.010, 0.010}, {0.010, 0.010}, {0.010, 0.010}});
    double gap_1 = hardware_projection(retro, 1.0, 1.0) / hardware_projection(pipe, 1.0, 1.0);
    double gap_16 = hardware_projection(retro, 1.0, 16.0) / hardware_projection(pipe, 1.0, 16.0);
    CHECK(gap_16 < gap_1);
}

TEST_CASE("policy labels") {
    CHECK(policy_label(NprobePolicy::automatic()) == "auto");
    CHECK(policy_label(NprobePolicy::fixed(12)) == "fixed(12)");
}
