#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "prag/generator.hpp"
#include "prag/perfmodel.hpp"

using namespace prag;

namespace {

Neighbor make_neighbor(TokenId fill, float distance, std::uint32_t m = 8) {
    Neighbor n;
    n.chunk_tokens.assign(m, fill);
    n.continuation_tokens.assign(m, fill);
    n.distance = distance;
    return n;
}

}  // namespace

TEST_CASE("ngram model is add-one smoothed and learns counts") {
    NgramModel model(3, 10);
    // Untrained: uniform 1/V for any context.
    auto dist = model.next_distribution(std::vector<TokenId>{1, 2});
    for (double p : dist) CHECK(p == doctest::Approx(0.1));

    model.train({{1, 2, 3, 1, 2, 3, 1, 2, 3}});
    auto after = model.next_distribution(std::vector<TokenId>{1, 2});
    // Context (1,2) was followed by 3 three times: (3+1)/(3+10).
    CHECK(after[3] == doctest::Approx(4.0 / 13.0));
    CHECK(after[5] == doctest::Approx(1.0 / 13.0));
    double sum = 0.0;
    for (double p : after) sum += p;
    CHECK(sum == doctest::Approx(1.0));

    CHECK_THROWS_AS(NgramModel(0, 10), ConfigError);
    CHECK_THROWS_AS(NgramModel(3, 1), ConfigError);
}

TEST_CASE("lambda=0 and empty conditioning leave the base distribution intact") {
    NextTokenDistribution base = {0.1, 0.2, 0.3, 0.4};
    auto n = make_neighbor(2, 0.0f);
    CHECK(knn_next_distribution(base, {n}, 0, 0.0) == base);
    CHECK(knn_next_distribution(base, {}, 0, 0.7) == base);
    CHECK_THROWS_AS(knn_next_distribution(base, {n}, 0, 1.5), ConfigError);
    CHECK_THROWS_AS(knn_next_distribution(base, {n}, 0, -0.1), ConfigError);
}

TEST_CASE("identical distances weight neighbors symmetrically") {
    auto w = neighbor_weights({make_neighbor(1, 0.5f), make_neighbor(2, 0.5f)});
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));

    auto skew = neighbor_weights({make_neighbor(1, 0.0f), make_neighbor(2, 1.0f)});
    CHECK(skew[0] > skew[1]);
    CHECK(skew[0] + skew[1] == doctest::Approx(1.0));
    // Swapping the neighbor order swaps the weights.
    auto swapped = neighbor_weights({make_neighbor(2, 1.0f), make_neighbor(1, 0.0f)});
    CHECK(swapped[0] == doctest::Approx(skew[1]));
    CHECK(swapped[1] == doctest::Approx(skew[0]));
}

TEST_CASE("a zero-distance neighbor pulls the argmax to its aligned token") {
    std::uint32_t vocab = 257;
    NextTokenDistribution base(vocab, 1.0 / vocab);  // uniform base
    auto n = make_neighbor(42, 0.0f, 64);
    auto mixed = knn_next_distribution(base, {n}, 5, 1.0);
    CHECK(argmax_token(mixed) == 42);
    // The aligned token gets (1+1)/(1+V); everything else (0+1)/(1+V).
    CHECK(mixed[42] == doctest::Approx(2.0 / (1.0 + vocab)));
    CHECK(mixed[7] == doctest::Approx(1.0 / (1.0 + vocab)));
}

TEST_CASE("mixed distribution stays normalized for random neighbor sets") {
    SplitMix64 rng(9);
    for (int trial = 0; trial < 25; ++trial) {
        std::uint32_t vocab = 17;
        NextTokenDistribution base(vocab, 0.0);
        double rest = 1.0;
        for (std::size_t t = 0; t + 1 < vocab; ++t) {
            base[t] = rest * rng.next_double() * 0.5;
            rest -= base[t];
        }
        base[vocab - 1] = rest;
        std::vector<Neighbor> neighbors;
        for (std::uint64_t i = 0; i < 1 + rng.next_below(4); ++i) {
            neighbors.push_back(make_neighbor(static_cast<TokenId>(rng.next_below(vocab)),
                                              static_cast<float>(rng.next_double() * 3)));
        }
        auto mixed = knn_next_distribution(base, neighbors, rng.next_below(8), rng.next_double());
        double sum = 0.0;
        for (double p : mixed) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0));
    }
}

TEST_CASE("offsets past the continuation fall back to PAD alignment") {
    NextTokenDistribution base(10, 0.1);
    auto n = make_neighbor(4, 0.0f, 8);
    auto mixed = knn_next_distribution(base, {n}, 20, 1.0);
    CHECK(argmax_token(mixed) == kPadToken);
}

TEST_CASE("untrained generator scores at vocabulary perplexity") {
    auto model = std::make_shared<NgramModel>(3, 257);
    KnnNgramGenerator gen(model, 0.0);
    std::vector<TokenId> truth(32);
    SplitMix64 rng(10);
    for (auto& t : truth) t = 1 + static_cast<TokenId>(rng.next_below(256));

    auto out = gen.generate_chunk({}, 32, truth.data());
    CHECK(out.tokens == truth);
    double mean_lp = 0.0;
    for (double lp : out.logprobs) mean_lp += lp;
    CHECK(std::exp(-mean_lp / 32.0) == doctest::Approx(257.0));
}

TEST_CASE("memorized text scores below vocabulary perplexity") {
    SplitMix64 rng(11);
    std::vector<TokenId> doc(400);
    for (auto& t : doc) t = 1 + static_cast<TokenId>(rng.next_below(256));
    auto model = std::make_shared<NgramModel>(3, 257);
    model->train({doc});

    KnnNgramGenerator gen(model, 0.0);
    std::vector<TokenId> ctx(doc.begin(), doc.begin() + 64);
    auto out = gen.generate_chunk(ctx, 64, doc.data() + 64);
    double mean_lp = 0.0;
    for (double lp : out.logprobs) mean_lp += lp;
    CHECK(std::exp(-mean_lp / 64.0) < 200.0);
}

TEST_CASE("conditioning on the truth improves teacher-forced likelihood") {
    auto model = std::make_shared<NgramModel>(3, 257);
    KnnNgramGenerator gen(model, 0.5);
    SplitMix64 rng(12);
    std::vector<TokenId> truth(64);
    for (auto& t : truth) t = 1 + static_cast<TokenId>(rng.next_below(256));

    auto unconditioned = gen.generate_chunk({}, 64, truth.data());

    Neighbor oracle;
    oracle.chunk_tokens.assign(64, 1);
    oracle.continuation_tokens = truth;
    oracle.distance = 0.0f;
    gen.set_conditioning({oracle});
    auto conditioned = gen.generate_chunk({}, 64, truth.data());

    double lp_u = 0.0, lp_c = 0.0;
    for (double lp : unconditioned.logprobs) lp_u += lp;
    for (double lp : conditioned.logprobs) lp_c += lp;
    CHECK(lp_c > lp_u);

    gen.clear_conditioning();
    auto cleared = gen.generate_chunk({}, 64, truth.data());
    CHECK(cleared.logprobs == unconditioned.logprobs);
}

TEST_CASE("greedy decoding follows the conditioned argmax") {
    auto model = std::make_shared<NgramModel>(3, 257);
    KnnNgramGenerator gen(model, 1.0);
    Neighbor oracle;
    oracle.chunk_tokens.assign(8, 1);
    oracle.continuation_tokens = {10, 20, 30, 40, 50, 60, 70, 80};
    oracle.distance = 0.0f;
    gen.set_conditioning({oracle});
    auto out = gen.generate_chunk({}, 8);
    CHECK(out.tokens == oracle.continuation_tokens);
}

TEST_CASE("synthetic generator cost is affine in position") {
    SyntheticGenerator gen(0.0005, 0.00001, 257);
    auto out = gen.generate_chunk({}, 8);
    for (std::size_t i = 0; i < out.tokens.size(); ++i) CHECK(out.tokens[i] == i % 257);

    std::vector<double> xs, ys;
    for (std::uint64_t position : {0, 128, 256, 512}) {
        std::vector<TokenId> ctx(position, 1);
        // Best of three shields the fit from scheduler noise.
        double best = 1e9;
        for (int r = 0; r < 3; ++r) {
            Stopwatch clock;
            gen.generate_chunk(ctx, 16);
            best = std::min(best, clock.elapsed_s());
        }
        xs.push_back(static_cast<double>(position));
        ys.push_back(best);
    }
    auto fit = detail::least_squares(xs, ys);
    // 16 tokens per chunk: slope per position unit is 16 * b.
    CHECK(fit.slope == doctest::Approx(16 * 0.00001).epsilon(0.20));
    CHECK(fit.r_squared > 0.9);
}

TEST_CASE("generator config parsing and factory") {
    std::string path = "genconfig_test.json";
    {
        std::ofstream os(path);
        os << R"({"type":"knn_ngram","order":2,"lambda":0.25,"a_ms":0,"b_ms_per_token":0})";
    }
    auto cfg = load_generator_config(path);
    CHECK(cfg.type == "knn_ngram");
    CHECK(cfg.order == 2);
    CHECK(cfg.lambda == 0.25);
    auto gen = make_generator(cfg, {{1, 2, 3}});
    CHECK(gen->vocab_size() == kByteVocabSize);

    {
        std::ofstream os(path);
        os << R"({"type":"synthetic","a_ms":0.1})";
    }
    auto synth = make_generator(load_generator_config(path), {});
    CHECK(dynamic_cast<SyntheticGenerator*>(synth.get()) != nullptr);

    {
        std::ofstream os(path);
        os << R"({"type":"transformer"})";
    }
    CHECK_THROWS_AS(load_generator_config(path), ConfigError);
    {
        std::ofstream os(path);
        os << "not json";
    }
    CHECK_THROWS_AS(load_generator_config(path), FormatError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_generator_config("missing_gen.json"), FormatError);
}
