#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "prag/annindex.hpp"
#include "prag/generator.hpp"
#include "prag/perfmodel.hpp"
#include "prag/pipeline.hpp"
#include "prag/tokendb.hpp"

namespace {

std::vector<std::uint32_t> parse_u32_list(const std::string& csv) {
    std::vector<std::uint32_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval and inference latency calibration"};
    app.require_subcommand(1);

    auto* calibrate = app.add_subcommand("calibrate", "fit the retrieval line and inference buckets");
    std::string db_path, idx_path, gen_path, out_path;
    std::string grid_csv = "1,2,4,8,16,32,64,128,256";
    std::string positions_csv = "64,128,256,512,1024";
    std::uint32_t m_prime = prag::kDefaultChunkSize;
    std::uint64_t embed_seed = 7;
    int repeats = 5;
    calibrate->add_option("--db", db_path, "chunk database file")->required();
    calibrate->add_option("--idx", idx_path, "index file")->required();
    calibrate->add_option("--gen", gen_path, "generator config JSON (optional; enables inference buckets)");
    calibrate->add_option("--nprobe-grid", grid_csv, "comma-separated nprobe calibration grid");
    calibrate->add_option("--positions", positions_csv, "sequence positions for inference buckets");
    calibrate->add_option("--interval", m_prime, "chunk size m' for inference buckets");
    calibrate->add_option("--repeats", repeats, "measurement repeats per point");
    calibrate->add_option("--embed-seed", embed_seed, "embedding seed (must match the database)");
    calibrate->add_option("--out", out_path, "output perf model JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        auto db = prag::load_database(db_path);
        auto [index, codebook] = prag::load_index(idx_path);
        prag::ChunkEmbedder embedder(db.d, embed_seed);

        // A fixed batch of query windows drawn from the database itself.
        prag::SplitMix64 rng(42);
        std::vector<std::vector<float>> queries;
        for (int i = 0; i < 16; ++i) queries.push_back(db.embeddings[rng.next_below(db.size())]);

        auto measure = [&](std::uint32_t nprobe) {
            prag::Stopwatch clock;
            for (const auto& q : queries) {
                prag::search(index, codebook, q, {nprobe, 2, false});
            }
            return clock.elapsed_s() / queries.size();
        };

        auto grid = parse_u32_list(grid_csv);
        grid.erase(std::remove_if(grid.begin(), grid.end(),
                                  [&](std::uint32_t n) { return n < 1 || n > index.nlist; }),
                   grid.end());
        prag::PerfModel model;
        model.retrieval = prag::calibrate_retrieval(measure, grid, repeats);
        std::cout << "retrieval: slope=" << model.retrieval.slope_s * 1e3 << " ms/nprobe, intercept="
                  << model.retrieval.intercept_s * 1e3 << " ms, residual="
                  << model.retrieval.fit_residual_s * 1e3 << " ms\n";

        if (!gen_path.empty()) {
            auto cfg = prag::load_generator_config(gen_path);
            auto generator = prag::make_generator(cfg, prag::documents_from_database(db));
            auto positions = parse_u32_list(positions_csv);
            auto time_chunk = [&](std::uint64_t position) {
                std::vector<prag::TokenId> ctx(position, 1);
                prag::Stopwatch clock;
                generator->generate_chunk(ctx, m_prime);
                return clock.elapsed_s();
            };
            std::vector<std::uint64_t> pos64(positions.begin(), positions.end());
            model.inference = prag::calibrate_inference(time_chunk, pos64, m_prime);
            if (model.inference.monotonicity_warning) {
                std::cerr << "warning: inference latency not monotone in position\n";
            }
        }
        prag::store_perf_model(model, out_path);
        std::cout << "wrote " << out_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
