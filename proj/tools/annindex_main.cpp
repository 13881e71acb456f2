#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "prag/annindex.hpp"
#include "prag/tokendb.hpp"

namespace {

std::vector<std::uint32_t> parse_grid(const std::string& csv) {
    std::vector<std::uint32_t> grid;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) grid.push_back(std::stoul(item));
    return grid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IVF-PQ index builder and recall evaluator"};
    app.require_subcommand(1);

    auto* build = app.add_subcommand("build", "train an IVF-PQ index over a chunk database");
    std::string db_path, out_path;
    std::uint32_t nlist = 256, nsq = 0;
    std::uint64_t seed = 7;
    build->add_option("--db", db_path, "chunk database file")->required();
    build->add_option("--nlist", nlist, "number of IVF lists");
    build->add_option("--nsq", nsq, "PQ subquantizers (default d/4)");
    build->add_option("--seed", seed, "training seed");
    build->add_option("--out", out_path, "output index file")->required();

    auto* eval = app.add_subcommand("eval-recall", "recall@k against the brute-force oracle");
    std::string idx_path, grid_csv = "1,2,4,8,16,32,64,128,256";
    std::uint32_t n_queries = 200, k = 2;
    std::uint64_t query_seed = 13;
    eval->add_option("--db", db_path, "chunk database file")->required();
    eval->add_option("--idx", idx_path, "index file")->required();
    eval->add_option("--queries", n_queries, "number of random queries");
    eval->add_option("--k", k, "neighbors per query");
    eval->add_option("--nprobe-grid", grid_csv, "comma-separated nprobe values");
    eval->add_option("--seed", query_seed, "query sampling seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed()) {
            auto db = prag::load_database(db_path);
            prag::TrainParams params;
            params.nlist = nlist;
            params.n_subquantizers = nsq;
            params.seed = seed;
            auto [index, codebook] = prag::train_index(db.embeddings, params);
            prag::store_index(index, codebook, out_path);
            std::cout << "trained nlist=" << index.nlist << " nsq=" << codebook.n_subquantizers
                      << " over " << db.size() << " vectors -> " << out_path << "\n";
            return 0;
        }

        auto db = prag::load_database(db_path);
        auto [index, codebook] = prag::load_index(idx_path);
        auto grid = parse_grid(grid_csv);

        // Queries: database vectors perturbed with small Gaussian noise, so
        // the true neighbor is nontrivial but recall is meaningful.
        prag::SplitMix64 rng(query_seed);
        std::vector<std::vector<float>> queries;
        for (std::uint32_t q = 0; q < n_queries; ++q) {
            auto vec = db.embeddings[rng.next_below(db.size())];
            for (auto& x : vec) x += 0.05f * static_cast<float>(rng.next_gaussian());
            queries.push_back(std::move(vec));
        }
        std::vector<prag::SearchResult> exact;
        for (const auto& q : queries) exact.push_back(prag::brute_force_search(db.embeddings, q, k));

        std::cout << "nprobe,recall\n";
        for (std::uint32_t nprobe : grid) {
            if (nprobe < 1 || nprobe > index.nlist) continue;
            double acc = 0.0;
            for (std::uint32_t q = 0; q < n_queries; ++q) {
                auto approx = prag::search(index, codebook, queries[q], {nprobe, k, false});
                acc += prag::recall_at_k(approx, exact[q]);
            }
            std::cout << nprobe << ',' << acc / n_queries << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
