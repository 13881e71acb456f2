#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "prag/tokendb.hpp"
#include "prag/tokenizer.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"token-chunk database builder"};
    app.require_subcommand(1);

    auto* build = app.add_subcommand("build", "tokenize a corpus directory and build a chunk database");
    std::string corpus_dir, out_path;
    std::uint32_t m = prag::kDefaultChunkSize;
    std::uint32_t dim = prag::kDefaultDim;
    std::uint64_t seed = 7;
    build->add_option("--corpus", corpus_dir, "directory of text files, one document each")->required();
    build->add_option("--m", m, "tokens per chunk");
    build->add_option("--dim", dim, "embedding dimension");
    build->add_option("--seed", seed, "embedding seed");
    build->add_option("--out", out_path, "output database file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(corpus_dir)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            std::cerr << "no files found under " << corpus_dir << "\n";
            return 1;
        }
        prag::Corpus corpus;
        for (const auto& file : files) {
            std::ifstream is(file, std::ios::binary);
            std::ostringstream ss;
            ss << is.rdbuf();
            corpus.documents.push_back(prag::tokenize(ss.str(), corpus.vocab_size));
        }
        auto db = prag::build_database(corpus, m, dim, seed);
        prag::store_database(db, out_path);
        std::cout << "wrote " << db.size() << " chunks (" << files.size() << " documents) to "
                  << out_path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
