#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "prag/service.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retrieval service over TCP"};
    std::string db_path, idx_path, perf_path;
    std::string bind = "127.0.0.1:9400";
    std::uint64_t embed_seed = 7;
    double safety_margin = 0.10;
    app.add_option("--db", db_path, "chunk database file")->required();
    app.add_option("--idx", idx_path, "index file")->required();
    app.add_option("--perf", perf_path, "perf model JSON (enables budget-driven nprobe)");
    app.add_option("--bind", bind, "host:port to listen on (port 0 picks one)");
    app.add_option("--embed-seed", embed_seed, "embedding seed (must match the database)");
    app.add_option("--margin", safety_margin, "safety margin for budget-driven nprobe");

    CLI11_PARSE(app, argc, argv);

    if (const char* env = std::getenv("PRAG_BIND")) bind = env;

    try {
        auto colon = bind.rfind(':');
        if (colon == std::string::npos) throw prag::ConfigError("--bind must be host:port");
        std::string host = bind.substr(0, colon);
        auto port = static_cast<std::uint16_t>(std::stoul(bind.substr(colon + 1)));

        auto db = prag::load_database(db_path);
        auto [index, codebook] = prag::load_index(idx_path);
        prag::RetrievalPerfModel perf;
        if (!perf_path.empty()) perf = prag::load_perf_model(perf_path).retrieval;

        prag::RetrievalService service(db, index, codebook, embed_seed, perf, safety_margin);
        auto bound = service.start(host, port);
        std::cout << "serving " << db.size() << " chunks on " << host << ":" << bound << std::endl;

        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_stop) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
        service.stop();
        std::cout << "shut down\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
