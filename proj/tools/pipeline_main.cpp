#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "prag/pipeline.hpp"
#include "prag/service.hpp"
#include "prag/tokenizer.hpp"

int main(int argc, char** argv) {
    CLI::App app{"retrieval-augmented generation pipeline runner"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run one generation and write its trace");
    std::string mode = "piperag", nprobe_arg = "auto", endpoint;
    std::string db_path, idx_path, perf_path, gen_path, prompt_path, trace_path;
    std::uint32_t interval = 32, tokens = 1024, k = 2;
    std::uint64_t embed_seed = 7;
    run->add_option("--mode", mode, "piperag|retro|retro_plus|retrieve_once|none");
    run->add_option("--interval", interval, "retrieval interval m'");
    run->add_option("--nprobe", nprobe_arg, "fixed nprobe value or 'auto'");
    run->add_option("--tokens", tokens, "tokens to generate");
    run->add_option("--k", k, "neighbors per retrieval");
    run->add_option("--db", db_path, "chunk database file")->required();
    run->add_option("--idx", idx_path, "index file")->required();
    run->add_option("--perf", perf_path, "perf model JSON (required for --nprobe auto)");
    run->add_option("--gen", gen_path, "generator config JSON")->required();
    run->add_option("--prompt", prompt_path, "prompt text file")->required();
    run->add_option("--trace", trace_path, "output trace JSON")->required();
    run->add_option("--endpoint", endpoint, "host:port of a retrieval service (default in-process)");
    run->add_option("--embed-seed", embed_seed, "embedding seed (must match the database)");

    CLI11_PARSE(app, argc, argv);

    try {
        auto db = prag::load_database(db_path);
        auto [index, codebook] = prag::load_index(idx_path);

        prag::PerfModel perf;
        if (!perf_path.empty()) perf = prag::load_perf_model(perf_path);

        auto gen_cfg = prag::load_generator_config(gen_path);
        auto generator = prag::make_generator(gen_cfg, prag::documents_from_database(db));

        std::ifstream prompt_is(prompt_path, std::ios::binary);
        if (!prompt_is) throw prag::FormatError("cannot open prompt file " + prompt_path);
        std::ostringstream prompt_ss;
        prompt_ss << prompt_is.rdbuf();
        auto prompt = prag::tokenize(prompt_ss.str());

        prag::PipelineConfig config;
        config.mode = prag::mode_from_name(mode);
        config.interval = config.mode == prag::PipelineMode::retro ? db.m : interval;
        config.query_window = db.m;
        config.staleness = config.mode == prag::PipelineMode::piperag ? config.interval : 0;
        config.k = k;
        config.total_tokens = tokens - tokens % config.interval;
        config.nprobe_policy = nprobe_arg == "auto"
                                   ? prag::NprobePolicy::automatic()
                                   : prag::NprobePolicy::fixed(std::stoul(nprobe_arg));

        std::unique_ptr<prag::Retriever> retriever;
        if (!endpoint.empty()) {
            auto colon = endpoint.rfind(':');
            if (colon == std::string::npos) throw prag::ConfigError("endpoint must be host:port");
            retriever = std::make_unique<prag::NetworkRetriever>(
                endpoint.substr(0, colon),
                static_cast<std::uint16_t>(std::stoul(endpoint.substr(colon + 1))), index.nlist);
        } else {
            retriever = std::make_unique<prag::LocalRetriever>(db, index, codebook, embed_seed,
                                                               perf.retrieval);
        }

        prag::PipelineEngine engine(*generator, retriever.get(), &perf.inference);
        auto trace = engine.run(config, prompt);
        prag::store_trace(trace, trace_path);
        std::cout << "mode=" << trace.mode << " tokens=" << trace.final_tokens.size()
                  << " latency_s=" << trace.total_latency_s << " stall_s=" << trace.stall_time_s
                  << " retrievals=" << trace.retrieval_count << " -> " << trace_path << "\n";
        return 0;
    } catch (const prag::PipelineError& e) {
        std::cerr << "error: " << e.what() << " (partial trace: " << e.partial.events.size()
                  << " events)\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
