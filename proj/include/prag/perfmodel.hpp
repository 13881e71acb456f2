#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prag/common.hpp"

namespace prag {

// Fitted retrieval-latency line in nprobe. The intercept absorbs the
// nprobe-independent costs (network, query encoding, index scan).
struct RetrievalPerfModel {
    double slope_s = 0.0;      // seconds per nprobe unit
    double intercept_s = 0.0;  // seconds
    double fit_residual_s = 0.0;
    bool clamped = false;  // a negative fitted coefficient was clamped to 0

    double predict(std::uint32_t nprobe) const { return slope_s * nprobe + intercept_s; }
};

struct InferenceBucket {
    std::uint64_t position = 0;
    std::uint32_t m = 0;  // chunk size the bucket was measured with
    double seconds = 0.0;
};

struct InferencePerfModel {
    std::vector<InferenceBucket> buckets;  // ascending position
    bool monotonicity_warning = false;     // >20% violation seen during calibration
};

struct BudgetPrediction {
    double seconds = 0.0;
    bool extrapolated = false;
};

namespace detail {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double max_abs_residual = 0.0;
    double r_squared = 1.0;
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double denom = n * sxx - sx * sx;
    LineFit fit;
    if (denom == 0.0) {
        fit.intercept = sy / n;
    } else {
        fit.slope = (n * sxy - sx * sy) / denom;
        fit.intercept = (sy - fit.slope * sx) / n;
    }
    double ss_res = 0.0, ss_tot = 0.0, mean_y = sy / n;
    for (std::size_t i = 0; i < n; ++i) {
        double r = y[i] - (fit.slope * x[i] + fit.intercept);
        fit.max_abs_residual = std::max(fit.max_abs_residual, std::abs(r));
        ss_res += r * r;
        ss_tot += (y[i] - mean_y) * (y[i] - mean_y);
    }
    fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Measures `retrieve(nprobe)` (which returns elapsed seconds) over the grid
// and fits a least-squares line to the median of `repeats` runs per point.
// Two warm-up runs per grid point are discarded.
inline RetrievalPerfModel calibrate_retrieval(const std::function<double(std::uint32_t)>& retrieve,
                                              const std::vector<std::uint32_t>& nprobe_grid,
                                              int repeats = 5, int warmups = 2) {
    std::vector<std::uint32_t> grid = nprobe_grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    if (grid.size() < 2) throw ConfigError("calibrate_retrieval: need >= 2 distinct nprobe values");
    if (repeats < 3) throw ConfigError("calibrate_retrieval: repeats must be >= 3");

    std::vector<double> xs, ys;
    for (std::uint32_t nprobe : grid) {
        for (int w = 0; w < warmups; ++w) retrieve(nprobe);
        std::vector<double> runs;
        for (int r = 0; r < repeats; ++r) runs.push_back(retrieve(nprobe));
        xs.push_back(static_cast<double>(nprobe));
        ys.push_back(detail::median(runs));
    }
    auto fit = detail::least_squares(xs, ys);
    RetrievalPerfModel model;
    model.slope_s = fit.slope;
    model.intercept_s = fit.intercept;
    model.fit_residual_s = fit.max_abs_residual;
    if (model.slope_s < 0.0) { model.slope_s = 0.0; model.clamped = true; }
    if (model.intercept_s < 0.0) { model.intercept_s = 0.0; model.clamped = true; }
    return model;
}

// Per-bucket median chunk-generation latencies at the given positions.
// `generate(position)` returns measured seconds for one m'-token chunk.
inline InferencePerfModel calibrate_inference(const std::function<double(std::uint64_t)>& generate,
                                              const std::vector<std::uint64_t>& positions,
                                              std::uint32_t m_prime, int repeats = 3,
                                              int warmups = 2) {
    if (positions.empty()) throw ConfigError("calibrate_inference: positions must be non-empty");
    std::vector<std::uint64_t> pos = positions;
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());

    InferencePerfModel model;
    for (std::uint64_t p : pos) {
        for (int w = 0; w < warmups; ++w) generate(p);
        std::vector<double> runs;
        for (int r = 0; r < repeats; ++r) runs.push_back(generate(p));
        model.buckets.push_back({p, m_prime, detail::median(runs)});
    }
    for (std::size_t i = 1; i < model.buckets.size(); ++i) {
        if (model.buckets[i].seconds < 0.8 * model.buckets[i - 1].seconds) {
            model.monotonicity_warning = true;
        }
    }
    return model;
}

// Largest nprobe in [1, nlist] whose predicted latency fits the budget after
// the safety margin; returns 1 when even the smallest search space does not
// fit (retrieval still happens, the pipeline records the stall).
inline std::uint32_t select_nprobe(const RetrievalPerfModel& model, double budget_s,
                                   std::uint32_t nlist, double safety_margin = 0.10) {
    if (budget_s <= 0.0) return 1;
    double limit = budget_s * (1.0 - safety_margin);
    if (model.predict(1) > limit) return 1;
    if (model.slope_s <= 0.0) return nlist;
    double max_n = (limit - model.intercept_s) / model.slope_s;
    if (max_n >= static_cast<double>(nlist)) return nlist;
    return static_cast<std::uint32_t>(std::max(1.0, std::floor(max_n + 1e-9)));
}

// Bucketed latency for the chunk beginning at `position`: linear
// interpolation between buckets, extrapolation past the calibrated range
// using the last two buckets.
inline BudgetPrediction predict_chunk_budget(const InferencePerfModel& model, std::uint64_t position) {
    if (model.buckets.empty()) throw ConfigError("predict_chunk_budget: model not calibrated");
    const auto& b = model.buckets;
    if (b.size() == 1) return {b[0].seconds, position != b[0].position};
    if (position <= b.front().position) return {b.front().seconds, position < b.front().position};
    if (position >= b.back().position) {
        if (position == b.back().position) return {b.back().seconds, false};
        const auto& p0 = b[b.size() - 2];
        const auto& p1 = b.back();
        double slope = (p1.seconds - p0.seconds) /
                       static_cast<double>(p1.position - p0.position);
        return {p1.seconds + slope * static_cast<double>(position - p1.position), true};
    }
    for (std::size_t i = 1; i < b.size(); ++i) {
        if (position <= b[i].position) {
            double t = static_cast<double>(position - b[i - 1].position) /
                       static_cast<double>(b[i].position - b[i - 1].position);
            return {b[i - 1].seconds + t * (b[i].seconds - b[i - 1].seconds), false};
        }
    }
    return {b.back().seconds, false};  // unreachable
}

struct PerfModel {
    RetrievalPerfModel retrieval;
    InferencePerfModel inference;
};

inline void store_perf_model(const PerfModel& model, const std::string& path) {
    nlohmann::json j;
    j["slope_s"] = model.retrieval.slope_s;
    j["intercept_s"] = model.retrieval.intercept_s;
    j["fit_residual_s"] = model.retrieval.fit_residual_s;
    j["inference_buckets"] = nlohmann::json::array();
    for (const auto& b : model.inference.buckets) {
        j["inference_buckets"].push_back({{"position", b.position}, {"m", b.m}, {"seconds", b.seconds}});
    }
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

inline PerfModel load_perf_model(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid perf model JSON in " + path + ": " + e.what());
    }
    PerfModel model;
    model.retrieval.slope_s = j.at("slope_s").get<double>();
    model.retrieval.intercept_s = j.at("intercept_s").get<double>();
    model.retrieval.fit_residual_s = j.at("fit_residual_s").get<double>();
    for (const auto& b : j.at("inference_buckets")) {
        model.inference.buckets.push_back({b.at("position").get<std::uint64_t>(),
                                           b.at("m").get<std::uint32_t>(),
                                           b.at("seconds").get<double>()});
    }
    return model;
}

// Monotonic-clock stopwatch used by all calibration and trace code.
class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double elapsed_s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace prag
