#pragma once
// Metrics, confusion-map rendering, region rates, NDVI delta, and the
// label-budget ablation runner: nested positive draws, five methods, ten
// repetitions per cell, mean / 10th / 90th percentile aggregation, CSV and
// curve-plot emission.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hetcd/cae.hpp"
#include "hetcd/occ.hpp"
#include "hetcd/plot.hpp"
#include "hetcd/png.hpp"
#include "hetcd/raster.hpp"

namespace hetcd {

struct MetricsRecord {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double f1 = 0.0;
    bool degenerate = false;  // no positives anywhere in pred or gt
};

inline MetricsRecord f1_score(const Mask& pred, const Mask& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("f1_score: shape mismatch");
    MetricsRecord m;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        m.tp += p && g;
        m.fp += p && !g;
        m.fn += !p && g;
        m.tn += !p && !g;
    }
    if (m.tp == 0 && m.fp == 0 && m.fn == 0) {
        m.f1 = 1.0;
        m.degenerate = true;
    } else {
        m.f1 = static_cast<double>(m.tp) / (static_cast<double>(m.tp) + 0.5 * (m.fp + m.fn));
    }
    return m;
}

// TP white, TN black, FP green, FN red; bit-exact.
inline RgbImage confusion_map(const Mask& pred, const Mask& gt, int height, int width) {
    if (pred.size() != gt.size() ||
        static_cast<std::int64_t>(pred.size()) != static_cast<std::int64_t>(height) * width)
        throw std::invalid_argument("confusion_map: shape mismatch");
    RgbImage img(width, height);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(pred.size()); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        std::uint8_t r = 0, gr = 0, b = 0;
        if (p && g) r = gr = b = 255;
        else if (p && !g) gr = 255;
        else if (!p && g) r = 255;
        img.pixels[i * 3 + 0] = r;
        img.pixels[i * 3 + 1] = gr;
        img.pixels[i * 3 + 2] = b;
    }
    return img;
}

enum class RegionPolarity { expect_positive, expect_negative };

struct RegionSpec {
    std::string name;
    Mask mask;
    RegionPolarity polarity = RegionPolarity::expect_positive;
};

struct RegionRate {
    std::string name;
    RegionPolarity polarity = RegionPolarity::expect_positive;
    std::int64_t pixels = 0;
    double positive_rate = 0.0;
    double negative_rate = 0.0;
};

inline std::vector<RegionRate> region_rates(const Mask& pred, const std::vector<RegionSpec>& regions) {
    std::vector<RegionRate> out;
    for (const auto& r : regions) {
        if (r.mask.size() != pred.size())
            throw std::invalid_argument("region_rates: mask shape mismatch for '" + r.name + "'");
        RegionRate rate;
        rate.name = r.name;
        rate.polarity = r.polarity;
        std::int64_t pos = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (!r.mask[i]) continue;
            rate.pixels += 1;
            pos += pred[i] != 0;
        }
        if (rate.pixels == 0) throw std::invalid_argument("region_rates: empty mask '" + r.name + "'");
        rate.positive_rate = static_cast<double>(pos) / rate.pixels;
        rate.negative_rate = 1.0 - rate.positive_rate;
        out.push_back(std::move(rate));
    }
    return out;
}

struct NdviResult {
    double mean_delta = 0.0;
    std::int64_t pixels_used = 0;
    std::int64_t pixels_excluded = 0;  // zero NIR+Red denominator at either time
};

inline NdviResult ndvi_delta(const Raster& pre, const Raster& post, const Mask& mask) {
    const int pre_red = pre.channel_named("red"), pre_nir = pre.channel_named("nir");
    const int post_red = post.channel_named("red"), post_nir = post.channel_named("nir");
    if (pre_red < 0 || pre_nir < 0 || post_red < 0 || post_nir < 0)
        throw std::invalid_argument("ndvi_delta: rasters must expose Red and NIR channels");
    if (pre.height != post.height || pre.width != post.width ||
        static_cast<std::int64_t>(mask.size()) != pre.pixels())
        throw std::invalid_argument("ndvi_delta: shape mismatch");

    NdviResult res;
    double sum = 0.0;
    const std::int64_t n = pre.pixels();
    for (std::int64_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double r1 = pre.plane(pre_red)[i], n1 = pre.plane(pre_nir)[i];
        const double r2 = post.plane(post_red)[i], n2 = post.plane(post_nir)[i];
        if (n1 + r1 == 0.0 || n2 + r2 == 0.0) {
            res.pixels_excluded += 1;
            continue;
        }
        sum += (n2 - r2) / (n2 + r2) - (n1 - r1) / (n1 + r1);
        res.pixels_used += 1;
    }
    res.mean_delta = res.pixels_used > 0 ? sum / res.pixels_used : 0.0;
    return res;
}

// Linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile: empty input");
    std::sort(values.begin(), values.end());
    const double h = q * (static_cast<double>(values.size()) - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - lo) * (values[lo + 1] - values[lo]);
}

// ---------------------------------------------------------------------------
// Ablation runner
// ---------------------------------------------------------------------------

enum class Method { two_step_full, two_step_no_orig, two_step_no_diff, step1_only, isvm };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::two_step_full:
        case Method::two_step_no_orig:
        case Method::two_step_no_diff: return "two-step";
        case Method::step1_only: return "step1";
        case Method::isvm: return "isvm";
    }
    return "two-step";
}

inline FeatureVariant method_variant(Method m) {
    switch (m) {
        case Method::two_step_no_orig: return FeatureVariant::no_originals;
        case Method::two_step_no_diff: return FeatureVariant::no_differences;
        default: return FeatureVariant::full;
    }
}

struct AblationConfig {
    std::vector<std::int64_t> npos_grid = {25, 50, 100, 250, 500, 1000, 2000, 3000};
    int repetitions = 10;
    std::uint64_t master_seed = 0;
    double threshold = 0.5;
    std::vector<Method> methods = {Method::two_step_full, Method::two_step_no_orig,
                                   Method::two_step_no_diff, Method::step1_only, Method::isvm};
    int jobs = 1;
    MlpTrainConfig mlp;
};

struct AblationCell {
    Method method = Method::two_step_full;
    std::int64_t npos = 0;
    int rep = 0;
    MetricsRecord metrics;
};

struct AblationRow {
    Method method = Method::two_step_full;
    std::int64_t npos = 0;
    double mean_f1 = 0.0, p10_f1 = 0.0, p90_f1 = 0.0;
};

struct AblationReport {
    AblationConfig config;
    std::vector<AblationCell> cells;  // grid-major, then rep, then method
    std::vector<AblationRow> rows;
};

inline AblationReport run_ablation(const DatasetBundle& bundle, const TranslationResult& translation,
                                   const AblationConfig& cfg) {
    if (!bundle.has_ground_truth()) throw std::invalid_argument("run_ablation: missing ground truth");
    std::int64_t total_pos = 0;
    for (auto v : bundle.ground_truth) total_pos += v;
    for (auto npos : cfg.npos_grid)
        if (npos > total_pos)
            throw std::invalid_argument("run_ablation: npos " + std::to_string(npos) +
                                        " exceeds positive count " + std::to_string(total_pos));

    // Features from the normalized rasters (normalization is idempotent, so
    // already-normalized bundles pass through unchanged).
    const Raster x = normalize_raster(bundle.t1);
    const Raster y = normalize_raster(bundle.t2);
    const FeatureStack f_full = stack_features(x, y, translation, FeatureVariant::full);
    const FeatureStack f_noor = stack_features(x, y, translation, FeatureVariant::no_originals);
    const FeatureStack f_nodi = stack_features(x, y, translation, FeatureVariant::no_differences);
    auto features_for = [&](FeatureVariant v) -> const FeatureStack& {
        switch (v) {
            case FeatureVariant::no_originals: return f_noor;
            case FeatureVariant::no_differences: return f_nodi;
            default: return f_full;
        }
    };

    const std::size_t n_methods = cfg.methods.size();
    AblationReport report;
    report.config = cfg;
    report.cells.resize(cfg.npos_grid.size() * cfg.repetitions * n_methods);

    struct Task {
        std::size_t grid_idx;
        int rep;
    };
    std::vector<Task> tasks;
    for (std::size_t gi = 0; gi < cfg.npos_grid.size(); ++gi)
        for (int rep = 0; rep < cfg.repetitions; ++rep) tasks.push_back({gi, rep});

    auto run_task = [&](const Task& task) {
        const std::int64_t npos = cfg.npos_grid[task.grid_idx];
        // Repetition seed depends only on (master_seed, rep): adding methods
        // or grid points never perturbs the sample draws, and the same rep
        // reuses one nested permutation across the whole grid.
        const std::uint64_t seed_r = mix_seed(cfg.master_seed, static_cast<std::uint64_t>(task.rep));
        const LabeledSet p = sample_positive_set(bundle.ground_truth, npos, seed_r);

        bool need_full = false, need_noor = false, need_nodi = false;
        for (Method m : cfg.methods) {
            switch (method_variant(m)) {
                case FeatureVariant::full: need_full = true; break;
                case FeatureVariant::no_originals: need_noor = true; break;
                case FeatureVariant::no_differences: need_nodi = true; break;
            }
        }
        Step1Result s1_full, s1_noor, s1_nodi;
        if (need_full) s1_full = fit_step1(f_full, p);
        if (need_noor) s1_noor = fit_step1(f_noor, p);
        if (need_nodi) s1_nodi = fit_step1(f_nodi, p);
        auto step1_for = [&](FeatureVariant v) -> const Step1Result& {
            switch (v) {
                case FeatureVariant::no_originals: return s1_noor;
                case FeatureVariant::no_differences: return s1_nodi;
                default: return s1_full;
            }
        };

        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            const Method method = cfg.methods[mi];
            const FeatureVariant variant = method_variant(method);
            const FeatureStack& feats = features_for(variant);
            const Step1Result& s1 = step1_for(variant);
            const std::uint64_t seed_m = mix_seed(seed_r, 1000 + static_cast<std::uint64_t>(method));

            Mask pred;
            if (method == Method::step1_only) {
                pred = step1_change_map(s1);
            } else if (method == Method::isvm) {
                const auto model = fit_isvm(feats, p, s1.reliable_negatives, seed_m);
                pred = isvm_predict(model, feats);
            } else {
                const auto ens = fit_step2(feats, p, s1.reliable_negatives, seed_m, cfg.mlp);
                pred = predict(ens, feats, cfg.threshold).binary;
            }
            AblationCell cell;
            cell.method = method;
            cell.npos = npos;
            cell.rep = task.rep;
            cell.metrics = f1_score(pred, bundle.ground_truth);
            report.cells[(task.grid_idx * cfg.repetitions + task.rep) * n_methods + mi] = cell;
        }
    };

    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
        for (const auto& t : tasks) run_task(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(jobs);
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&, w] {
                try {
                    for (;;) {
                        const std::size_t i = next.fetch_add(1);
                        if (i >= tasks.size()) break;
                        run_task(tasks[i]);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    // Deterministic reduce over repetition scores.
    for (std::size_t gi = 0; gi < cfg.npos_grid.size(); ++gi) {
        for (std::size_t mi = 0; mi < n_methods; ++mi) {
            std::vector<double> scores;
            for (int rep = 0; rep < cfg.repetitions; ++rep)
                scores.push_back(report.cells[(gi * cfg.repetitions + rep) * n_methods + mi].metrics.f1);
            AblationRow row;
            row.method = cfg.methods[mi];
            row.npos = cfg.npos_grid[gi];
            double sum = 0.0;
            for (double s : scores) sum += s;
            row.mean_f1 = sum / scores.size();
            row.p10_f1 = percentile(scores, 0.10);
            row.p90_f1 = percentile(scores, 0.90);
            report.rows.push_back(row);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline void write_metrics_csv(const std::filesystem::path& path, const AblationReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write metrics csv: " + path.string());
    out << "method,variant,npos,rep,f1,tp,fp,fn,tn\n";
    char line[256];
    for (const auto& c : report.cells) {
        std::snprintf(line, sizeof line, "%s,%s,%lld,%d,%.6f,%lld,%lld,%lld,%lld\n",
                      method_name(c.method), to_string(method_variant(c.method)),
                      static_cast<long long>(c.npos), c.rep, c.metrics.f1,
                      static_cast<long long>(c.metrics.tp), static_cast<long long>(c.metrics.fp),
                      static_cast<long long>(c.metrics.fn), static_cast<long long>(c.metrics.tn));
        out << line;
    }
}

inline void write_report_csv(const std::filesystem::path& path, const AblationReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report csv: " + path.string());
    out << "method,variant,npos,mean_f1,p10_f1,p90_f1\n";
    char line[256];
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof line, "%s,%s,%lld,%.6f,%.6f,%.6f\n", method_name(r.method),
                      to_string(method_variant(r.method)), static_cast<long long>(r.npos), r.mean_f1,
                      r.p10_f1, r.p90_f1);
        out << line;
    }
}

inline RgbImage render_ablation_plot(const AblationReport& report) {
    static const Rgb palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                  {214, 39, 40}, {148, 103, 189}};
    std::vector<PlotSeries> series;
    for (std::size_t mi = 0; mi < report.config.methods.size(); ++mi) {
        const Method m = report.config.methods[mi];
        PlotSeries s;
        s.label = std::string(method_name(m));
        if (method_variant(m) != FeatureVariant::full)
            s.label += std::string(" ") + to_string(method_variant(m));
        s.color = palette[mi % 5];
        for (const auto& row : report.rows) {
            if (row.method != m) continue;
            s.x.push_back(static_cast<double>(row.npos));
            s.y.push_back(row.mean_f1);
            s.ylo.push_back(row.p10_f1);
            s.yhi.push_back(row.p90_f1);
        }
        series.push_back(std::move(s));
    }
    return render_curve_plot(series);
}

}  // namespace hetcd
