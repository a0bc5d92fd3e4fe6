#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "xbench/attribution.hpp"
#include "xbench/augment.hpp"
#include "xbench/corpus.hpp"
#include "xbench/log.hpp"
#include "xbench/metrics.hpp"
#include "xbench/synthetic.hpp"
#include "xbench/xbw.hpp"

namespace xbench {

inline constexpr std::string_view version = "1.0.0";

struct RunConfig {
    std::filesystem::path model_path;
    std::optional<std::filesystem::path> corpus_dir; // used when set
    std::size_t synthetic_count = 0;                 // otherwise: generate this many images
    std::vector<Method> methods{all_methods.begin(), all_methods.end()};
    std::vector<AugKind> kinds{all_aug_kinds.begin(), all_aug_kinds.end()};
    std::optional<std::filesystem::path> intervals_file; // empty: calibrate on the corpus
    MetricConfig metrics;
    ExplainOptions explain;
    std::size_t samples = 21;
    std::filesystem::path out_dir = "out";
    std::size_t workers = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (methods.empty()) throw ConfigError("at least one method is required");
        if (kinds.empty()) throw ConfigError("at least one augmentation kind is required");
        if (workers == 0) throw ConfigError("workers must be >= 1");
        if (samples < 3 || samples % 2 == 0)
            throw ConfigError(fmt::format("samples must be odd and >= 3 (got {})", samples));
        if (!corpus_dir && synthetic_count == 0) throw ConfigError("either a corpus or --synthetic <n> is required");
        metrics.validate();
    }
};

/// Interval actually used for one kind, with its calibration outcome when calibrated.
struct IntervalChoice {
    AugmentationInterval interval;
    bool calibrated = false;
    bool warning = false;
    double drop_low = 0.0;
    double drop_high = 0.0;
};

struct EvaluationRecord {
    std::string image_id;
    Method method = Method::Gradients;
    AugKind kind = AugKind::Brightness;
    double probability_score = 0.0;
    double correlation_score = 0.0;
    double topk_score = 0.0;
    double s_correlation = 0.0;
    double s_topk = 0.0;
    std::size_t skipped_samples = 0;
};

struct PixelFlipRecord {
    std::string image_id;
    std::optional<Method> method; // empty: random-order baseline
    double score = 0.0;
    ResponseCurve curve;
};

struct CellFailure {
    std::string image_id;
    std::string cell; // "<method>/<kind>", "<method>/pixel_flip" or "random/pixel_flip"
    std::string message;
};

struct CellCurves {
    std::string image_id;
    Method method;
    AugKind kind;
    CurveSet curves;
};

struct Aggregate {
    double mean = 0.0;
    double sem = 0.0;
    std::size_t n = 0;
};

inline Aggregate aggregate(const std::vector<double>& v) { return {mean(v), standard_error(v), v.size()}; }

struct Report {
    RunConfig config;
    FilterSummary filter;
    std::map<AugKind, IntervalChoice> intervals;
    std::vector<EvaluationRecord> records;     // image order, then method, then kind
    std::vector<PixelFlipRecord> pixel_flips;  // image order, methods then baseline
    std::vector<CellCurves> curves;            // parallel to records
    std::vector<CellFailure> failures;
    std::size_t total_cells = 0;

    double failure_rate() const {
        return total_cells == 0 ? 0.0 : static_cast<double>(failures.size()) / static_cast<double>(total_cells);
    }

    /// Mean and SEM of `field` over the records of one (method, kind) cell.
    Aggregate cell(Method m, AugKind k, double EvaluationRecord::*field) const {
        std::vector<double> v;
        for (const auto& r : records)
            if (r.method == m && r.kind == k) v.push_back(r.*field);
        return aggregate(v);
    }

    Aggregate pixel_flip(std::optional<Method> m) const {
        std::vector<double> v;
        for (const auto& r : pixel_flips)
            if (r.method == m) v.push_back(r.score);
        return aggregate(v);
    }
};

// ---------------------------------------------------------------------------------------------
// Intervals

/// Parses lines "<Kind> <low> <high>" ('#' starts a comment).
inline std::map<AugKind, AugmentationInterval> read_intervals(const std::filesystem::path& path, std::size_t samples) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot read intervals file '{}'", path.string()));
    std::map<AugKind, AugmentationInterval> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string name;
        if (!(ls >> name)) continue;
        AugmentationInterval iv;
        iv.kind = parse_aug_kind(name);
        iv.samples = samples;
        if (!(ls >> iv.low >> iv.high))
            throw ConfigError(fmt::format("{}:{}: expected '<kind> <low> <high>'", path.string(), line_no));
        iv.validate();
        out[iv.kind] = iv;
    }
    return out;
}

inline void write_intervals(const std::map<AugKind, IntervalChoice>& intervals, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    for (const auto& [kind, c] : intervals) out << fmt::format("{} {} {}\n", aug_name(kind), c.interval.low, c.interval.high);
}

inline std::map<AugKind, IntervalChoice> calibrate_all(const ModelGraph& model, const Corpus& corpus,
                                                       const std::vector<AugKind>& kinds,
                                                       const MetricConfig& config, std::size_t samples) {
    std::map<AugKind, IntervalChoice> out;
    for (auto k : kinds) {
        const auto r = calibrate_interval(model, corpus.entries, k, config, samples);
        out[k] = {r.interval, true, r.warning, r.drop_low, r.drop_high};
        log().info("calibrated {}: [{}, {}]{}", aug_name(k), r.interval.low, r.interval.high,
                   r.warning ? " (warning: target drop not reached)" : "");
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Evaluation

namespace detail {

/// Runs tasks 0..count-1 on `workers` threads; each task writes only its own slot.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& task) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) task(i);
        });
}

inline std::string cell_name(std::optional<Method> m, std::string_view what) {
    return fmt::format("{}/{}", m ? method_key(*m) : std::string_view("random"), what);
}

} // namespace detail

/// Scores one (image, method, kind) cell.
inline EvaluationRecord score_cell(const std::string& id, Method method, AugKind kind, const CurveSet& set,
                                   const AugmentationInterval& interval) {
    EvaluationRecord r;
    r.image_id = id;
    r.method = method;
    r.kind = kind;
    r.skipped_samples = set.skipped;
    r.probability_score = curve_score(set.probability(), interval);
    const auto score_expl = [&](const ResponseCurve& c) {
        return c.params.size() == set.samples.size() ? curve_score(c, interval) : surviving_curve_score(c);
    };
    r.correlation_score = score_expl(set.correlation());
    r.topk_score = score_expl(set.topk());
    r.s_correlation = s_ratio(r.correlation_score, r.probability_score);
    r.s_topk = s_ratio(r.topk_score, r.probability_score);
    return r;
}

/// Evaluates an already loaded model on an already filtered corpus with resolved intervals.
inline Report evaluate(const ModelGraph& model, const Corpus& corpus, const RunConfig& config,
                       const std::map<AugKind, IntervalChoice>& intervals) {
    config.validate();
    for (auto k : config.kinds)
        if (!intervals.count(k)) throw ConfigError(fmt::format("no interval for {}", aug_name(k)));
    Report report;
    report.config = config;
    report.intervals = intervals;

    const std::size_t n_img = corpus.size(), n_m = config.methods.size(), n_k = config.kinds.size();
    const std::size_t n_cells = n_img * n_m * n_k;
    const std::size_t n_flip = n_img * (n_m + 1);

    struct CellSlot {
        std::optional<EvaluationRecord> record;
        std::optional<CurveSet> curves;
        std::optional<PixelFlipRecord> flip;
        std::string error;
    };
    std::vector<CellSlot> slots(n_cells + n_flip);
    std::atomic<std::size_t> done{0};

    detail::parallel_for(slots.size(), config.workers, [&](std::size_t t) {
        CellSlot& slot = slots[t];
        try {
            if (t < n_cells) {
                const std::size_t i = t / (n_m * n_k), m = (t / n_k) % n_m, k = t % n_k;
                const auto& e = corpus.entries[i];
                const auto kind = config.kinds[k];
                auto interval = intervals.at(kind).interval;
                interval.samples = config.samples;
                auto set = build_curves(model, e.image, e.label, config.methods[m], interval, config.metrics,
                                        config.explain);
                slot.record = score_cell(e.id, config.methods[m], kind, set, interval);
                slot.curves = std::move(set);
            } else {
                const std::size_t f = t - n_cells, i = f / (n_m + 1), m = f % (n_m + 1);
                const auto& e = corpus.entries[i];
                PixelFlipRecord r;
                r.image_id = e.id;
                if (m < n_m) {
                    r.method = config.methods[m];
                    const auto expl = explain(model, e.image, e.label, *r.method, config.explain);
                    r.curve = pixel_flip_curve(model, e.image, expl.heatmap, e.label, config.metrics);
                } else {
                    const auto order = random_order(e.image.pixel_count(),
                                                    detail::splitmix64(config.seed ^ detail::splitmix64(i + 1)));
                    r.curve = pixel_flip_curve_ordered(model, e.image, order, e.label, config.metrics);
                }
                r.score = pixel_flip_score(r.curve, config.metrics);
                slot.flip = std::move(r);
            }
        } catch (const std::exception& ex) {
            slot.error = ex.what();
        }
        const auto d = ++done;
        if (d % 50 == 0 || d == slots.size()) log().info("{}/{} cells done", d, slots.size());
    });

    report.total_cells = slots.size();
    for (std::size_t t = 0; t < slots.size(); ++t) {
        auto& s = slots[t];
        if (t < n_cells) {
            const std::size_t i = t / (n_m * n_k), m = (t / n_k) % n_m, k = t % n_k;
            if (s.record) {
                report.records.push_back(*s.record);
                report.curves.push_back({corpus.entries[i].id, config.methods[m], config.kinds[k], std::move(*s.curves)});
            } else {
                report.failures.push_back({corpus.entries[i].id,
                                           fmt::format("{}/{}", method_key(config.methods[m]), aug_name(config.kinds[k])),
                                           s.error});
            }
        } else {
            const std::size_t f = t - n_cells, i = f / (n_m + 1), m = f % (n_m + 1);
            if (s.flip) {
                report.pixel_flips.push_back(std::move(*s.flip));
            } else {
                const std::optional<Method> method = m < n_m ? std::optional(config.methods[m]) : std::nullopt;
                report.failures.push_back({corpus.entries[i].id, detail::cell_name(method, "pixel_flip"), s.error});
            }
        }
    }
    for (const auto& f : report.failures) log().warn("cell {} {} failed: {}", f.image_id, f.cell, f.message);
    return report;
}

/// Loads the model and corpus named by `config`, filters to correctly classified images, resolves
/// intervals (file or calibration) and evaluates the full grid.
inline Report run_evaluation(const RunConfig& config) {
    config.validate();
    const ModelGraph model = load_model(config.model_path);
    const Corpus raw = config.corpus_dir
                           ? load_corpus(*config.corpus_dir, model.input.height, model.input.width)
                           : generate_synthetic_corpus(config.seed, config.synthetic_count, model.input.height,
                                                       model.input.width);
    FilterSummary filter;
    const Corpus corpus = filter_correct(model, raw, &filter);
    if (corpus.empty()) throw ConfigError("no correctly classified images in the corpus");

    std::map<AugKind, IntervalChoice> intervals;
    if (config.intervals_file) {
        const auto parsed = read_intervals(*config.intervals_file, config.samples);
        for (auto k : config.kinds) {
            const auto it = parsed.find(k);
            if (it == parsed.end())
                throw ConfigError(fmt::format("intervals file has no entry for {}", aug_name(k)));
            intervals[k] = {it->second, false, false, 0.0, 0.0};
        }
    } else {
        intervals = calibrate_all(model, corpus, config.kinds, config.metrics, config.samples);
    }
    Report report = evaluate(model, corpus, config, intervals);
    report.filter = filter;
    return report;
}

// ---------------------------------------------------------------------------------------------
// Report files

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    return out;
}

inline nlohmann::ordered_json aggregate_json(const Aggregate& a) {
    return {{"mean", a.mean}, {"sem", a.sem}, {"n", a.n}};
}

/// Rows = methods, columns = kinds, each entry mean and SEM of `field`.
inline nlohmann::ordered_json table_json(const Report& report, double EvaluationRecord::*field) {
    nlohmann::ordered_json t;
    t["rows"] = nlohmann::ordered_json::array();
    for (auto m : report.config.methods) t["rows"].push_back(method_label(m));
    t["columns"] = nlohmann::ordered_json::array();
    for (auto k : report.config.kinds) t["columns"].push_back(aug_name(k));
    t["mean"] = nlohmann::ordered_json::array();
    t["sem"] = nlohmann::ordered_json::array();
    for (auto m : report.config.methods) {
        auto means = nlohmann::ordered_json::array(), sems = nlohmann::ordered_json::array();
        for (auto k : report.config.kinds) {
            const auto a = report.cell(m, k, field);
            means.push_back(a.mean);
            sems.push_back(a.sem);
        }
        t["mean"].push_back(means);
        t["sem"].push_back(sems);
    }
    return t;
}

inline std::string opt_value(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

} // namespace detail

/// Writes records.csv, pixel_flip.csv, table.csv, intervals.txt, summary.json and curves/.
/// Output is a pure function of the report, so re-emitting gives byte-identical files.
inline void emit_report(const Report& report, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "curves");
    fs::create_directories(dir / "curves" / "pixel_flip");

    {
        auto out = detail::open_out(dir / "records.csv");
        out << "image_id,method,augmentation,probability_score,correlation_score,top1000_score,"
               "s_correlation,s_top1000,skipped_samples\n";
        for (const auto& r : report.records)
            out << fmt::format("{},{},{},{},{},{},{},{},{}\n", r.image_id, method_key(r.method), aug_name(r.kind),
                               r.probability_score, r.correlation_score, r.topk_score, r.s_correlation, r.s_topk,
                               r.skipped_samples);
    }
    {
        auto out = detail::open_out(dir / "pixel_flip.csv");
        out << "image_id,method,score\n";
        for (const auto& r : report.pixel_flips)
            out << fmt::format("{},{},{}\n", r.image_id, r.method ? method_key(*r.method) : "random", r.score);
    }
    {
        // Table of S(correlation, probability): methods down, augmentations across, "mean ± sem".
        auto out = detail::open_out(dir / "table.csv");
        out << "method";
        for (auto k : report.config.kinds) out << ',' << aug_name(k);
        out << '\n';
        for (auto m : report.config.methods) {
            out << method_label(m);
            for (auto k : report.config.kinds) {
                const auto a = report.cell(m, k, &EvaluationRecord::s_correlation);
                out << fmt::format(",{:.3f} ± {:.3f}", a.mean, a.sem);
            }
            out << '\n';
        }
    }
    write_intervals(report.intervals, dir / "intervals.txt");

    for (const auto& c : report.curves) {
        auto out = detail::open_out(dir / "curves" /
                                    fmt::format("{}__{}__{}.csv", c.image_id, method_key(c.method), aug_name(c.kind)));
        out << "param,probability,correlation,top1000\n";
        for (const auto& s : c.curves.samples)
            out << fmt::format("{},{},{},{}\n", s.spec.t, s.probability, detail::opt_value(s.correlation),
                               detail::opt_value(s.topk));
    }
    for (const auto& r : report.pixel_flips) {
        auto out = detail::open_out(dir / "curves" / "pixel_flip" /
                                    fmt::format("{}__{}.csv", r.image_id, r.method ? method_key(*r.method) : "random"));
        out << "fraction,relative_probability\n";
        for (std::size_t i = 0; i < r.curve.params.size(); ++i)
            out << fmt::format("{},{}\n", r.curve.params[i], r.curve.values[i]);
    }

    nlohmann::ordered_json j;
    j["version"] = version;
    const auto& cfg = report.config;
    auto& jc = j["config"];
    jc["model"] = cfg.model_path.string();
    if (cfg.corpus_dir) jc["corpus"] = cfg.corpus_dir->string();
    else jc["synthetic"] = cfg.synthetic_count;
    jc["methods"] = nlohmann::ordered_json::array();
    for (auto m : cfg.methods) jc["methods"].push_back(method_key(m));
    jc["augmentations"] = nlohmann::ordered_json::array();
    for (auto k : cfg.kinds) jc["augmentations"].push_back(aug_name(k));
    jc["intervals"] = cfg.intervals_file ? cfg.intervals_file->string() : std::string("calibrate");
    jc["samples"] = cfg.samples;
    jc["seed"] = cfg.seed;
    jc["k"] = cfg.metrics.k;
    jc["pixel_flip_fraction"] = cfg.metrics.pixel_flip_fraction;
    jc["pixel_flip_steps"] = cfg.metrics.pixel_flip_steps;
    jc["calibration_drop"] = cfg.metrics.calibration_drop;
    jc["ig_steps"] = cfg.explain.ig_steps;
    // Worker count is deliberately not echoed: reports must not depend on it.

    j["corpus"] = {{"total", report.filter.total}, {"correctly_classified", report.filter.kept}};
    j["intervals"] = nlohmann::ordered_json::array();
    for (const auto& [kind, c] : report.intervals) {
        nlohmann::ordered_json e{{"augmentation", aug_name(kind)}, {"low", c.interval.low}, {"high", c.interval.high},
                                 {"calibrated", c.calibrated}};
        if (c.calibrated) {
            e["drop_low"] = c.drop_low;
            e["drop_high"] = c.drop_high;
            e["warning"] = c.warning;
        }
        j["intervals"].push_back(e);
    }
    j["s_correlation_probability"] = detail::table_json(report, &EvaluationRecord::s_correlation);
    j["s_top1000_probability"] = detail::table_json(report, &EvaluationRecord::s_topk);
    j["probability_score"] = detail::table_json(report, &EvaluationRecord::probability_score);
    j["correlation_score"] = detail::table_json(report, &EvaluationRecord::correlation_score);
    j["top1000_score"] = detail::table_json(report, &EvaluationRecord::topk_score);

    auto& pf = j["pixel_flip"];
    pf["methods"] = nlohmann::ordered_json::object();
    for (auto m : cfg.methods) pf["methods"][method_key(m)] = detail::aggregate_json(report.pixel_flip(m));
    pf["random_baseline"] = detail::aggregate_json(report.pixel_flip(std::nullopt));

    std::size_t skipped = 0;
    for (const auto& r : report.records) skipped += r.skipped_samples;
    j["cells"] = {{"total", report.total_cells}, {"failed", report.failures.size()}, {"skipped_samples", skipped}};
    j["failures"] = nlohmann::ordered_json::array();
    for (const auto& f : report.failures)
        j["failures"].push_back({{"image_id", f.image_id}, {"cell", f.cell}, {"message", f.message}});

    auto out = detail::open_out(dir / "summary.json");
    out << j.dump(2) << '\n';
}

} // namespace xbench
