#pragma once
// Scripted synthetic experiments: generate a cohort, run the pipeline, score
// the auto-training set and the final predictions against ground truth.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipeline.hpp"
#include "synth.hpp"

namespace cellcat {

struct ExperimentThresholds {
    std::optional<double> min_training_specificity;
    std::optional<double> min_training_sensitivity;
    std::optional<double> min_overall_accuracy;
    std::optional<double> runtime_budget_s;

    void validate() const {
        for (const auto& v : {min_training_specificity, min_training_sensitivity, min_overall_accuracy})
            if (v && !(*v >= 0.0 && *v <= 1.0)) throw Error("experiment thresholds must be in [0,1]");
        if (runtime_budget_s && !(*runtime_budget_s > 0.0)) throw Error("runtime budget must be positive");
    }
};

struct ExperimentSpec {
    std::string name;
    SynthSpec synth;
    nlohmann::json config = nlohmann::json::object();  // overrides on top of the defaults
    ExperimentThresholds thresholds;
    std::optional<std::string> expect_error;  // pass iff the pipeline fails with this text
    std::size_t validation_sample = 1000;
};

inline std::vector<ExperimentSpec> experiments_from_json(const nlohmann::json& doc) {
    try {
        detail::check_keys(doc, {"experiments"}, "experiments file");
        std::vector<ExperimentSpec> out;
        for (const auto& e : doc.at("experiments")) {
            detail::check_keys(e, {"name", "synth", "config", "thresholds", "expect_error", "validation_sample"},
                               "experiment");
            ExperimentSpec s;
            s.name = e.at("name").get<std::string>();
            validate_identifier(s.name, "experiment name");
            if (e.contains("synth")) s.synth = synth_spec_from_json(e.at("synth"));
            if (e.contains("config")) s.config = e.at("config");
            if (e.contains("thresholds")) {
                const auto& t = e.at("thresholds");
                detail::check_keys(t,
                                   {"min_training_specificity", "min_training_sensitivity", "min_overall_accuracy",
                                    "runtime_budget_s"},
                                   "thresholds");
                auto opt = [&](const char* key) -> std::optional<double> {
                    if (!t.contains(key)) return std::nullopt;
                    return t.at(key).get<double>();
                };
                s.thresholds = {opt("min_training_specificity"), opt("min_training_sensitivity"),
                                opt("min_overall_accuracy"), opt("runtime_budget_s")};
                s.thresholds.validate();
            }
            if (e.contains("expect_error")) s.expect_error = e.at("expect_error").get<std::string>();
            s.validation_sample = e.value("validation_sample", s.validation_sample);
            config_from_json(s.config);
            out.push_back(std::move(s));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("experiments file: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Auto-training set quality
// ---------------------------------------------------------------------------

struct ClassQuality {
    std::string class_name;
    std::optional<double> specificity;  // among labeled samples: not-c kept out of c
    std::optional<double> sensitivity;  // of matched QC-passing true-c cells, labeled c
    std::size_t labeled = 0;
    std::size_t truth_cells = 0;
};

/// Scores the auto-labels of `scored` (a cells_scored table) against ground
/// truth. Cells without a matching truth cell are skipped.
inline std::vector<ClassQuality> training_set_quality(const CellTable& scored, const std::vector<GroundTruthCell>& truth,
                                                      double slack_px) {
    auto class_names = scored.marker_names;
    class_names.emplace_back(kNegativeClass);
    const std::size_t c_count = class_names.size();
    const TruthMatcher matcher(truth, slack_px);
    // labeled[c][t]: auto-labeled c with true class t; eligible[t]: matched QC cells of true class t.
    std::vector<std::vector<std::size_t>> labeled(c_count, std::vector<std::size_t>(c_count, 0));
    std::vector<std::size_t> eligible(c_count, 0);
    for (const auto& row : scored.rows) {
        if (!row.record.qc_pass) continue;
        const auto* t = matcher.match(row.record.image_id, row.record.centroid);
        if (!t) continue;
        const std::size_t tc = class_index_of(class_names, t->true_class);
        ++eligible[tc];
        if (!row.label.empty()) ++labeled[class_index_of(class_names, row.label)][tc];
    }
    std::size_t total_labeled = 0;
    for (const auto& r : labeled)
        for (auto v : r) total_labeled += v;
    std::vector<std::size_t> labeled_truth(c_count, 0);
    for (std::size_t c = 0; c < c_count; ++c)
        for (std::size_t t = 0; t < c_count; ++t) labeled_truth[t] += labeled[c][t];

    std::vector<ClassQuality> out;
    for (std::size_t c = 0; c < c_count; ++c) {
        ClassQuality q;
        q.class_name = class_names[c];
        q.truth_cells = eligible[c];
        std::size_t false_pos = 0;
        for (std::size_t t = 0; t < c_count; ++t) {
            q.labeled += labeled[c][t];
            if (t != c) false_pos += labeled[c][t];
        }
        const std::size_t true_not_c = total_labeled - labeled_truth[c];
        if (true_not_c > 0) q.specificity = 1.0 - static_cast<double>(false_pos) / static_cast<double>(true_not_c);
        if (eligible[c] > 0) q.sensitivity = static_cast<double>(labeled[c][c]) / static_cast<double>(eligible[c]);
        out.push_back(q);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified validation sample
// ---------------------------------------------------------------------------

/// Per-class quotas summing to min(n, total) by the largest-remainder method;
/// remainder ties go to the lower class index.
inline std::vector<std::size_t> stratified_quotas(const std::vector<std::size_t>& class_sizes, std::size_t n) {
    std::size_t total = 0;
    for (auto s : class_sizes) total += s;
    std::vector<std::size_t> q(class_sizes.size(), 0);
    if (total == 0) return q;
    n = std::min(n, total);
    std::vector<std::pair<std::size_t, std::size_t>> rema;  // (remainder numerator, class)
    std::size_t used = 0;
    for (std::size_t c = 0; c < class_sizes.size(); ++c) {
        const auto prod = static_cast<unsigned __int128>(class_sizes[c]) * n;
        q[c] = static_cast<std::size_t>(prod / total);
        rema.emplace_back(static_cast<std::size_t>(prod % total), c);
        used += q[c];
    }
    std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t i = 0; used < n; ++i, ++used) ++q[rema[i].second];
    return q;
}

/// Indices into `predicted_class` forming a seeded stratified sample of size
/// min(n, predicted_class.size()); returned in ascending order.
inline std::vector<std::size_t> stratified_sample(const std::vector<std::size_t>& predicted_class,
                                                  std::size_t class_count, std::size_t n, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> members(class_count);
    for (std::size_t i = 0; i < predicted_class.size(); ++i) members.at(predicted_class[i]).push_back(i);
    std::vector<std::size_t> sizes;
    for (const auto& m : members) sizes.push_back(m.size());
    const auto quotas = stratified_quotas(sizes, n);
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < class_count; ++c) {
        std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (c + 1)));
        std::sample(members[c].begin(), members[c].end(), std::back_inserter(out), quotas[c], rng);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct ExperimentResult {
    std::string name;
    bool completed = false;
    std::string error;
    bool passed = false;
    double runtime_s = 0.0;
    std::optional<MetricsReport> metrics;
    std::optional<MetricsReport> sample_metrics;
    std::vector<ClassQuality> training_quality;
    std::vector<std::string> failures;  // human-readable failed checks
};

inline ExperimentResult run_experiment(const ExperimentSpec& spec, const fs::path& work_dir) {
    ExperimentResult res;
    res.name = spec.name;
    const fs::path root = work_dir / spec.name;
    const fs::path cohort_dir = root / "cohort";
    const auto config = config_from_json(spec.config);
    try {
        const auto manifest = generate_cohort(spec.synth, cohort_dir);
        const auto truth_path = cohort_dir / "ground_truth.csv";
        StageOptions opt{manifest, root / "out", config, 1, nullptr};
        const auto t0 = std::chrono::steady_clock::now();
        run_pipeline(opt);
        res.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        const Artifacts art{opt.out_dir};
        const auto truth = read_ground_truth(truth_path);
        const auto eval = evaluate_files(art.predictions(), truth_path, config.match_slack_px, opt.out_dir);
        res.metrics = eval.metrics;
        res.training_quality = training_set_quality(read_cell_table(art.cells_scored()), truth, config.match_slack_px);

        // Validation sample over matched predictions, stratified by predicted class.
        const auto predictions = read_cell_table(art.predictions());
        auto class_names = predictions.marker_names;
        class_names.emplace_back(kNegativeClass);
        const TruthMatcher matcher(truth, config.match_slack_px);
        std::vector<std::size_t> pred, want;
        for (const auto& row : predictions.rows) {
            const auto* t = matcher.match(row.record.image_id, row.record.centroid);
            if (!t) continue;
            pred.push_back(class_index_of(class_names, row.label));
            want.push_back(class_index_of(class_names, t->true_class));
        }
        const auto idx = stratified_sample(pred, class_names.size(), spec.validation_sample, config.seed);
        std::vector<std::size_t> sp, sw;
        for (auto i : idx) {
            sp.push_back(pred[i]);
            sw.push_back(want[i]);
        }
        res.sample_metrics = evaluate(sp, sw, class_names);
        res.completed = true;
    } catch (const std::exception& e) {
        res.error = e.what();
    }

    if (spec.expect_error) {
        if (res.completed)
            res.failures.push_back("expected failure containing '" + *spec.expect_error + "' but the pipeline succeeded");
        else if (res.error.find(*spec.expect_error) == std::string::npos)
            res.failures.push_back("unexpected error: " + res.error);
        res.passed = res.failures.empty();
        return res;
    }
    if (!res.completed) {
        res.failures.push_back("pipeline failed: " + res.error);
        return res;
    }
    char buf[160];
    const auto& th = spec.thresholds;
    if (th.min_overall_accuracy && !(res.metrics->overall_accuracy >= *th.min_overall_accuracy)) {
        std::snprintf(buf, sizeof buf, "overall accuracy %.6f < %.4f", res.metrics->overall_accuracy,
                      *th.min_overall_accuracy);
        res.failures.emplace_back(buf);
    }
    if (th.runtime_budget_s && res.runtime_s > *th.runtime_budget_s) {
        std::snprintf(buf, sizeof buf, "runtime %.2f s > %.2f s", res.runtime_s, *th.runtime_budget_s);
        res.failures.emplace_back(buf);
    }
    for (const auto& q : res.training_quality) {
        if (q.class_name == kNegativeClass) continue;
        if (th.min_training_specificity && !(q.specificity && *q.specificity >= *th.min_training_specificity))
            res.failures.push_back("training specificity of " + q.class_name + " " + format_metric(q.specificity) +
                                   " below threshold");
        if (th.min_training_sensitivity && !(q.sensitivity && *q.sensitivity >= *th.min_training_sensitivity))
            res.failures.push_back("training sensitivity of " + q.class_name + " " + format_metric(q.sensitivity) +
                                   " below threshold");
    }
    res.passed = res.failures.empty();
    return res;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Long-format CSV: one row per (experiment, metric, class).
inline std::string report_csv(const std::vector<ExperimentResult>& results) {
    std::string out = "experiment,metric,class,value\n";
    auto row = [&](const std::string& e, const std::string& m, const std::string& c, const std::string& v) {
        out += e + "," + m + "," + c + "," + v + "\n";
    };
    for (const auto& r : results) {
        row(r.name, "status", "", r.passed ? "pass" : "fail");
        row(r.name, "completed", "", r.completed ? "1" : "0");
        if (!r.completed) continue;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", r.runtime_s);
        row(r.name, "runtime_s", "", buf);
        row(r.name, "overall_accuracy", "", format_metric(r.metrics->overall_accuracy));
        row(r.name, "sample_size", "", std::to_string(r.sample_metrics->total));
        row(r.name, "sample_overall_accuracy", "", format_metric(r.sample_metrics->overall_accuracy));
        for (std::size_t c = 0; c < r.metrics->class_names.size(); ++c) {
            const auto& name = r.metrics->class_names[c];
            row(r.name, "sensitivity", name, format_metric(r.metrics->sensitivity[c]));
            row(r.name, "specificity", name, format_metric(r.metrics->specificity[c]));
        }
        for (const auto& q : r.training_quality) {
            row(r.name, "training_specificity", q.class_name, format_metric(q.specificity));
            row(r.name, "training_sensitivity", q.class_name, format_metric(q.sensitivity));
            row(r.name, "training_count", q.class_name, std::to_string(q.labeled));
        }
    }
    return out;
}

inline std::string report_markdown(const std::vector<ExperimentResult>& results) {
    std::string out = "# Experiment report\n\n";
    out += "| Experiment | Status | Runtime (s) | Overall Accuracy | Sample Accuracy |\n";
    out += "|---|---|---|---|---|\n";
    for (const auto& r : results) {
        char rt[32] = "-";
        if (r.completed) std::snprintf(rt, sizeof rt, "%.2f", r.runtime_s);
        out += "| " + r.name + " | " + (r.passed ? "PASS" : "FAIL") + " | " + rt + " | " +
               (r.completed ? format_metric(r.metrics->overall_accuracy) : "-") + " | " +
               (r.completed ? format_metric(r.sample_metrics->overall_accuracy) : "-") + " |\n";
    }
    for (const auto& r : results) {
        out += "\n## " + r.name + "\n\n";
        if (!r.completed) out += "Pipeline error: " + r.error + "\n\n";
        if (r.completed) {
            out += "| Class | Sensitivity | Specificity | Training Specificity | Training Sensitivity | Training Count |\n";
            out += "|---|---|---|---|---|---|\n";
            for (std::size_t c = 0; c < r.metrics->class_names.size(); ++c) {
                const auto& q = r.training_quality[c];
                out += "| " + q.class_name + " | " + format_metric(r.metrics->sensitivity[c]) + " | " +
                       format_metric(r.metrics->specificity[c]) + " | " + format_metric(q.specificity) + " | " +
                       format_metric(q.sensitivity) + " | " + std::to_string(q.labeled) + " |\n";
            }
            out += "\nValidation sample: " + std::to_string(r.sample_metrics->total) + " cells\n\n";
        }
        for (const auto& f : r.failures) out += "- " + f + "\n";
    }
    return out;
}

inline std::vector<ExperimentResult> run_experiments(const std::vector<ExperimentSpec>& specs, const fs::path& out_dir) {
    std::vector<ExperimentResult> results;
    for (const auto& s : specs) results.push_back(run_experiment(s, out_dir));
    write_file_atomic(out_dir / "report.csv", report_csv(results));
    write_file_atomic(out_dir / "report.md", report_markdown(results));
    return results;
}

}  // namespace cellcat
