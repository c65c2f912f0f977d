#pragma once
// File-backed pipeline stages: segment -> qc -> autotrain -> train ->
// predict -> evaluate -> overlay. Every stage reads the previous stage's
// artifacts from the output directory, so any stage can be rerun alone.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "balance.hpp"
#include "cat.hpp"
#include "classify.hpp"
#include "config.hpp"
#include "core.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "qc.hpp"
#include "segmentation.hpp"
#include "synth.hpp"

namespace cellcat {

/// Error raised by a pipeline stage; the message carries the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

struct Artifacts {
    fs::path dir;

    fs::path nuclei_mask(const std::string& image_id) const { return dir / "masks" / (image_id + "_nuclei.pgm"); }
    fs::path marker_mask(const std::string& image_id, const std::string& marker) const {
        return dir / "masks" / (image_id + "_" + marker + ".pgm");
    }
    fs::path cells_segmented() const { return dir / "cells_segmented.csv"; }
    fs::path cells_qc() const { return dir / "cells_qc.csv"; }
    fs::path cells_scored() const { return dir / "cells_scored.csv"; }
    fs::path gmm() const { return dir / "gmm.json"; }
    fs::path training_auto() const { return dir / "training_auto.csv"; }
    fs::path training_balanced() const { return dir / "training_balanced.csv"; }
    fs::path model() const { return dir / "model.json"; }
    fs::path predictions() const { return dir / "predictions.csv"; }
    fs::path metrics_csv() const { return dir / "metrics.csv"; }
    fs::path metrics_txt() const { return dir / "metrics.txt"; }
    fs::path overlay(const std::string& image_id) const { return dir / "overlays" / (image_id + ".ppm"); }
};

struct StageOptions {
    fs::path manifest;
    fs::path out_dir;
    PipelineConfig config;
    std::size_t threads = 1;
    std::ostream* log = nullptr;
};

namespace detail {

template <typename F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

inline void log_line(const StageOptions& opt, const std::string& line) {
    if (opt.log) *opt.log << line << "\n";
}

inline Cohort load_validated(const StageOptions& opt) {
    const auto manifest = read_manifest(opt.manifest);
    auto cohort = load_cohort(manifest);
    opt.config.validate(cohort.marker_names);
    return cohort;
}

/// Groups table rows by image in cohort order; rows of unknown images are an
/// error.
inline std::vector<std::vector<CellRow>> rows_by_image(const Cohort& cohort, std::vector<CellRow> rows) {
    std::map<std::string, std::size_t> pos;
    for (std::size_t j = 0; j < cohort.images.size(); ++j) pos[cohort.images[j].image_id] = j;
    std::vector<std::vector<CellRow>> out(cohort.images.size());
    for (auto& r : rows) {
        auto it = pos.find(r.record.image_id);
        if (it == pos.end()) throw Error("cell table references unknown image '" + r.record.image_id + "'");
        out[it->second].push_back(std::move(r));
    }
    for (auto& v : out)
        std::sort(v.begin(), v.end(), [](const CellRow& a, const CellRow& b) { return a.record.cell_id < b.record.cell_id; });
    return out;
}

inline CellTable read_table_for(const Cohort& cohort, const fs::path& path) {
    auto t = read_cell_table(path);
    if (t.marker_names != cohort.marker_names) throw Error(path.string() + ": marker columns do not match the manifest");
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training-set CSV
// ---------------------------------------------------------------------------

inline std::string encode_training_set(const TrainingSet& set) {
    const std::size_t k = set.class_names.size() - 1;
    std::string out = "image_id,cell_id,synthetic";
    for (std::size_t m = 0; m < k; ++m) out += ",feat_" + set.class_names[m];
    out += ",label\n";
    for (const auto& s : set.samples) {
        out += s.image_id + "," + std::to_string(s.cell_id) + "," + (s.synthetic ? "1" : "0");
        for (double v : s.features) out += "," + format_fixed6(v);
        out += "," + set.class_names.at(s.label) + "\n";
    }
    return out;
}

inline TrainingSet parse_training_set(std::string_view text) {
    const auto lines = read_csv_lines(text);
    if (lines.empty()) throw Error("training set: missing header");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 4 || header[0] != "image_id" || header[1] != "cell_id" || header[2] != "synthetic" ||
        header.back() != "label")
        throw Error("training set: unexpected header");
    TrainingSet set;
    for (std::size_t i = 3; i + 1 < header.size(); ++i) {
        if (header[i].rfind("feat_", 0) != 0) throw Error("training set: expected feat_<marker> column");
        set.class_names.push_back(header[i].substr(5));
    }
    set.class_names.emplace_back(kNegativeClass);
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const auto f = split_csv_line(lines[li]);
        if (f.size() != header.size()) throw Error("training set line " + std::to_string(li + 1) + ": field count");
        TrainingSample s;
        s.image_id = f[0];
        s.cell_id = static_cast<std::uint32_t>(parse_uint(f[1], "cell_id"));
        s.synthetic = f[2] == "1";
        for (std::size_t i = 3; i + 1 < f.size(); ++i) s.features.push_back(parse_double(f[i], "feature"));
        auto it = std::find(set.class_names.begin(), set.class_names.end(), f.back());
        if (it == set.class_names.end()) throw Error("training set: unknown label '" + f.back() + "'");
        s.label = static_cast<std::size_t>(it - set.class_names.begin());
        set.samples.push_back(std::move(s));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline LabelMask marker_mask_for(const IntensityPlane& plane, const MarkerSegmentation& seg) {
    return seg.kind == MarkerMaskKind::blob ? detect_nuclei(plane, seg.blob) : detect_membrane(plane, seg.membrane);
}

inline void segment_stage(const StageOptions& opt) {
    detail::run_stage("segment", [&] {
        const Artifacts art{opt.out_dir};
        const auto cohort = detail::load_validated(opt);
        std::vector<std::vector<CellRecord>> records(cohort.images.size());
        parallel_for(cohort.images.size(), opt.threads, [&](std::size_t j) {
            const auto& img = cohort.images[j];
            try {
                const auto nuclei = detect_nuclei(img.segmentation_round(), opt.config.nuclei);
                write_mask(nuclei, art.nuclei_mask(img.image_id));
                records[j] = build_cell_records(nuclei, img);
                for (std::size_t m = 0; m < img.markers.size(); ++m) {
                    const auto& name = cohort.marker_names[m];
                    write_mask(marker_mask_for(img.markers[m], opt.config.marker_segmentation(name)),
                               art.marker_mask(img.image_id, name));
                }
            } catch (const std::exception& e) {
                throw Error("image '" + img.image_id + "': " + e.what());
            }
        });
        CellTable table{cohort.marker_names, {}};
        for (auto& per_image : records)
            for (auto& r : per_image) table.rows.push_back({std::move(r), std::nullopt, "", std::nullopt});
        write_cell_table(table, art.cells_segmented());
        detail::log_line(opt, "segment: " + std::to_string(table.rows.size()) + " cells in " +
                                  std::to_string(cohort.images.size()) + " images");
    });
}

inline void qc_stage(const StageOptions& opt) {
    detail::run_stage("qc", [&] {
        const Artifacts art{opt.out_dir};
        const auto cohort = detail::load_validated(opt);
        auto grouped = detail::rows_by_image(cohort, detail::read_table_for(cohort, art.cells_segmented()).rows);
        parallel_for(cohort.images.size(), opt.threads, [&](std::size_t j) {
            const auto& img = cohort.images[j];
            try {
                const auto mask = read_mask(art.nuclei_mask(img.image_id));
                if (!mask.same_shape(img.segmentation_round())) throw Error("nuclei mask dimensions differ from image");
                std::vector<CellRecord> recs;
                for (auto& row : grouped[j]) recs.push_back(row.record);
                recs = qc_filter(std::move(recs), LabelIndex(mask), img.nuclear_rounds, opt.config.qc);
                for (std::size_t i = 0; i < recs.size(); ++i) grouped[j][i].record.qc_pass = recs[i].qc_pass;
            } catch (const std::exception& e) {
                throw Error("image '" + img.image_id + "': " + e.what());
            }
        });
        CellTable table{cohort.marker_names, {}};
        std::size_t passed = 0;
        for (auto& per_image : grouped)
            for (auto& r : per_image) {
                passed += r.record.qc_pass ? 1 : 0;
                table.rows.push_back(std::move(r));
            }
        write_cell_table(table, art.cells_qc());
        detail::log_line(opt, "qc: " + std::to_string(passed) + " of " + std::to_string(table.rows.size()) +
                                  " cells pass");
    });
}

inline nlohmann::json marker_fit_to_json(const MarkerFit& f) {
    nlohmann::json j;
    j["fit_ok"] = f.fit.has_value();
    j["stained"] = f.stained;
    if (f.fit) {
        const auto& p = *f.fit;
        j["a"] = p.a;
        j["b"] = p.b;
        j["mu_f"] = p.mu_f;
        j["sigma_f"] = p.sigma_f;
        j["mu_b"] = p.mu_b;
        j["sigma_b"] = p.sigma_b;
        j["separation"] = p.separation();
    }
    if (!f.warning.empty()) j["warning"] = f.warning;
    return j;
}

inline void autotrain_stage(const StageOptions& opt) {
    detail::run_stage("autotrain", [&] {
        const Artifacts art{opt.out_dir};
        const auto cohort = detail::load_validated(opt);
        const auto thresholds = opt.config.thresholds(cohort.marker_names);
        auto grouped = detail::rows_by_image(cohort, detail::read_table_for(cohort, art.cells_qc()).rows);
        const std::size_t n = cohort.images.size(), k = cohort.marker_count();
        std::vector<std::vector<MarkerFit>> fits(n);
        std::vector<std::vector<CellScores>> scores(n);
        parallel_for(n, opt.threads, [&](std::size_t j) {
            const auto& img = cohort.images[j];
            try {
                const auto mask = read_mask(art.nuclei_mask(img.image_id));
                if (!mask.same_shape(img.segmentation_round())) throw Error("nuclei mask dimensions differ from image");
                const LabelIndex index(mask);
                std::vector<LabelMask> membranes;
                for (std::size_t m = 0; m < k; ++m) {
                    fits[j].push_back(fit_marker(img.markers[m], opt.config.fit));
                    membranes.push_back(read_mask(art.marker_mask(img.image_id, cohort.marker_names[m])));
                }
                std::vector<CellRecord> recs;
                for (const auto& row : grouped[j]) {
                    if (!index.contains(row.record.cell_id))
                        throw Error("cell " + std::to_string(row.record.cell_id) + " absent from nuclei mask");
                    recs.push_back(row.record);
                }
                scores[j] = score_image(img, index, recs, membranes, fits[j], thresholds.positivity_mode);
            } catch (const std::exception& e) {
                throw Error("image '" + img.image_id + "': " + e.what());
            }
        });

        nlohmann::json gmm = nlohmann::json::object();
        for (std::size_t j = 0; j < n; ++j) {
            nlohmann::json per = nlohmann::json::object();
            for (std::size_t m = 0; m < k; ++m) {
                per[cohort.marker_names[m]] = marker_fit_to_json(fits[j][m]);
                if (!fits[j][m].fit)
                    detail::log_line(opt, "autotrain: warning: image '" + cohort.images[j].image_id + "' marker '" +
                                              cohort.marker_names[m] + "': " + fits[j][m].warning);
            }
            gmm[cohort.images[j].image_id] = per;
        }
        write_json(gmm, art.gmm());

        std::vector<std::vector<CellRecord>> records(n);
        CellTable table{cohort.marker_names, {}};
        const auto class_names = cohort.class_names();
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < grouped[j].size(); ++i) {
                auto& row = grouped[j][i];
                row.scores = scores[j][i];
                row.label.clear();
                row.probability.reset();
                if (row.record.qc_pass)
                    if (const auto label = auto_label(scores[j][i], thresholds)) row.label = class_names[*label];
                records[j].push_back(row.record);
                table.rows.push_back(row);
            }
        write_cell_table(table, art.cells_scored());

        const auto set = build_training_set(cohort, records, scores, thresholds);
        write_file_atomic(art.training_auto(), encode_training_set(set));
        const auto counts = set.counts();
        std::string summary = "autotrain: training set";
        for (std::size_t c = 0; c < counts.size(); ++c)
            summary += " " + set.class_names[c] + "=" + std::to_string(counts[c]);
        detail::log_line(opt, summary);
    });
}

inline void train_stage(const StageOptions& opt) {
    detail::run_stage("train", [&] {
        const Artifacts art{opt.out_dir};
        const auto raw = parse_training_set(read_file(art.training_auto()));
        const auto balanced = equalize(raw, opt.config.balance_params());
        write_file_atomic(art.training_balanced(), encode_training_set(balanced));
        const auto model = train_classifier(balanced, opt.config.features, opt.config.classifier_params());
        write_json(model_to_json(model), art.model());
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", model.final_loss);
        detail::log_line(opt, "train: " + std::to_string(balanced.samples.size()) + " samples, final loss " + buf);
    });
}

inline void predict_stage(const StageOptions& opt) {
    detail::run_stage("predict", [&] {
        const Artifacts art{opt.out_dir};
        const auto model = model_from_json(read_json(art.model()));
        auto table = read_cell_table(art.cells_scored());
        std::vector<std::string> expected = table.marker_names;
        expected.emplace_back(kNegativeClass);
        if (model.class_names != expected) throw Error("model classes do not match the cell table markers");
        CellTable out{table.marker_names, {}};
        std::size_t flagged = 0;
        for (auto& row : table.rows) {
            if (!row.record.qc_pass) continue;
            Prediction p;
            try {
                p = predict_raw(model, row.record.mean_intensity);
            } catch (const Error& e) {
                throw Error("cell " + row.record.image_id + "/" + std::to_string(row.record.cell_id) + ": " + e.what());
            }
            row.label = model.class_names[p.class_index];
            row.probability = p.probability;
            flagged += p.probability < opt.config.confidence_flag_threshold ? 1 : 0;
            out.rows.push_back(std::move(row));
        }
        write_cell_table(out, art.predictions());
        detail::log_line(opt, "predict: " + std::to_string(out.rows.size()) + " cells, " + std::to_string(flagged) +
                                  " below confidence " + format_fixed6(opt.config.confidence_flag_threshold));
    });
}

// ---------------------------------------------------------------------------
// Evaluation against ground truth
// ---------------------------------------------------------------------------

/// Index of the ground-truth cell whose center is nearest to `p` within its
/// radius plus `slack`, or nullopt.
inline std::optional<std::size_t> match_truth(const std::vector<const GroundTruthCell*>& candidates, Point p,
                                              double slack) {
    std::optional<std::size_t> best;
    double best_d = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto* t = candidates[i];
        const double d = std::hypot(t->center.x - p.x, t->center.y - p.y);
        if (d > t->radius + slack) continue;
        if (!best || d < best_d) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

struct TruthMatcher {
    std::map<std::string, std::vector<const GroundTruthCell*>> by_image;
    double slack = 1.0;

    TruthMatcher(const std::vector<GroundTruthCell>& truth, double slack_px) : slack(slack_px) {
        for (const auto& t : truth) by_image[t.image_id].push_back(&t);
    }

    const GroundTruthCell* match(const std::string& image_id, Point p) const {
        auto it = by_image.find(image_id);
        if (it == by_image.end()) return nullptr;
        const auto idx = match_truth(it->second, p, slack);
        return idx ? it->second[*idx] : nullptr;
    }
};

struct EvaluationResult {
    MetricsReport metrics;
    std::size_t unmatched_predictions = 0;
    std::size_t truth_cells = 0;
};

inline std::size_t class_index_of(const std::vector<std::string>& class_names, const std::string& name) {
    auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end()) throw Error("unknown class '" + name + "'");
    return static_cast<std::size_t>(it - class_names.begin());
}

/// Scores predicted labels in a cell table against synthetic ground truth.
/// Predictions without a matching truth cell are counted, not scored.
inline EvaluationResult evaluate_predictions(const CellTable& predictions, const std::vector<GroundTruthCell>& truth,
                                             double slack_px) {
    auto class_names = predictions.marker_names;
    class_names.emplace_back(kNegativeClass);
    const TruthMatcher matcher(truth, slack_px);
    std::vector<std::size_t> pred, want;
    EvaluationResult res;
    res.truth_cells = truth.size();
    for (const auto& row : predictions.rows) {
        if (!row.record.qc_pass || row.label.empty()) continue;
        const auto* t = matcher.match(row.record.image_id, row.record.centroid);
        if (!t) {
            ++res.unmatched_predictions;
            continue;
        }
        pred.push_back(class_index_of(class_names, row.label));
        want.push_back(class_index_of(class_names, t->true_class));
    }
    res.metrics = evaluate(pred, want, class_names);
    return res;
}

inline EvaluationResult evaluate_files(const fs::path& predictions, const fs::path& truth, double slack_px,
                                       const fs::path& out_dir) {
    return detail::run_stage("evaluate", [&] {
        const auto res = evaluate_predictions(read_cell_table(predictions), read_ground_truth(truth), slack_px);
        const Artifacts art{out_dir};
        write_file_atomic(art.metrics_csv(), metrics_to_csv(res.metrics));
        write_file_atomic(art.metrics_txt(),
                          metrics_to_text(res.metrics) + "unmatched predictions: " +
                              std::to_string(res.unmatched_predictions) + "\n" +
                              "ground-truth cells: " + std::to_string(res.truth_cells) + "\n");
        return res;
    });
}

inline void overlay_stage(const StageOptions& opt) {
    detail::run_stage("overlay", [&] {
        const Artifacts art{opt.out_dir};
        const auto cohort = detail::load_validated(opt);
        const auto grouped = detail::rows_by_image(cohort, detail::read_table_for(cohort, art.predictions()).rows);
        const auto class_names = cohort.class_names();
        parallel_for(cohort.images.size(), opt.threads, [&](std::size_t j) {
            const auto& img = cohort.images[j];
            try {
                const auto mask = read_mask(art.nuclei_mask(img.image_id));
                std::uint32_t max_label = 0;
                for (auto v : mask.data) max_label = std::max(max_label, v);
                std::vector<std::optional<CellAssignment>> assignments(std::size_t{max_label} + 1);
                for (const auto& row : grouped[j]) {
                    if (row.label.empty() || row.record.cell_id > max_label) continue;
                    assignments[row.record.cell_id] =
                        CellAssignment{class_index_of(class_names, row.label), row.probability.value_or(1.0)};
                }
                write_overlay(render_overlay(img.segmentation_round(), mask, assignments, cohort.marker_count(),
                                             opt.config.confidence_flag_threshold),
                              art.overlay(img.image_id));
            } catch (const std::exception& e) {
                throw Error("image '" + img.image_id + "': " + e.what());
            }
        });
    });
}

/// All stages in order; evaluates against `truth` when given.
inline std::optional<EvaluationResult> run_pipeline(const StageOptions& opt, const std::optional<fs::path>& truth = {}) {
    segment_stage(opt);
    qc_stage(opt);
    autotrain_stage(opt);
    train_stage(opt);
    predict_stage(opt);
    overlay_stage(opt);
    if (!truth) return std::nullopt;
    return evaluate_files(Artifacts{opt.out_dir}.predictions(), *truth, opt.config.match_slack_px, opt.out_dir);
}

}  // namespace cellcat
