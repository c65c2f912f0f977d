// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"

using namespace cellcat;
using testing_support::Gen;
using testing_support::TempDir;

namespace {

/// Collects failed checks for one criterion.
class Criterion {
public:
    void check(bool ok, const std::string& what) {
        if (!ok && failures_.size() < 8) failures_.push_back(what);
        failed_ = failed_ || !ok;
    }
    void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
    bool passed() const { return !failed_; }
    const std::vector<std::string>& failures() const { return failures_; }
    const std::string& notes() const { return notes_; }

private:
    bool failed_ = false;
    std::vector<std::string> failures_;
    std::string notes_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
    return out;
}

std::vector<double> mixture(Gen& g, std::size_t n, double a, double mu_b, double s_b, double mu_f, double s_f) {
    std::vector<double> v(n);
    for (auto& x : v) x = g.coin(a) ? g.normal(mu_f, s_f) : g.normal(mu_b, s_b);
    return v;
}

// ---------------------------------------------------------------------------
// 1-2: immune-2marker end to end
// ---------------------------------------------------------------------------

struct ImmuneRun {
    std::optional<ExperimentResult> result;
    std::string error;
};

ImmuneRun run_immune(const fs::path& work) {
    ImmuneRun run;
    try {
        const auto specs = experiments_from_json(read_json(fs::path(CELLCAT_SOURCE_DIR) / "configs/experiments.json"));
        const auto it = std::find_if(specs.begin(), specs.end(), [](const auto& s) { return s.name == "immune-2marker"; });
        if (it == specs.end()) throw Error("immune-2marker missing from configs/experiments.json");
        const auto& s = it->synth;
        if (s.n_images != 10 || s.width != 512 || s.height != 512 || s.marker_names().size() != 2 ||
            s.cell_count != 300 || s.seed != 42)
            throw Error("immune-2marker cohort differs from 10 x 512^2, 2 markers, 300 cells, seed 42");
        if (it->config != nlohmann::json{{"seed", 42}}) throw Error("immune-2marker must run with default settings");
        run.result = run_experiment(*it, work);
        if (!run.result->completed) run.error = run.result->error;
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    return run;
}

void criterion1(Criterion& c, const ImmuneRun& run) {
    c.check(run.error.empty(), "pipeline: " + run.error);
    if (!run.error.empty()) return;
    const auto& r = *run.result;
    c.check(r.metrics->overall_accuracy >= 0.95, "overall accuracy " + fmt("%.6f", r.metrics->overall_accuracy));
    c.check(r.runtime_s <= 60.0, "runtime " + fmt("%.2f s", r.runtime_s));
    c.note("accuracy " + fmt("%.4f", r.metrics->overall_accuracy) + " over " + std::to_string(r.metrics->total) +
           " cells, runtime " + fmt("%.2f s", r.runtime_s));
}

void criterion2(Criterion& c, const ImmuneRun& run) {
    c.check(run.error.empty(), "pipeline: " + run.error);
    if (!run.error.empty()) return;
    for (const auto& q : run.result->training_quality) {
        if (q.class_name == kNegativeClass) continue;
        c.check(q.specificity && *q.specificity >= 0.99, q.class_name + " specificity " + format_metric(q.specificity));
        c.check(q.sensitivity && *q.sensitivity >= 0.5, q.class_name + " sensitivity " + format_metric(q.sensitivity));
        c.note(q.class_name + " spec " + format_metric(q.specificity) + " sens " + format_metric(q.sensitivity));
    }
}

// ---------------------------------------------------------------------------
// 3: mixture fitting
// ---------------------------------------------------------------------------

void criterion3(Criterion& c) {
    Gen g(3003);
    const double a = 0.35, mu_b = 450, mu_f = 9000;
    const auto fit = fit_gmm2(mixture(g, 100000, a, mu_b, 80, mu_f, 1200));
    const auto& p = fit.params;
    c.check(std::abs(p.mu_b - mu_b) <= 0.02 * mu_b, "background mean " + fmt("%.3f", p.mu_b));
    c.check(std::abs(p.mu_f - mu_f) <= 0.02 * mu_f, "foreground mean " + fmt("%.3f", p.mu_f));
    c.check(std::abs(p.a - a) <= 0.02, "foreground weight " + fmt("%.4f", p.a));
    c.check(std::abs(p.b - (1 - a)) <= 0.02, "background weight " + fmt("%.4f", p.b));

    std::size_t iterations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = static_cast<std::size_t>(g.integer(20, 4000));
        const auto data = mixture(g, n, g.uniform(0.05, 0.95), g.uniform(0, 3000), g.uniform(1, 400),
                                  g.uniform(1500, 50000), g.uniform(1, 4000));
        const auto f = fit_gmm2(data, EmOptions{g.integer(1, 300), 1e-10, 0.5});
        iterations += static_cast<std::size_t>(f.iterations);
        for (std::size_t i = 1; i < f.log_likelihood.size(); ++i)
            c.check(f.log_likelihood[i] >= f.log_likelihood[i - 1] - 1e-9,
                    "fixture " + std::to_string(trial) + " iteration " + std::to_string(i) + " decreased");
    }
    c.note("means " + fmt("%.1f", p.mu_b) + "/" + fmt("%.1f", p.mu_f) + ", weight " + fmt("%.4f", p.a) + ", " +
           std::to_string(iterations) + " EM iterations checked");
}

// ---------------------------------------------------------------------------
// 4: exact oracle equivalences
// ---------------------------------------------------------------------------

void criterion4(Criterion& c) {
    Gen g(4004);
    for (int trial = 0; trial < 500; ++trial) {
        oracles::SparseHistogram h;
        const int span = trial % 4 == 0 ? 65535 : g.integer(2, 6000);
        const int bins = std::min(g.integer(2, 16), span + 1);
        while (static_cast<int>(h.bins.size()) < bins)
            h.bins[static_cast<std::uint32_t>(g.integer(0, span))] = static_cast<std::uint64_t>(g.integer(1, 5000));
        std::uint32_t got = 0;
        try {
            got = kittler_threshold(h.dense());
        } catch (const std::exception& e) {
            c.check(false, "histogram " + std::to_string(trial) + ": " + e.what());
            continue;
        }
        c.check(got == oracles::kittler_oracle(h), "histogram " + std::to_string(trial));
    }
    for (int trial = 0; trial < 200; ++trial) {
        const auto b = g.binary(static_cast<std::size_t>(g.integer(1, 24)), static_cast<std::size_t>(g.integer(1, 24)),
                                g.uniform(0.1, 0.8));
        for (int conn : {4, 8})
            c.check(connected_components(b, conn) == oracles::flood_fill_oracle(b, conn),
                    "grid " + std::to_string(trial) + " connectivity " + std::to_string(conn));
    }
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto plane = g.plane(20, 20, 0, 20000);
        LabelMask mask(20, 20, 0);
        for (auto& v : mask.data) v = g.coin(0.4) ? 1 : 0;
        mask.data[0] = 1;
        GmmParams q{g.uniform(0.02, 0.98), 0, g.uniform(4000, 15000), g.uniform(30, 3000), g.uniform(0, 3000),
                    g.uniform(10, 900)};
        q.b = 1 - q.a;
        const double d = std::abs(cell_background_prob(1, LabelIndex(mask), plane, q) -
                                  oracles::background_prob_oracle(mask, 1, plane, q));
        worst = std::max(worst, d);
        c.check(d <= 1e-12, "background probability fixture " + std::to_string(trial) + " off by " + fmt("%.3g", d));
    }
    c.note("500 histograms, 400 labelings, max |dP_B| " + fmt("%.2g", worst));
}

// ---------------------------------------------------------------------------
// 5: classifier numerics
// ---------------------------------------------------------------------------

void criterion5(Criterion& c) {
    Gen g(5005);
    double worst = 0.0;
    for (int draw = 0; draw < 50; ++draw) {
        const std::size_t classes = static_cast<std::size_t>(g.integer(2, 5));
        const std::size_t d = static_cast<std::size_t>(g.integer(1, 5));
        const std::size_t n = static_cast<std::size_t>(g.integer(2, 20));
        std::vector<std::vector<double>> x(n, std::vector<double>(d));
        std::vector<std::size_t> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& v : x[i]) v = g.normal(0, 2);
            y[i] = g.index(classes);
        }
        std::vector<double> w(classes * (d + 1));
        for (auto& v : w) v = g.normal(0, 1);
        const double l2 = g.uniform(0, 0.2);
        std::vector<double> grad;
        softmax_loss(w, classes, x, y, l2, &grad);
        const double h = 1e-5;
        for (std::size_t i = 0; i < w.size(); ++i) {
            auto wp = w, wm = w;
            wp[i] += h;
            wm[i] -= h;
            const double fd =
                (softmax_loss(wp, classes, x, y, l2, nullptr) - softmax_loss(wm, classes, x, y, l2, nullptr)) / (2 * h);
            worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(grad[i]) + std::abs(fd)));
        }
    }
    c.check(worst <= 1e-5, "gradient relative error " + fmt("%.3g", worst));

    double sum_err = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t classes = static_cast<std::size_t>(g.integer(2, 8));
        std::vector<double> w(classes * 5), x(4);
        for (auto& v : w) v = g.normal(0, 40);
        for (auto& v : x) v = g.normal(0, 40);
        double s = 0.0;
        for (double v : softmax_scores(w, classes, x)) s += v;
        sum_err = std::max(sum_err, std::abs(s - 1.0));
    }
    c.check(sum_err <= 1e-9, "softmax sum off by " + fmt("%.3g", sum_err));

    TrainingSet set;
    set.class_names = {"A", "B", "Negative"};
    std::uint32_t id = 0;
    for (int i = 0; i < 80; ++i) {
        set.samples.push_back({"i", ++id, {g.uniform(5000, 9000), g.uniform(100, 400)}, 0, false});
        set.samples.push_back({"i", ++id, {g.uniform(100, 400), g.uniform(5000, 9000)}, 1, false});
        set.samples.push_back({"i", ++id, {g.uniform(100, 400), g.uniform(100, 400)}, 2, false});
    }
    const auto model = train_classifier(set, FeatureSpec{}, ClassifierHyperparams{});
    std::size_t correct = 0;
    for (const auto& s : set.samples) correct += predict_raw(model, s.features).class_index == s.label;
    c.check(correct == set.samples.size(),
            "separable fixture accuracy " + std::to_string(correct) + "/" + std::to_string(set.samples.size()));
    c.note("gradient error " + fmt("%.2g", worst) + ", softmax sum error " + fmt("%.2g", sum_err) +
           ", separable accuracy " + fmt("%.3f", static_cast<double>(correct) / set.samples.size()));
}

// ---------------------------------------------------------------------------
// 6: rule invariants
// ---------------------------------------------------------------------------

TrainingSet counted_set(const std::vector<std::size_t>& counts, Gen& g) {
    TrainingSet set;
    for (std::size_t k = 0; k + 1 < counts.size(); ++k) set.class_names.push_back("M" + std::to_string(k));
    set.class_names.emplace_back(kNegativeClass);
    std::uint32_t id = 0;
    for (std::size_t k = 0; k < counts.size(); ++k)
        for (std::size_t i = 0; i < counts[k]; ++i)
            set.samples.push_back({"img", ++id, {g.uniform(0, 1000), g.uniform(0, 1000)}, k, false});
    return set;
}

void criterion6(Criterion& c) {
    Gen g(6006);
    std::vector<CellScores> cells;
    for (int i = 0; i < 500; ++i) {
        std::vector<double> pb(3), pf(3);
        for (auto& v : pb) v = g.coin(0.4) ? g.uniform(0.8, 1.0) : g.uniform(0, 1);
        for (auto& v : pf) v = g.uniform(0, 1);
        cells.emplace_back(pb, pf);
    }
    auto count_label = [&](const CatThresholds& t, std::size_t label) {
        std::size_t n = 0;
        for (const auto& s : cells) n += auto_label(s, t) == std::optional<std::size_t>(label);
        return n;
    };
    for (int trial = 0; trial < 200; ++trial) {
        CatThresholds t{{g.uniform(0, 1), g.uniform(0, 1), g.uniform(0, 1)},
                        {g.uniform(0, 1), g.uniform(0, 1), g.uniform(0, 1)}};
        const std::size_t k = g.index(3);
        auto up = t;
        up.t_negative[k] = std::min(1.0, t.t_negative[k] + g.uniform(0, 0.5));
        c.check(negative_labels(cells, up).negatives.size() <= negative_labels(cells, t).negatives.size(),
                "raising t_negative grew the negative set");
        up = t;
        up.t_positive[k] = std::min(1.0, t.t_positive[k] + g.uniform(0, 0.5));
        c.check(count_label(up, k) <= count_label(t, k), "raising t_positive grew a positive class");
    }
    const CatThresholds open{{0.9, 0.9, 0.9}, {0, 0, 0}};
    for (const auto& s : cells) {
        auto pf = s.p_positive();
        const double scale = g.uniform(1e-3, 1.0);
        for (auto& v : pf) v *= scale;
        c.check(assign_class(CellScores(s.p_background(), pf), open) == assign_class(s, open),
                "argmax changed under positive scaling");
    }

    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::size_t> counts{static_cast<std::size_t>(g.integer(1, 120)),
                                        static_cast<std::size_t>(g.integer(1, 120)),
                                        static_cast<std::size_t>(g.integer(1, 900))};
        const auto set = counted_set(counts, g);
        const std::size_t largest = std::max(counts[0], counts[1]);
        const std::size_t neg = std::min(counts[2], largest);
        BalanceParams p;
        p.seed = static_cast<std::uint64_t>(trial);
        c.check(equalize(set, p).counts() == std::vector<std::size_t>{counts[0], counts[1], neg},
                "downsample counts for " + std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
                    std::to_string(counts[2]));
        p.strategy = BalanceStrategy::equalize_all;
        const auto all = equalize(set, p);
        std::size_t synthetic = 0;
        for (const auto& s : all.samples) synthetic += s.synthetic;
        c.check(all.counts() == std::vector<std::size_t>(3, largest), "equalize_all counts");
        c.check(synthetic == (largest - counts[0]) + (largest - counts[1]) + (largest - neg), "synthetic count");
    }

    std::size_t synthetics = 0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::vector<double>> s(static_cast<std::size_t>(g.integer(3, 60)));
        for (auto& p : s) p = {g.normal(0, 3), g.normal(10, 1)};
        const std::size_t k = static_cast<std::size_t>(g.integer(1, 6));
        for (const auto& p : smote_upsample(s, s.size() + 80, k, static_cast<std::uint64_t>(trial))) {
            ++synthetics;
            c.check(oracles::in_hull(s, p), "synthetic outside the class hull");
            bool on_segment = false;
            for (std::size_t i = 0; i < s.size() && !on_segment; ++i) {
                std::vector<std::pair<double, std::size_t>> d;
                for (std::size_t j = 0; j < s.size(); ++j)
                    if (j != i) d.emplace_back(squared_distance(s[i], s[j]), j);
                std::sort(d.begin(), d.end());
                for (std::size_t t = 0; t < std::min(k, d.size()) && !on_segment; ++t) {
                    const auto& a = s[i];
                    const auto& b = s[d[t].second];
                    const double len2 = squared_distance(a, b);
                    if (len2 == 0) continue;
                    const double u = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / len2;
                    const std::vector<double> proj{a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])};
                    on_segment = u >= -1e-9 && u <= 1 + 1e-9 && squared_distance(proj, p) < 1e-12;
                }
            }
            c.check(on_segment, "synthetic not on a segment to one of its seed's neighbors");
        }
    }
    c.note("200 threshold draws, 500 scaled cells, 30 balance fixtures, " + std::to_string(synthetics) +
           " SMOTE synthetics");
}

// ---------------------------------------------------------------------------
// 7: round-to-round QC
// ---------------------------------------------------------------------------

void criterion7(Criterion& c) {
    auto spec = testing_support::small_spec(7007);
    spec.n_images = 3;
    spec.tissue_loss_fraction = 0.1;
    const auto synth = generate_synth(spec);
    const PipelineConfig config;
    const TruthMatcher matcher(synth.truth, config.match_slack_px);
    std::size_t total = 0, kept_identical = 0, lost = 0, lost_excluded = 0, intact = 0, intact_kept = 0;
    std::set<std::pair<std::string, std::uint32_t>> lost_matched;
    for (const auto& img : synth.cohort.images) {
        const auto mask = detect_nuclei(img.segmentation_round(), config.nuclei);
        const LabelIndex index(mask);
        const auto records = build_cell_records(mask, img);
        const std::vector<IntensityPlane> same(img.nuclear_rounds.size(), img.segmentation_round());
        for (const auto& r : qc_filter(records, index, same, QcParams{0.8, 2})) {
            ++total;
            kept_identical += r.qc_pass;
        }
        for (const auto& r : qc_filter(records, index, img.nuclear_rounds, QcParams{0.8, 2})) {
            const auto* t = matcher.match(r.image_id, r.centroid);
            c.check(t != nullptr, img.image_id + " cell " + std::to_string(r.cell_id) + " matches no truth cell");
            if (!t) continue;
            if (t->tissue_lost) {
                ++lost;
                lost_excluded += !r.qc_pass;
                lost_matched.insert({t->image_id, t->cell_id});
            } else {
                ++intact;
                intact_kept += r.qc_pass;
            }
        }
    }
    std::size_t lost_truth = 0;
    for (const auto& t : synth.truth) lost_truth += t.tissue_lost;
    c.check(total > 0 && kept_identical == total,
            "identical rounds kept " + std::to_string(kept_identical) + "/" + std::to_string(total));
    c.check(lost_truth > 0 && lost_matched.size() == lost_truth,
            "segmented " + std::to_string(lost_matched.size()) + " of " + std::to_string(lost_truth) + " lost cells");
    c.check(lost_excluded == lost, "excluded " + std::to_string(lost_excluded) + "/" + std::to_string(lost) + " lost cells");
    c.check(intact_kept == intact, "kept " + std::to_string(intact_kept) + "/" + std::to_string(intact) + " intact cells");
    c.note("identical rounds kept " + std::to_string(kept_identical) + "/" + std::to_string(total) + ", excluded " +
           std::to_string(lost_excluded) + "/" + std::to_string(lost) + " lost cells, kept " +
           std::to_string(intact_kept) + "/" + std::to_string(intact) + " intact");
}

// ---------------------------------------------------------------------------
// 8: determinism and formats
// ---------------------------------------------------------------------------

void criterion8(Criterion& c, const fs::path& work) {
    auto spec = testing_support::small_spec(8008);
    spec.n_images = 4;
    spec.tissue_loss_fraction = 0.05;
    const auto manifest = generate_cohort(spec, work / "cohort");
    const auto truth = work / "cohort/ground_truth.csv";
    auto run = [&](const std::string& name, std::size_t threads) {
        StageOptions opt;
        opt.manifest = manifest;
        opt.out_dir = work / name;
        opt.threads = threads;
        run_pipeline(opt, truth);
        return tree_contents(opt.out_dir);
    };
    const auto base = run("t1", 1);
    c.check(base == run("t1_again", 1), "rerun with one thread differs");
    for (std::size_t t : {2u, 4u, 8u}) c.check(base == run("t" + std::to_string(t), t), std::to_string(t) + " threads differ");
    c.check(generate_synth(spec).truth.size() == read_ground_truth(truth).size(), "cohort regeneration");

    const Artifacts art{work / "t1"};
    const auto cohort = load_cohort(read_manifest(manifest));
    const auto again = generate_synth(spec);
    for (std::size_t j = 0; j < cohort.images.size(); ++j) {
        c.check(cohort.images[j].nuclear_rounds == again.cohort.images[j].nuclear_rounds, "nuclear planes");
        c.check(cohort.images[j].markers == again.cohort.images[j].markers, "marker planes");
        const auto& id = cohort.images[j].image_id;
        const auto mask_bytes = read_file(art.nuclei_mask(id));
        c.check(encode_mask(parse_mask(mask_bytes)) == mask_bytes, id + " mask");
        const auto plane_bytes = read_file(manifest.parent_path() / id / "nuclear_r0.pgm");
        c.check(encode_plane(parse_plane(plane_bytes)) == plane_bytes, id + " plane");
        const auto ppm = read_file(art.overlay(id));
        c.check(encode_ppm(parse_ppm(ppm)) == ppm, id + " overlay");
    }
    for (const auto& p : {art.cells_segmented(), art.cells_qc(), art.cells_scored(), art.predictions()}) {
        const auto bytes = read_file(p);
        c.check(encode_cell_table(parse_cell_table(bytes)) == bytes, p.filename().string());
    }
    for (const auto& p : {art.training_auto(), art.training_balanced()}) {
        const auto bytes = read_file(p);
        c.check(encode_training_set(parse_training_set(bytes)) == bytes, p.filename().string());
    }
    const auto truth_bytes = read_file(truth);
    c.check(encode_ground_truth(parse_ground_truth(truth_bytes)) == truth_bytes, "ground truth");
    const auto model_bytes = read_file(art.model());
    c.check(model_to_json(model_from_json(nlohmann::json::parse(model_bytes))).dump(2) + "\n" == model_bytes, "model");
    const auto manifest_bytes = read_file(manifest);
    c.check(manifest_to_json(read_manifest(manifest)).dump(2) + "\n" == manifest_bytes, "manifest");

    Gen g(8008);
    for (int t = 0; t < 20; ++t) {
        const auto w = static_cast<std::size_t>(g.integer(1, 50)), h = static_cast<std::size_t>(g.integer(1, 50));
        const auto plane = g.plane(w, h);
        c.check(parse_plane(encode_plane(plane)) == plane, "random plane");
        LabelMask m(w, h);
        for (auto& v : m.data) v = static_cast<std::uint32_t>(g.integer(0, 65535));
        c.check(parse_mask(encode_mask(m)) == m, "random mask");
        RgbImage img(w, h);
        for (auto& px : img.data)
            px = {static_cast<std::uint8_t>(g.integer(0, 255)), static_cast<std::uint8_t>(g.integer(0, 255)),
                  static_cast<std::uint8_t>(g.integer(0, 255))};
        c.check(parse_ppm(encode_ppm(img)) == img, "random ppm");
    }

    const auto txt = read_file(art.metrics_txt());
    const auto header = txt.substr(0, txt.find('\n'));
    const auto s = header.find("Sensitivity"), p = header.find("Specificity"), a = header.find("Overall Accuracy");
    c.check(s != std::string::npos && p != std::string::npos && a != std::string::npos && s < p && p < a,
            "metrics.txt header: " + header);
    const auto csv = read_file(art.metrics_csv());
    c.check(csv.rfind("class,Sensitivity,Specificity,Overall Accuracy\n", 0) == 0, "metrics.csv header");
    c.note(std::to_string(base.size()) + " output files identical across reruns and 1/2/4/8 threads");
}

}  // namespace

int main() {
    TempDir work("acceptance");
    const auto immune = run_immune(work / "experiments");
    const std::vector<std::pair<std::string, std::function<void(Criterion&)>>> criteria{
        {"end-to-end accuracy and runtime", [&](Criterion& c) { criterion1(c, immune); }},
        {"auto-training set quality", [&](Criterion& c) { criterion2(c, immune); }},
        {"mixture fitting", criterion3},
        {"oracle equivalences", criterion4},
        {"classifier numerics", criterion5},
        {"rule invariants", criterion6},
        {"round-to-round QC", criterion7},
        {"determinism and formats", [&](Criterion& c) { criterion8(c, work / "determinism"); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Criterion c;
        try {
            criteria[i].second(c);
        } catch (const std::exception& e) {
            c.check(false, std::string("exception: ") + e.what());
        }
        failed += !c.passed();
        std::cout << "criterion " << i + 1 << " " << (c.passed() ? "PASS" : "FAIL") << "  " << criteria[i].first;
        if (!c.notes().empty()) std::cout << " (" << c.notes() << ")";
        std::cout << "\n";
        for (const auto& f : c.failures()) std::cout << "    " << f << "\n";
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
    return failed ? 1 : 0;
}
