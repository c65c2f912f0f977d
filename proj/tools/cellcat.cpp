// cellcat: command-line driver for the CAT pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <cellcat/cellcat.hpp>

namespace {

using namespace cellcat;

struct CommonArgs {
    std::string manifest;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_manifest) {
    auto* m = cmd->add_option("--manifest", a.manifest, "Cohort manifest (JSON)");
    if (needs_manifest) m->required();
    cmd->add_option("--config", a.config, "Pipeline config (JSON)");
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--seed", a.seed, "Global seed (overrides the config)");
    cmd->add_option("--threads", a.threads, "Worker threads (default: CAT_THREADS or available parallelism)");
}

PipelineConfig load_config(const CommonArgs& a) {
    PipelineConfig c = a.config.empty() ? PipelineConfig{} : config_from_json(read_json(a.config));
    if (a.seed) c.seed = *a.seed;
    return c;
}

StageOptions stage_options(const CommonArgs& a) {
    return {a.manifest, a.out, load_config(a), resolve_threads(a.threads), &std::cerr};
}

void print_evaluation(const EvaluationResult& r) {
    std::cout << metrics_to_text(r.metrics);
    if (r.unmatched_predictions) std::cout << "unmatched predictions: " << r.unmatched_predictions << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cell Auto Training pipeline for multiplexed fluorescence images"};
    app.require_subcommand(1);

    std::string synth_spec, synth_out;
    std::optional<std::uint64_t> synth_seed;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort with ground truth");
    synth->add_option("--spec", synth_spec, "Synthetic cohort spec (JSON)")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Seed (overrides the --spec value)");
    std::size_t synth_threads = 0;
    synth->add_option("--threads", synth_threads, "Accepted for uniformity; generation is sequential");
    std::string synth_config;
    synth->add_option("--config", synth_config, "Accepted for uniformity; unused");

    CommonArgs seg_a, qc_a, cat_a, train_a, pred_a, ovl_a, run_a;
    auto* segment = app.add_subcommand("segment", "Segment nuclei and marker masks");
    add_common(segment, seg_a, true);
    auto* qc = app.add_subcommand("qc", "Cross-round correlation QC");
    add_common(qc, qc_a, true);
    auto* autotrain = app.add_subcommand("autotrain", "Fit per-marker mixtures and build the auto-training set");
    add_common(autotrain, cat_a, true);
    auto* train = app.add_subcommand("train", "Balance the training set and fit the classifier");
    add_common(train, train_a, false);
    auto* predict = app.add_subcommand("predict", "Classify all QC-passing cells");
    add_common(predict, pred_a, false);
    auto* overlay = app.add_subcommand("overlay", "Render class overlays");
    add_common(overlay, ovl_a, true);

    auto* run = app.add_subcommand("run", "Run the full pipeline");
    add_common(run, run_a, true);
    std::string run_truth;
    run->add_option("--truth", run_truth, "Ground-truth CSV; evaluates predictions when given");

    CommonArgs eval_a;
    std::string eval_pred, eval_truth;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against ground truth");
    evaluate_cmd->add_option("--pred", eval_pred, "Predictions CSV")->required();
    evaluate_cmd->add_option("--truth", eval_truth, "Ground-truth CSV")->required();
    evaluate_cmd->add_option("--out", eval_a.out, "Output directory (default: next to --pred)");
    evaluate_cmd->add_option("--config", eval_a.config, "Pipeline config (JSON)");
    evaluate_cmd->add_option("--seed", eval_a.seed, "Unused; accepted for uniformity");
    evaluate_cmd->add_option("--threads", eval_a.threads, "Unused; accepted for uniformity");

    auto* harness = app.add_subcommand("harness", "Synthetic reproduction experiments");
    harness->require_subcommand(1);
    std::string exp_file, exp_out = "harness_out";
    auto* harness_run = harness->add_subcommand("run", "Run every experiment in a file");
    harness_run->add_option("--experiments", exp_file, "Experiments file (JSON)")->required();
    harness_run->add_option("--out", exp_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            auto spec = synth_spec_from_json(read_json(synth_spec));
            if (synth_seed) spec.seed = *synth_seed;
            const auto manifest = generate_cohort(spec, synth_out);
            std::cerr << "synth: wrote " << manifest.string() << "\n";
        } else if (*segment) {
            segment_stage(stage_options(seg_a));
        } else if (*qc) {
            qc_stage(stage_options(qc_a));
        } else if (*autotrain) {
            autotrain_stage(stage_options(cat_a));
        } else if (*train) {
            train_stage(stage_options(train_a));
        } else if (*predict) {
            predict_stage(stage_options(pred_a));
        } else if (*overlay) {
            overlay_stage(stage_options(ovl_a));
        } else if (*run) {
            std::optional<fs::path> truth;
            if (!run_truth.empty()) truth = run_truth;
            const auto res = run_pipeline(stage_options(run_a), truth);
            if (res) print_evaluation(*res);
        } else if (*evaluate_cmd) {
            const auto config = load_config(eval_a);
            const fs::path out = eval_a.out.empty() ? fs::path(eval_pred).parent_path() : fs::path(eval_a.out);
            print_evaluation(evaluate_files(eval_pred, eval_truth, config.match_slack_px, out));
        } else if (*harness_run) {
            const auto specs = experiments_from_json(read_json(exp_file));
            const auto results = run_experiments(specs, exp_out);
            bool ok = true;
            for (const auto& r : results) {
                std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
                if (!r.completed) std::cout << " (" << r.error << ")";
                std::cout << "\n";
                for (const auto& f : r.failures) std::cout << "  " << f << "\n";
                ok = ok && r.passed;
            }
            std::cout << "report: " << (fs::path(exp_out) / "report.md").string() << "\n";
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
