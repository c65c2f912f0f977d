#pragma once
// Multinomial logistic regression over per-marker cell intensities, class
// prediction with probabilities, and one-vs-rest evaluation metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cat.hpp"

namespace cellcat {

enum class FeatureTransform { raw, log1p };

struct FeatureSpec {
    FeatureTransform transform = FeatureTransform::log1p;
    bool standardize = true;
};

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // > 0
};

struct ClassifierHyperparams {
    double learning_rate = 0.5;
    double l2 = 1e-4;
    int epochs = 500;
    std::uint64_t seed = 0;
};

/// Weights are row-major `classes x (features + 1)`, bias in the last column.
struct ClassifierModel {
    std::vector<std::string> class_names;
    FeatureSpec spec;
    FeatureStats stats;
    std::size_t feature_count = 0;
    std::vector<double> weights;
    std::uint64_t seed = 0;
    int iterations = 0;
    double final_loss = 0.0;

    std::size_t class_count() const noexcept { return class_names.size(); }
    std::size_t stride() const noexcept { return feature_count + 1; }

    void validate() const {
        if (weights.size() != class_count() * stride()) throw Error("model: weight matrix shape mismatch");
        if (stats.mean.size() != feature_count || stats.stddev.size() != feature_count)
            throw Error("model: feature stats length mismatch");
        for (double s : stats.stddev)
            if (!(s > 0.0)) throw Error("model: feature stddev must be positive");
    }
};

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

inline std::vector<double> transform_features(std::span<const double> raw, FeatureTransform t) {
    std::vector<double> out(raw.begin(), raw.end());
    for (double& v : out) {
        if (!std::isfinite(v)) throw Error("non-finite intensity");
        if (t == FeatureTransform::log1p) {
            if (v <= -1.0) throw Error("intensity below -1 cannot be log1p-transformed");
            v = std::log1p(v);
        }
    }
    return out;
}

/// Population mean/stddev per column; a constant column gets stddev 1.
inline FeatureStats compute_stats(std::span<const std::vector<double>> rows, std::size_t d) {
    FeatureStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
    if (rows.empty()) return st;
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) st.mean[j] += r[j];
    for (auto& m : st.mean) m /= n;
    std::vector<double> var(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) var[j] += (r[j] - st.mean[j]) * (r[j] - st.mean[j]);
    for (std::size_t j = 0; j < d; ++j) {
        const double s = std::sqrt(var[j] / n);
        st.stddev[j] = s > 0.0 ? s : 1.0;
    }
    return st;
}

inline std::vector<double> apply_stats(std::vector<double> x, const FeatureStats& st) {
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - st.mean[j]) / st.stddev[j];
    return x;
}

/// Model-space feature vector for one raw intensity vector, using the
/// model's stored statistics.
inline std::vector<double> extract_features(std::span<const double> raw, const ClassifierModel& model) {
    if (raw.size() != model.feature_count)
        throw Error("feature length " + std::to_string(raw.size()) + " does not match model (" +
                    std::to_string(model.feature_count) + ")");
    auto x = transform_features(raw, model.spec.transform);
    if (model.spec.standardize) x = apply_stats(std::move(x), model.stats);
    return x;
}

inline std::vector<std::vector<double>> extract_features(std::span<const CellRecord> records,
                                                         const ClassifierModel& model) {
    std::vector<std::vector<double>> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        try {
            out.push_back(extract_features(r.mean_intensity, model));
        } catch (const Error& e) {
            throw Error("cell " + r.image_id + "/" + std::to_string(r.cell_id) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax regression
// ---------------------------------------------------------------------------

inline std::vector<double> softmax_scores(std::span<const double> weights, std::size_t classes,
                                          std::span<const double> x) {
    const std::size_t stride = x.size() + 1;
    std::vector<double> z(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        const double* w = &weights[c * stride];
        double acc = w[x.size()];
        for (std::size_t j = 0; j < x.size(); ++j) acc += w[j] * x[j];
        z[c] = acc;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

/// Mean cross-entropy plus (l2/2)*||W||^2 over non-bias weights. Fills
/// `grad` (same shape as weights) when non-null.
inline double softmax_loss(std::span<const double> weights, std::size_t classes,
                           std::span<const std::vector<double>> x, std::span<const std::size_t> y, double l2,
                           std::vector<double>* grad) {
    const std::size_t d = x.empty() ? 0 : x[0].size();
    const std::size_t stride = d + 1;
    const double n = static_cast<double>(x.size());
    if (grad) grad->assign(weights.size(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t c_true = y[i];
        const double* xi = x[i].data();
        std::vector<double> z(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            const double* w = &weights[c * stride];
            double acc = w[d];
            for (std::size_t j = 0; j < d; ++j) acc += w[j] * xi[j];
            z[c] = acc;
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        const double log_norm = mx + std::log(sum);
        loss += log_norm - z[c_true];
        if (grad) {
            for (std::size_t c = 0; c < classes; ++c) {
                const double r = std::exp(z[c] - log_norm) - (c == c_true ? 1.0 : 0.0);
                double* g = &(*grad)[c * stride];
                for (std::size_t j = 0; j < d; ++j) g[j] += r * xi[j];
                g[d] += r;
            }
        }
    }
    loss /= n;
    double reg = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t j = 0; j < d; ++j) reg += weights[c * stride + j] * weights[c * stride + j];
    loss += 0.5 * l2 * reg;
    if (grad) {
        for (auto& g : *grad) g /= n;
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t j = 0; j < d; ++j) (*grad)[c * stride + j] += l2 * weights[c * stride + j];
    }
    return loss;
}

struct TrainingTrace {
    std::vector<double> loss;  // before each step, plus the final loss
};

/// Full-batch gradient descent from zero weights.
inline ClassifierModel train_classifier(const TrainingSet& set, const FeatureSpec& spec,
                                        const ClassifierHyperparams& hp, TrainingTrace* trace = nullptr) {
    const auto counts = set.counts();
    std::size_t present = 0;
    for (auto c : counts) present += c > 0 ? 1 : 0;
    if (present < 2) throw Error("train_classifier: need at least two classes, found " + std::to_string(present));
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 1)
            throw Error("train_classifier: class '" + set.class_names[c] + "' has a single sample");
    if (hp.epochs < 1) throw Error("train_classifier: epochs must be >= 1");

    const std::size_t d = set.samples.front().features.size();
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    for (const auto& s : set.samples) {
        if (s.features.size() != d) throw Error("train_classifier: inconsistent feature length");
        try {
            x.push_back(transform_features(s.features, spec.transform));
        } catch (const Error& e) {
            throw Error("training sample " + s.image_id + "/" + std::to_string(s.cell_id) + ": " + e.what());
        }
        y.push_back(s.label);
    }

    ClassifierModel model;
    model.class_names = set.class_names;
    model.spec = spec;
    model.feature_count = d;
    model.stats = spec.standardize ? compute_stats(x, d)
                                   : FeatureStats{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
    if (spec.standardize)
        for (auto& r : x) r = apply_stats(std::move(r), model.stats);

    const std::size_t classes = set.class_count();
    model.weights.assign(classes * (d + 1), 0.0);
    model.seed = hp.seed;
    std::vector<double> grad;
    double loss = 0.0;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        loss = softmax_loss(model.weights, classes, x, y, hp.l2, &grad);
        if (!std::isfinite(loss))
            throw Error("train_classifier: loss diverged at epoch " + std::to_string(epoch) +
                        "; use a smaller learning_rate");
        if (trace) trace->loss.push_back(loss);
        for (std::size_t i = 0; i < grad.size(); ++i) model.weights[i] -= hp.learning_rate * grad[i];
    }
    loss = softmax_loss(model.weights, classes, x, y, hp.l2, nullptr);
    if (!std::isfinite(loss)) throw Error("train_classifier: loss diverged; use a smaller learning_rate");
    if (trace) trace->loss.push_back(loss);
    model.iterations = hp.epochs;
    model.final_loss = loss;
    return model;
}

struct Prediction {
    std::size_t class_index = 0;
    double probability = 0.0;
    std::vector<double> probabilities;
};

/// `features` are model-space vectors (see extract_features).
inline Prediction predict(const ClassifierModel& model, std::span<const double> features) {
    if (features.size() != model.feature_count)
        throw Error("predict: feature length " + std::to_string(features.size()) + " does not match model (" +
                    std::to_string(model.feature_count) + ")");
    Prediction p;
    p.probabilities = softmax_scores(model.weights, model.class_count(), features);
    p.class_index = 0;
    for (std::size_t c = 1; c < p.probabilities.size(); ++c)
        if (p.probabilities[c] > p.probabilities[p.class_index]) p.class_index = c;
    p.probability = p.probabilities[p.class_index];
    return p;
}

inline Prediction predict_raw(const ClassifierModel& model, std::span<const double> raw_intensities) {
    return predict(model, extract_features(raw_intensities, model));
}

// ---------------------------------------------------------------------------
// Model JSON
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const ClassifierModel& m) {
    nlohmann::json doc;
    doc["class_names"] = m.class_names;
    doc["feature_count"] = m.feature_count;
    doc["transform"] = m.spec.transform == FeatureTransform::log1p ? "log1p" : "raw";
    doc["standardize"] = m.spec.standardize;
    doc["feature_mean"] = m.stats.mean;
    doc["feature_stddev"] = m.stats.stddev;
    doc["weights"] = m.weights;
    doc["metadata"] = {{"seed", m.seed}, {"iterations", m.iterations}, {"final_loss", m.final_loss}};
    return doc;
}

inline ClassifierModel model_from_json(const nlohmann::json& doc) {
    ClassifierModel m;
    try {
        m.class_names = doc.at("class_names").get<std::vector<std::string>>();
        m.feature_count = doc.at("feature_count").get<std::size_t>();
        const auto t = doc.at("transform").get<std::string>();
        if (t != "log1p" && t != "raw") throw Error("model: unknown transform '" + t + "'");
        m.spec.transform = t == "log1p" ? FeatureTransform::log1p : FeatureTransform::raw;
        m.spec.standardize = doc.at("standardize").get<bool>();
        m.stats.mean = doc.at("feature_mean").get<std::vector<double>>();
        m.stats.stddev = doc.at("feature_stddev").get<std::vector<double>>();
        m.weights = doc.at("weights").get<std::vector<double>>();
        const auto& meta = doc.at("metadata");
        m.seed = meta.at("seed").get<std::uint64_t>();
        m.iterations = meta.at("iterations").get<int>();
        m.final_loss = meta.at("final_loss").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("model: ") + e.what());
    }
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
    std::vector<std::string> class_names;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
    std::vector<std::optional<double>> sensitivity;   // undefined when no truth samples
    std::vector<std::optional<double>> specificity;   // undefined when no negatives
    double overall_accuracy = 0.0;
    std::size_t total = 0;
};

inline MetricsReport evaluate(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                              const std::vector<std::string>& class_names) {
    if (predicted.size() != truth.size())
        throw Error("evaluate: " + std::to_string(predicted.size()) + " predictions for " +
                    std::to_string(truth.size()) + " truth labels");
    const std::size_t c = class_names.size();
    MetricsReport r;
    r.class_names = class_names;
    r.confusion.assign(c, std::vector<std::size_t>(c, 0));
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] >= c || truth[i] >= c) throw Error("evaluate: class index out of range");
        ++r.confusion[truth[i]][predicted[i]];
    }
    r.total = predicted.size();
    std::size_t trace = 0;
    for (std::size_t k = 0; k < c; ++k) trace += r.confusion[k][k];
    r.overall_accuracy = r.total ? static_cast<double>(trace) / static_cast<double>(r.total) : 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t tp = r.confusion[k][k], fn = 0, fp = 0;
        for (std::size_t j = 0; j < c; ++j) {
            if (j == k) continue;
            fn += r.confusion[k][j];
            fp += r.confusion[j][k];
        }
        const std::size_t tn = r.total - tp - fn - fp;
        r.sensitivity.push_back(tp + fn ? std::optional<double>(static_cast<double>(tp) / (tp + fn)) : std::nullopt);
        r.specificity.push_back(tn + fp ? std::optional<double>(static_cast<double>(tn) / (tn + fp)) : std::nullopt);
    }
    return r;
}

inline std::string format_metric(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

/// CSV: one row per class with Sensitivity, Specificity and (first row
/// only) Overall Accuracy, followed by the confusion matrix.
inline std::string metrics_to_csv(const MetricsReport& r) {
    std::string out = "class,Sensitivity,Specificity,Overall Accuracy\n";
    for (std::size_t k = 0; k < r.class_names.size(); ++k)
        out += r.class_names[k] + "," + format_metric(r.sensitivity[k]) + "," + format_metric(r.specificity[k]) + "," +
               (k == 0 ? format_metric(r.overall_accuracy) : std::string()) + "\n";
    out += "\nconfusion(truth\\predicted)";
    for (const auto& n : r.class_names) out += "," + n;
    out += "\n";
    for (std::size_t k = 0; k < r.class_names.size(); ++k) {
        out += r.class_names[k];
        for (auto v : r.confusion[k]) out += "," + std::to_string(v);
        out += "\n";
    }
    return out;
}

inline std::string metrics_to_text(const MetricsReport& r) {
    std::size_t name_w = 5;
    for (const auto& n : r.class_names) name_w = std::max(name_w, n.size());
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    std::string out = pad("", name_w) + "  " + pad("Sensitivity", 12) + "  " + pad("Specificity", 12) +
                      "  Overall Accuracy\n";
    for (std::size_t k = 0; k < r.class_names.size(); ++k) {
        out += pad(r.class_names[k], name_w) + "  " + pad(format_metric(r.sensitivity[k]), 12) + "  " +
               pad(format_metric(r.specificity[k]), 12);
        if (k == 0) out += "  " + format_metric(r.overall_accuracy);
        out += "\n";
    }
    out += "\ncells evaluated: " + std::to_string(r.total) + "\n";
    return out;
}

}  // namespace cellcat
