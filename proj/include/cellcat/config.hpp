#pragma once
// Pipeline configuration (JSON).

#include <algorithm>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "balance.hpp"
#include "cat.hpp"
#include "classify.hpp"
#include "qc.hpp"
#include "segmentation.hpp"

namespace cellcat {

enum class MarkerMaskKind { membrane, blob };

struct MarkerSegmentation {
    MarkerMaskKind kind = MarkerMaskKind::membrane;
    MembraneParams membrane;
    BlobParams blob;
};

/// A scalar default plus optional per-marker overrides.
struct PerMarkerValue {
    double fallback = 0.0;
    std::map<std::string, double> overrides;

    std::vector<double> resolve(const std::vector<std::string>& markers) const {
        std::vector<double> out;
        for (const auto& m : markers) {
            auto it = overrides.find(m);
            out.push_back(it == overrides.end() ? fallback : it->second);
        }
        return out;
    }
};

struct PipelineConfig {
    std::uint64_t seed = 42;
    BlobParams nuclei = BlobParams::nuclei_default();
    MarkerSegmentation marker_default;
    std::map<std::string, MarkerSegmentation> markers;
    QcParams qc;
    PerMarkerValue t_negative{0.9, {}};
    PerMarkerValue t_positive{0.5, {}};
    PositivityMode positivity_mode = PositivityMode::overlap;
    NegativeRule negative_rule = NegativeRule::high_background;
    MarkerFitOptions fit;
    BalanceParams balance;
    FeatureSpec features;
    ClassifierHyperparams classifier;
    double confidence_flag_threshold = 0.9;
    double match_slack_px = 1.0;  // truth matching: centroid within r + slack

    const MarkerSegmentation& marker_segmentation(const std::string& marker) const {
        auto it = markers.find(marker);
        return it == markers.end() ? marker_default : it->second;
    }

    CatThresholds thresholds(const std::vector<std::string>& marker_names) const {
        CatThresholds t{t_negative.resolve(marker_names), t_positive.resolve(marker_names), positivity_mode,
                        negative_rule};
        t.validate(marker_names.size());
        return t;
    }

    BalanceParams balance_params() const {
        auto b = balance;
        b.seed = seed;
        return b;
    }

    ClassifierHyperparams classifier_params() const {
        auto h = classifier;
        h.seed = seed;
        return h;
    }

    /// Checks that every marker named in the config exists in the cohort and
    /// that all thresholds are in range.
    void validate(const std::vector<std::string>& marker_names) const {
        auto known = [&](const std::string& m) {
            if (std::find(marker_names.begin(), marker_names.end(), m) == marker_names.end())
                throw Error("config references unknown marker '" + m + "'");
        };
        for (const auto& [m, _] : markers) known(m);
        for (const auto& [m, _] : t_negative.overrides) known(m);
        for (const auto& [m, _] : t_positive.overrides) known(m);
        nuclei.validate();
        marker_default.membrane.validate();
        for (const auto& [_, s] : markers) {
            if (s.kind == MarkerMaskKind::membrane)
                s.membrane.validate();
            else
                s.blob.validate();
        }
        qc.validate();
        thresholds(marker_names);
        balance.validate();
        if (!(confidence_flag_threshold >= 0.0 && confidence_flag_threshold <= 1.0))
            throw Error("config: confidence_flag_threshold must be in [0,1]");
        if (fit.em.max_iter < 1 || !(fit.em.tol > 0.0) || !(fit.em.sigma_floor > 0.0))
            throw Error("config: invalid EM options");
        if (!(classifier.learning_rate > 0.0) || classifier.l2 < 0.0 || classifier.epochs < 1)
            throw Error("config: invalid classifier hyperparameters");
    }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw Error("config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw Error("config: unknown key '" + key + "' in '" + where + "'");
    }
}

inline BlobParams blob_from_json(const json& j, const std::string& where) {
    check_keys(j, {"profile", "scales", "detection_k", "min_area", "max_area", "connectivity"}, where);
    const auto profile = j.value("profile", std::string("nuclei-default"));
    BlobParams p;
    if (profile == "nuclei-default")
        p = BlobParams::nuclei_default();
    else if (profile == "large-blob")
        p = BlobParams::large_blob();
    else
        throw Error("config: unknown blob profile '" + profile + "' in '" + where + "'");
    p.scales = j.value("scales", p.scales);
    p.detection_k = j.value("detection_k", p.detection_k);
    p.min_area = j.value("min_area", p.min_area);
    p.max_area = j.value("max_area", p.max_area);
    p.connectivity = j.value("connectivity", p.connectivity);
    p.validate();
    return p;
}

inline MarkerSegmentation marker_seg_from_json(const json& j, const std::string& where) {
    MarkerSegmentation s;
    const auto type = j.value("type", std::string("membrane"));
    if (type == "blob") {
        s.kind = MarkerMaskKind::blob;
        json rest = j;
        rest.erase("type");
        s.blob = blob_from_json(rest, where);
    } else if (type == "membrane") {
        check_keys(j, {"type", "threshold_mode", "min_area", "max_solidity", "wavelet"}, where);
        const auto mode = j.value("threshold_mode", std::string("minimum_error"));
        if (mode == "minimum_error")
            s.membrane.threshold_mode = ThresholdMode::minimum_error;
        else if (mode == "wavelet")
            s.membrane.threshold_mode = ThresholdMode::wavelet;
        else
            throw Error("config: unknown threshold_mode '" + mode + "'");
        s.membrane.min_area = j.value("min_area", s.membrane.min_area);
        s.membrane.max_solidity = j.value("max_solidity", s.membrane.max_solidity);
        if (j.contains("wavelet")) s.membrane.wavelet = blob_from_json(j.at("wavelet"), where + ".wavelet");
        s.membrane.validate();
    } else {
        throw Error("config: unknown marker mask type '" + type + "'");
    }
    return s;
}

inline PerMarkerValue per_marker_from_json(const json& j, double fallback) {
    PerMarkerValue v{fallback, {}};
    if (j.is_number()) {
        v.fallback = j.get<double>();
    } else if (j.is_object()) {
        for (const auto& [k, val] : j.items()) {
            if (k == "default")
                v.fallback = val.get<double>();
            else
                v.overrides[k] = val.get<double>();
        }
    } else {
        throw Error("config: threshold must be a number or an object of per-marker values");
    }
    return v;
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    PipelineConfig c;
    try {
        check_keys(j, {"seed", "segmentation", "qc", "cat", "balance", "features", "classifier",
                       "confidence_flag_threshold", "match_slack_px"},
                   "config");
        c.seed = j.value("seed", c.seed);
        c.confidence_flag_threshold = j.value("confidence_flag_threshold", c.confidence_flag_threshold);
        c.match_slack_px = j.value("match_slack_px", c.match_slack_px);
        if (j.contains("segmentation")) {
            const auto& s = j.at("segmentation");
            check_keys(s, {"nuclei", "marker_default", "markers"}, "segmentation");
            if (s.contains("nuclei")) c.nuclei = detail::blob_from_json(s.at("nuclei"), "segmentation.nuclei");
            if (s.contains("marker_default"))
                c.marker_default = detail::marker_seg_from_json(s.at("marker_default"), "segmentation.marker_default");
            if (s.contains("markers"))
                for (const auto& [name, m] : s.at("markers").items())
                    c.markers[name] = detail::marker_seg_from_json(m, "segmentation.markers." + name);
        }
        if (j.contains("qc")) {
            const auto& q = j.at("qc");
            check_keys(q, {"correlation_threshold", "dilation_px"}, "qc");
            c.qc.correlation_threshold = q.value("correlation_threshold", c.qc.correlation_threshold);
            c.qc.dilation_px = q.value("dilation_px", c.qc.dilation_px);
        }
        if (j.contains("cat")) {
            const auto& k = j.at("cat");
            check_keys(k, {"t_negative", "t_positive", "positivity_mode", "negative_rule", "em", "min_separation"},
                       "cat");
            if (k.contains("t_negative")) c.t_negative = detail::per_marker_from_json(k.at("t_negative"), 0.9);
            if (k.contains("t_positive")) c.t_positive = detail::per_marker_from_json(k.at("t_positive"), 0.5);
            const auto pm = k.value("positivity_mode", std::string("overlap"));
            if (pm != "overlap" && pm != "paper_literal") throw Error("config: unknown positivity_mode '" + pm + "'");
            c.positivity_mode = pm == "overlap" ? PositivityMode::overlap : PositivityMode::paper_literal;
            const auto nr = k.value("negative_rule", std::string("high_background"));
            if (nr != "high_background" && nr != "paper_literal")
                throw Error("config: unknown negative_rule '" + nr + "'");
            c.negative_rule = nr == "high_background" ? NegativeRule::high_background : NegativeRule::paper_literal;
            if (k.contains("em")) {
                const auto& e = k.at("em");
                check_keys(e, {"max_iter", "tol", "sigma_floor"}, "cat.em");
                c.fit.em.max_iter = e.value("max_iter", c.fit.em.max_iter);
                c.fit.em.tol = e.value("tol", c.fit.em.tol);
                c.fit.em.sigma_floor = e.value("sigma_floor", c.fit.em.sigma_floor);
            }
            c.fit.min_separation = k.value("min_separation", c.fit.min_separation);
        }
        if (j.contains("balance")) {
            const auto& b = j.at("balance");
            check_keys(b, {"strategy", "negative_target", "smote_k"}, "balance");
            const auto st = b.value("strategy", std::string("downsample_negatives"));
            if (st != "downsample_negatives" && st != "equalize_all")
                throw Error("config: unknown balance strategy '" + st + "'");
            c.balance.strategy =
                st == "equalize_all" ? BalanceStrategy::equalize_all : BalanceStrategy::downsample_negatives;
            const auto nt = b.value("negative_target", std::string("largest_positive"));
            if (nt != "largest_positive" && nt != "mean_positive")
                throw Error("config: unknown negative_target '" + nt + "'");
            c.balance.negative_target =
                nt == "mean_positive" ? NegativeTarget::mean_positive : NegativeTarget::largest_positive;
            c.balance.smote_k = b.value("smote_k", c.balance.smote_k);
        }
        if (j.contains("features")) {
            const auto& f = j.at("features");
            check_keys(f, {"transform", "standardize"}, "features");
            const auto t = f.value("transform", std::string("log1p"));
            if (t != "log1p" && t != "raw") throw Error("config: unknown feature transform '" + t + "'");
            c.features.transform = t == "raw" ? FeatureTransform::raw : FeatureTransform::log1p;
            c.features.standardize = f.value("standardize", c.features.standardize);
        }
        if (j.contains("classifier")) {
            const auto& h = j.at("classifier");
            check_keys(h, {"learning_rate", "l2", "epochs"}, "classifier");
            c.classifier.learning_rate = h.value("learning_rate", c.classifier.learning_rate);
            c.classifier.l2 = h.value("l2", c.classifier.l2);
            c.classifier.epochs = h.value("epochs", c.classifier.epochs);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    return c;
}

/// Applies `overrides` on top of `base` key by key (objects merge recursively).
inline nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& overrides) {
    if (base.is_null()) base = nlohmann::json::object();
    base.merge_patch(overrides);
    return base;
}

}  // namespace cellcat
