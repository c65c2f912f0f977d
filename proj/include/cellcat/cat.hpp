#pragma once
// Cell Auto Training: per-cell background probability and membrane-overlap
// positivity, the negative / positive labeling rules, and training-set
// assembly.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "gmm.hpp"

namespace cellcat {

enum class PositivityMode { overlap, paper_literal };
enum class NegativeRule { high_background, paper_literal };

struct CatThresholds {
    std::vector<double> t_negative;  // per marker
    std::vector<double> t_positive;  // per marker
    PositivityMode positivity_mode = PositivityMode::overlap;
    NegativeRule negative_rule = NegativeRule::high_background;

    static CatThresholds defaults(std::size_t marker_count) {
        return {std::vector<double>(marker_count, 0.9), std::vector<double>(marker_count, 0.5)};
    }

    void validate(std::size_t marker_count) const {
        if (t_negative.size() != marker_count || t_positive.size() != marker_count)
            throw Error("CatThresholds: expected one threshold per marker");
        for (std::size_t k = 0; k < marker_count; ++k)
            if (!(t_negative[k] >= 0.0 && t_negative[k] <= 1.0) || !(t_positive[k] >= 0.0 && t_positive[k] <= 1.0))
                throw Error("CatThresholds: thresholds must lie in [0,1]");
    }
};

/// Mean background posterior over the cell's pixels.
inline double cell_background_prob(std::span<const std::size_t> cell_pixels, const IntensityPlane& marker,
                                   const GmmParams& params) {
    if (cell_pixels.empty()) throw Error("cell_background_prob: empty pixel set");
    double sum = 0.0;
    for (auto i : cell_pixels) sum += background_posterior(marker.data[i], params);
    return std::clamp(sum / static_cast<double>(cell_pixels.size()), 0.0, 1.0);
}

inline double cell_background_prob(std::uint32_t cell_id, const LabelIndex& index, const IntensityPlane& marker,
                                   const GmmParams& params) {
    return cell_background_prob(index.pixels(cell_id), marker, params);
}

/// Positivity of one cell for one marker from the membrane-like component
/// that overlaps it most (ties go to the lower label).
inline double positive_score(std::span<const std::size_t> cell_pixels, const LabelMask& membrane,
                             std::span<const std::size_t> membrane_areas, PositivityMode mode) {
    if (cell_pixels.empty()) return 0.0;
    std::vector<std::pair<std::uint32_t, std::size_t>> counts;  // label, overlap
    for (auto i : cell_pixels) {
        const auto l = membrane.data[i];
        if (l == 0) continue;
        auto it = std::find_if(counts.begin(), counts.end(), [l](const auto& c) { return c.first == l; });
        if (it == counts.end())
            counts.emplace_back(l, 1);
        else
            ++it->second;
    }
    if (counts.empty()) return 0.0;
    auto best = counts.front();
    for (const auto& c : counts)
        if (c.second > best.second || (c.second == best.second && c.first < best.first)) best = c;

    const double cell_area = static_cast<double>(cell_pixels.size());
    if (mode == PositivityMode::overlap) return static_cast<double>(best.second) / cell_area;
    const double m_area = static_cast<double>(membrane_areas[best.first]);
    return std::clamp(std::abs(cell_area - m_area) / cell_area, 0.0, 1.0);
}

inline double positive_score(std::uint32_t cell_id, const LabelIndex& cells, const LabelMask& membrane,
                             PositivityMode mode) {
    if (cells.width() != membrane.width || cells.height() != membrane.height)
        throw Error("positive_score: mask dimensions differ");
    const LabelIndex m_index(membrane);
    return positive_score(cells.pixels(cell_id), membrane, m_index.areas(), mode);
}

/// Negative if the background probability clears the threshold in every
/// marker. The paper_literal rule inverts the comparison.
inline bool is_negative(const CellScores& s, const CatThresholds& t) {
    for (std::size_t k = 0; k < s.marker_count(); ++k) {
        if (!s.usable(k)) return false;
        const double pb = s.p_background()[k];
        const bool ok = t.negative_rule == NegativeRule::high_background ? pb >= t.t_negative[k] : pb < t.t_negative[k];
        if (!ok) return false;
    }
    return true;
}

struct NegativeSplit {
    std::vector<std::size_t> negatives;   // indices into the score list
    std::vector<std::size_t> candidates;  // positive-label candidates
};

inline NegativeSplit negative_labels(std::span<const CellScores> scores, const CatThresholds& t) {
    NegativeSplit out;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].marker_count() != t.t_negative.size())
            throw Error("negative_labels: score/threshold marker count mismatch");
        (is_negative(scores[i], t) ? out.negatives : out.candidates).push_back(i);
    }
    return out;
}

/// Argmax marker over P_F (ties to the lowest index); that marker's index if
/// it clears its threshold, otherwise nullopt (Negative).
inline std::optional<std::size_t> assign_class(const CellScores& s, const CatThresholds& t) {
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < s.marker_count(); ++k) {
        if (!s.usable(k)) continue;
        if (!best || s.p_positive()[k] > s.p_positive()[*best]) best = k;
    }
    if (!best) return std::nullopt;
    if (s.p_positive()[*best] >= t.t_positive[*best]) return best;
    return std::nullopt;
}

inline std::vector<std::optional<std::size_t>> assign_classes(std::span<const CellScores> candidates,
                                                              const CatThresholds& t) {
    std::vector<std::optional<std::size_t>> out;
    out.reserve(candidates.size());
    for (const auto& s : candidates) out.push_back(assign_class(s, t));
    return out;
}

/// Auto label of one cell as a class index (markers, then Negative at index
/// k), or nullopt when the cell is left out of the training set.
inline std::optional<std::size_t> auto_label(const CellScores& s, const CatThresholds& t) {
    if (is_negative(s, t)) return s.marker_count();
    return assign_class(s, t);
}

// ---------------------------------------------------------------------------
// Per-image scoring
// ---------------------------------------------------------------------------

/// Mixture fit of one marker on one image. `fit` is empty when EM failed;
/// `stained` is false when the components are not separated enough to call
/// any pixel foreground.
struct MarkerFit {
    std::optional<GmmParams> fit;
    bool stained = true;
    std::string warning;
};

struct MarkerFitOptions {
    EmOptions em;
    double min_separation = 2.0;  // Ashman's D
};

inline MarkerFit fit_marker(const IntensityPlane& marker, const MarkerFitOptions& opt) {
    MarkerFit out;
    std::vector<double> values(marker.data.begin(), marker.data.end());
    try {
        out.fit = fit_gmm2(values, opt.em).params;
        out.stained = out.fit->separation() >= opt.min_separation;
    } catch (const Error& e) {
        out.warning = e.what();
    }
    return out;
}

/// Scores every cell of one image. `membranes[k]` is the membrane-like (or
/// blob) mask for marker k.
inline std::vector<CellScores> score_image(const MultiChannelImage& image, const LabelIndex& cells,
                                           std::span<const CellRecord> records, std::span<const LabelMask> membranes,
                                           std::span<const MarkerFit> fits, PositivityMode mode) {
    const std::size_t k = image.markers.size();
    if (membranes.size() != k || fits.size() != k) throw Error("score_image: expected one mask and fit per marker");
    std::vector<std::vector<std::size_t>> membrane_areas;
    for (const auto& m : membranes) {
        if (m.width != image.width() || m.height != image.height())
            throw Error("image '" + image.image_id + "': membrane mask dimensions differ");
        membrane_areas.push_back(LabelIndex(m).areas());
    }
    std::vector<CellScores> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        const auto px = cells.pixels(rec.cell_id);
        std::vector<double> pb(k, 0.0), pf(k, 0.0);
        std::vector<std::uint8_t> usable(k, 1);
        for (std::size_t m = 0; m < k; ++m) {
            if (!fits[m].fit) {
                usable[m] = 0;
                continue;
            }
            if (!fits[m].stained) {
                pb[m] = 1.0;
                continue;
            }
            pb[m] = cell_background_prob(px, image.markers[m], *fits[m].fit);
            pf[m] = positive_score(px, membranes[m], membrane_areas[m], mode);
        }
        out.emplace_back(std::move(pb), std::move(pf), std::move(usable));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training set
// ---------------------------------------------------------------------------

struct TrainingSample {
    std::string image_id;  // empty for synthetic samples
    std::uint32_t cell_id = 0;
    std::vector<double> features;  // per-marker mean intensities
    std::size_t label = 0;         // class index; marker count == Negative
    bool synthetic = false;
};

struct TrainingSet {
    std::vector<std::string> class_names;  // markers then Negative
    std::vector<TrainingSample> samples;

    std::size_t class_count() const noexcept { return class_names.size(); }
    std::size_t negative_index() const noexcept { return class_names.size() - 1; }

    std::vector<std::size_t> counts() const {
        std::vector<std::size_t> c(class_names.size(), 0);
        for (const auto& s : samples) ++c.at(s.label);
        return c;
    }
};

/// Auto-labeled training samples from the QC-passing cells of the cohort.
/// `scores[i][c]` belongs to `records[i][c]`. Unlabeled cells are omitted.
inline TrainingSet build_training_set(const Cohort& cohort, std::span<const std::vector<CellRecord>> records,
                                      std::span<const std::vector<CellScores>> scores, const CatThresholds& t) {
    t.validate(cohort.marker_count());
    if (records.size() != cohort.images.size() || scores.size() != cohort.images.size())
        throw Error("build_training_set: expected per-image records and scores");
    TrainingSet set;
    set.class_names = cohort.class_names();
    for (std::size_t j = 0; j < cohort.images.size(); ++j) {
        if (records[j].size() != scores[j].size()) throw Error("build_training_set: records/scores length mismatch");
        for (std::size_t i = 0; i < records[j].size(); ++i) {
            const auto& rec = records[j][i];
            if (!rec.qc_pass) continue;
            const auto label = auto_label(scores[j][i], t);
            if (!label) continue;
            set.samples.push_back({rec.image_id, rec.cell_id, rec.mean_intensity, *label, false});
        }
    }
    return set;
}

}  // namespace cellcat
