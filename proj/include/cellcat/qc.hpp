#pragma once
// Per-cell tissue-preservation gate: Pearson correlation of the nuclear channel
// between consecutive staining rounds over a dilated bounding box.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "core.hpp"

namespace cellcat {

struct QcParams {
    double correlation_threshold = 0.8;
    std::size_t dilation_px = 2;

    void validate() const {
        if (!(correlation_threshold >= -1.0 && correlation_threshold <= 1.0))
            throw Error("QcParams: correlation_threshold must be within [-1,1]");
    }
};

/// Pearson correlation over `box`; 0 when either patch is flat.
inline double patch_correlation(const IntensityPlane& a, const IntensityPlane& b, const Box& box) {
    const double n = static_cast<double>(box.area());
    double ma = 0.0, mb = 0.0;
    for (std::size_t y = box.y0; y <= box.y1; ++y)
        for (std::size_t x = box.x0; x <= box.x1; ++x) {
            ma += a(x, y);
            mb += b(x, y);
        }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t y = box.y0; y <= box.y1; ++y)
        for (std::size_t x = box.x0; x <= box.x1; ++x) {
            const double da = a(x, y) - ma;
            const double db = b(x, y) - mb;
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double cell_round_correlation(std::uint32_t cell_id, const LabelIndex& index, const IntensityPlane& round_a,
                                     const IntensityPlane& round_b, std::size_t dilation_px) {
    if (!round_a.same_shape(round_b) || round_a.width != index.width() || round_a.height != index.height())
        throw Error("qc: planes and mask differ in dimensions");
    if (!index.contains(cell_id)) throw Error("qc: cell " + std::to_string(cell_id) + " absent from mask");
    const Box box = index.bounds(cell_id).expanded(dilation_px, round_a.width, round_a.height);
    return patch_correlation(round_a, round_b, box);
}

inline double cell_round_correlation(const CellRecord& cell, const LabelMask& mask, const IntensityPlane& round_a,
                                     const IntensityPlane& round_b, std::size_t dilation_px) {
    return cell_round_correlation(cell.cell_id, LabelIndex(mask), round_a, round_b, dilation_px);
}

/// Sets qc_pass to whether every consecutive round pair correlates at or
/// above the threshold. A single round passes every cell.
inline std::vector<CellRecord> qc_filter(std::vector<CellRecord> records, const LabelIndex& index,
                                         std::span<const IntensityPlane> nuclear_rounds, const QcParams& params) {
    params.validate();
    if (nuclear_rounds.empty()) throw Error("qc: at least one nuclear round required");
    for (auto& rec : records) {
        double worst = 1.0;
        for (std::size_t r = 0; r + 1 < nuclear_rounds.size(); ++r)
            worst = std::min(worst, cell_round_correlation(rec.cell_id, index, nuclear_rounds[r], nuclear_rounds[r + 1],
                                                           params.dilation_px));
        rec.qc_pass = worst >= params.correlation_threshold;
    }
    return records;
}

inline std::vector<CellRecord> qc_filter(std::vector<CellRecord> records, const LabelMask& mask,
                                         std::span<const IntensityPlane> nuclear_rounds, const QcParams& params) {
    return qc_filter(std::move(records), LabelIndex(mask), nuclear_rounds, params);
}

}  // namespace cellcat
