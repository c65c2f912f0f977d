#pragma once
// Nuclear blob detection (a-trous B3-spline multiscale product), membrane-like
// object detection, minimum-error thresholding and connected components.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace cellcat {

struct BlobParams {
    std::vector<int> scales{2, 3};
    double detection_k = 3.0;
    std::size_t min_area = 30;
    std::size_t max_area = 5000;
    int connectivity = 8;

    void validate() const {
        if (scales.empty()) throw Error("BlobParams: scales must be nonempty");
        for (std::size_t i = 0; i < scales.size(); ++i) {
            if (scales[i] < 1) throw Error("BlobParams: scales must be >= 1");
            if (i > 0 && scales[i] <= scales[i - 1]) throw Error("BlobParams: scales must be increasing");
        }
        if (min_area < 1) throw Error("BlobParams: min_area must be >= 1");
        if (min_area >= max_area) throw Error("BlobParams: min_area must be < max_area");
        if (connectivity != 4 && connectivity != 8) throw Error("BlobParams: connectivity must be 4 or 8");
    }

    static BlobParams nuclei_default() { return {}; }
    static BlobParams large_blob() { return BlobParams{{3, 4}, 3.0, 60, 20000, 8}; }
};

enum class ThresholdMode { minimum_error, wavelet };

struct MembraneParams {
    ThresholdMode threshold_mode = ThresholdMode::minimum_error;
    std::size_t min_area = 20;
    double max_solidity = 0.6;
    BlobParams wavelet;  // support parameters for ThresholdMode::wavelet

    void validate() const {
        if (min_area < 1) throw Error("MembraneParams: min_area must be >= 1");
        if (!(max_solidity > 0.0 && max_solidity <= 1.0)) throw Error("MembraneParams: max_solidity must be in (0,1]");
        if (threshold_mode == ThresholdMode::wavelet) wavelet.validate();
    }
};

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

/// Labels foreground components; numbering follows the raster order of each
/// component's first pixel.
inline LabelMask connected_components(const BinaryMask& support, int connectivity) {
    if (connectivity != 4 && connectivity != 8) throw Error("connectivity must be 4 or 8");
    const std::size_t w = support.width, h = support.height;
    LabelMask labels(w, h, 0);
    std::vector<std::size_t> stack;
    std::uint32_t next = 0;
    for (std::size_t start = 0; start < support.size(); ++start) {
        if (!support.data[start] || labels.data[start]) continue;
        ++next;
        labels.data[start] = next;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const std::size_t x = i % w, y = i / w;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    if (connectivity == 4 && dx != 0 && dy != 0) continue;
                    if ((dx < 0 && x == 0) || (dy < 0 && y == 0) || (dx > 0 && x + 1 == w) || (dy > 0 && y + 1 == h))
                        continue;
                    const std::size_t j = (y + dy) * w + (x + dx);
                    if (support.data[j] && !labels.data[j]) {
                        labels.data[j] = next;
                        stack.push_back(j);
                    }
                }
            }
        }
    }
    return labels;
}

/// Drops labels rejected by `keep(label)` and renumbers the survivors
/// contiguously, preserving their relative order.
template <typename Keep>
LabelMask filter_and_renumber(const LabelMask& labels, Keep&& keep) {
    const LabelIndex index(labels);
    std::vector<std::uint32_t> remap(std::size_t{index.max_label()} + 1, 0);
    std::uint32_t next = 0;
    for (std::uint32_t l = 1; l <= index.max_label(); ++l)
        if (index.area(l) > 0 && keep(index, l)) remap[l] = ++next;
    LabelMask out(labels.width, labels.height, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) out.data[i] = remap[labels.data[i]];
    return out;
}

// ---------------------------------------------------------------------------
// A-trous wavelet
// ---------------------------------------------------------------------------

namespace detail {

/// Mirror reflection without edge repetition, folded as often as needed.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

inline RealPlane b3_smooth(const RealPlane& in, std::size_t step) {
    static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    const std::size_t w = in.width, h = in.height;
    const auto s = static_cast<std::ptrdiff_t>(step);
    RealPlane tmp(w, h), out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        const double* row = &in.data[y * w];
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t)
                acc += k[t + 2] * row[reflect_index(static_cast<std::ptrdiff_t>(x) + t * s, w)];
            tmp.data[y * w + x] = acc;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        std::size_t rows[5];
        for (int t = -2; t <= 2; ++t) rows[t + 2] = reflect_index(static_cast<std::ptrdiff_t>(y) + t * s, h) * w;
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 5; ++t) acc += k[t] * tmp.data[rows[t] + x];
            out.data[y * w + x] = acc;
        }
    }
    return out;
}

}  // namespace detail

struct AtrousDecomposition {
    std::vector<RealPlane> details;  // W1..WL
    RealPlane residual;              // A_L
};

inline AtrousDecomposition atrous_decompose(const IntensityPlane& plane, int levels) {
    if (levels < 1) throw Error("atrous: levels must be >= 1");
    if (plane.empty()) throw Error("atrous: empty plane");
    const std::size_t extent = std::min(plane.width, plane.height);
    const std::size_t top_step = std::size_t{1} << (levels - 1);
    if (levels > 30 || top_step > extent)
        throw Error("atrous: level " + std::to_string(levels) + " hole size " + std::to_string(top_step) +
                    " exceeds image extent " + std::to_string(extent));

    RealPlane current(plane.width, plane.height);
    std::transform(plane.data.begin(), plane.data.end(), current.data.begin(),
                   [](std::uint16_t v) { return static_cast<double>(v); });
    AtrousDecomposition out;
    for (int level = 1; level <= levels; ++level) {
        RealPlane next = detail::b3_smooth(current, std::size_t{1} << (level - 1));
        RealPlane detail(plane.width, plane.height);
        for (std::size_t i = 0; i < detail.size(); ++i) detail.data[i] = current.data[i] - next.data[i];
        out.details.push_back(std::move(detail));
        current = std::move(next);
    }
    out.residual = std::move(current);
    return out;
}

/// Detail planes W1..W_levels.
inline std::vector<RealPlane> atrous_planes(const IntensityPlane& plane, int levels) {
    return atrous_decompose(plane, levels).details;
}

// ---------------------------------------------------------------------------
// Blob detection
// ---------------------------------------------------------------------------

/// 1.4826 * median absolute deviation; 0 for an empty sample.
inline double scaled_mad(std::vector<double> values) {
    if (values.empty()) return 0.0;
    auto median_of = [](std::vector<double>& v) {
        const std::size_t n = v.size();
        std::nth_element(v.begin(), v.begin() + n / 2, v.end());
        double hi = v[n / 2];
        if (n % 2 == 1) return hi;
        const double lo = *std::max_element(v.begin(), v.begin() + n / 2);
        return 0.5 * (lo + hi);
    };
    const double med = median_of(values);
    for (auto& v : values) v = std::abs(v - med);
    return 1.4826 * median_of(values);
}

/// Standard deviation of W_level for unit white Gaussian noise, from the
/// separable B3 kernels: W_l = (a_{l-1} x a_{l-1}) - (a_l x a_l).
inline double atrous_noise_gain(int level) {
    if (level < 1) throw Error("atrous_noise_gain: level must be >= 1");
    static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    std::vector<double> prev{1.0}, cur;
    for (int l = 1; l <= level; ++l) {
        const std::size_t step = std::size_t{1} << (l - 1);
        cur.assign(prev.size() + 4 * step, 0.0);
        for (std::size_t i = 0; i < prev.size(); ++i)
            for (std::size_t t = 0; t < 5; ++t) cur[i + t * step] += k[t] * prev[i];
        if (l < level) prev.swap(cur);
    }
    // Center prev inside cur's support before taking inner products.
    const std::size_t offset = (cur.size() - prev.size()) / 2;
    double pp = 0.0, cc = 0.0, pc = 0.0;
    for (double v : prev) pp += v * v;
    for (double v : cur) cc += v * v;
    for (std::size_t i = 0; i < prev.size(); ++i) pc += prev[i] * cur[i + offset];
    return std::sqrt(pp * pp - 2.0 * pc * pc + cc * cc);
}

/// Image noise sigma estimated from the finest detail plane.
inline double atrous_noise_sigma(const RealPlane& w1) { return scaled_mad(w1.data) / atrous_noise_gain(1); }

/// Binary support of the multiscale product of thresholded detail
/// coefficients: a pixel is on when W_l > k * sigma_l at every selected scale,
/// where sigma_l = sigma * gain_l propagates the W1 noise estimate to level l.
inline BinaryMask blob_support(const IntensityPlane& plane, const BlobParams& params) {
    params.validate();
    const auto details = atrous_planes(plane, params.scales.back());
    const double sigma = atrous_noise_sigma(details.front());
    RealPlane product(plane.width, plane.height, 1.0);
    for (int s : params.scales) {
        const auto& w = details[static_cast<std::size_t>(s - 1)];
        const double threshold = params.detection_k * sigma * atrous_noise_gain(s);
        for (std::size_t i = 0; i < product.size(); ++i) product.data[i] *= w.data[i] > threshold ? w.data[i] : 0.0;
    }
    BinaryMask support(plane.width, plane.height, 0);
    for (std::size_t i = 0; i < product.size(); ++i) support.data[i] = product.data[i] > 0.0 ? 1 : 0;
    return support;
}

inline LabelMask detect_nuclei(const IntensityPlane& plane, const BlobParams& params) {
    const auto labels = connected_components(blob_support(plane, params), params.connectivity);
    return filter_and_renumber(labels, [&](const LabelIndex& idx, std::uint32_t l) {
        const auto a = idx.area(l);
        return a >= params.min_area && a <= params.max_area;
    });
}

// ---------------------------------------------------------------------------
// Minimum-error thresholding
// ---------------------------------------------------------------------------

inline constexpr double kKittlerVarianceFloor = 1e-9;

/// Minimum-error criterion for a split with class sizes n1, n2 and integer
/// moment sums (s1 = sum of bin*count, s2 = sum of bin^2*count).
inline double kittler_criterion(std::uint64_t n1, unsigned __int128 s1_1, unsigned __int128 s2_1, std::uint64_t n2,
                                unsigned __int128 s1_2, unsigned __int128 s2_2) {
    auto variance = [](std::uint64_t n, unsigned __int128 s1, unsigned __int128 s2) {
        // (n*s2 - s1^2) / n^2, exact numerator
        const unsigned __int128 num = static_cast<unsigned __int128>(n) * s2 - s1 * s1;
        const double nd = static_cast<double>(n);
        return static_cast<double>(num) / (nd * nd);
    };
    const double total = static_cast<double>(n1) + static_cast<double>(n2);
    const double p1 = static_cast<double>(n1) / total;
    const double p2 = static_cast<double>(n2) / total;
    const double v1 = std::max(variance(n1, s1_1, s2_1), kKittlerVarianceFloor);
    const double v2 = std::max(variance(n2, s1_2, s2_2), kKittlerVarianceFloor);
    return 1.0 + (p1 * std::log(v1) + p2 * std::log(v2)) - 2.0 * (p1 * std::log(p1) + p2 * std::log(p2));
}

/// Kittler-Illingworth minimum-error threshold. Returns T such that bins < T
/// form the lower class. Ties resolve to the smallest T.
inline std::uint32_t kittler_threshold(std::span<const std::uint64_t> histogram) {
    std::size_t distinct = 0;
    for (auto c : histogram) distinct += c > 0 ? 1 : 0;
    if (distinct < 2) throw Error("degenerate histogram: mass in fewer than 2 bins");

    std::uint64_t n_tot = 0;
    unsigned __int128 s1_tot = 0, s2_tot = 0;
    for (std::size_t b = 0; b < histogram.size(); ++b) {
        n_tot += histogram[b];
        s1_tot += static_cast<unsigned __int128>(b) * histogram[b];
        s2_tot += static_cast<unsigned __int128>(b) * b * histogram[b];
    }

    std::uint64_t n1 = 0;
    unsigned __int128 s1 = 0, s2 = 0;
    double best = 0.0;
    std::uint32_t best_t = 0;
    bool found = false;
    for (std::size_t t = 1; t < histogram.size(); ++t) {
        const std::size_t b = t - 1;
        n1 += histogram[b];
        s1 += static_cast<unsigned __int128>(b) * histogram[b];
        s2 += static_cast<unsigned __int128>(b) * b * histogram[b];
        const std::uint64_t n2 = n_tot - n1;
        if (n1 == 0 || n2 == 0) continue;
        const double j = kittler_criterion(n1, s1, s2, n2, s1_tot - s1, s2_tot - s2);
        if (!found || j < best) {
            best = j;
            best_t = static_cast<std::uint32_t>(t);
            found = true;
        }
    }
    return best_t;
}

inline std::vector<std::uint64_t> intensity_histogram(const IntensityPlane& plane) {
    std::vector<std::uint64_t> hist(65536, 0);
    for (auto v : plane.data) ++hist[v];
    return hist;
}

// ---------------------------------------------------------------------------
// Membrane-like objects
// ---------------------------------------------------------------------------

/// Area over axis-aligned bounding-box area.
inline double box_solidity(const LabelIndex& index, std::uint32_t label) {
    return static_cast<double>(index.area(label)) / static_cast<double>(index.bounds(label).area());
}

inline LabelMask detect_membrane(const IntensityPlane& plane, const MembraneParams& params) {
    params.validate();
    BinaryMask support;
    if (params.threshold_mode == ThresholdMode::minimum_error) {
        const auto hist = intensity_histogram(plane);
        if (std::count_if(hist.begin(), hist.end(), [](std::uint64_t c) { return c > 0; }) < 2)
            return LabelMask(plane.width, plane.height, 0);  // featureless plane
        const auto t = kittler_threshold(hist);
        support = BinaryMask(plane.width, plane.height, 0);
        for (std::size_t i = 0; i < plane.size(); ++i) support.data[i] = plane.data[i] >= t ? 1 : 0;
    } else {
        support = blob_support(plane, params.wavelet);
    }
    const auto labels = connected_components(support, 8);
    return filter_and_renumber(labels, [&](const LabelIndex& idx, std::uint32_t l) {
        return idx.area(l) >= params.min_area && box_solidity(idx, l) <= params.max_solidity;
    });
}

}  // namespace cellcat
