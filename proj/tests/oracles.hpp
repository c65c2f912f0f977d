#pragma once
// Brute-force reference implementations shared by the unit tests and the
// acceptance checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <vector>

#include <cellcat/cellcat.hpp>

namespace oracles {

using namespace cellcat;

/// Breadth-first flood fill seeded in raster order.
inline LabelMask flood_fill_oracle(const BinaryMask& b, int connectivity) {
    LabelMask out(b.width, b.height, 0);
    std::uint32_t next = 0;
    for (std::size_t y0 = 0; y0 < b.height; ++y0)
        for (std::size_t x0 = 0; x0 < b.width; ++x0) {
            if (!b(x0, y0) || out(x0, y0)) continue;
            ++next;
            std::deque<std::pair<long, long>> queue{{static_cast<long>(x0), static_cast<long>(y0)}};
            out(x0, y0) = next;
            while (!queue.empty()) {
                const auto [x, y] = queue.front();
                queue.pop_front();
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        if (std::abs(dx) + std::abs(dy) == 0) continue;
                        if (connectivity == 4 && std::abs(dx) + std::abs(dy) != 1) continue;
                        const long nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= static_cast<long>(b.width) || ny >= static_cast<long>(b.height))
                            continue;
                        if (b(nx, ny) && !out(nx, ny)) {
                            out(nx, ny) = next;
                            queue.emplace_back(nx, ny);
                        }
                    }
            }
        }
    return out;
}

struct SparseHistogram {
    std::map<std::uint32_t, std::uint64_t> bins;

    std::vector<std::uint64_t> dense() const {
        std::vector<std::uint64_t> h(65536, 0);
        for (auto [b, c] : bins) h[b] = c;
        return h;
    }
};

/// Direct evaluation of the minimum-error criterion at every T in 1..65535,
/// lower class = bins < T. Class moments are recomputed from scratch.
inline std::uint32_t kittler_oracle(const SparseHistogram& h) {
    long double best = 0;
    std::uint32_t best_t = 0;
    bool found = false;
    for (std::uint32_t t = 1; t < 65536; ++t) {
        long double n1 = 0, n2 = 0, s1 = 0, s2 = 0;
        for (auto [b, c] : h.bins) (b < t ? n1 : n2) += c, (b < t ? s1 : s2) += static_cast<long double>(b) * c;
        if (n1 == 0 || n2 == 0) continue;
        const long double m1 = s1 / n1, m2 = s2 / n2;
        long double v1 = 0, v2 = 0;
        for (auto [b, c] : h.bins) {
            if (b < t)
                v1 += c * (b - m1) * (b - m1);
            else
                v2 += c * (b - m2) * (b - m2);
        }
        v1 = std::max(v1 / n1, 1e-9L);
        v2 = std::max(v2 / n2, 1e-9L);
        const long double p1 = n1 / (n1 + n2), p2 = n2 / (n1 + n2);
        const long double j = 1 + p1 * std::log(v1) + p2 * std::log(v2) - 2 * (p1 * std::log(p1) + p2 * std::log(p2));
        if (!found || j < best) {
            best = j;
            best_t = t;
            found = true;
        }
    }
    return best_t;
}

inline double cross(const std::vector<double>& o, const std::vector<double>& a, const std::vector<double>& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

/// Point-in-hull by exhaustive triangle search (any point of a planar hull lies
/// in a triangle of input points).
inline bool in_hull(const std::vector<std::vector<double>>& pts, const std::vector<double>& p) {
    const double eps = 1e-9;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            for (std::size_t k = j + 1; k < pts.size(); ++k) {
                const double d1 = cross(pts[i], pts[j], p), d2 = cross(pts[j], pts[k], p), d3 = cross(pts[k], pts[i], p);
                const bool neg = d1 < -eps || d2 < -eps || d3 < -eps;
                const bool pos = d1 > eps || d2 > eps || d3 > eps;
                if (!(neg && pos)) return true;
            }
    return false;
}

/// Mean background posterior over the pixels labeled `label`, written out
/// from the mixture densities.
inline double background_prob_oracle(const LabelMask& mask, std::uint32_t label, const IntensityPlane& plane,
                                     const GmmParams& q) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.data[i] != label) continue;
        const double v = plane.data[i];
        const double fb = q.b * std::exp(-0.5 * std::pow((v - q.mu_b) / q.sigma_b, 2)) / q.sigma_b;
        const double ff = q.a * std::exp(-0.5 * std::pow((v - q.mu_f) / q.sigma_f, 2)) / q.sigma_f;
        sum += fb + ff > 0 ? fb / (fb + ff) : (std::abs(v - q.mu_b) <= std::abs(v - q.mu_f) ? 1.0 : 0.0);
        ++n;
    }
    return sum / static_cast<double>(n);
}

}  // namespace oracles
