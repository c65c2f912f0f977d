#pragma once
// Class balancing of the auto-training set: seeded negative downsampling and
// SMOTE upsampling.

#include <algorithm>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "cat.hpp"

namespace cellcat {

enum class BalanceStrategy { downsample_negatives, equalize_all };
enum class NegativeTarget { largest_positive, mean_positive };

struct BalanceParams {
    BalanceStrategy strategy = BalanceStrategy::downsample_negatives;
    NegativeTarget negative_target = NegativeTarget::largest_positive;
    std::size_t smote_k = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (smote_k < 1) throw Error("BalanceParams: smote_k must be >= 1");
    }
};

/// Keeps a seeded uniform subset of the negatives, sized to the largest (or
/// mean) positive class. Retained samples keep their original order.
inline TrainingSet downsample_negatives(const TrainingSet& set, std::uint64_t seed,
                                        NegativeTarget target = NegativeTarget::largest_positive) {
    const auto counts = set.counts();
    const std::size_t neg = set.negative_index();
    std::size_t largest = 0, total = 0, classes = 0;
    for (std::size_t c = 0; c < neg; ++c) {
        if (counts[c] == 0) continue;
        largest = std::max(largest, counts[c]);
        total += counts[c];
        ++classes;
    }
    if (classes == 0) throw Error("nothing to balance against: training set has no positive class");
    const std::size_t keep =
        target == NegativeTarget::largest_positive ? largest : (total + classes / 2) / classes;
    if (counts[neg] <= keep) return set;

    std::vector<std::size_t> neg_idx;
    for (std::size_t i = 0; i < set.samples.size(); ++i)
        if (set.samples[i].label == neg) neg_idx.push_back(i);
    std::vector<std::size_t> chosen;
    std::mt19937_64 rng(seed);
    std::sample(neg_idx.begin(), neg_idx.end(), std::back_inserter(chosen), keep, rng);

    TrainingSet out;
    out.class_names = set.class_names;
    std::size_t next = 0;
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
        if (set.samples[i].label != neg) {
            out.samples.push_back(set.samples[i]);
        } else if (next < chosen.size() && chosen[next] == i) {
            out.samples.push_back(set.samples[i]);
            ++next;
        }
    }
    return out;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return d;
}

/// `target_n - samples.size()` synthetic points, each interpolated between a
/// random sample and one of its min(k, n-1) nearest neighbors.
inline std::vector<std::vector<double>> smote_upsample(std::span<const std::vector<double>> samples,
                                                       std::size_t target_n, std::size_t k, std::uint64_t seed) {
    if (samples.empty()) throw Error("smote_upsample: empty input");
    if (k < 1) throw Error("smote_upsample: k must be >= 1");
    if (target_n < samples.size()) throw Error("smote_upsample: target below current count");
    const std::size_t n = samples.size();
    const std::size_t to_make = target_n - n;
    std::vector<std::vector<double>> out;
    out.reserve(to_make);
    if (to_make == 0) return out;
    if (n == 1) {
        out.assign(to_make, samples[0]);
        return out;
    }

    const std::size_t kk = std::min(k, n - 1);
    std::vector<std::vector<std::size_t>> neighbors(n);
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t i = 0; i < n; ++i) {
        dist.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) dist.emplace_back(squared_distance(samples[i], samples[j]), j);
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
        for (std::size_t t = 0; t < kk; ++t) neighbors[i].push_back(dist[t].second);
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_base(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_nn(0, kk - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t s = 0; s < to_make; ++s) {
        const std::size_t i = pick_base(rng);
        const std::size_t j = neighbors[i][pick_nn(rng)];
        const double u = unit(rng);
        std::vector<double> p(samples[i].size());
        for (std::size_t d = 0; d < p.size(); ++d) p[d] = samples[i][d] + u * (samples[j][d] - samples[i][d]);
        out.push_back(std::move(p));
    }
    return out;
}

inline TrainingSet equalize(const TrainingSet& set, const BalanceParams& params) {
    params.validate();
    const auto counts = set.counts();
    if (std::all_of(counts.begin(), counts.end() - 1, [](std::size_t c) { return c == 0; }))
        throw Error("nothing to balance against: training set has no positive class");
    if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2)
        throw Error("equalize: at least two classes required");
    TrainingSet out = downsample_negatives(set, params.seed, params.negative_target);
    if (params.strategy == BalanceStrategy::downsample_negatives) return out;

    const auto after = out.counts();
    const std::size_t target = *std::max_element(after.begin(), after.end());
    for (std::size_t c = 0; c < out.class_count(); ++c) {
        if (after[c] == 0 || after[c] >= target) continue;
        std::vector<std::vector<double>> members;
        for (const auto& s : out.samples)
            if (s.label == c) members.push_back(s.features);
        const auto synthetic = smote_upsample(members, target, params.smote_k, params.seed ^ c);
        for (const auto& f : synthetic) out.samples.push_back({"", 0, f, c, true});
    }
    return out;
}

}  // namespace cellcat
