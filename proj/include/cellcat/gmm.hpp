#pragma once
// Two-component 1-D Gaussian mixture fitted by EM: a dim background and a
// bright foreground component per image and marker.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "core.hpp"

namespace cellcat {

struct GmmParams {
    double a = 0.5;  // foreground weight
    double b = 0.5;  // background weight
    double mu_f = 0.0, sigma_f = 1.0;
    double mu_b = 0.0, sigma_b = 1.0;

    /// Ashman's D between the two components.
    double separation() const {
        return std::sqrt(2.0) * std::abs(mu_f - mu_b) / std::sqrt(sigma_f * sigma_f + sigma_b * sigma_b);
    }
};

struct EmOptions {
    int max_iter = 200;
    double tol = 1e-6;          // on the per-sample mean log-likelihood
    double sigma_floor = 0.5;   // intensity units
};

struct GmmFit {
    GmmParams params;
    int iterations = 0;
    bool converged = false;
    /// Mean log-likelihood at the initial parameters and after every iteration.
    std::vector<double> log_likelihood;
};

inline double normal_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

inline double normal_log_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

namespace detail {

struct WeightedValue {
    double value;
    double count;
};

inline double log_add(double x, double y) {
    if (x == -std::numeric_limits<double>::infinity()) return y;
    if (y == -std::numeric_limits<double>::infinity()) return x;
    const double m = std::max(x, y);
    return m + std::log1p(std::exp(-std::abs(x - y)));
}

inline double safe_log(double w) { return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity(); }

}  // namespace detail

/// EM on a two-component mixture. Initialized by a median split of the
/// sorted samples; stops when the mean log-likelihood improves by less than
/// `tol` or after `max_iter` iterations.
inline GmmFit fit_gmm2(std::span<const double> samples, const EmOptions& opt = {}) {
    if (opt.max_iter < 1) throw Error("fit_gmm2: max_iter must be >= 1");
    if (samples.size() < 2) throw Error("degenerate intensity distribution: fewer than 2 samples");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) throw Error("degenerate intensity distribution: all values identical");

    // Identical values share one weighted entry; EM updates are unchanged.
    std::vector<detail::WeightedValue> data;
    for (double v : sorted) {
        if (!data.empty() && data.back().value == v)
            data.back().count += 1.0;
        else
            data.push_back({v, 1.0});
    }
    const double n = static_cast<double>(sorted.size());

    auto moments = [&](std::size_t lo, std::size_t hi, double& mu, double& sigma) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += sorted[i];
        mu = s / static_cast<double>(hi - lo);
        double v = 0.0;
        for (std::size_t i = lo; i < hi; ++i) v += (sorted[i] - mu) * (sorted[i] - mu);
        sigma = std::max(std::sqrt(v / static_cast<double>(hi - lo)), opt.sigma_floor);
    };
    const std::size_t half = sorted.size() / 2;
    GmmParams p;
    moments(0, half, p.mu_b, p.sigma_b);
    moments(half, sorted.size(), p.mu_f, p.sigma_f);
    p.a = static_cast<double>(sorted.size() - half) / n;
    p.b = static_cast<double>(half) / n;

    std::vector<double> resp_f(data.size());
    auto e_step = [&](const GmmParams& q) {
        const double la = detail::safe_log(q.a), lb = detail::safe_log(q.b);
        double ll = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double lf = la + normal_log_pdf(data[i].value, q.mu_f, q.sigma_f);
            const double lbk = lb + normal_log_pdf(data[i].value, q.mu_b, q.sigma_b);
            const double lt = detail::log_add(lf, lbk);
            resp_f[i] = std::exp(lf - lt);
            ll += data[i].count * lt;
        }
        return ll / n;
    };

    GmmFit fit;
    double ll = e_step(p);
    fit.log_likelihood.push_back(ll);
    for (int it = 1; it <= opt.max_iter; ++it) {
        double wf = 0.0, sf = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            wf += data[i].count * resp_f[i];
            sf += data[i].count * resp_f[i] * data[i].value;
        }
        const double wb = n - wf;
        double sb = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) sb += data[i].count * (1.0 - resp_f[i]) * data[i].value;

        GmmParams q = p;
        q.a = wf / n;
        q.b = 1.0 - q.a;
        if (wf > 0.0) q.mu_f = sf / wf;
        if (wb > 0.0) q.mu_b = sb / wb;
        double vf = 0.0, vb = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double df = data[i].value - q.mu_f, db = data[i].value - q.mu_b;
            vf += data[i].count * resp_f[i] * df * df;
            vb += data[i].count * (1.0 - resp_f[i]) * db * db;
        }
        if (wf > 0.0) q.sigma_f = std::max(std::sqrt(vf / wf), opt.sigma_floor);
        if (wb > 0.0) q.sigma_b = std::max(std::sqrt(vb / wb), opt.sigma_floor);

        p = q;
        const double next = e_step(p);
        fit.log_likelihood.push_back(next);
        fit.iterations = it;
        const double gain = next - ll;
        ll = next;
        if (gain < opt.tol) {
            fit.converged = true;
            break;
        }
    }
    if (p.mu_b > p.mu_f) {
        std::swap(p.mu_b, p.mu_f);
        std::swap(p.sigma_b, p.sigma_f);
        std::swap(p.a, p.b);
    }
    fit.params = p;
    return fit;
}

/// Posterior probability that `value` was drawn from the background component.
inline double background_posterior(double value, const GmmParams& p) {
    if (p.a <= 0.0) return 1.0;
    if (p.b <= 0.0) return 0.0;
    const double fb = p.b * normal_pdf(value, p.mu_b, p.sigma_b);
    const double ff = p.a * normal_pdf(value, p.mu_f, p.sigma_f);
    const double total = fb + ff;
    if (total == 0.0) return std::abs(value - p.mu_b) <= std::abs(value - p.mu_f) ? 1.0 : 0.0;
    return fb / total;
}

}  // namespace cellcat
