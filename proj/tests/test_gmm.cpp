#include <gtest/gtest.h>

#include "support.hpp"

using namespace cellcat;
using testing_support::Gen;

namespace {

std::vector<double> mixture(Gen& g, std::size_t n, double a, double mu_b, double s_b, double mu_f, double s_f) {
    std::vector<double> v(n);
    for (auto& x : v) x = g.coin(a) ? g.normal(mu_f, s_f) : g.normal(mu_b, s_b);
    return v;
}

}  // namespace

TEST(FitGmm2, RecoversKnownMixture) {
    Gen g(42);
    const auto data = mixture(g, 100000, 0.3, 300, 50, 8000, 900);
    const auto fit = fit_gmm2(data);
    const auto& p = fit.params;
    EXPECT_NEAR(p.mu_b, 300, 0.02 * 300);
    EXPECT_NEAR(p.mu_f, 8000, 0.02 * 8000);
    EXPECT_NEAR(p.b, 0.7, 0.02);
    EXPECT_NEAR(p.a, 0.3, 0.02);
    EXPECT_NEAR(p.a + p.b, 1.0, 1e-9);
    EXPECT_TRUE(fit.converged);
}

TEST(FitGmm2, TwoClusterLimit) {
    std::vector<double> data(500, 0.0);
    data.insert(data.end(), 500, 1000.0);
    const auto p = fit_gmm2(data).params;
    EXPECT_NEAR(p.mu_b, 0.0, 1e-9);
    EXPECT_NEAR(p.mu_f, 1000.0, 1e-9);
    EXPECT_DOUBLE_EQ(p.sigma_b, 0.5);
    EXPECT_DOUBLE_EQ(p.sigma_f, 0.5);
    EXPECT_NEAR(p.a, 0.5, 1e-12);
}

TEST(FitGmm2, ConstantDataIsDegenerate) {
    const std::vector<double> data(100, 7.0);
    try {
        fit_gmm2(data);
        FAIL() << "expected error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate intensity distribution"), std::string::npos);
    }
    EXPECT_THROW(fit_gmm2(std::vector<double>{1.0}), Error);
    EXPECT_THROW(fit_gmm2(std::vector<double>{1.0, 2.0}, EmOptions{0, 1e-6, 0.5}), Error);
}

TEST(FitGmm2, LogLikelihoodNonDecreasingAndParamsValid) {
    Gen g(77);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = static_cast<std::size_t>(g.integer(20, 3000));
        auto data = mixture(g, n, g.uniform(0.05, 0.95), g.uniform(0, 2000), g.uniform(1, 300), g.uniform(1000, 40000),
                            g.uniform(1, 3000));
        if (trial % 4 == 0)
            for (auto& x : data) x = std::round(std::clamp(x, 0.0, 65535.0));  // quantized, clamped
        const EmOptions opt{g.integer(1, 300), 1e-9, 0.5};
        const auto fit = fit_gmm2(data, opt);
        for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
            EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-9) << "trial " << trial << " iter " << i;
        const auto& p = fit.params;
        EXPECT_NEAR(p.a + p.b, 1.0, 1e-9);
        EXPECT_GE(p.a, 0.0);
        EXPECT_GE(p.b, 0.0);
        EXPECT_GE(p.sigma_f, opt.sigma_floor);
        EXPECT_GE(p.sigma_b, opt.sigma_floor);
        EXPECT_LE(p.mu_b, p.mu_f);
        EXPECT_LE(fit.iterations, opt.max_iter);
    }
}

TEST(BackgroundPosterior, Examples) {
    const GmmParams sym{0.5, 0.5, 1000, 50, 200, 50};
    EXPECT_NEAR(background_posterior(600, sym), 0.5, 1e-12);

    const GmmParams pure_bg{0.0, 1.0, 1000, 50, 200, 50};
    for (double v : {0.0, 200.0, 1000.0, 60000.0}) EXPECT_EQ(background_posterior(v, pure_bg), 1.0);

    const GmmParams far{0.5, 0.5, 200 + 10 * 50, 50, 200, 50};
    EXPECT_GE(background_posterior(200, far), 0.999);

    const GmmParams pure_fg{1.0, 0.0, 1000, 50, 200, 50};
    EXPECT_EQ(background_posterior(200, pure_fg), 0.0);
}

TEST(BackgroundPosterior, BoundedAndMonotoneBetweenMeansForEqualSigma) {
    Gen g(5);
    for (int trial = 0; trial < 200; ++trial) {
        const double s = g.uniform(1, 500);
        const GmmParams p{g.uniform(0.01, 0.99), 0, g.uniform(2000, 9000), s, g.uniform(0, 1500), s};
        GmmParams q = p;
        q.b = 1 - q.a;
        double prev = 2.0;
        for (double v = q.mu_b; v <= q.mu_f; v += (q.mu_f - q.mu_b) / 50) {
            const double pb = background_posterior(v, q);
            EXPECT_GE(pb, 0.0);
            EXPECT_LE(pb, 1.0);
            EXPECT_LE(pb, prev + 1e-12);
            prev = pb;
        }
    }
}

TEST(GmmParams, SeparationIsAshmanD) {
    const GmmParams p{0.5, 0.5, 10, 3, 2, 4};
    EXPECT_NEAR(p.separation(), std::sqrt(2.0) * 8 / 5, 1e-12);
}
