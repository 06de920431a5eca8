#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "udpnet/diffusion.hpp"
#include "udpnet/rng.hpp"
#include "udpnet/util.hpp"

using namespace udpnet;

TEST_CASE("forward sampling with zero noise scales the signal") {
    const auto s = build_linear_schedule(1e-4, 5e-3, 100);
    const std::vector<double> x0{1.0, -2.0, 0.5};
    const std::vector<double> eps(3, 0.0);
    for (int t : {1, 50, 100}) {
        const auto xt = forward_sample(x0, s, t, eps);
        for (size_t i = 0; i < x0.size(); ++i)
            REQUIRE(xt[i] == Catch::Approx(s.sqrt_alpha_bar(t) * x0[i]).epsilon(1e-14));
    }
    REQUIRE_THROWS_AS(forward_sample(x0, s, 0, eps), std::invalid_argument);
    REQUIRE_THROWS_AS(forward_sample(x0, s, 101, eps), std::invalid_argument);
    REQUIRE_THROWS_AS(forward_sample(x0, s, 5, {0.0}), std::invalid_argument);
}

TEST_CASE("forward marginal moments match Monte Carlo") {
    const auto s = build_linear_schedule(1e-3, 0.02, 60);
    const std::vector<double> x0{0.8};
    RngStream rng(99, "fwd.mc");
    const int n = 20000;
    for (int t : {1, 30, 60}) {
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            std::vector<double> eps{rng.gaussian()};
            const double v = forward_sample(x0, s, t, eps)[0];
            sum += v;
            sumsq += v * v;
        }
        const double mean = sum / n;
        const double var = sumsq / n - mean * mean;
        const double expect_mean = s.sqrt_alpha_bar(t) * x0[0];
        const double expect_var = 1.0 - s.alpha_bar[t];
        const double se_mean = std::sqrt(expect_var / n);
        const double se_var = expect_var * std::sqrt(2.0 / n);
        REQUIRE(std::abs(mean - expect_mean) < 4.0 * se_mean + 1e-12);
        REQUIRE(std::abs(var - expect_var) < 4.0 * se_var + 1e-12);
    }
}

TEST_CASE("posterior mean is the coefficient combination") {
    const auto s = build_linear_schedule(0.05, 0.3, 10);
    const std::vector<double> x0{0.2, -0.7};
    const std::vector<double> xt{1.1, 0.4};
    for (int t = 1; t <= 10; ++t) {
        const auto c = posterior_coeffs(s, t);
        const auto mu = posterior_mean(s, t, xt, x0);
        for (size_t i = 0; i < mu.size(); ++i)
            REQUIRE(mu[i] == Catch::Approx(c.c_xt * xt[i] + c.c_x0 * x0[i]).margin(1e-15));
    }
    REQUIRE_THROWS_AS(posterior_mean(s, 3, xt, {0.0}), std::invalid_argument);
}

// Numerical KL between two equal-variance Gaussians via Gauss-Legendre-free
// trapezoid quadrature of p log(p/q); double-checks the closed form.
static double kl_quadrature(double mu1, double mu2, double sigma_var) {
    const double sd = std::sqrt(sigma_var);
    const double lo = mu1 - 10.0 * sd, hi = mu1 + 10.0 * sd;
    const int n = 20000;
    const double h = (hi - lo) / n;
    auto log_pdf = [&](double x, double mu) {
        return -0.5 * (x - mu) * (x - mu) / sigma_var -
               0.5 * std::log(2.0 * 3.14159265358979323846 * sigma_var);
    };
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + h * i;
        const double lp = log_pdf(x, mu1);
        const double term = std::exp(lp) * (lp - log_pdf(x, mu2));
        acc += (i == 0 || i == n) ? 0.5 * term : term;
    }
    return acc * h;
}

TEST_CASE("shared-covariance KL agrees with quadrature") {
    REQUIRE(gaussian_kl_shared_cov({0.3}, {-0.5}, 0.07) ==
            Catch::Approx(kl_quadrature(0.3, -0.5, 0.07)).epsilon(1e-6));
    // multivariate case separates into a sum of coordinates
    const std::vector<double> a{0.3, 1.0}, b{-0.5, 0.2};
    REQUIRE(gaussian_kl_shared_cov(a, b, 0.07) ==
            Catch::Approx(kl_quadrature(0.3, -0.5, 0.07) +
                          kl_quadrature(1.0, 0.2, 0.07))
                .epsilon(1e-6));
    REQUIRE(gaussian_kl_shared_cov({1.0}, {1.0}, 0.5) == 0.0);
    REQUIRE_THROWS_AS(gaussian_kl_shared_cov({1.0}, {1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("intermediate KL coefficient equals squared posterior gain over variance") {
    const auto s = build_linear_schedule(1e-4, 5e-3, 500);
    for (int t : {2, 3, 100, 499, 500}) {
        const auto c = posterior_coeffs(s, t);
        REQUIRE(lt_coeff(s, t) ==
                Catch::Approx(c.c_xt * c.c_xt / (2.0 * c.sigma_q)).epsilon(1e-13));
    }
    REQUIRE_THROWS_AS(lt_coeff(s, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(lt_coeff(s, 501), std::invalid_argument);
}

// The coefficient identity, checked end to end: evaluating the two posterior
// Gaussians (true x0 vs a model estimate substituted for x0) and taking their
// KL must reproduce coeff * ||x_pred - x_t||^2.
TEST_CASE("substituted-estimate KL reduces to the weighted squared error") {
    const auto s = build_linear_schedule(1e-4, 5e-3, 300);
    RngStream rng(4, "klid");
    for (int rep = 0; rep < 20; ++rep) {
        const int t = static_cast<int>(rng.uniform_int(2, s.T));
        std::vector<double> x0(4), xt(4), xpred(4);
        for (auto* v : {&x0, &xt, &xpred})
            for (double& x : *v) x = rng.uniform(-2.0, 2.0);
        const auto c = posterior_coeffs(s, t);
        const auto mu_q = posterior_mean(s, t, xt, x0);
        // substituting the estimate where x_t appears in the mean
        std::vector<double> mu_p(4);
        for (int i = 0; i < 4; ++i) mu_p[i] = c.c_xt * xpred[i] + c.c_x0 * x0[i];
        const double kl = gaussian_kl_shared_cov(mu_q, mu_p, c.sigma_q);
        double sq = 0.0;
        for (int i = 0; i < 4; ++i) sq += (xpred[i] - xt[i]) * (xpred[i] - xt[i]);
        REQUIRE(kl == Catch::Approx(lt_coeff(s, t) * sq).epsilon(1e-11));
    }
}

// General KL between N(mu1, v1) and N(0, 1) per coordinate:
// 0.5 * (v1 + mu1^2 - 1 - log v1).
TEST_CASE("terminal prior gap matches the general Gaussian KL formula") {
    const auto s = build_linear_schedule(1e-4, 5e-3, 1000);
    const std::vector<double> x0{0.5, -1.2, 2.0};
    const double ab = s.alpha_bar[s.T];
    double expect = 0.0;
    for (double v : x0) {
        const double mu = std::sqrt(ab) * v;
        const double var = 1.0 - ab;
        expect += 0.5 * (var + mu * mu - 1.0 - std::log(var));
    }
    REQUIRE(kl_prior(x0, s) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("terminal prior gap shrinks as the chain lengthens") {
    const std::vector<double> x0{0.5, -1.2, 2.0};
    double prev = 1e300;
    for (int T : {50, 100, 400, 1000, 4000}) {
        const auto s = build_linear_schedule(1e-4, 5e-3, T);
        const double kl = kl_prior(x0, s);
        REQUIRE(kl >= 0.0);
        REQUIRE(kl < prev);
        prev = kl;
    }
    // with 4000 steps of this schedule the endpoint is essentially pure noise
    REQUIRE(prev < 1e-3);
}

TEST_CASE("error curves accumulate terms in order") {
    const auto c = accumulate_errors({875, 750, 625}, {1.0, 0.5, 2.0});
    REQUIRE(c.terms == std::vector<double>{1.0, 0.5, 2.0});
    REQUIRE(c.cumulative == std::vector<double>{1.0, 1.5, 3.5});
    REQUIRE(c.total() == 3.5);
    REQUIRE(ErrorCurve{}.total() == 0.0);
    REQUIRE_THROWS_AS(accumulate_errors({1, 2}, {1.0}), std::invalid_argument);
}

TEST_CASE("error curves from prediction pairs square the gaps") {
    const std::vector<std::vector<double>> preds{{1.0, 2.0}, {0.0, 0.0}};
    const std::vector<std::vector<double>> targets{{2.0, 4.0}, {3.0, 4.0}};
    const auto c = accumulate_errors({10, 5}, preds, targets);
    REQUIRE(c.terms[0] == 5.0);
    REQUIRE(c.terms[1] == 25.0);
    REQUIRE(c.cumulative[1] == 30.0);
    REQUIRE_THROWS_AS(accumulate_errors({10, 5}, preds, {{1.0}, {1.0, 2.0}}),
                      std::invalid_argument);
}

TEST_CASE("error curve CSV holds one row per term") {
    const auto c = accumulate_errors({20, 10}, {0.25, 0.75});
    const auto path = std::filesystem::temp_directory_path() / "curve_test.csv";
    c.write_csv(path.string());
    const std::string text = read_file(path.string());
    REQUIRE(text == "index,timestep,term,cumulative\n0,20,0.25,0.25\n1,10,0.75,1\n");
    std::filesystem::remove(path);
}
