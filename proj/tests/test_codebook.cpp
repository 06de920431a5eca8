#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "udpnet/codebook.hpp"
#include "udpnet/rng.hpp"

using namespace udpnet;

namespace {

std::vector<double> blob_rows(int n, int dim, uint64_t seed) {
    RngStream s(seed, "blobs");
    std::vector<double> rows(static_cast<size_t>(n) * dim);
    for (int i = 0; i < n; ++i) {
        const double center = static_cast<double>(i % 4) * 3.0;
        for (int d = 0; d < dim; ++d)
            rows[static_cast<size_t>(i) * dim + d] = center + 0.1 * s.gaussian();
    }
    return rows;
}

// Phi(x) - Phi(-x) = erf(x / sqrt(2)), via the Maclaurin series of erf.
double central_mass(double x) {
    const double y = x / std::sqrt(2.0);
    double term = y, sum = y;
    for (int k = 1; k < 40; ++k) {
        term *= -y * y / k;
        sum += term / (2 * k + 1);
    }
    return 2.0 / std::sqrt(3.14159265358979323846) * sum;
}

} // namespace

TEST_CASE("quantize matches brute-force nearest neighbour") {
    RngStream s(7, "q");
    Codebook cb;
    cb.K = 9;
    cb.dim = 4;
    cb.entries.resize(36);
    for (double& v : cb.entries) v = s.uniform(-1, 1);
    std::vector<double> rows(5 * 4);
    for (double& v : rows) v = s.uniform(-1, 1);

    const auto q = quantize(cb, rows, 5);
    REQUIRE(q.indices.size() == 5);
    for (int i = 0; i < 5; ++i) {
        int best = 0;
        double best_d = 1e300;
        for (int k = 0; k < cb.K; ++k) {
            double d = 0.0;
            for (int c = 0; c < 4; ++c) {
                const double diff = rows[i * 4 + c] - cb.entries[k * 4 + c];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        REQUIRE(q.indices[i] == best);
    }
}

TEST_CASE("quantize breaks ties toward the lowest index") {
    Codebook cb;
    cb.K = 3;
    cb.dim = 1;
    cb.entries = {2.0, 0.0, 2.0}; // entries 0 and 2 identical
    const auto q = quantize(cb, {2.0, -1.0}, 2);
    REQUIRE(q.indices[0] == 0);
    REQUIRE(q.indices[1] == 1);
}

TEST_CASE("single-cluster fit lands on the mean") {
    const int n = 50, dim = 3;
    const auto rows = blob_rows(n, dim, 12);
    RngStream rng(1, "km");
    const Codebook cb = kmeans_fit(rows, n, dim, 1, rng);
    for (int d = 0; d < dim; ++d) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += rows[i * dim + d];
        mean /= n;
        REQUIRE(cb.entries[d] == Catch::Approx(mean).margin(1e-12));
    }
}

TEST_CASE("fitting one centroid per distinct point reaches zero distortion") {
    const int n = 6, dim = 2;
    std::vector<double> rows;
    for (int i = 0; i < n; ++i) {
        rows.push_back(static_cast<double>(i));
        rows.push_back(static_cast<double>(i * i));
    }
    RngStream rng(2, "km");
    const Codebook cb = kmeans_fit(rows, n, dim, n, rng);
    REQUIRE(kmeans_distortion(cb, rows, n) < 1e-20);
}

TEST_CASE("lloyd iterations never increase distortion") {
    const int n = 200, dim = 3;
    const auto rows = blob_rows(n, dim, 77);
    RngStream rng(3, "km");
    std::vector<double> history;
    const Codebook cb = kmeans_fit(rows, n, dim, 4, rng, 50, &history);
    REQUIRE(history.size() >= 2);
    for (size_t i = 1; i < history.size(); ++i)
        REQUIRE(history[i] <= history[i - 1] + 1e-12);
    REQUIRE(kmeans_distortion(cb, rows, n) == Catch::Approx(history.back()));
}

TEST_CASE("fit requires at least as many rows as centroids") {
    RngStream rng(4, "km");
    const std::vector<double> rows{1.0, 2.0};
    REQUIRE_THROWS_AS(kmeans_fit(rows, 2, 1, 3, rng), std::invalid_argument);
}

TEST_CASE("fitted entries quantize to their own index") {
    const int n = 120, dim = 2;
    const auto rows = blob_rows(n, dim, 21);
    RngStream rng(5, "km");
    const Codebook cb = kmeans_fit(rows, n, dim, 4, rng);
    const auto q = quantize(cb, cb.entries, cb.K);
    for (int k = 0; k < cb.K; ++k) REQUIRE(q.indices[k] == k);
}

TEST_CASE("bin likelihood at the target matches the central normal mass") {
    Codebook cb;
    cb.K = 2;
    cb.dim = 1;
    cb.entries = {0.4, -0.6};
    L0Config cfg;
    cfg.delta = 0.1;
    cfg.sigma = 1.0;
    auto x_hat = constant({1, 1}, {0.4}); // exactly on entry 0
    auto nll = l0_negative_log_likelihood(x_hat, cb, {0}, cfg);
    const double expect = -std::log(central_mass(0.05));
    REQUIRE(std::abs(nll->value() - expect) < 1e-9);
    REQUIRE(nll->value() > 0.0);
}

TEST_CASE("bin likelihood is maximized when the prediction hits the target") {
    Codebook cb;
    cb.K = 4;
    cb.dim = 3;
    RngStream s(8, "cb");
    cb.entries.resize(12);
    for (double& v : cb.entries) v = s.uniform(-1, 1);
    const std::vector<int> idx{2, 0};
    std::vector<double> target(6);
    for (int i = 0; i < 2; ++i)
        for (int d = 0; d < 3; ++d) target[i * 3 + d] = cb.entries[idx[i] * 3 + d];
    L0Config cfg;
    cfg.delta = 0.05;

    auto best = l0_negative_log_likelihood(constant({2, 3}, target), cb, idx, cfg);
    for (int rep = 0; rep < 200; ++rep) {
        auto perturbed = target;
        for (double& v : perturbed) v += 0.3 * s.gaussian();
        auto nll = l0_negative_log_likelihood(constant({2, 3}, perturbed), cb, idx, cfg);
        REQUIRE(nll->value() >= best->value());
    }
}

TEST_CASE("wider likelihood scale flattens the bin mass") {
    Codebook cb;
    cb.K = 1;
    cb.dim = 1;
    cb.entries = {0.0};
    L0Config narrow{LikelihoodKind::cdf_bins, 0.1, 1.0, 1e-12};
    L0Config wide{LikelihoodKind::cdf_bins, 0.1, 4.0, 1e-12};
    auto x = constant({1, 1}, {0.0});
    REQUIRE(l0_negative_log_likelihood(x, cb, {0}, wide)->value() >
            l0_negative_log_likelihood(x, cb, {0}, narrow)->value());
}

TEST_CASE("softmax likelihood matches a hand-computed class probability") {
    Codebook cb;
    cb.K = 2;
    cb.dim = 1;
    cb.entries = {0.0, 1.0};
    L0Config cfg;
    cfg.kind = LikelihoodKind::softmax;
    auto x = constant({1, 1}, {0.25});
    // distances: 0.0625 to entry 0, 0.5625 to entry 1
    const double l0 = -0.0625, l1 = -0.5625;
    const double p0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
    auto nll = l0_negative_log_likelihood(x, cb, {0}, cfg);
    REQUIRE(nll->value() == Catch::Approx(-std::log(p0)).epsilon(1e-12));
}

TEST_CASE("likelihood gradients pass finite differences in both modes") {
    Codebook cb;
    cb.K = 3;
    cb.dim = 2;
    RngStream s(9, "cg");
    cb.entries.resize(6);
    for (double& v : cb.entries) v = s.uniform(-1, 1);
    auto x = leaf({2, 2}, {0.2, -0.1, 0.4, 0.3});
    const std::vector<int> idx{1, 2};

    L0Config bins{LikelihoodKind::cdf_bins, 0.2, 1.0, 1e-12};
    auto r1 = grad_check([&]() { return l0_negative_log_likelihood(x, cb, idx, bins); },
                         {{"x", x}});
    REQUIRE(r1.max_rel_err < 1e-5);

    L0Config soft;
    soft.kind = LikelihoodKind::softmax;
    auto r2 = grad_check([&]() { return l0_negative_log_likelihood(x, cb, idx, soft); },
                         {{"x", x}});
    REQUIRE(r2.max_rel_err < 1e-5);
}

TEST_CASE("likelihood validates its inputs") {
    Codebook cb;
    cb.K = 2;
    cb.dim = 2;
    cb.entries = {0, 0, 1, 1};
    auto x = constant({2, 2}, {0, 0, 0, 0});
    L0Config cfg;
    cfg.delta = 0.0;
    REQUIRE_THROWS_AS(l0_negative_log_likelihood(x, cb, {0, 1}, cfg),
                      std::invalid_argument);
    cfg.delta = 0.1;
    REQUIRE_THROWS_AS(l0_negative_log_likelihood(x, cb, {0}, cfg), std::invalid_argument);
}
