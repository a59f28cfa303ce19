#include "doctest.h"

#include <cmath>

#include "spheretrain/manifold.hpp"

using namespace spheretrain;

namespace {

DenseVector random_unit(int n, RngStream& rng) {
    DenseVector w(n);
    for (double& v : w) v = rng.normal();
    return retract(w);
}

}  // namespace

TEST_CASE("project_tangent removes the radial component") {
    CHECK(project_tangent({1.0, 0.0}, {3.0, 4.0}) == DenseVector{0.0, 4.0});

    // Pure radial gradient projects to zero.
    RngStream rng(2);
    const DenseVector w = random_unit(16, rng);
    DenseVector g(16);
    for (int i = 0; i < 16; ++i) g[i] = 2.5 * w[i];
    for (double v : project_tangent(w, g)) {
        CHECK(std::abs(v) < 1e-14);
    }
}

TEST_CASE("project_tangent matches the dense projector oracle") {
    RngStream rng(3);
    const int n = 64;
    const DenseVector w = random_unit(n, rng);
    DenseVector g(n);
    for (double& v : g) v = rng.normal();

    const DenseVector out = project_tangent(w, g);
    CHECK(std::abs(dot(out, w)) <= 1e-12 * norm2(g));

    // (I - w w^t) g, materialized.
    for (int i = 0; i < n; ++i) {
        double expect = 0.0;
        for (int j = 0; j < n; ++j) {
            const double pij = (i == j ? 1.0 : 0.0) - w[i] * w[j];
            expect += pij * g[j];
        }
        CHECK(out[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("project_tangent rejects non-unit base point") {
    CHECK_THROWS_AS(project_tangent({2.0, 0.0}, {1.0, 1.0}), ContractViolation);
}

TEST_CASE("projection idempotence and pythagoras") {
    RngStream rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 8 + static_cast<int>(rng.index(56));
        const DenseVector w = random_unit(n, rng);
        DenseVector g(n);
        for (double& v : g) v = rng.normal();

        const DenseVector once = project_tangent(w, g);
        const DenseVector twice = project_tangent(w, once);
        for (int i = 0; i < n; ++i) {
            CHECK(std::abs(twice[i] - once[i]) <= 1e-12);
        }

        const double radial = dot(g, w);
        const double lhs = dot(g, g);
        const double rhs = dot(once, once) + radial * radial;
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("retract basics") {
    const DenseVector r = retract({3.0, 4.0});
    CHECK(r[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(r[1] == doctest::Approx(0.8).epsilon(1e-15));

    // Already-unit input is unchanged.
    const DenseVector u = retract({1.0, 0.0});
    CHECK(u[0] == 1.0);
    CHECK(u[1] == 0.0);

    // 1/sqrt(1.01) evaluated to high precision by an independent script.
    const DenseVector v = retract({1.0, -0.1});
    CHECK(v[0] == doctest::Approx(0.99503719020998914).epsilon(1e-13));
    CHECK(v[1] == doctest::Approx(-0.099503719020998914).epsilon(1e-13));
}

TEST_CASE("retract idempotence") {
    RngStream rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        DenseVector x(12);
        for (double& v : x) v = 3.0 * rng.normal();
        const DenseVector once = retract(x);
        const DenseVector twice = retract(once);
        for (int i = 0; i < 12; ++i) {
            CHECK(std::abs(twice[i] - once[i]) <= 1e-15);
        }
        CHECK(std::abs(norm2(once) - 1.0) <= 1e-12);
    }
}

TEST_CASE("retract fails on destroyed rows") {
    CHECK_THROWS_AS(retract({0.0, 0.0, 0.0}), RetractionFailure);
    CHECK_THROWS_AS(retract({std::nan(""), 1.0}), RetractionFailure);
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(retract({inf, 1.0}), RetractionFailure);
}

TEST_CASE("sphere_init basics") {
    RngStream rng(7);
    const DenseMatrix one = sphere_init(1, 1, rng);
    CHECK(std::abs(one(0, 0)) == 1.0);

    const DenseMatrix w = sphere_init(256, 512, rng);
    CHECK(max_row_norm_deviation(w) <= 1e-12);
}

TEST_CASE("sphere_init entry std matches muP scale") {
    RngStream rng(8);
    const int rows = 512, cols = 1024;
    const DenseMatrix w = sphere_init(rows, cols, rng);
    double acc = 0.0;
    for (double v : w.data) acc += v * v;
    const double std_hat = std::sqrt(acc / static_cast<double>(w.size()));
    const double target = 1.0 / std::sqrt(static_cast<double>(cols));
    CHECK(std_hat == doctest::Approx(target).epsilon(0.05));
}

TEST_CASE("sphere_init rows distribute uniformly") {
    RngStream rng(9);
    const int n = 100000, dim = 8;
    const DenseMatrix w = sphere_init(n, dim, rng);
    DenseVector mean(dim, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < dim; ++j) mean[j] += w(i, j);
    }
    for (double& v : mean) v /= n;
    CHECK(norm2(mean) < 0.02);
}
