#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "spheretrain/numcore.hpp"

using namespace spheretrain;

namespace {

DenseMatrix random_matrix(int rows, int cols, RngStream& rng) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// Independent oracle: textbook triple loop in (i, j, k) order.
DenseMatrix matmul_triple_loop(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    }
    return c;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("matmul identity") {
    DenseMatrix eye(2, 2);
    eye(0, 0) = 1.0;
    eye(1, 1) = 1.0;
    DenseMatrix a(2, 2);
    a(0, 0) = 1.0;
    a(0, 1) = 2.0;
    a(1, 0) = 3.0;
    a(1, 1) = 4.0;
    CHECK(max_abs_diff(matmul(eye, a), a) == 0.0);
}

TEST_CASE("matmul hand arithmetic") {
    DenseMatrix a(2, 2);
    a(0, 0) = 1.0;
    a(0, 1) = 2.0;
    a(1, 0) = 3.0;
    a(1, 1) = 4.0;
    DenseMatrix b(2, 1);
    b(0, 0) = 0.0;
    b(1, 0) = 1.0;
    DenseMatrix c = matmul(a, b);
    CHECK(c(0, 0) == 2.0);
    CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    RngStream rng(41);
    DenseMatrix a = random_matrix(5, 7, rng);
    DenseMatrix b = random_matrix(7, 3, rng);
    CHECK(max_abs_diff(matmul(a, b), matmul_triple_loop(a, b)) < 1e-12);
}

TEST_CASE("matmul rejects dimension mismatch") {
    DenseMatrix a(2, 3);
    DenseMatrix b(4, 2);
    CHECK_THROWS_AS(matmul(a, b), ContractViolation);
}

TEST_CASE("matmul associativity on random triples") {
    RngStream rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        DenseMatrix a = random_matrix(4, 6, rng);
        DenseMatrix b = random_matrix(6, 5, rng);
        DenseMatrix c = random_matrix(5, 3, rng);
        DenseMatrix left = matmul(matmul(a, b), c);
        DenseMatrix right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(left.data[i] ==
                  doctest::Approx(right.data[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
    RngStream rng(11);
    DenseMatrix a = random_matrix(4, 6, rng);
    DenseMatrix b = random_matrix(5, 6, rng);
    DenseMatrix bt(6, 5);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 6; ++j) bt(j, i) = b(i, j);
    }
    CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, bt)) < 1e-13);

    DenseMatrix c = random_matrix(6, 4, rng);
    DenseMatrix d = random_matrix(6, 3, rng);
    DenseMatrix ct(4, 6);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 4; ++j) ct(j, i) = c(i, j);
    }
    CHECK(max_abs_diff(matmul_tn(c, d), matmul(ct, d)) < 1e-13);
}

TEST_CASE("rms basics") {
    DenseMatrix zeros(3, 4);
    CHECK(rms(zeros) == 0.0);

    DenseMatrix m(1, 2);
    m(0, 0) = 3.0;
    m(0, 1) = 4.0;
    CHECK(rms(m) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));

    DenseMatrix empty;
    CHECK_THROWS_AS(rms(empty), ContractViolation);
}

TEST_CASE("rms matches two-pass oracle") {
    RngStream rng(3);
    DenseMatrix m = random_matrix(17, 23, rng);
    double acc = 0.0;
    for (double v : m.data) acc += v * v;
    const double oracle = std::sqrt(acc / static_cast<double>(m.size()));
    CHECK(rms(m) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("rng reproducibility and counter semantics") {
    RngStream a(123);
    RngStream b(123);
    for (int i = 0; i < 10000; ++i) {
        REQUIRE(a.next_u64() == b.next_u64());
    }

    // Draws are pure functions of (seed, counter): jumping ahead replays.
    RngStream c(9);
    for (int i = 0; i < 5; ++i) c.next_u64();
    const std::uint64_t sixth = c.next_u64();
    RngStream d(9, 5);
    CHECK(d.next_u64() == sixth);

    RngStream e(1);
    RngStream f(2);
    CHECK(e.next_u64() != f.next_u64());
}

TEST_CASE("rng uniform and normal are sane") {
    RngStream rng(100);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / 10000.0 == doctest::Approx(0.5).epsilon(0.02));

    double acc = 0.0, acc2 = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double z = rng.normal();
        acc += z;
        acc2 += z * z;
    }
    CHECK(acc / 10000.0 == doctest::Approx(0.0).epsilon(0.05));
    CHECK(acc2 / 10000.0 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("finite_diff_grad constant function") {
    auto f = [](const DenseVector&) { return 42.0; };
    const DenseVector g = finite_diff_grad(f, {1.0, -2.0, 3.0}, 1e-6);
    for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("finite_diff_grad of half squared norm") {
    auto f = [](const DenseVector& x) {
        double acc = 0.0;
        for (double v : x) acc += v * v;
        return 0.5 * acc;
    };
    const DenseVector g = finite_diff_grad(f, {1.0, 2.0}, 1e-6);
    CHECK(g[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("finite_diff_grad of quadratic form matches (A + A^t) x / 2") {
    RngStream rng(17);
    const int n = 6;
    DenseMatrix a = random_matrix(n, n, rng);
    DenseVector x(n);
    for (double& v : x) v = rng.normal();

    auto f = [&](const DenseVector& y) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) acc += y[i] * a(i, j) * y[j];
        }
        return 0.5 * acc;
    };
    const DenseVector g = finite_diff_grad(f, x, 1e-6);
    for (int i = 0; i < n; ++i) {
        double expect = 0.0;
        for (int j = 0; j < n; ++j) expect += 0.5 * (a(i, j) + a(j, i)) * x[j];
        CHECK(g[i] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("finite_diff_grad flags non-finite evaluations") {
    auto f = [](const DenseVector& x) { return std::log(x[0]); };
    CHECK_THROWS_AS(finite_diff_grad(f, {-1.0}, 1e-6), OracleFailure);
}

TEST_CASE("dmat round trip and header layout") {
    RngStream rng(5);
    DenseMatrix m = random_matrix(3, 4, rng);
    const std::string path =
        (std::filesystem::temp_directory_path() / "spheretrain_dmat_test.dmat").string();
    dmat_write(path, m);

    // Header: magic, version 1, rows, cols, all little-endian.
    FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f != nullptr);
    unsigned char header[16];
    REQUIRE(std::fread(header, 1, 16, f) == 16);
    std::fclose(f);
    CHECK(header[0] == 'D');
    CHECK(header[1] == 'M');
    CHECK(header[2] == 'A');
    CHECK(header[3] == 'T');
    CHECK(header[4] == 1);
    CHECK(header[8] == 3);
    CHECK(header[12] == 4);

    const DenseMatrix back = dmat_read(path);
    CHECK(back.rows == 3);
    CHECK(back.cols == 4);
    CHECK(max_abs_diff(m, back) == 0.0);
    std::filesystem::remove(path);
}

TEST_CASE("dmat_read rejects garbage") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "spheretrain_dmat_bad.dmat").string();
    {
        FILE* f = std::fopen(path.c_str(), "wb");
        REQUIRE(f != nullptr);
        std::fputs("not a dmat file", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(dmat_read(path), IoError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(dmat_read(path), IoError);  // missing file
}
