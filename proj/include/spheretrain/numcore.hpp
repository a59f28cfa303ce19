#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spheretrain/errors.hpp"

namespace spheretrain {

using DenseVector = std::vector<double>;

// Row-major dense matrix of doubles. The universal numeric carrier: weight
// matrices, gradients, optimizer moments, embeddings all live here.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major, size rows*cols

    DenseMatrix() = default;
    DenseMatrix(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {
        require(r >= 0 && c >= 0, "DenseMatrix: negative dimensions");
    }

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

// Counter-based deterministic RNG: each output is a pure function of
// (seed, counter), so a stream can be split or replayed at any offset and
// parallel draws are order-independent. Identical (seed, counter) yields
// identical output on all platforms.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01();

    // Standard normal via Box-Muller (consumes two counters, no cached spare).
    double normal();

    // Uniform index in [0, n).
    std::size_t index(std::size_t n);

    // Independent child stream; deterministic in (seed, tag).
    RngStream derive(std::uint64_t tag) const;

  private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

// c = a * b with float64 accumulation. Throws ContractViolation on shape mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// c = a * b^T (a: n x k, b: m x k -> n x m). Both operands walk contiguous rows.
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);

// c = a^T * b (a: k x n, b: k x m -> n x m). The workhorse of backward passes.
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);

// sqrt(mean of squared entries). Throws ContractViolation if x is empty.
double rms(const DenseMatrix& x);

double dot(const double* a, const double* b, int n);
double dot(const DenseVector& a, const DenseVector& b);
double norm2(const DenseVector& v);
double norm2(const double* v, int n);

// Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h with
// h_i = eps * max(1, |x_i|). Throws OracleFailure on non-finite f.
DenseVector finite_diff_grad(const std::function<double(const DenseVector&)>& f,
                             const DenseVector& x, double eps = 1e-6);

// Binary matrix file: 16-byte header (magic "DMAT", version u32, rows u32,
// cols u32, little-endian) followed by rows*cols little-endian float64.
void dmat_write(const std::string& path, const DenseMatrix& m);
DenseMatrix dmat_read(const std::string& path);

// Thread budget shared by the opt-in parallel paths. Resolution order:
// explicit request > SPHERETRAIN_THREADS > hardware concurrency.
int thread_budget(int requested = 0);

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
// thread. threads <= 1 runs inline. Callers own determinism: fn must not
// depend on chunk boundaries for its results.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace spheretrain
