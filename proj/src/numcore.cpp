#include "spheretrain/numcore.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <thread>

namespace spheretrain {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer: a bijective scramble of the 64-bit input.
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
    counter_ += 1;
    return mix64(seed_ + counter_ * kGolden);
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    // u1 in (0,1] so log stays finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::index(std::size_t n) {
    require(n > 0, "RngStream::index: n must be positive");
    return static_cast<std::size_t>(next_u64() % n);
}

RngStream RngStream::derive(std::uint64_t tag) const {
    return RngStream(mix64(seed_ ^ mix64(tag + kGolden)));
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols == b.rows, "matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                  " vs " + std::to_string(b.rows) + ")");
    DenseMatrix c(a.rows, b.cols);
    // i-k-j order: innermost loop walks contiguous rows of b and c.
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols == b.cols, "matmul_nt: inner dimensions differ (" + std::to_string(a.cols) +
                                  " vs " + std::to_string(b.cols) + ")");
    DenseMatrix c(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            crow[j] = dot(arow, b.row(j), a.cols);
        }
    }
    return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.rows == b.rows, "matmul_tn: inner dimensions differ (" + std::to_string(a.rows) +
                                  " vs " + std::to_string(b.rows) + ")");
    DenseMatrix c(a.cols, b.cols);
    for (int k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* crow = c.row(i);
            for (int j = 0; j < b.cols; ++j) {
                crow[j] += aki * brow[j];
            }
        }
    }
    return c;
}

double rms(const DenseMatrix& x) {
    require(x.size() > 0, "rms: empty matrix");
    double acc = 0.0;
    for (double v : x.data) acc += v * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

double dot(const double* a, const double* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double dot(const DenseVector& a, const DenseVector& b) {
    require(a.size() == b.size(), "dot: length mismatch");
    return dot(a.data(), b.data(), static_cast<int>(a.size()));
}

double norm2(const double* v, int n) { return std::sqrt(dot(v, v, n)); }

double norm2(const DenseVector& v) { return norm2(v.data(), static_cast<int>(v.size())); }

DenseVector finite_diff_grad(const std::function<double(const DenseVector&)>& f,
                             const DenseVector& x, double eps) {
    require(eps > 0.0, "finite_diff_grad: eps must be positive");
    DenseVector grad(x.size());
    DenseVector probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = eps * std::max(1.0, std::abs(x[i]));
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw OracleFailure("finite_diff_grad: non-finite f at coordinate " +
                                std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

namespace {

void put_u32_le(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void dmat_write(const std::string& path, const DenseMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("dmat_write: cannot open " + path);
    out.write("DMAT", 4);
    put_u32_le(out, 1u);
    put_u32_le(out, static_cast<std::uint32_t>(m.rows));
    put_u32_le(out, static_cast<std::uint32_t>(m.cols));
    static_assert(std::endian::native == std::endian::little,
                  "big-endian hosts need byte swaps in dmat io");
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!out) throw IoError("dmat_write: short write to " + path);
}

DenseMatrix dmat_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("dmat_read: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DMAT", 4) != 0) {
        throw IoError("dmat_read: bad magic in " + path);
    }
    const std::uint32_t version = get_u32_le(in);
    if (version != 1u) throw IoError("dmat_read: unsupported version in " + path);
    const std::uint32_t rows = get_u32_le(in);
    const std::uint32_t cols = get_u32_le(in);
    DenseMatrix m(static_cast<int>(rows), static_cast<int>(cols));
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw IoError("dmat_read: truncated payload in " + path);
    return m;
}

int thread_budget(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SPHERETRAIN_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t t = std::min<std::size_t>(std::max(threads, 1), n);
    if (t <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t);
    const std::size_t chunk = (n + t - 1) / t;
    for (std::size_t c = 0; c < t; ++c) {
        const std::size_t begin = c * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace spheretrain
