#include "spheretrain/rope3d.hpp"

#include <cmath>
#include <numbers>

namespace spheretrain {

namespace {

// Plastic number rho (real root of x^3 = x + 1); 1/rho and 1/rho^2 drive the
// 2D Kronecker sequence with the best known low-discrepancy constants.
constexpr double kPlastic = 1.32471795724474602596;
constexpr double kAlpha1 = 1.0 / kPlastic;
constexpr double kAlpha2 = 1.0 / (kPlastic * kPlastic);

double frac(double x) { return x - std::floor(x); }

}  // namespace

std::vector<Axis3> sample_axes(int n, std::uint64_t seed) {
    require(n >= 1, "sample_axes: n must be >= 1");
    // Seed enters as a Cranley-Patterson rotation of the lattice, which
    // preserves its discrepancy while decorrelating layers.
    RngStream rng(seed);
    const double off_u = rng.uniform01();
    const double off_v = rng.uniform01();

    std::vector<Axis3> axes(n);
    for (int i = 0; i < n; ++i) {
        const double u = frac(off_u + kAlpha1 * static_cast<double>(i + 1));
        const double v = frac(off_v + kAlpha2 * static_cast<double>(i + 1));
        // Equal-area cylinder map: uniform (u, v) -> uniform on the sphere.
        const double z = 2.0 * u - 1.0;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = 2.0 * std::numbers::pi * v;
        axes[i] = {r * std::cos(phi), r * std::sin(phi), z};
    }
    return axes;
}

FreqBands build_freqs(int n_bands, double omega_min, double omega_max, double zero_fraction) {
    require(n_bands >= 1, "build_freqs: n_bands must be >= 1");
    require(zero_fraction >= 0.0 && zero_fraction < 1.0, "build_freqs: zero_fraction in [0,1)");
    require(omega_min > 0.0 && omega_min < omega_max, "build_freqs: need 0 < omega_min < omega_max");

    const int n_zero = static_cast<int>(std::ceil(zero_fraction * static_cast<double>(n_bands)));
    const int n_live = n_bands - n_zero;

    FreqBands out;
    out.freqs.assign(n_bands, 0.0);
    out.zero_mask.assign(n_bands, false);
    for (int i = 0; i < n_zero; ++i) out.zero_mask[i] = true;
    const double ratio = omega_max / omega_min;
    for (int j = 0; j < n_live; ++j) {
        const double frac_pos =
            n_live == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(n_live - 1);
        out.freqs[n_zero + j] = omega_min * std::pow(ratio, frac_pos);
    }
    return out;
}

double rope_angle(const Axis3& axis, double omega, const Position3& p) {
    const double nrm =
        std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    require(std::abs(nrm - 1.0) <= 1e-9, "rope_angle: axis is not unit");
    return omega * (axis[0] * p.t + axis[1] * p.h + axis[2] * p.w);
}

RopeLayerSpec build_layer_spec(int n_bands, std::uint64_t seed, double omega_min,
                               double omega_max, double zero_fraction) {
    RopeLayerSpec spec;
    spec.seed = seed;
    spec.axes = sample_axes(n_bands, seed);
    FreqBands bands = build_freqs(n_bands, omega_min, omega_max, zero_fraction);
    spec.freqs = std::move(bands.freqs);
    spec.zero_mask = std::move(bands.zero_mask);
    return spec;
}

namespace {

void rotate_pairs(double* x, int len, const RopeLayerSpec& spec, const Position3& p,
                  double sign) {
    require(len == 2 * spec.n_bands(), "apply_rope: length must be 2 * n_bands");
    for (int k = 0; k < spec.n_bands(); ++k) {
        if (spec.zero_mask[k]) continue;  // partial-RoPE band: exact identity
        const double theta = sign * spec.freqs[k] * (spec.axes[k][0] * p.t +
                                                     spec.axes[k][1] * p.h +
                                                     spec.axes[k][2] * p.w);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double a = x[2 * k];
        const double b = x[2 * k + 1];
        x[2 * k] = c * a - s * b;
        x[2 * k + 1] = s * a + c * b;
    }
}

}  // namespace

void apply_rope(double* x, int len, const RopeLayerSpec& spec, const Position3& p) {
    rotate_pairs(x, len, spec, p, 1.0);
}

DenseVector apply_rope(const DenseVector& x, const RopeLayerSpec& spec, const Position3& p) {
    DenseVector out = x;
    apply_rope(out.data(), static_cast<int>(out.size()), spec, p);
    return out;
}

void apply_rope_inverse(double* x, int len, const RopeLayerSpec& spec, const Position3& p) {
    rotate_pairs(x, len, spec, p, -1.0);
}

}  // namespace spheretrain
