#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "spheretrain/numcore.hpp"

namespace spheretrain {

// Normalized spatiotemporal position (t, h, w), each axis in [0, 1].
struct Position3 {
    double t = 0.0;
    double h = 0.0;
    double w = 0.0;
};

using Axis3 = std::array<double, 3>;

// One layer's rotary embedding: a rotation axis and frequency per 2D pair of
// the head dimension. Masked bands rotate by nothing (partial RoPE) and keep
// frequency exactly 0.
struct RopeLayerSpec {
    std::vector<Axis3> axes;
    std::vector<double> freqs;
    std::vector<bool> zero_mask;
    std::uint64_t seed = 0;

    int n_bands() const { return static_cast<int>(axes.size()); }
};

constexpr double kOmegaMin = 0.2;
constexpr double kOmegaMax = 50.0;
constexpr double kZeroFraction = 0.1;

// n unit 3-vectors from a seeded phi-sequence (plastic-number Kronecker
// lattice pushed through the equal-area cylinder map). Deterministic per
// seed; covers the sphere with lower cap discrepancy than i.i.d. sampling.
std::vector<Axis3> sample_axes(int n, std::uint64_t seed);

struct FreqBands {
    std::vector<double> freqs;
    std::vector<bool> zero_mask;
};

// ceil(zero_fraction * n) leading bands masked at frequency 0; the rest
// log-spaced over [omega_min, omega_max] inclusive of both endpoints.
FreqBands build_freqs(int n_bands, double omega_min = kOmegaMin, double omega_max = kOmegaMax,
                      double zero_fraction = kZeroFraction);

// theta = omega * <axis, p>.
double rope_angle(const Axis3& axis, double omega, const Position3& p);

// Axes + frequency bands for one layer (or one head-frequency group); use a
// distinct seed per layer so layers encode position through distinct
// geometric transformations.
RopeLayerSpec build_layer_spec(int n_bands, std::uint64_t seed, double omega_min = kOmegaMin,
                               double omega_max = kOmegaMax, double zero_fraction = kZeroFraction);

// Rotates consecutive pairs (x[2k], x[2k+1]) by their band angle at p.
// Masked bands are a bit-exact identity. len must equal 2 * n_bands.
void apply_rope(double* x, int len, const RopeLayerSpec& spec, const Position3& p);
DenseVector apply_rope(const DenseVector& x, const RopeLayerSpec& spec, const Position3& p);

// Inverse rotation (transpose); used by the analytic backward pass.
void apply_rope_inverse(double* x, int len, const RopeLayerSpec& spec, const Position3& p);

}  // namespace spheretrain
