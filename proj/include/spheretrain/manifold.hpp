#pragma once

#include "spheretrain/numcore.hpp"

namespace spheretrain {

// Sphere-manifold geometry for unit-norm weight rows. Everything here is
// row-local: a matrix constraint is just the per-row constraint applied
// independently, so all operations work on raw row pointers.

// Accumulated drift up to this much is tolerated by preconditions and
// silently re-retracted by the optimizer at step start.
constexpr double kUnitTolPre = 1e-9;
// Postcondition tolerance: freshly retracted rows must be at least this close.
constexpr double kUnitTolPost = 1e-12;
// Drift beyond this is treated as a bug, not round-off.
constexpr double kUnitTolHardFail = 1e-6;

// g - (g.w) w, the tangent-space component of g at unit vector w.
// Requires |norm(w) - 1| <= 1e-9.
void project_tangent(const double* w, const double* g, double* out, int n);
DenseVector project_tangent(const DenseVector& w, const DenseVector& g);

// Normalize w_tilde back onto the sphere. Throws RetractionFailure on zero
// or non-finite norm (a numerically destroyed row; recovery policy is the
// caller's call).
void retract(double* w_tilde, int n);
DenseVector retract(const DenseVector& w_tilde);

// Rows i.i.d. Gaussian then retracted: uniform on the sphere, per-entry
// std ~ 1/sqrt(cols), which is exactly the muP init scale for matrices.
DenseMatrix sphere_init(int rows, int cols, RngStream& rng);

// Largest |norm(row) - 1| over all rows.
double max_row_norm_deviation(const DenseMatrix& w);

// True iff every row is unit within tol.
bool rows_unit_within(const DenseMatrix& w, double tol);

}  // namespace spheretrain
