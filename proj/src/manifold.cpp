#include "spheretrain/manifold.hpp"

#include <cmath>

namespace spheretrain {

void project_tangent(const double* w, const double* g, double* out, int n) {
    require(std::abs(norm2(w, n) - 1.0) <= kUnitTolPre,
            "project_tangent: w is not unit within 1e-9");
    const double radial = dot(w, g, n);
    for (int i = 0; i < n; ++i) {
        out[i] = g[i] - radial * w[i];
    }
}

DenseVector project_tangent(const DenseVector& w, const DenseVector& g) {
    require(w.size() == g.size(), "project_tangent: dimension mismatch");
    DenseVector out(g.size());
    project_tangent(w.data(), g.data(), out.data(), static_cast<int>(w.size()));
    return out;
}

void retract(double* w_tilde, int n) {
    const double nrm = norm2(w_tilde, n);
    if (nrm == 0.0 || !std::isfinite(nrm)) {
        throw RetractionFailure("retract: row norm is " + std::to_string(nrm));
    }
    const double inv = 1.0 / nrm;
    for (int i = 0; i < n; ++i) {
        w_tilde[i] *= inv;
    }
}

DenseVector retract(const DenseVector& w_tilde) {
    DenseVector out = w_tilde;
    retract(out.data(), static_cast<int>(out.size()));
    return out;
}

DenseMatrix sphere_init(int rows, int cols, RngStream& rng) {
    require(rows >= 1 && cols >= 1, "sphere_init: dimensions must be >= 1");
    DenseMatrix w(rows, cols);
    for (int i = 0; i < rows; ++i) {
        double* r = w.row(i);
        for (int j = 0; j < cols; ++j) {
            r[j] = rng.normal();
        }
        retract(r, cols);
    }
    return w;
}

double max_row_norm_deviation(const DenseMatrix& w) {
    double worst = 0.0;
    for (int i = 0; i < w.rows; ++i) {
        worst = std::max(worst, std::abs(norm2(w.row(i), w.cols) - 1.0));
    }
    return worst;
}

bool rows_unit_within(const DenseMatrix& w, double tol) {
    return max_row_norm_deviation(w) <= tol;
}

}  // namespace spheretrain
