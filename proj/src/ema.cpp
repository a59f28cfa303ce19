#include "spheretrain/ema.hpp"

#include <cmath>

namespace spheretrain {

double ema_beta(long t, double alpha) {
    require(t >= 0, "ema_beta: t must be >= 0");
    require(alpha >= 0.0, "ema_beta: alpha must be >= 0");
    const double base = 1.0 - 1.0 / (static_cast<double>(t) + 1.0);
    return std::pow(base, 1.0 + alpha);
}

EmaResult ema_combine(const std::vector<Checkpoint>& checkpoints, double alpha) {
    require(!checkpoints.empty(), "ema_combine: empty checkpoint list");

    const Checkpoint& first = checkpoints.front();
    for (const Checkpoint& c : checkpoints) {
        require(c.params.size() == first.params.size(),
                "ema_combine: checkpoints disagree on parameter count");
        for (std::size_t i = 0; i < c.params.size(); ++i) {
            const ParamTensor& a = first.params[i];
            const ParamTensor& b = c.params[i];
            require(a.name == b.name, "ema_combine: parameter order mismatch at " + b.name);
            require(a.value.same_shape(b.value), "ema_combine: shape mismatch for " + b.name);
        }
    }

    EmaResult res;
    double beta_sum = 0.0;
    for (const Checkpoint& c : checkpoints) {
        const double b = ema_beta(c.step, alpha);
        res.weights.push_back({c.step, b, 0.0});
        beta_sum += b;
    }
    // All-zero betas only happen when every checkpoint sits at step 0;
    // fall back to a uniform average.
    for (EmaWeight& w : res.weights) {
        w.weight = beta_sum > 0.0 ? w.beta / beta_sum
                                  : 1.0 / static_cast<double>(checkpoints.size());
    }

    res.combined.step = checkpoints.back().step;
    for (std::size_t pi = 0; pi < first.params.size(); ++pi) {
        ParamTensor out(first.params[pi].name,
                        DenseMatrix(first.params[pi].value.rows, first.params[pi].value.cols),
                        first.params[pi].kind);
        out.lr_multiplier = first.params[pi].lr_multiplier;
        for (std::size_t ci = 0; ci < checkpoints.size(); ++ci) {
            const double w = res.weights[ci].weight;
            const DenseMatrix& src = checkpoints[ci].params[pi].value;
            for (std::size_t k = 0; k < src.size(); ++k) {
                out.value.data[k] += w * src.data[k];
            }
        }
        if (out.kind == ParamKind::NormPreserving) {
            for (int r = 0; r < out.value.rows; ++r) {
                retract(out.value.row(r), out.value.cols);
            }
        }
        res.combined.params.push_back(std::move(out));
    }
    return res;
}

AlphaSweepResult sweep_alpha(const std::vector<Checkpoint>& checkpoints,
                             const std::vector<double>& alphas,
                             const std::function<double(const Checkpoint&)>& eval) {
    require(!alphas.empty(), "sweep_alpha: empty alpha grid");

    AlphaSweepResult res;
    bool have_best = false;
    double best_loss = 0.0;
    for (double alpha : alphas) {
        AlphaSweepEntry entry;
        entry.alpha = alpha;
        try {
            const EmaResult combined = ema_combine(checkpoints, alpha);
            entry.loss = eval(combined.combined);
            if (!std::isfinite(entry.loss)) {
                throw OracleFailure("non-finite validation loss");
            }
        } catch (const std::exception& e) {
            entry.failed = true;
            entry.error = e.what();
        }
        if (!entry.failed && (!have_best || entry.loss < best_loss)) {
            have_best = true;
            best_loss = entry.loss;
            res.best_alpha = alpha;
        }
        res.table.push_back(std::move(entry));
    }
    if (!have_best) throw ConfigError("sweep_alpha: every alpha failed evaluation");
    return res;
}

}  // namespace spheretrain
