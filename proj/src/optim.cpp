#include "spheretrain/optim.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace spheretrain {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ParamKind kind) {
    return kind == ParamKind::NormPreserving ? "norm_preserving" : "standard";
}

ParamKind param_kind_from_string(const std::string& s) {
    if (s == "norm_preserving") return ParamKind::NormPreserving;
    if (s == "standard") return ParamKind::Standard;
    throw IoError("unknown parameter kind: " + s);
}

ParamTensor::ParamTensor(std::string name_, DenseMatrix value_, ParamKind kind_)
    : name(std::move(name_)),
      value(std::move(value_)),
      kind(kind_),
      m(value.rows, value.cols),
      v(value.rows, value.cols) {}

ParamKind classify_param(const std::string& name, int n_dims, bool owner_is_linear) {
    require(!name.empty(), "classify_param: empty name");
    if (n_dims != 2 || !owner_is_linear) return ParamKind::Standard;
    for (const char* marker : {"final_proj", "modulation.2", "dconv.weight"}) {
        if (name.find(marker) != std::string::npos) return ParamKind::Standard;
    }
    return ParamKind::NormPreserving;
}

StepResult adam_step_raw(DenseMatrix& value, DenseMatrix& m, DenseMatrix& v, ParamKind kind,
                         const DenseMatrix& grad, double lr, AdamConfig& cfg,
                         const std::string& name) {
    require(value.same_shape(grad), "adam_step: gradient shape mismatch for " + name);
    require(m.same_shape(value) && v.same_shape(value),
            "adam_step: moment shape mismatch for " + name);
    require(lr > 0.0, "adam_step: lr must be positive");

    for (double g : grad.data) {
        if (!std::isfinite(g)) {
            return {false, "non-finite gradient in " + name};
        }
    }

    const bool constrained = kind == ParamKind::NormPreserving;
    if (constrained) {
        const double dev = max_row_norm_deviation(value);
        require(dev <= kUnitTolHardFail,
                "adam_step: row drift " + std::to_string(dev) + " beyond repair in " + name);
        if (dev > kUnitTolPre) {
            // Accumulated drift: re-retract silently before stepping.
            for (int i = 0; i < value.rows; ++i) retract(value.row(i), value.cols);
        }
    }

    const long t = cfg.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));

    const int rows = value.rows;
    const int cols = value.cols;
    std::vector<double> gtan(constrained ? cols : 0);
    for (int i = 0; i < rows; ++i) {
        double* w = value.row(i);
        double* mr = m.row(i);
        double* vr = v.row(i);
        const double* g = grad.row(i);
        if (constrained) {
            project_tangent(w, g, gtan.data(), cols);
            g = gtan.data();
        }
        for (int j = 0; j < cols; ++j) {
            mr[j] = cfg.beta1 * mr[j] + (1.0 - cfg.beta1) * g[j];
            vr[j] = cfg.beta2 * vr[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = mr[j] / bc1;
            const double vhat = vr[j] / bc2;
            // The preconditioned direction is generally not tangent; the
            // retraction below alone restores feasibility.
            w[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        if (constrained) {
            retract(w, cols);
        }
    }
    cfg.step = t;
    return {};
}

StepResult adam_step(ParamTensor& p, const DenseMatrix& grad, double lr, AdamConfig& cfg) {
    return adam_step_raw(p.value, p.m, p.v, p.kind, grad, lr, cfg, p.name);
}

double lr_at(long step, const ScheduleConfig& sched) {
    require(sched.total_steps > 0, "lr_at: total_steps must be positive");
    require(step >= 0 && step <= sched.total_steps, "lr_at: step outside schedule");
    require(sched.warmup_steps < sched.total_steps, "lr_at: warmup must end before total");
    require(sched.cooldown_start_fraction > 0.0 && sched.cooldown_start_fraction <= 1.0,
            "lr_at: cooldown_start_fraction outside (0, 1]");

    double ramp = 1.0;
    if (sched.warmup_steps > 0 && step < sched.warmup_steps) {
        ramp = static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
    }
    double decay = 1.0;
    const double cooldown_start = sched.cooldown_start_fraction * static_cast<double>(sched.total_steps);
    if (static_cast<double>(step) > cooldown_start) {
        decay = static_cast<double>(sched.total_steps - step) /
                (static_cast<double>(sched.total_steps) - cooldown_start);
    }
    return sched.base_lr * std::min(ramp, decay);
}

namespace {

std::string dmat_path(const std::string& dir, const std::string& name, const char* part) {
    return dir + "/" + name + "." + part + ".dmat";
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt, bool with_moments) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("save_checkpoint: cannot create " + dir + ": " + ec.message());

    json manifest;
    manifest["format"] = "spheretrain-checkpoint";
    manifest["version"] = 1;
    manifest["step"] = ckpt.step;
    manifest["with_moments"] = with_moments;
    json params = json::array();
    for (const ParamTensor& p : ckpt.params) {
        params.push_back({{"name", p.name},
                          {"kind", to_string(p.kind)},
                          {"rows", p.value.rows},
                          {"cols", p.value.cols},
                          {"lr_multiplier", p.lr_multiplier}});
        dmat_write(dmat_path(dir, p.name, "value"), p.value);
        if (with_moments) {
            dmat_write(dmat_path(dir, p.name, "m"), p.m);
            dmat_write(dmat_path(dir, p.name, "v"), p.v);
        }
    }
    manifest["params"] = params;

    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("save_checkpoint: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("load_checkpoint: cannot open manifest in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw IoError("load_checkpoint: bad manifest in " + dir + ": " + e.what());
    }

    Checkpoint ckpt;
    ckpt.step = manifest.at("step").get<long>();
    const bool with_moments = manifest.value("with_moments", true);
    for (const json& jp : manifest.at("params")) {
        ParamTensor p;
        p.name = jp.at("name").get<std::string>();
        p.kind = param_kind_from_string(jp.at("kind").get<std::string>());
        p.lr_multiplier = jp.value("lr_multiplier", 0.0);
        p.value = dmat_read(dmat_path(dir, p.name, "value"));
        if (p.value.rows != jp.at("rows").get<int>() || p.value.cols != jp.at("cols").get<int>()) {
            throw IoError("load_checkpoint: shape mismatch for " + p.name + " in " + dir);
        }
        if (with_moments) {
            p.m = dmat_read(dmat_path(dir, p.name, "m"));
            p.v = dmat_read(dmat_path(dir, p.name, "v"));
        } else {
            p.m = DenseMatrix(p.value.rows, p.value.cols);
            p.v = DenseMatrix(p.value.rows, p.value.cols);
        }
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

}  // namespace spheretrain
