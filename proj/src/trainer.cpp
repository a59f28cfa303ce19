#include "spheretrain/trainer.hpp"

#include <atomic>
#include <cmath>
#include <limits>

namespace spheretrain {

std::string to_string(TaskKind kind) {
    return kind == TaskKind::SyntheticDenoise ? "synthetic-denoise" : "synthetic-regression";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "synthetic-denoise") return TaskKind::SyntheticDenoise;
    if (s == "synthetic-regression") return TaskKind::SyntheticRegression;
    throw ConfigError("unknown task: " + s);
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.width < 2 || cfg.width % 2 != 0) throw ConfigError("width must be even and >= 2");
    if (cfg.depth < 1) throw ConfigError("depth must be >= 1");
    if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
    if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
    if (cfg.base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (cfg.grid_t < 1 || cfg.grid_h < 1 || cfg.grid_w < 1) {
        throw ConfigError("token grid dimensions must be >= 1");
    }
    if (cfg.record_every < 1) throw ConfigError("record_every must be >= 1");
    if (cfg.eval_items < 1) throw ConfigError("eval_items must be >= 1");
}

TaskSample SyntheticTask::sample(RngStream& rng) const {
    TaskSample s;
    DenseMatrix clean(tokens, dim);
    for (double& v : clean.data) v = rng.normal();
    s.t = kind == TaskKind::SyntheticDenoise ? rng.uniform01() : 0.0;
    s.input = clean;
    if (kind == TaskKind::SyntheticDenoise) {
        for (double& v : s.input.data) v += s.t * rng.normal();
    }
    s.target = matmul_nt(clean, target_map);
    return s;
}

SyntheticTask make_task(const ExperimentConfig& cfg, RngStream task_rng) {
    SyntheticTask task;
    task.kind = cfg.task;
    task.tokens = cfg.grid_t * cfg.grid_h * cfg.grid_w;
    task.dim = cfg.width;
    // Entries ~ N(0, 1/d) keep the target at unit scale.
    task.target_map = DenseMatrix(cfg.width, cfg.width);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.width));
    for (double& v : task.target_map.data) v = task_rng.normal() * scale;

    auto axis_pos = [](int i, int n) {
        return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    };
    task.positions.reserve(task.tokens);
    for (int t = 0; t < cfg.grid_t; ++t) {
        for (int h = 0; h < cfg.grid_h; ++h) {
            for (int w = 0; w < cfg.grid_w; ++w) {
                task.positions.push_back({axis_pos(t, cfg.grid_t), axis_pos(h, cfg.grid_h),
                                          axis_pos(w, cfg.grid_w)});
            }
        }
    }
    return task;
}

namespace {

// One optimizer-visible parameter: a name, a pointer at the live storage
// inside the stack (or local storage for the lambda scalars), and its
// optimizer state.
struct Slot {
    std::string name;
    ParamKind kind = ParamKind::Standard;
    double lr_multiplier = 0.0;
    bool zero_init = false;
    int block_index = 0;
    DenseMatrix* value = nullptr;
    DenseMatrix lambda_store;  // backing storage when the parameter is a lambda scalar
    double* lambda_target = nullptr;
    DenseMatrix m, v;
    AdamConfig adam;
    DenseMatrix grad;  // per-step accumulator
};

std::vector<Slot> build_registry(BlockStack& stack, double base_lr,
                                 const std::vector<MupRule>& rules) {
    std::vector<Slot> slots;
    for (std::size_t l = 0; l < stack.blocks.size(); ++l) {
        BlockParams& b = stack.blocks[l];
        const std::string prefix = "blocks." + std::to_string(l) + ".";
        auto add_matrix = [&](const std::string& name, DenseMatrix* mat, int n_dims) {
            Slot s;
            s.name = prefix + name;
            s.kind = classify_param(s.name, n_dims, /*owner_is_linear=*/true);
            s.block_index = static_cast<int>(l);
            s.value = mat;
            slots.push_back(std::move(s));
        };
        add_matrix("unified.weight", &b.w_unified, 2);
        add_matrix("mlp2.weight", &b.w_mlp2, 2);
        add_matrix("final_proj.weight", &b.w_proj, 2);
        add_matrix("modulation.0.weight", &b.w_mod1, 2);
        add_matrix("modulation.0.bias", &b.b_mod1, 1);
        add_matrix("modulation.2.weight", &b.w_mod2, 2);
        add_matrix("modulation.2.bias", &b.b_mod2, 1);
        auto add_lambda = [&](const std::string& name, double* target) {
            Slot s;
            s.name = prefix + name;
            s.kind = classify_param(s.name, 0, /*owner_is_linear=*/false);
            s.block_index = static_cast<int>(l);
            s.lambda_store = DenseMatrix(1, 1, *target);
            s.lambda_target = target;
            slots.push_back(std::move(s));
        };
        add_lambda("lambda1", &b.lambda1);
        add_lambda("lambda2", &b.lambda2);
    }
    for (Slot& s : slots) {
        if (s.value == nullptr) s.value = &s.lambda_store;
        const RuleDecision d = decide_rule(s.name, s.value->cols, base_lr, rules);
        s.lr_multiplier = d.lr_multiplier;
        s.zero_init = d.zero_init;
        s.m = DenseMatrix(s.value->rows, s.value->cols);
        s.v = DenseMatrix(s.value->rows, s.value->cols);
        s.grad = DenseMatrix(s.value->rows, s.value->cols);
    }
    return slots;
}

void accumulate_block_grads(std::vector<Slot>& slots, const StackGrads& grads) {
    auto add = [](DenseMatrix& acc, const DenseMatrix& g) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
    };
    std::size_t s = 0;
    for (std::size_t l = 0; l < grads.blocks.size(); ++l) {
        const BlockGrads& bg = grads.blocks[l];
        add(slots[s++].grad, bg.w_unified);
        add(slots[s++].grad, bg.w_mlp2);
        add(slots[s++].grad, bg.w_proj);
        add(slots[s++].grad, bg.w_mod1);
        add(slots[s++].grad, bg.b_mod1);
        add(slots[s++].grad, bg.w_mod2);
        add(slots[s++].grad, bg.b_mod2);
        slots[s++].grad.data[0] += bg.lambda1;
        slots[s++].grad.data[0] += bg.lambda2;
    }
}

double frobenius(const DenseMatrix& m) {
    double acc = 0.0;
    for (double v : m.data) acc += v * v;
    return std::sqrt(acc);
}

struct EvalSet {
    std::vector<TaskSample> items;
};

double eval_loss(const BlockStack& stack, const SyntheticTask& task, const EvalSet& set) {
    double total = 0.0;
    std::vector<BlockCache> caches;
    for (const TaskSample& item : set.items) {
        const DenseVector t_emb = timestep_embedding(item.t, task.dim);
        const DenseMatrix y = stack_forward(stack, item.input, t_emb, task.positions, caches);
        double loss = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double diff = y.data[i] - item.target.data[i];
            loss += diff * diff;
        }
        total += loss / static_cast<double>(y.size());
    }
    return total / static_cast<double>(set.items.size());
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg) {
    validate(cfg);

    RngStream root(cfg.seed);
    BlockStack stack = stack_init(cfg.width, cfg.depth, cfg.offset_mode, root.derive(1).seed());
    SyntheticTask task = make_task(cfg, root.derive(2));
    RngStream data_rng = root.derive(3);
    RngStream eval_rng = root.derive(4);

    std::vector<Slot> slots = build_registry(stack, cfg.base_lr, default_mup_rules());

    TrainResult res;
    res.schedule.total_steps = std::max<long>(cfg.steps, 1);
    res.schedule.warmup_steps =
        cfg.warmup_steps >= 0 ? cfg.warmup_steps : cfg.steps / 10;
    res.schedule.cooldown_start_fraction = cfg.cooldown_start_fraction;
    res.schedule.base_lr = cfg.base_lr;
    for (const Slot& s : slots) res.lr_multipliers[s.name] = s.lr_multiplier;

    EvalSet eval_set;
    for (int i = 0; i < cfg.eval_items; ++i) eval_set.items.push_back(task.sample(eval_rng));
    res.initial_loss = eval_loss(stack, task, eval_set);

    // Init-time activation statistic: mean block-output RMS on the eval set.
    {
        std::vector<BlockCache> caches;
        double acc = 0.0;
        for (const TaskSample& item : eval_set.items) {
            const DenseVector t_emb = timestep_embedding(item.t, task.dim);
            const DenseMatrix y = stack_forward(stack, item.input, t_emb, task.positions, caches);
            double per_item = 0.0;
            for (int l = 1; l < cfg.depth; ++l) per_item += rms(caches[l].x);
            per_item += rms(y);
            acc += per_item / cfg.depth;
        }
        res.activation_rms_by_step.push_back(acc / eval_set.items.size());
    }

    const double inv_entries =
        1.0 / (static_cast<double>(task.tokens) * task.dim * cfg.batch);

    std::vector<DenseMatrix> before;  // previous values, for update_rms
    std::vector<BlockCache> caches;
    for (long step = 0; step < cfg.steps; ++step) {
        for (Slot& s : slots) {
            std::fill(s.grad.data.begin(), s.grad.data.end(), 0.0);
        }

        double loss = 0.0;
        std::vector<double> act_rms(cfg.depth, 0.0);
        for (int b = 0; b < cfg.batch; ++b) {
            const TaskSample item = task.sample(data_rng);
            const DenseVector t_emb = timestep_embedding(item.t, task.dim);
            const DenseMatrix y = stack_forward(stack, item.input, t_emb, task.positions, caches);

            DenseMatrix dy(y.rows, y.cols);
            double item_loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double diff = y.data[i] - item.target.data[i];
                item_loss += diff * diff;
                dy.data[i] = 2.0 * diff * inv_entries;
            }
            loss += item_loss / (static_cast<double>(y.size()) * cfg.batch);

            for (int l = 1; l < cfg.depth; ++l) act_rms[l - 1] += rms(caches[l].x);
            act_rms[cfg.depth - 1] += rms(y);

            const StackGrads grads = stack_backward(stack, task.positions, caches, dy);
            accumulate_block_grads(slots, grads);
        }
        for (double& a : act_rms) a /= cfg.batch;

        if (!std::isfinite(loss)) {
            res.diverged = true;
            res.final_train_loss = loss;
            break;
        }

        const double sched_lr = lr_at(step, res.schedule);
        const bool record = (step % cfg.record_every) == 0 || step == cfg.steps - 1;
        if (record) {
            before.clear();
            for (const Slot& s : slots) before.push_back(*s.value);
        }

        if (sched_lr > 0.0) {
            for (Slot& s : slots) {
                const double lr = s.lr_multiplier * sched_lr / cfg.base_lr;
                const StepResult sr =
                    adam_step_raw(*s.value, s.m, s.v, s.kind, s.grad, lr, s.adam, s.name);
                if (!sr.applied) res.rejected_steps += 1;
            }
            for (Slot& s : slots) {
                if (s.lambda_target != nullptr) *s.lambda_target = (*s.value)(0, 0);
            }
        }

        if (record) {
            DynamicsRecord rec;
            rec.step = step;
            for (std::size_t i = 0; i < slots.size(); ++i) {
                const Slot& s = slots[i];
                ParamDynamics d;
                d.grad_norm = frobenius(s.grad);
                d.weight_norm = frobenius(*s.value);
                DenseMatrix delta = *s.value;
                for (std::size_t j = 0; j < delta.size(); ++j) {
                    delta.data[j] -= before[i].data[j];
                }
                d.update_rms = rms(delta);
                d.activation_rms = act_rms[s.block_index];
                rec.per_param[s.name] = d;
            }
            res.trace.push_back(std::move(rec));
        }

        double mean_act = 0.0;
        for (double a : act_rms) mean_act += a;
        res.activation_rms_by_step.push_back(mean_act / cfg.depth);

        res.final_train_loss = loss;
        res.steps_run = step + 1;
    }

    res.val_loss = res.diverged ? std::numeric_limits<double>::infinity()
                                : eval_loss(stack, task, eval_set);
    if (cfg.steps == 0) res.final_train_loss = res.initial_loss;

    res.final_checkpoint.step = res.steps_run;
    for (const Slot& s : slots) {
        ParamTensor p(s.name, *s.value, s.kind);
        p.lr_multiplier = s.lr_multiplier;
        p.zero_init = s.zero_init;
        p.m = s.m;
        p.v = s.v;
        res.final_checkpoint.params.push_back(std::move(p));
    }
    return res;
}

CoordCheckResult coordinate_check(const std::vector<int>& widths, long steps,
                                  const ExperimentConfig& proto, std::uint64_t seed) {
    require(!widths.empty(), "coordinate_check: need at least one width");
    require(steps >= 0, "coordinate_check: steps must be >= 0");

    CoordCheckResult out;
    for (int width : widths) {
        ExperimentConfig cfg = proto;
        cfg.width = width;
        cfg.steps = steps;
        cfg.seed = seed;
        cfg.output_dir.clear();
        const TrainResult res = train(cfg);
        out.diverged[width] = res.diverged;
        for (std::size_t s = 0; s < res.activation_rms_by_step.size(); ++s) {
            out.rows.push_back({width, static_cast<long>(s), res.activation_rms_by_step[s]});
        }
    }
    return out;
}

SweepResult run_sweep(const ExperimentConfig& proto, const std::vector<double>& lr_grid,
                      const std::vector<int>& widths, int repeats, int threads) {
    require(!lr_grid.empty() && !widths.empty(), "run_sweep: empty grid");
    require(repeats >= 1, "run_sweep: repeats must be >= 1");

    struct Job {
        int width;
        std::size_t lr_index;
        int repeat;
    };
    std::vector<Job> jobs;
    for (int w : widths) {
        for (std::size_t li = 0; li < lr_grid.size(); ++li) {
            for (int r = 0; r < repeats; ++r) jobs.push_back({w, li, r});
        }
    }

    std::vector<double> losses(jobs.size());
    std::vector<char> failed(jobs.size(), 0);
    std::atomic<std::size_t> next{0};
    const std::size_t lanes =
        std::min<std::size_t>(static_cast<std::size_t>(thread_budget(threads)), jobs.size());
    // Work-stealing lanes over the job list; each job is internally
    // single-threaded and seed-deterministic, so results do not depend on
    // which lane ran them.
    parallel_for(lanes, static_cast<int>(lanes), [&](std::size_t, std::size_t) {
        for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
            ExperimentConfig cfg = proto;
            cfg.width = jobs[j].width;
            cfg.base_lr = lr_grid[jobs[j].lr_index];
            cfg.seed = RngStream(proto.seed)
                           .derive(0xBEEF + static_cast<std::uint64_t>(jobs[j].repeat))
                           .seed();
            cfg.output_dir.clear();
            cfg.record_every =
                static_cast<int>(std::max<long>(1, cfg.steps));  // trace not needed
            try {
                const TrainResult res = train(cfg);
                losses[j] = res.val_loss;
                failed[j] = res.diverged ? 1 : 0;
            } catch (const std::exception&) {
                losses[j] = std::numeric_limits<double>::infinity();
                failed[j] = 1;
            }
        }
    });

    SweepResult out;
    for (int w : widths) {
        std::size_t best_index = 0;
        double best_loss = std::numeric_limits<double>::infinity();
        for (std::size_t li = 0; li < lr_grid.size(); ++li) {
            SweepRow row;
            row.width = w;
            row.base_lr = lr_grid[li];
            row.batch = proto.batch;
            row.steps = proto.steps;
            row.repeats = repeats;
            double sum = 0.0;
            for (std::size_t j = 0; j < jobs.size(); ++j) {
                if (jobs[j].width != w || jobs[j].lr_index != li) continue;
                sum += losses[j];
                row.failures += failed[j];
            }
            row.mean_val_loss = sum / repeats;
            if (row.failures > 0) row.mean_val_loss = std::numeric_limits<double>::infinity();
            if (row.mean_val_loss < best_loss) {
                best_loss = row.mean_val_loss;
                best_index = li;
            }
            out.rows.push_back(row);
        }
        out.argmin_index_by_width[w] = best_index;
        out.argmin_lr_by_width[w] = lr_grid[best_index];
    }
    return out;
}

}  // namespace spheretrain
