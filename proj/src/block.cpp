#include "spheretrain/block.hpp"

#include <cmath>
#include <numbers>

#include "spheretrain/manifold.hpp"

namespace spheretrain {

namespace {

constexpr double kRmsEps = 1e-6;

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
    const double sig = 1.0 / (1.0 + std::exp(-x));
    return sig * (1.0 + x * (1.0 - sig));
}

void softmax_row(double* row, int n) {
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) row[j] *= inv;
}

// out = W x + b for a (rows x cols) weight and length-cols input.
DenseVector affine(const DenseMatrix& w, const DenseVector& x, const DenseMatrix& b) {
    DenseVector out(w.rows);
    for (int i = 0; i < w.rows; ++i) {
        out[i] = dot(w.row(i), x.data(), w.cols) + b(0, i);
    }
    return out;
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

double gate_offset(int layer_count) {
    require(layer_count >= 1, "gate_offset: layer_count must be >= 1");
    return 1.0 / std::sqrt(static_cast<double>(layer_count));
}

double gate_offset_for(GateOffsetMode mode, int layer_count) {
    switch (mode) {
        case GateOffsetMode::InverseSqrtDepth: return gate_offset(layer_count);
        case GateOffsetMode::ConstantEighth: return 0.125;
        case GateOffsetMode::Disabled: return 0.0;
    }
    return 0.0;
}

BlockParams block_init(int dim, int layer_count, GateOffsetMode mode, RngStream& rng) {
    require(dim >= 2 && dim % 2 == 0, "block_init: dim must be even and >= 2");
    BlockParams p;
    p.dim = dim;
    p.layer_count = layer_count;
    p.gate_offset_value = gate_offset_for(mode, layer_count);
    p.w_unified = sphere_init(7 * dim, dim, rng);
    p.w_mlp2 = sphere_init(dim, 2 * dim, rng);
    p.w_proj = DenseMatrix(dim, 2 * dim);  // zero: block starts as an identity map
    p.w_mod1 = sphere_init(dim, dim, rng);
    p.b_mod1 = DenseMatrix(1, dim);
    p.w_mod2 = DenseMatrix(3 * dim, dim);  // zero: s_t = b_t = g_t = 0 at init
    p.b_mod2 = DenseMatrix(1, 3 * dim);
    p.lambda1 = 0.5;
    p.lambda2 = 0.5;
    return p;
}

DenseMatrix value_residual(const DenseMatrix& v_prev, const DenseMatrix& v_cur, double l1,
                           double l2) {
    require(v_prev.same_shape(v_cur), "value_residual: shape mismatch");
    DenseMatrix out(v_cur.rows, v_cur.cols);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = l1 * v_prev.data[i] + l2 * v_cur.data[i];
    }
    return out;
}

DenseMatrix block_forward(const DenseMatrix& x, const DenseVector& t_emb, const BlockParams& p,
                          const RopeLayerSpec& rope, const std::vector<Position3>& positions,
                          BlockCache& cache, const DenseMatrix* v_prev) {
    const int n = x.rows;
    const int d = p.dim;
    require(x.cols == d, "block_forward: input width != block dim");
    require(static_cast<int>(t_emb.size()) == d, "block_forward: t_emb length != dim");
    require(static_cast<int>(positions.size()) == n, "block_forward: one position per token");
    require(rope.n_bands() == d / 2, "block_forward: rope bands != dim/2");
    if (v_prev != nullptr) {
        require(v_prev->rows == n && v_prev->cols == d, "block_forward: v_prev shape mismatch");
    }

    cache.x = x;
    cache.t_emb = t_emb;

    // Modulation MLP: t_emb -> SiLU hidden -> [s, b, g].
    cache.mod_pre = affine(p.w_mod1, t_emb, p.b_mod1);
    cache.mod_h.resize(d);
    for (int i = 0; i < d; ++i) cache.mod_h[i] = silu(cache.mod_pre[i]);
    DenseVector modout = affine(p.w_mod2, cache.mod_h, p.b_mod2);
    cache.mod_s.assign(modout.begin(), modout.begin() + d);
    cache.mod_b.assign(modout.begin() + d, modout.begin() + 2 * d);
    cache.mod_g.assign(modout.begin() + 2 * d, modout.end());

    // x_tilde = RMSNorm(x) * (1 + s) + b.
    cache.inv_rms.resize(n);
    cache.normed = DenseMatrix(n, d);
    cache.xt = DenseMatrix(n, d);
    for (int i = 0; i < n; ++i) {
        const double* xr = x.row(i);
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += xr[j] * xr[j];
        const double inv = 1.0 / std::sqrt(ms / d + kRmsEps);
        cache.inv_rms[i] = inv;
        double* nr = cache.normed.row(i);
        double* tr = cache.xt.row(i);
        for (int j = 0; j < d; ++j) {
            nr[j] = xr[j] * inv;
            tr[j] = nr[j] * (1.0 + cache.mod_s[j]) + cache.mod_b[j];
        }
    }

    // Unified projection and split: [Q, K, V, H1, H2].
    DenseMatrix u = matmul_nt(cache.xt, p.w_unified);
    cache.q = DenseMatrix(n, d);
    cache.k = DenseMatrix(n, d);
    cache.v = DenseMatrix(n, d);
    cache.h1 = DenseMatrix(n, 2 * d);
    cache.h2 = DenseMatrix(n, 2 * d);
    for (int i = 0; i < n; ++i) {
        const double* ur = u.row(i);
        std::copy(ur, ur + d, cache.q.row(i));
        std::copy(ur + d, ur + 2 * d, cache.k.row(i));
        std::copy(ur + 2 * d, ur + 3 * d, cache.v.row(i));
        std::copy(ur + 3 * d, ur + 5 * d, cache.h1.row(i));
        std::copy(ur + 5 * d, ur + 7 * d, cache.h2.row(i));
    }

    cache.qr = cache.q;
    cache.kr = cache.k;
    for (int i = 0; i < n; ++i) {
        apply_rope(cache.qr.row(i), d, rope, positions[i]);
        apply_rope(cache.kr.row(i), d, rope, positions[i]);
    }

    cache.self_residual = (v_prev == nullptr);
    if (!cache.self_residual) cache.v_prev = *v_prev;
    const DenseMatrix& vp = cache.self_residual ? cache.v : cache.v_prev;
    cache.v_out = value_residual(vp, cache.v, p.lambda1, p.lambda2);

    // Exact softmax attention at 1/sqrt(d).
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    cache.attn = matmul_nt(cache.qr, cache.kr);
    for (double& s : cache.attn.data) s *= scale;
    for (int i = 0; i < n; ++i) softmax_row(cache.attn.row(i), n);
    cache.attn_out = matmul(cache.attn, cache.v_out);

    // Gated MLP: Linear2(GELU(H2) ⊙ H1).
    cache.gelu_h2 = DenseMatrix(n, 2 * d);
    cache.gated = DenseMatrix(n, 2 * d);
    for (std::size_t i = 0; i < cache.h2.size(); ++i) {
        cache.gelu_h2.data[i] = gelu(cache.h2.data[i]);
        cache.gated.data[i] = cache.gelu_h2.data[i] * cache.h1.data[i];
    }
    cache.mlp_out = matmul_nt(cache.gated, p.w_mlp2);

    cache.cat = DenseMatrix(n, 2 * d);
    for (int i = 0; i < n; ++i) {
        std::copy(cache.attn_out.row(i), cache.attn_out.row(i) + d, cache.cat.row(i));
        std::copy(cache.mlp_out.row(i), cache.mlp_out.row(i) + d, cache.cat.row(i) + d);
    }
    cache.proj_out = matmul_nt(cache.cat, p.w_proj);

    DenseMatrix y(n, d);
    for (int i = 0; i < n; ++i) {
        const double* pr = cache.proj_out.row(i);
        const double* xr = x.row(i);
        double* yr = y.row(i);
        for (int j = 0; j < d; ++j) {
            yr[j] = xr[j] + pr[j] * (cache.mod_g[j] + p.gate_offset_value);
        }
    }
    return y;
}

BlockGrads block_backward(const BlockParams& p, const RopeLayerSpec& rope,
                          const std::vector<Position3>& positions, const BlockCache& cache,
                          const DenseMatrix& dy, const DenseMatrix* extra_dv) {
    const int n = cache.x.rows;
    const int d = p.dim;
    require(dy.rows == n && dy.cols == d, "block_backward: dy shape mismatch");
    if (extra_dv != nullptr) {
        require(extra_dv->rows == n && extra_dv->cols == d,
                "block_backward: extra_dv shape mismatch");
    }

    BlockGrads g;
    g.x = dy;  // residual path; norm path adds below

    // Gate: y = x + P ⊙ (g_t + offset).
    DenseMatrix d_proj(n, d);
    DenseVector dg(d, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* dyr = dy.row(i);
        const double* pr = cache.proj_out.row(i);
        double* dpr = d_proj.row(i);
        for (int j = 0; j < d; ++j) {
            dpr[j] = dyr[j] * (cache.mod_g[j] + p.gate_offset_value);
            dg[j] += dyr[j] * pr[j];
        }
    }

    g.w_proj = matmul_tn(d_proj, cache.cat);
    DenseMatrix dcat = matmul(d_proj, p.w_proj);

    DenseMatrix d_attn_out(n, d);
    DenseMatrix d_mlp_out(n, d);
    for (int i = 0; i < n; ++i) {
        const double* dr = dcat.row(i);
        std::copy(dr, dr + d, d_attn_out.row(i));
        std::copy(dr + d, dr + 2 * d, d_mlp_out.row(i));
    }

    // MLP path.
    g.w_mlp2 = matmul_tn(d_mlp_out, cache.gated);
    DenseMatrix d_gated = matmul(d_mlp_out, p.w_mlp2);
    DenseMatrix dh1(n, 2 * d);
    DenseMatrix dh2(n, 2 * d);
    for (std::size_t i = 0; i < d_gated.size(); ++i) {
        dh1.data[i] = d_gated.data[i] * cache.gelu_h2.data[i];
        dh2.data[i] = d_gated.data[i] * cache.h1.data[i] * gelu_grad(cache.h2.data[i]);
    }

    // Attention path.
    DenseMatrix dv_out = matmul_tn(cache.attn, d_attn_out);
    DenseMatrix d_attn = matmul_nt(d_attn_out, cache.v_out);
    DenseMatrix d_scores(n, n);
    for (int i = 0; i < n; ++i) {
        const double* ar = cache.attn.row(i);
        const double* dar = d_attn.row(i);
        double rowdot = 0.0;
        for (int j = 0; j < n; ++j) rowdot += ar[j] * dar[j];
        double* dsr = d_scores.row(i);
        for (int j = 0; j < n; ++j) dsr[j] = ar[j] * (dar[j] - rowdot);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    DenseMatrix dqr = matmul(d_scores, cache.kr);
    DenseMatrix dkr = matmul_tn(d_scores, cache.qr);
    for (double& v : dqr.data) v *= scale;
    for (double& v : dkr.data) v *= scale;

    // Value residual.
    const DenseMatrix& vp = cache.self_residual ? cache.v : cache.v_prev;
    g.lambda1 = 0.0;
    g.lambda2 = 0.0;
    DenseMatrix dv(n, d);
    for (std::size_t i = 0; i < dv.size(); ++i) {
        g.lambda1 += dv_out.data[i] * vp.data[i];
        g.lambda2 += dv_out.data[i] * cache.v.data[i];
        dv.data[i] = p.lambda2 * dv_out.data[i];
    }
    if (cache.self_residual) {
        for (std::size_t i = 0; i < dv.size(); ++i) dv.data[i] += p.lambda1 * dv_out.data[i];
    } else {
        g.v_prev = DenseMatrix(n, d);
        for (std::size_t i = 0; i < dv.size(); ++i) {
            g.v_prev.data[i] = p.lambda1 * dv_out.data[i];
        }
    }
    if (extra_dv != nullptr) {
        for (std::size_t i = 0; i < dv.size(); ++i) dv.data[i] += extra_dv->data[i];
    }

    // RoPE is orthogonal per pair: pull back with the inverse rotation.
    DenseMatrix dq = dqr;
    DenseMatrix dk = dkr;
    for (int i = 0; i < n; ++i) {
        apply_rope_inverse(dq.row(i), d, rope, positions[i]);
        apply_rope_inverse(dk.row(i), d, rope, positions[i]);
    }

    // Re-assemble dU and pull through the unified projection.
    DenseMatrix du(n, 7 * d);
    for (int i = 0; i < n; ++i) {
        double* dur = du.row(i);
        std::copy(dq.row(i), dq.row(i) + d, dur);
        std::copy(dk.row(i), dk.row(i) + d, dur + d);
        std::copy(dv.row(i), dv.row(i) + d, dur + 2 * d);
        std::copy(dh1.row(i), dh1.row(i) + 2 * d, dur + 3 * d);
        std::copy(dh2.row(i), dh2.row(i) + 2 * d, dur + 5 * d);
    }
    g.w_unified = matmul_tn(du, cache.xt);
    DenseMatrix dxt = matmul(du, p.w_unified);

    // Modulated RMSNorm.
    DenseVector ds(d, 0.0);
    DenseVector db(d, 0.0);
    DenseMatrix d_normed(n, d);
    for (int i = 0; i < n; ++i) {
        const double* dxtr = dxt.row(i);
        const double* nr = cache.normed.row(i);
        double* dnr = d_normed.row(i);
        for (int j = 0; j < d; ++j) {
            ds[j] += dxtr[j] * nr[j];
            db[j] += dxtr[j];
            dnr[j] = dxtr[j] * (1.0 + cache.mod_s[j]);
        }
    }
    for (int i = 0; i < n; ++i) {
        const double* dnr = d_normed.row(i);
        const double* xr = cache.x.row(i);
        const double inv = cache.inv_rms[i];
        double proj = 0.0;
        for (int j = 0; j < d; ++j) proj += dnr[j] * xr[j];
        const double coef = inv * inv * inv * proj / d;
        double* dxr = g.x.row(i);
        for (int j = 0; j < d; ++j) {
            dxr[j] += inv * dnr[j] - coef * xr[j];
        }
    }

    // Modulation MLP.
    DenseVector dmodout(3 * d);
    std::copy(ds.begin(), ds.end(), dmodout.begin());
    std::copy(db.begin(), db.end(), dmodout.begin() + d);
    std::copy(dg.begin(), dg.end(), dmodout.begin() + 2 * d);

    g.w_mod2 = DenseMatrix(3 * d, d);
    g.b_mod2 = DenseMatrix(1, 3 * d);
    DenseVector dh_mod(d, 0.0);
    for (int i = 0; i < 3 * d; ++i) {
        g.b_mod2(0, i) = dmodout[i];
        double* wr = g.w_mod2.row(i);
        const double* w2r = p.w_mod2.row(i);
        for (int j = 0; j < d; ++j) {
            wr[j] = dmodout[i] * cache.mod_h[j];
            dh_mod[j] += w2r[j] * dmodout[i];
        }
    }
    g.w_mod1 = DenseMatrix(d, d);
    g.b_mod1 = DenseMatrix(1, d);
    for (int i = 0; i < d; ++i) {
        const double dpre = dh_mod[i] * silu_grad(cache.mod_pre[i]);
        g.b_mod1(0, i) = dpre;
        double* wr = g.w_mod1.row(i);
        for (int j = 0; j < d; ++j) {
            wr[j] = dpre * cache.t_emb[j];
        }
    }

    return g;
}

PatchGrid patch_grid(int frames, int height, int width, int p_t, int p_s) {
    require(p_t >= 1 && p_s >= 1, "patch_grid: patch sizes must be >= 1");
    require(frames >= 1 && height >= 1 && width >= 1, "patch_grid: dimensions must be >= 1");
    if (frames % p_t != 0 || height % p_s != 0 || width % p_s != 0) {
        throw ContractViolation("patch_grid: dimensions not divisible by patch size");
    }
    PatchGrid grid;
    grid.n_t = frames / p_t;
    grid.n_h = height / p_s;
    grid.n_w = width / p_s;
    grid.total = static_cast<long>(grid.n_t) * grid.n_h * grid.n_w;
    return grid;
}

DenseVector timestep_embedding(double t, int dim) {
    require(dim >= 2 && dim % 2 == 0, "timestep_embedding: dim must be even and >= 2");
    const int half = dim / 2;
    DenseVector emb(dim);
    for (int i = 0; i < half; ++i) {
        const double frac_pos = half == 1 ? 0.0 : static_cast<double>(i) / (half - 1);
        const double freq = std::pow(1000.0, frac_pos);
        emb[2 * i] = std::sin(freq * t);
        emb[2 * i + 1] = std::cos(freq * t);
    }
    return emb;
}

BlockStack stack_init(int dim, int depth, GateOffsetMode mode, std::uint64_t seed) {
    require(depth >= 1, "stack_init: depth must be >= 1");
    BlockStack stack;
    stack.dim = dim;
    RngStream root(seed);
    for (int l = 0; l < depth; ++l) {
        RngStream layer_rng = root.derive(static_cast<std::uint64_t>(l));
        stack.blocks.push_back(block_init(dim, depth, mode, layer_rng));
        // Per-layer rotation seeds: layers encode position through
        // distinct geometric transformations.
        stack.rope.push_back(
            build_layer_spec(dim / 2, root.derive(0x9000 + static_cast<std::uint64_t>(l)).seed()));
    }
    return stack;
}

DenseMatrix stack_forward(const BlockStack& stack, const DenseMatrix& x,
                          const DenseVector& t_emb, const std::vector<Position3>& positions,
                          std::vector<BlockCache>& caches) {
    const int depth = static_cast<int>(stack.blocks.size());
    caches.assign(depth, BlockCache{});
    DenseMatrix cur = x;
    for (int l = 0; l < depth; ++l) {
        const DenseMatrix* v_first = l == 0 ? nullptr : &caches[0].v;
        cur = block_forward(cur, t_emb, stack.blocks[l], stack.rope[l], positions, caches[l],
                            v_first);
    }
    return cur;
}

StackGrads stack_backward(const BlockStack& stack, const std::vector<Position3>& positions,
                          const std::vector<BlockCache>& caches, const DenseMatrix& dy) {
    const int depth = static_cast<int>(stack.blocks.size());
    require(static_cast<int>(caches.size()) == depth, "stack_backward: cache count mismatch");

    StackGrads grads;
    grads.blocks.resize(depth);
    DenseMatrix d = dy;
    DenseMatrix dv_first(dy.rows, dy.cols);
    for (int l = depth - 1; l >= 1; --l) {
        grads.blocks[l] = block_backward(stack.blocks[l], stack.rope[l], positions, caches[l], d);
        d = grads.blocks[l].x;
        for (std::size_t i = 0; i < dv_first.size(); ++i) {
            dv_first.data[i] += grads.blocks[l].v_prev.data[i];
        }
    }
    grads.blocks[0] = block_backward(stack.blocks[0], stack.rope[0], positions, caches[0], d,
                                     depth > 1 ? &dv_first : nullptr);
    grads.x = grads.blocks[0].x;
    return grads;
}

}  // namespace spheretrain
