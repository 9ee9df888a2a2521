#ifndef ECGVAE_VAE_HPP
#define ECGVAE_VAE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ecgvae/common.hpp"
#include "ecgvae/tensor.hpp"

namespace ecgvae {

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

/// Conv VAE over a (1, leads, samples) input. Seven conv layers; the ones in
/// residual_layers keep stride 1 and add a skip connection; every other layer
/// halves time, and the first two of those also halve the lead dimension.
struct VaeArchitecture {
    int latent_dim = 10;
    int pred_dim = 10; // head reads z[0..pred_dim); pred_dim < latent_dim = split task
    std::vector<int> channels = {8, 16, 32, 64, 64, 64, 64};
    int kernel_lead = 3;
    int kernel_time = 5;
    std::vector<int> residual_layers = {2, 4, 6};
    int input_leads = 12;
    int input_samples = 400;
    double dropout_rate = 0.1;

    bool operator==(const VaeArchitecture&) const = default;
};

inline VaeArchitecture small_vae_architecture(int latent_dim, int pred_dim) {
    VaeArchitecture a;
    a.latent_dim = latent_dim;
    a.pred_dim = pred_dim;
    return a;
}

/// Tiny configuration used by the gradient-verification suite.
inline VaeArchitecture reduced_architecture() {
    VaeArchitecture a;
    a.latent_dim = 2;
    a.pred_dim = 1;
    a.channels = {2, 2, 2, 2, 2, 2, 2};
    a.input_leads = 4;
    a.input_samples = 32;
    a.dropout_rate = 0.0;
    return a;
}

struct ConvPlan {
    int in_c, out_c;
    int in_h, in_w, out_h, out_w;
    int stride_h, stride_w;
    int pad_top, pad_left;
    bool residual;
    bool relu;
    int up_h = 1, up_w = 1; // decoder stages upsample before the conv
};

struct VaePlan {
    std::vector<ConvPlan> enc; // applied 0..6
    std::vector<ConvPlan> dec; // applied in stored order (mirror of enc 6..0)
    int feat_c = 0, feat_h = 0, feat_w = 0;
    int feat_dim = 0; // feat_c*feat_h*feat_w, bottleneck width
};

inline void validate_architecture(const VaeArchitecture& a) {
    if (a.latent_dim < 1) throw ParamError("latent_dim must be >= 1");
    if (a.pred_dim < 1 || a.pred_dim > a.latent_dim)
        throw ParamError("pred_dim must satisfy 1 <= pred_dim <= latent_dim");
    if (a.channels.size() != 7) throw ParamError("channels must have length 7");
    for (int c : a.channels)
        if (c < 1) throw ParamError("channels must be positive");
    if (!(a.dropout_rate >= 0.0 && a.dropout_rate < 1.0))
        throw ParamError("dropout_rate must be in [0, 1)");
    if (a.input_leads < 1 || a.input_samples < 1) throw ParamError("input shape must be positive");
}

inline bool is_residual_layer(const VaeArchitecture& a, int i) {
    return std::find(a.residual_layers.begin(), a.residual_layers.end(), i) !=
           a.residual_layers.end();
}

inline VaePlan build_plan(const VaeArchitecture& a) {
    validate_architecture(a);
    VaePlan plan;
    int h = a.input_leads, w = a.input_samples, c = 1;
    int lead_strides_left = 2;
    for (int i = 0; i < 7; ++i) {
        ConvPlan cp;
        cp.residual = is_residual_layer(a, i);
        cp.in_c = c;
        cp.out_c = a.channels[i];
        cp.in_h = h;
        cp.in_w = w;
        cp.stride_w = cp.residual ? 1 : 2;
        cp.stride_h = (!cp.residual && lead_strides_left > 0) ? 2 : 1;
        if (cp.stride_h == 2) --lead_strides_left;
        if (h % cp.stride_h || w % cp.stride_w)
            throw ParamError("input shape is not divisible by the stride schedule");
        cp.out_h = h / cp.stride_h;
        cp.out_w = w / cp.stride_w;
        // SAME padding; the end side implicitly takes the remainder.
        cp.pad_top = ((cp.out_h - 1) * cp.stride_h + a.kernel_lead - h) / 2;
        cp.pad_left = ((cp.out_w - 1) * cp.stride_w + a.kernel_time - w) / 2;
        if (cp.pad_top < 0) cp.pad_top = 0;
        if (cp.pad_left < 0) cp.pad_left = 0;
        cp.relu = true;
        plan.enc.push_back(cp);
        h = cp.out_h;
        w = cp.out_w;
        c = cp.out_c;
    }
    plan.feat_c = c;
    plan.feat_h = h;
    plan.feat_w = w;
    plan.feat_dim = c * h * w;

    for (int i = 6; i >= 0; --i) {
        const ConvPlan& e = plan.enc[i];
        ConvPlan cp;
        cp.residual = e.residual;
        cp.up_h = e.stride_h;
        cp.up_w = e.stride_w;
        cp.in_c = e.out_c;
        cp.out_c = e.in_c;
        cp.in_h = e.in_h; // spatial size after upsampling
        cp.in_w = e.in_w;
        cp.out_h = e.in_h;
        cp.out_w = e.in_w;
        cp.stride_h = 1;
        cp.stride_w = 1;
        cp.pad_top = (a.kernel_lead - 1) / 2;
        cp.pad_left = (a.kernel_time - 1) / 2;
        cp.relu = i != 0; // final reconstruction layer is linear
        plan.dec.push_back(cp);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ParamBlock {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
    size_t size = 0;
};

/// Standardization statistics for the two RR features entering the head.
struct RrStats {
    double rr_mean_center = 0.0, rr_mean_scale = 1.0;
    double rr_std_center = 0.0, rr_std_scale = 1.0;
};

enum class Phase { pretrain, finetune_head, finetune_full };
enum class GradMask { all, head_only };

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::pretrain: return "pretrain";
        case Phase::finetune_head: return "finetune_head";
        case Phase::finetune_full: return "finetune_full";
    }
    return "?";
}

template <class S>
struct VaeParams {
    VaeArchitecture arch;
    VaePlan plan;
    std::vector<ParamBlock> manifest;
    AlignedVec<S> flat;
    RrStats rr;
    double input_scale = 1.0; // mV -> model units, applied by the trainer
    std::string phase_tag = "init";

    const ParamBlock& block(const std::string& name) const {
        for (const auto& b : manifest)
            if (b.name == name) return b;
        throw ParamError("no parameter block named " + name);
    }
    // Fixed manifest layout (see build_manifest): 7x enc w/b pairs, the two
    // latent projections, dec_in, 7x dec w/b pairs, head.
    const ParamBlock& enc_w(int i) const { return manifest[2 * i]; }
    const ParamBlock& enc_b(int i) const { return manifest[2 * i + 1]; }
    const ParamBlock& mu_w() const { return manifest[14]; }
    const ParamBlock& mu_b() const { return manifest[15]; }
    const ParamBlock& logvar_w() const { return manifest[16]; }
    const ParamBlock& logvar_b() const { return manifest[17]; }
    const ParamBlock& dec_in_w() const { return manifest[18]; }
    const ParamBlock& dec_in_b() const { return manifest[19]; }
    const ParamBlock& dec_w(int stage) const { return manifest[20 + 2 * stage]; }
    const ParamBlock& dec_b(int stage) const { return manifest[21 + 2 * stage]; }
    const ParamBlock& head_w() const { return manifest[34]; }
    const ParamBlock& head_b() const { return manifest[35]; }

    S* ptr(const ParamBlock& b) { return flat.data() + b.offset; }
    const S* ptr(const ParamBlock& b) const { return flat.data() + b.offset; }
};

namespace detail {

inline void push_block(std::vector<ParamBlock>& m, size_t& off, const std::string& name,
                       std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    m.push_back({name, std::move(shape), off, n});
    off += n;
}

} // namespace detail

inline std::vector<ParamBlock> build_manifest(const VaeArchitecture& a, const VaePlan& plan) {
    std::vector<ParamBlock> m;
    size_t off = 0;
    const int kh = a.kernel_lead, kw = a.kernel_time;
    for (int i = 0; i < 7; ++i) {
        detail::push_block(m, off, "enc" + std::to_string(i) + ".w",
                           {plan.enc[i].out_c, plan.enc[i].in_c, kh, kw});
        detail::push_block(m, off, "enc" + std::to_string(i) + ".b", {plan.enc[i].out_c});
    }
    detail::push_block(m, off, "mu.w", {a.latent_dim, plan.feat_dim});
    detail::push_block(m, off, "mu.b", {a.latent_dim});
    detail::push_block(m, off, "logvar.w", {a.latent_dim, plan.feat_dim});
    detail::push_block(m, off, "logvar.b", {a.latent_dim});
    detail::push_block(m, off, "dec_in.w", {plan.feat_dim, a.latent_dim});
    detail::push_block(m, off, "dec_in.b", {plan.feat_dim});
    for (size_t s = 0; s < plan.dec.size(); ++s) {
        const int enc_idx = 6 - static_cast<int>(s);
        detail::push_block(m, off, "dec" + std::to_string(enc_idx) + ".w",
                           {plan.dec[s].out_c, plan.dec[s].in_c, kh, kw});
        detail::push_block(m, off, "dec" + std::to_string(enc_idx) + ".b", {plan.dec[s].out_c});
    }
    detail::push_block(m, off, "head.w", {a.pred_dim + 2});
    detail::push_block(m, off, "head.b", {1});
    return m;
}

template <class S>
size_t param_count(const VaeParams<S>& p) {
    return p.flat.size();
}

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases; deterministic per
/// seed.
template <class S>
VaeParams<S> init_params(const VaeArchitecture& arch, std::uint64_t seed) {
    VaeParams<S> p;
    p.arch = arch;
    p.plan = build_plan(arch);
    p.manifest = build_manifest(arch, p.plan);
    size_t total = 0;
    for (const auto& b : p.manifest) total = std::max(total, b.offset + b.size);
    p.flat.assign(total, S(0));

    Rng rng(seed);
    std::normal_distribution<double> normal01(0.0, 1.0);
    for (const auto& b : p.manifest) {
        const bool is_bias = b.name.ends_with(".b");
        if (is_bias) continue; // biases stay 0
        int fan_in;
        if (b.shape.size() == 4)
            fan_in = b.shape[1] * b.shape[2] * b.shape[3];
        else if (b.shape.size() == 2)
            fan_in = b.shape[1];
        else
            fan_in = b.shape[0] ? b.shape[0] : 1; // head vector: input width
        const double std = std::sqrt(2.0 / fan_in);
        S* w = p.ptr(b);
        for (size_t i = 0; i < b.size; ++i) w[i] = static_cast<S>(std * normal01(rng));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossWeights {
    double beta = 4.0;
    double gamma = 500.0;
};

template <class S>
struct LossBreakdown {
    S total = 0; // mse + beta*kl (+ gamma*bce outside pretraining)
    S mse = 0;
    S kl = 0;
    S bce = 0; // raw term; 0 when the label is absent or phase == pretrain
};

template <class S>
S mse_loss(std::span<const S> x, std::span<const S> xhat) {
    S acc = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const S d = xhat[i] - x[i];
        acc += d * d;
    }
    return acc / static_cast<S>(x.size());
}

template <class S>
S kl_loss(std::span<const S> mu, std::span<const S> logvar) {
    S acc = 0;
    for (size_t i = 0; i < mu.size(); ++i)
        acc += mu[i] * mu[i] + std::exp(logvar[i]) - S(1) - logvar[i];
    return S(0.5) * acc;
}

/// Numerically stable binary cross-entropy from a logit.
template <class S>
S bce_loss(S logit, int label) {
    const S neg_abs = -std::abs(logit);
    return std::log1p(std::exp(neg_abs)) + std::max(logit, S(0)) - logit * static_cast<S>(label);
}

template <class S>
LossBreakdown<S> combine_loss(S mse, S kl, std::optional<S> bce, const LossWeights& w,
                              Phase phase) {
    LossBreakdown<S> out;
    out.mse = mse;
    out.kl = kl;
    out.total = mse + static_cast<S>(w.beta) * kl;
    if (phase != Phase::pretrain && bce.has_value()) {
        out.bce = *bce;
        out.total += static_cast<S>(w.gamma) * out.bce;
    }
    return out;
}

/// Spec-shaped convenience overload: computes the three terms and combines.
template <class S>
LossBreakdown<S> total_loss(std::span<const S> x, std::span<const S> xhat, std::span<const S> mu,
                            std::span<const S> logvar, S logit, std::optional<int> label,
                            const LossWeights& w, Phase phase) {
    std::optional<S> bce;
    if (label.has_value()) bce = bce_loss(logit, *label);
    return combine_loss(mse_loss(x, xhat), kl_loss(mu, logvar), bce, w, phase);
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

template <class S>
struct LatentCode {
    VecX<S> mu, logvar, z, eps;
};

/// One training example. `x` is the input-scaled beat; RR features are raw ms
/// (standardized inside the head). noise_seed drives the sample's latent draw
/// and dropout masks, so forward passes replay exactly.
template <class S>
struct VaeSample {
    Tensor3<S> x; // 1 x leads x samples
    S rr_mean_ms = 0, rr_std_ms = 0;
    std::optional<int> label;
    std::uint64_t noise_seed = 0;
};

namespace detail {

// Patch matrices are stored (P x K) column-major: one column per kernel tap
// (ic, ky, kx), contiguous along output positions. Stride-1 layers then copy
// whole rows at a time.

template <class S>
void im2col(const Tensor3<S>& in, const ConvPlan& cp, int kh, int kw, MatX<S>& patches) {
    const int K = cp.in_c * kh * kw;
    const Eigen::Index P = static_cast<Eigen::Index>(cp.out_h) * cp.out_w;
    patches.resize(P, K);
    int k = 0;
    for (int ic = 0; ic < cp.in_c; ++ic) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++k) {
                S* col = patches.data() + static_cast<Eigen::Index>(k) * P;
                // Output columns whose input index kx + ow*sw - pad stays in bounds.
                const int shift = kx - cp.pad_left;
                int ow_lo = shift < 0 ? (-shift + cp.stride_w - 1) / cp.stride_w : 0;
                int ow_hi = (cp.in_w - 1 - shift) / cp.stride_w + 1;
                ow_lo = std::min(ow_lo, cp.out_w);
                ow_hi = std::clamp(ow_hi, ow_lo, cp.out_w);
                for (int oh = 0; oh < cp.out_h; ++oh) {
                    S* dst = col + static_cast<Eigen::Index>(oh) * cp.out_w;
                    const int iy = oh * cp.stride_h - cp.pad_top + ky;
                    if (iy < 0 || iy >= cp.in_h) {
                        std::fill(dst, dst + cp.out_w, S(0));
                        continue;
                    }
                    const S* src =
                        in.data() + (static_cast<size_t>(ic) * cp.in_h + iy) * cp.in_w + shift;
                    std::fill(dst, dst + ow_lo, S(0));
                    if (cp.stride_w == 1) {
                        std::copy(src + ow_lo, src + ow_hi, dst + ow_lo);
                    } else {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src[ow * cp.stride_w];
                    }
                    std::fill(dst + ow_hi, dst + cp.out_w, S(0));
                }
            }
        }
    }
}

template <class S>
void col2im_add(const MatX<S>& patches, const ConvPlan& cp, int kh, int kw, Tensor3<S>& din) {
    const Eigen::Index P = static_cast<Eigen::Index>(cp.out_h) * cp.out_w;
    int k = 0;
    for (int ic = 0; ic < cp.in_c; ++ic) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++k) {
                const S* col = patches.data() + static_cast<Eigen::Index>(k) * P;
                const int shift = kx - cp.pad_left;
                int ow_lo = shift < 0 ? (-shift + cp.stride_w - 1) / cp.stride_w : 0;
                int ow_hi = (cp.in_w - 1 - shift) / cp.stride_w + 1;
                ow_lo = std::min(ow_lo, cp.out_w);
                ow_hi = std::clamp(ow_hi, ow_lo, cp.out_w);
                for (int oh = 0; oh < cp.out_h; ++oh) {
                    const int iy = oh * cp.stride_h - cp.pad_top + ky;
                    if (iy < 0 || iy >= cp.in_h) continue;
                    const S* src = col + static_cast<Eigen::Index>(oh) * cp.out_w;
                    S* dst =
                        din.data() + (static_cast<size_t>(ic) * cp.in_h + iy) * cp.in_w + shift;
                    if (cp.stride_w == 1) {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += src[ow];
                    } else {
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dst[ow * cp.stride_w] += src[ow];
                    }
                }
            }
        }
    }
}

/// skip(x): channel-matched identity; extra channels zero-padded, surplus
/// channels truncated. Residual stages have stride 1, so spatial dims match.
template <class S>
void add_skip(const Tensor3<S>& in, Tensor3<S>& pre) {
    const int c = std::min(in.c, pre.c);
    const size_t plane = static_cast<size_t>(in.h) * in.w;
    for (int ci = 0; ci < c; ++ci) {
        const S* s = in.data() + ci * plane;
        S* d = pre.data() + ci * plane;
        for (size_t i = 0; i < plane; ++i) d[i] += s[i];
    }
}

template <class S>
void add_skip_backward(const Tensor3<S>& dpre, Tensor3<S>& din) {
    const int c = std::min(dpre.c, din.c);
    const size_t plane = static_cast<size_t>(din.h) * din.w;
    for (int ci = 0; ci < c; ++ci) {
        const S* s = dpre.data() + ci * plane;
        S* d = din.data() + ci * plane;
        for (size_t i = 0; i < plane; ++i) d[i] += s[i];
    }
}

template <class S>
void upsample_nn(const Tensor3<S>& in, int fh, int fw, Tensor3<S>& out) {
    out.resize(in.c, in.h * fh, in.w * fw);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < out.h; ++y) {
            const S* src = in.data() + (static_cast<size_t>(c) * in.h + y / fh) * in.w;
            S* dst = out.data() + (static_cast<size_t>(c) * out.h + y) * out.w;
            for (int x = 0; x < out.w; ++x) dst[x] = src[x / fw];
        }
}

template <class S>
void upsample_nn_backward(const Tensor3<S>& dout, int fh, int fw, Tensor3<S>& din) {
    // din must be pre-sized (dout.h/fh, dout.w/fw); accumulates.
    for (int c = 0; c < dout.c; ++c)
        for (int y = 0; y < dout.h; ++y) {
            const S* src = dout.data() + (static_cast<size_t>(c) * dout.h + y) * dout.w;
            S* dst = din.data() + (static_cast<size_t>(c) * din.h + y / fh) * din.w;
            for (int x = 0; x < dout.w; ++x) dst[x / fw] += src[x];
        }
}

} // namespace detail

/// The encoder's log-variance output is clamped to this range before the
/// reparameterization and the KL term; exp() would overflow single precision
/// long before the unclamped affine output saturates early in training.
inline constexpr double kLogvarClamp = 10.0;

/// Per-sample forward activations retained for the backward pass. Patch
/// matrices are cached so backward does not redo im2col.
template <class S>
struct ForwardTrace {
    std::vector<Tensor3<S>> enc_act;  // post-relu, pre-dropout (7)
    std::vector<Tensor3<S>> enc_out;  // layer outputs actually fed forward (7)
    std::vector<Tensor3<S>> drop_mask; // per layer; empty when unused
    std::vector<MatX<S>> enc_patches; // im2col of each encoder layer input
    VecX<S> flat;                      // flattened bottleneck features
    VecX<S> logvar_pre;                // latent projection output before clamping
    LatentCode<S> code;
    VecX<S> dec_in_act;               // post-relu decoder input
    std::vector<Tensor3<S>> dec_act;  // per stage output (7), last = recon
    std::vector<MatX<S>> dec_patches; // im2col of each decoder stage input
    VecX<S> head_in;                  // (pred_dim + 2)
    S logit = 0;
};

template <class S>
struct Workspace {
    MatX<S> patches, dpatches;
    Tensor3<S> up, dtensor;
};

namespace detail {

template <class S>
void conv_forward(const VaeParams<S>& params, const ParamBlock& wb, const ParamBlock& bb,
                  const ConvPlan& cp, const Tensor3<S>& in, Tensor3<S>& out, MatX<S>& patches) {
    const int kh = params.arch.kernel_lead, kw = params.arch.kernel_time;
    im2col(in, cp, kh, kw, patches);
    out.resize(cp.out_c, cp.out_h, cp.out_w);
    Eigen::Map<const MatXR<S>> W(params.ptr(wb), cp.out_c, patches.cols());
    Eigen::Map<const VecX<S>> b(params.ptr(bb), cp.out_c);
    Eigen::Map<MatXR<S>> O(out.data(), cp.out_c, patches.rows());
    O.noalias() = W * patches.transpose();
    O.colwise() += b;
}

template <class S>
VecX<S> standardized_rr(const VaeParams<S>& p, S rr_mean_ms, S rr_std_ms) {
    VecX<S> r(2);
    r[0] = (rr_mean_ms - static_cast<S>(p.rr.rr_mean_center)) / static_cast<S>(p.rr.rr_mean_scale);
    r[1] = (rr_std_ms - static_cast<S>(p.rr.rr_std_center)) / static_cast<S>(p.rr.rr_std_scale);
    return r;
}

} // namespace detail

/// Full forward pass. In train mode, eps and dropout masks are drawn from the
/// sample's noise_seed, so the pass is replayable.
template <class S>
void forward_trace(const VaeParams<S>& params, const VaeSample<S>& sample, Mode mode,
                   ForwardTrace<S>& t, Workspace<S>& ws) {
    const VaePlan& plan = params.plan;
    const int L = params.arch.latent_dim;
    const int Lp = params.arch.pred_dim;
    const double drop = params.arch.dropout_rate;

    Rng rng(mix_seed(sample.noise_seed, 0xf0));

    t.enc_act.resize(7);
    t.enc_out.resize(7);
    t.drop_mask.resize(7);
    for (auto& m : t.drop_mask) m.resize(0, 0, 0);
    t.enc_patches.resize(7);
    t.dec_patches.resize(7);
    const Tensor3<S>* cur = &sample.x;
    for (int i = 0; i < 7; ++i) {
        const ConvPlan& cp = plan.enc[i];
        detail::conv_forward(params, params.enc_w(i), params.enc_b(i), cp, *cur, t.enc_act[i],
                             t.enc_patches[i]);
        if (cp.residual) detail::add_skip(*cur, t.enc_act[i]);
        for (S& v : t.enc_act[i].v) v = std::max(v, S(0));
        if (cp.residual && mode == Mode::train && drop > 0.0) {
            auto& mask = t.drop_mask[i];
            mask.resize(t.enc_act[i].c, t.enc_act[i].h, t.enc_act[i].w);
            std::bernoulli_distribution keep(1.0 - drop);
            const S inv = static_cast<S>(1.0 / (1.0 - drop));
            for (size_t k = 0; k < mask.v.size(); ++k) mask.v[k] = keep(rng) ? inv : S(0);
            t.enc_out[i].resize(mask.c, mask.h, mask.w);
            for (size_t k = 0; k < mask.v.size(); ++k)
                t.enc_out[i].v[k] = t.enc_act[i].v[k] * mask.v[k];
        } else {
            t.enc_out[i] = t.enc_act[i];
        }
        cur = &t.enc_out[i];
    }

    t.flat = Eigen::Map<const VecX<S>>(cur->data(), plan.feat_dim);

    Eigen::Map<const MatXR<S>> Wmu(params.ptr(params.mu_w()), L, plan.feat_dim);
    Eigen::Map<const MatXR<S>> Wlv(params.ptr(params.logvar_w()), L, plan.feat_dim);
    Eigen::Map<const VecX<S>> bmu(params.ptr(params.mu_b()), L);
    Eigen::Map<const VecX<S>> blv(params.ptr(params.logvar_b()), L);
    t.code.mu = Wmu * t.flat + bmu;
    t.logvar_pre = Wlv * t.flat + blv;
    t.code.logvar = t.logvar_pre.cwiseMax(S(-kLogvarClamp)).cwiseMin(S(kLogvarClamp));
    t.code.eps = VecX<S>::Zero(L);
    if (mode == Mode::train) {
        std::normal_distribution<double> n01(0.0, 1.0);
        for (int i = 0; i < L; ++i) t.code.eps[i] = static_cast<S>(n01(rng));
    }
    t.code.z = t.code.mu + (t.code.logvar.array() * S(0.5)).exp().matrix().cwiseProduct(t.code.eps);

    // Decoder
    Eigen::Map<const MatXR<S>> Wdi(params.ptr(params.dec_in_w()), plan.feat_dim, L);
    Eigen::Map<const VecX<S>> bdi(params.ptr(params.dec_in_b()), plan.feat_dim);
    t.dec_in_act = Wdi * t.code.z + bdi;
    for (int i = 0; i < plan.feat_dim; ++i) t.dec_in_act[i] = std::max(t.dec_in_act[i], S(0));

    t.dec_act.resize(plan.dec.size());
    Tensor3<S> seed_tensor;
    seed_tensor.resize(plan.feat_c, plan.feat_h, plan.feat_w);
    std::copy(t.dec_in_act.data(), t.dec_in_act.data() + plan.feat_dim, seed_tensor.data());
    const Tensor3<S>* dcur = &seed_tensor;
    for (size_t s = 0; s < plan.dec.size(); ++s) {
        const ConvPlan& cp = plan.dec[s];
        const Tensor3<S>* src = dcur;
        if (cp.up_h != 1 || cp.up_w != 1) {
            detail::upsample_nn(*dcur, cp.up_h, cp.up_w, ws.up);
            src = &ws.up;
        }
        detail::conv_forward(params, params.dec_w(static_cast<int>(s)),
                             params.dec_b(static_cast<int>(s)), cp, *src, t.dec_act[s],
                             t.dec_patches[s]);
        if (cp.residual) detail::add_skip(*src, t.dec_act[s]);
        if (cp.relu)
            for (S& v : t.dec_act[s].v) v = std::max(v, S(0));
        dcur = &t.dec_act[s];
    }

    // Prediction head
    t.head_in.resize(Lp + 2);
    t.head_in.head(Lp) = t.code.z.head(Lp);
    t.head_in.tail(2) = detail::standardized_rr(params, sample.rr_mean_ms, sample.rr_std_ms);
    Eigen::Map<const VecX<S>> w(params.ptr(params.head_w()), Lp + 2);
    t.logit = w.dot(t.head_in) + params.ptr(params.head_b())[0];
}

// -- public ops -------------------------------------------------------------

template <class S>
LatentCode<S> encode(const VaeParams<S>& params, const Tensor3<S>& x, Mode mode,
                     Rng* rng = nullptr) {
    for (S v : x.v)
        if (!std::isfinite(v)) throw NumericError("encode: non-finite input");
    VaeSample<S> sample;
    sample.x = x;
    if (mode == Mode::train) {
        if (rng == nullptr) throw ParamError("encode in train mode requires an rng");
        sample.noise_seed = (*rng)();
    }
    ForwardTrace<S> t;
    Workspace<S> ws;
    forward_trace(params, sample, mode, t, ws);
    return t.code;
}

template <class S>
LatentCode<S> encode(const VaeParams<S>& params, std::span<const S> x, Mode mode,
                     Rng* rng = nullptr) {
    Tensor3<S> xt(1, params.arch.input_leads, params.arch.input_samples);
    if (x.size() != xt.size()) throw ParamError("encode: input size mismatch");
    std::copy(x.begin(), x.end(), xt.data());
    return encode(params, xt, mode, rng);
}

template <class S>
Tensor3<S> decode(const VaeParams<S>& params, const VecX<S>& z) {
    if (z.size() != params.arch.latent_dim) throw ParamError("decode: z has wrong length");
    const VaePlan& plan = params.plan;
    Workspace<S> ws;

    Eigen::Map<const MatXR<S>> Wdi(params.ptr(params.dec_in_w()), plan.feat_dim,
                                   params.arch.latent_dim);
    Eigen::Map<const VecX<S>> bdi(params.ptr(params.dec_in_b()), plan.feat_dim);
    VecX<S> a = Wdi * z + bdi;
    for (int i = 0; i < plan.feat_dim; ++i) a[i] = std::max(a[i], S(0));

    Tensor3<S> cur(plan.feat_c, plan.feat_h, plan.feat_w);
    std::copy(a.data(), a.data() + plan.feat_dim, cur.data());
    Tensor3<S> next;
    for (size_t s = 0; s < plan.dec.size(); ++s) {
        const ConvPlan& cp = plan.dec[s];
        const Tensor3<S>* src = &cur;
        if (cp.up_h != 1 || cp.up_w != 1) {
            detail::upsample_nn(cur, cp.up_h, cp.up_w, ws.up);
            src = &ws.up;
        }
        detail::conv_forward(params, params.dec_w(static_cast<int>(s)),
                             params.dec_b(static_cast<int>(s)), cp, *src, next, ws.patches);
        if (cp.residual) detail::add_skip(*src, next);
        if (cp.relu)
            for (S& v : next.v) v = std::max(v, S(0));
        std::swap(cur, next);
    }
    return cur;
}

template <class S>
S predict_logit(const VaeParams<S>& params, const VecX<S>& z, S rr_mean_ms, S rr_std_ms) {
    const int Lp = params.arch.pred_dim;
    if (z.size() < Lp) throw ParamError("predict_logit: z shorter than pred_dim");
    VecX<S> hin(Lp + 2);
    hin.head(Lp) = z.head(Lp);
    hin.tail(2) = detail::standardized_rr(params, rr_mean_ms, rr_std_ms);
    Eigen::Map<const VecX<S>> w(params.ptr(params.head_w()), Lp + 2);
    return w.dot(hin) + params.ptr(params.head_b())[0];
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace detail {

/// Gradient of the per-sample weighted loss, scaled by `weight`, accumulated
/// into `grad`. Returns the sample's loss breakdown.
template <class S>
LossBreakdown<S> backward_sample(const VaeParams<S>& params, const VaeSample<S>& sample,
                                 const LossWeights& lw, Phase phase, GradMask mask, S weight,
                                 AlignedVec<S>& grad, ForwardTrace<S>& t, Workspace<S>& ws) {
    const VaePlan& plan = params.plan;
    const VaeArchitecture& arch = params.arch;
    const int L = arch.latent_dim, Lp = arch.pred_dim;
    const int kh = arch.kernel_lead, kw = arch.kernel_time;

    forward_trace(params, sample, Mode::train, t, ws);

    const Tensor3<S>& recon = t.dec_act.back();
    const S mse = mse_loss<S>({sample.x.data(), sample.x.size()}, {recon.data(), recon.size()});
    const S kl = kl_loss<S>({t.code.mu.data(), static_cast<size_t>(L)},
                            {t.code.logvar.data(), static_cast<size_t>(L)});
    std::optional<S> bce;
    if (sample.label.has_value()) bce = bce_loss(t.logit, *sample.label);
    const LossBreakdown<S> lb = combine_loss(mse, kl, bce, lw, phase);

    if (!std::isfinite(lb.total)) {
        const char* term = !std::isfinite(lb.mse)   ? "mse"
                           : !std::isfinite(lb.kl)  ? "kl"
                           : !std::isfinite(lb.bce) ? "bce"
                                                    : "total";
        throw NumericError(std::string("non-finite loss term: ") + term);
    }

    const bool bce_active = phase != Phase::pretrain && bce.has_value();

    // Head gradients.
    S dlogit = 0;
    if (bce_active) {
        const S sig = S(1) / (S(1) + std::exp(-t.logit));
        dlogit = weight * static_cast<S>(lw.gamma) * (sig - static_cast<S>(*sample.label));
        const auto& hw = params.head_w();
        const auto& hb = params.head_b();
        for (int i = 0; i < Lp + 2; ++i) grad[hw.offset + i] += dlogit * t.head_in[i];
        grad[hb.offset] += dlogit;
    }
    if (mask == GradMask::head_only) return lb;

    // dz from the head path (only the first Lp entries).
    VecX<S> dz = VecX<S>::Zero(L);
    if (bce_active) {
        Eigen::Map<const VecX<S>> w(params.ptr(params.head_w()), Lp + 2);
        dz.head(Lp) += dlogit * w.head(Lp);
    }

    // Reconstruction gradient through the decoder.
    const size_t n_out = recon.size();
    Tensor3<S> dact(recon.c, recon.h, recon.w);
    {
        const S c = weight * S(2) / static_cast<S>(n_out);
        for (size_t i = 0; i < n_out; ++i) dact.v[i] = c * (recon.v[i] - sample.x.v[i]);
    }

    Tensor3<S> seed_tensor(plan.feat_c, plan.feat_h, plan.feat_w);
    std::copy(t.dec_in_act.data(), t.dec_in_act.data() + plan.feat_dim, seed_tensor.data());

    for (int s = static_cast<int>(plan.dec.size()) - 1; s >= 0; --s) {
        const ConvPlan& cp = plan.dec[s];
        const int K = cp.in_c * kh * kw;
        const Eigen::Index P = static_cast<Eigen::Index>(cp.out_h) * cp.out_w;
        // relu'
        if (cp.relu) {
            const Tensor3<S>& act = t.dec_act[s];
            for (size_t i = 0; i < dact.v.size(); ++i)
                if (act.v[i] <= S(0)) dact.v[i] = S(0);
        }
        const MatX<S>& patches = t.dec_patches[s]; // im2col of the upsampled input

        const auto& wb = params.dec_w(s);
        const auto& bb = params.dec_b(s);
        Eigen::Map<const MatXR<S>> W(params.ptr(wb), cp.out_c, K);
        Eigen::Map<const MatXR<S>> dO(dact.data(), cp.out_c, P);
        Eigen::Map<MatXR<S>> dW(grad.data() + wb.offset, cp.out_c, K);
        dW.noalias() += dO * patches;
        // Fixed-order channel sums; Eigen's redux would peel by alignment.
        for (int oc = 0; oc < cp.out_c; ++oc) {
            S acc = 0;
            const S* row = dO.data() + static_cast<Eigen::Index>(oc) * P;
            for (Eigen::Index p = 0; p < P; ++p) acc += row[p];
            grad[bb.offset + oc] += acc;
        }

        // Gradient w.r.t. the stage input.
        ws.dtensor.resize(cp.in_c, cp.in_h, cp.in_w);
        ws.dtensor.zero();
        ws.dpatches.noalias() = dO.transpose() * W;
        detail::col2im_add(ws.dpatches, cp, kh, kw, ws.dtensor);
        if (cp.residual) detail::add_skip_backward(dact, ws.dtensor);

        if (cp.up_h != 1 || cp.up_w != 1) {
            const Tensor3<S>& prev = (s == 0) ? seed_tensor : t.dec_act[s - 1];
            dact.resize(prev.c, prev.h, prev.w);
            dact.zero();
            detail::upsample_nn_backward(ws.dtensor, cp.up_h, cp.up_w, dact);
        } else {
            std::swap(dact, ws.dtensor);
        }
    }

    // Decoder input affine.
    VecX<S> ddec_in = Eigen::Map<const VecX<S>>(dact.data(), plan.feat_dim);
    for (int i = 0; i < plan.feat_dim; ++i)
        if (t.dec_in_act[i] <= S(0)) ddec_in[i] = S(0);
    {
        const auto& wb = params.dec_in_w();
        const auto& bb = params.dec_in_b();
        Eigen::Map<MatXR<S>> dW(grad.data() + wb.offset, plan.feat_dim, L);
        dW.noalias() += ddec_in * t.code.z.transpose();
        Eigen::Map<VecX<S>> db(grad.data() + bb.offset, plan.feat_dim);
        db.noalias() += ddec_in;
        Eigen::Map<const MatXR<S>> W(params.ptr(wb), plan.feat_dim, L);
        dz.noalias() += W.transpose() * ddec_in;
    }

    // Reparameterization + KL.
    const VecX<S> sigma = (t.code.logvar.array() * S(0.5)).exp().matrix();
    VecX<S> dmu = dz;
    VecX<S> dlogvar = S(0.5) * dz.cwiseProduct(t.code.eps).cwiseProduct(sigma);
    const S bw = weight * static_cast<S>(lw.beta);
    dmu += bw * t.code.mu;
    dlogvar.array() += bw * S(0.5) * (t.code.logvar.array().exp() - S(1));
    // Chain through the logvar clamp: no gradient where it saturates.
    for (int i = 0; i < L; ++i)
        if (std::abs(t.logvar_pre[i]) >= S(kLogvarClamp)) dlogvar[i] = S(0);

    // Latent projections.
    VecX<S> dflat = VecX<S>::Zero(plan.feat_dim);
    {
        const auto& wb = params.mu_w();
        const auto& bb = params.mu_b();
        Eigen::Map<MatXR<S>> dW(grad.data() + wb.offset, L, plan.feat_dim);
        dW.noalias() += dmu * t.flat.transpose();
        Eigen::Map<VecX<S>> db(grad.data() + bb.offset, L);
        db.noalias() += dmu;
        Eigen::Map<const MatXR<S>> W(params.ptr(wb), L, plan.feat_dim);
        dflat.noalias() += W.transpose() * dmu;
    }
    {
        const auto& wb = params.logvar_w();
        const auto& bb = params.logvar_b();
        Eigen::Map<MatXR<S>> dW(grad.data() + wb.offset, L, plan.feat_dim);
        dW.noalias() += dlogvar * t.flat.transpose();
        Eigen::Map<VecX<S>> db(grad.data() + bb.offset, L);
        db.noalias() += dlogvar;
        Eigen::Map<const MatXR<S>> W(params.ptr(wb), L, plan.feat_dim);
        dflat.noalias() += W.transpose() * dlogvar;
    }

    // Encoder, last layer to first.
    Tensor3<S> denc(plan.feat_c, plan.feat_h, plan.feat_w);
    std::copy(dflat.data(), dflat.data() + plan.feat_dim, denc.data());
    for (int i = 6; i >= 0; --i) {
        const ConvPlan& cp = plan.enc[i];
        if (!t.drop_mask[i].v.empty())
            for (size_t k = 0; k < denc.v.size(); ++k) denc.v[k] *= t.drop_mask[i].v[k];
        const Tensor3<S>& act = t.enc_act[i];
        for (size_t k = 0; k < denc.v.size(); ++k)
            if (act.v[k] <= S(0)) denc.v[k] = S(0);

        const MatX<S>& patches = t.enc_patches[i];
        const int K = cp.in_c * kh * kw;
        const Eigen::Index P = static_cast<Eigen::Index>(cp.out_h) * cp.out_w;

        const auto& wb = params.enc_w(i);
        const auto& bb = params.enc_b(i);
        Eigen::Map<const MatXR<S>> W(params.ptr(wb), cp.out_c, K);
        Eigen::Map<const MatXR<S>> dO(denc.data(), cp.out_c, P);
        Eigen::Map<MatXR<S>> dW(grad.data() + wb.offset, cp.out_c, K);
        dW.noalias() += dO * patches;
        // Fixed-order channel sums; Eigen's redux would peel by alignment.
        for (int oc = 0; oc < cp.out_c; ++oc) {
            S acc = 0;
            const S* row = dO.data() + static_cast<Eigen::Index>(oc) * P;
            for (Eigen::Index p = 0; p < P; ++p) acc += row[p];
            grad[bb.offset + oc] += acc;
        }

        if (i > 0) {
            ws.dtensor.resize(cp.in_c, cp.in_h, cp.in_w);
            ws.dtensor.zero();
            ws.dpatches.noalias() = dO.transpose() * W;
            detail::col2im_add(ws.dpatches, cp, kh, kw, ws.dtensor);
            if (cp.residual) detail::add_skip_backward(denc, ws.dtensor);
            std::swap(denc, ws.dtensor);
        }
    }

    return lb;
}

} // namespace detail

template <class S>
struct BackwardResult {
    AlignedVec<S> grad; // congruent to VaeParams::flat
    LossBreakdown<S> loss; // batch means
};

/// Exact analytic gradient of the batch-mean weighted loss. With
/// mask == head_only, non-head blocks are exactly zero. Deterministic for a
/// fixed thread count: shards accumulate independently and reduce in order.
template <class S>
BackwardResult<S> backward(const VaeParams<S>& params, std::span<const VaeSample<S>> batch,
                           const LossWeights& weights, Phase phase, GradMask mask,
                           int n_threads = 1) {
    if (batch.empty()) throw ParamError("backward: empty batch");
    const S weight = S(1) / static_cast<S>(batch.size());

    const int T = std::max(1, std::min<int>(n_threads, static_cast<int>(batch.size())));
    std::vector<AlignedVec<S>> grads(T, AlignedVec<S>(params.flat.size(), S(0)));
    std::vector<LossBreakdown<S>> losses(T);
    std::vector<std::string> errors(T);

    auto run_shard = [&](int t) {
        const size_t lo = batch.size() * t / T;
        const size_t hi = batch.size() * (t + 1) / T;
        ForwardTrace<S> trace;
        Workspace<S> ws;
        try {
            for (size_t i = lo; i < hi; ++i) {
                const auto lb = detail::backward_sample(params, batch[i], weights, phase, mask,
                                                        weight, grads[t], trace, ws);
                losses[t].total += lb.total;
                losses[t].mse += lb.mse;
                losses[t].kl += lb.kl;
                losses[t].bce += lb.bce;
            }
        } catch (const std::exception& e) {
            errors[t] = e.what();
        }
    };

    if (T == 1) {
        run_shard(0);
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < T; ++t) threads.emplace_back(run_shard, t);
        for (auto& th : threads) th.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw NumericError(e);

    BackwardResult<S> out;
    out.grad = std::move(grads[0]);
    out.loss = losses[0];
    for (int t = 1; t < T; ++t) {
        for (size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += grads[t][i];
        out.loss.total += losses[t].total;
        out.loss.mse += losses[t].mse;
        out.loss.kl += losses[t].kl;
        out.loss.bce += losses[t].bce;
    }
    out.loss.total *= weight;
    out.loss.mse *= weight;
    out.loss.kl *= weight;
    out.loss.bce *= weight;
    return out;
}

/// Batch-mean loss only (no gradients); used for validation and by the
/// finite-difference oracle.
template <class S>
LossBreakdown<S> batch_loss(const VaeParams<S>& params, std::span<const VaeSample<S>> batch,
                            const LossWeights& weights, Phase phase, Mode mode) {
    LossBreakdown<S> acc;
    ForwardTrace<S> t;
    Workspace<S> ws;
    for (const auto& sample : batch) {
        forward_trace(params, sample, mode, t, ws);
        const Tensor3<S>& recon = t.dec_act.back();
        std::optional<S> bce;
        if (sample.label.has_value()) bce = bce_loss(t.logit, *sample.label);
        const auto lb = combine_loss(
            mse_loss<S>({sample.x.data(), sample.x.size()}, {recon.data(), recon.size()}),
            kl_loss<S>({t.code.mu.data(), static_cast<size_t>(params.arch.latent_dim)},
                       {t.code.logvar.data(), static_cast<size_t>(params.arch.latent_dim)}),
            bce, weights, phase);
        acc.total += lb.total;
        acc.mse += lb.mse;
        acc.kl += lb.kl;
        acc.bce += lb.bce;
    }
    const S inv = S(1) / static_cast<S>(batch.size());
    acc.total *= inv;
    acc.mse *= inv;
    acc.kl *= inv;
    acc.bce *= inv;
    return acc;
}

/// True for parameter indices trainable under the mask (head-only freezes
/// everything but the head blocks).
template <class S>
bool is_trainable_index(const VaeParams<S>& params, size_t index, GradMask mask) {
    if (mask == GradMask::all) return true;
    const auto& hw = params.block("head.w");
    const auto& hb = params.block("head.b");
    return (index >= hw.offset && index < hw.offset + hw.size) ||
           (index >= hb.offset && index < hb.offset + hb.size);
}

} // namespace ecgvae

#endif
