#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ecgvae/vae.hpp"
#include "grad_check.hpp"

using namespace ecgvae;

namespace {

template <class S>
VaeSample<S> random_sample(const VaeArchitecture& arch, std::uint64_t seed,
                           std::optional<int> label) {
    Rng rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    VaeSample<S> s;
    s.x.resize(1, arch.input_leads, arch.input_samples);
    for (auto& v : s.x.v) v = static_cast<S>(n01(rng));
    s.rr_mean_ms = static_cast<S>(800 + 50 * n01(rng));
    s.rr_std_ms = static_cast<S>(40 + 5 * n01(rng));
    s.label = label;
    s.noise_seed = seed * 31 + 7;
    return s;
}

} // namespace

TEST_CASE("mse_loss examples") {
    std::vector<double> x = {0.0, 0.0}, xh = {1.0, 3.0};
    CHECK(mse_loss<double>(x, x) == 0.0);
    CHECK(mse_loss<double>(x, xh) == doctest::Approx(5.0));
    std::vector<double> a = {1.0, 2.0, 3.0}, b = {2.0, 3.0, 4.0};
    CHECK(mse_loss<double>(a, b) == doctest::Approx(1.0));
}

TEST_CASE("kl_loss examples and positivity") {
    std::vector<double> z0 = {0.0}, z1 = {1.0}, l0 = {0.0};
    CHECK(kl_loss<double>(z0, l0) == 0.0);
    CHECK(kl_loss<double>(z1, l0) == doctest::Approx(0.5));
    std::vector<double> lv = {std::log(4.0)};
    CHECK(kl_loss<double>(z0, lv) == doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))));

    Rng rng(3);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> mu(5), logvar(5);
        for (auto& v : mu) v = 2.0 * n01(rng);
        for (auto& v : logvar) v = 1.5 * n01(rng);
        CHECK(kl_loss<double>(mu, logvar) >= 0.0);
    }
    // Zero only at (0, 0).
    std::vector<double> eps_mu = {1e-3}, zero = {0.0};
    CHECK(kl_loss<double>(eps_mu, zero) > 0.0);
}

TEST_CASE("bce_loss examples and stability") {
    CHECK(bce_loss<double>(0.0, 0) == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss<double>(0.0, 1) == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss<double>(50.0, 1) <= 1e-20);
    CHECK(bce_loss<double>(1.0, 1) == doctest::Approx(std::log(1.0 + std::exp(-1.0))));
    for (double logit : {1e6, -1e6, 3e5}) {
        CHECK(std::isfinite(bce_loss<double>(logit, 0)));
        CHECK(std::isfinite(bce_loss<double>(logit, 1)));
        CHECK(std::isfinite(bce_loss<float>(static_cast<float>(logit), 1)));
    }
}

TEST_CASE("total_loss weighting and phase behaviour") {
    LossWeights w{0.0, 0.0};
    auto lb = combine_loss<double>(2.0, 0.5, 0.1, w, Phase::finetune_full);
    CHECK(lb.total == doctest::Approx(2.0));

    w = {4.0, 500.0};
    lb = combine_loss<double>(2.0, 0.5, 0.1, w, Phase::finetune_full);
    CHECK(lb.total == doctest::Approx(54.0));

    // Pretraining excludes the BCE term no matter the gamma.
    lb = combine_loss<double>(2.0, 0.5, 0.1, w, Phase::pretrain);
    CHECK(lb.total == doctest::Approx(4.0));
    CHECK(lb.bce == 0.0);

    // Missing label: BCE contributes nothing.
    lb = combine_loss<double>(2.0, 0.5, std::nullopt, w, Phase::finetune_full);
    CHECK(lb.total == doctest::Approx(4.0));
}

TEST_CASE("encode: eval mode is deterministic with z == mu") {
    auto arch = reduced_architecture();
    auto params = init_params<double>(arch, 5);
    auto s = random_sample<double>(arch, 11, std::nullopt);
    auto code = encode(params, s.x, Mode::eval);
    CHECK(code.z == code.mu);
    CHECK(code.eps.isZero());
    auto code2 = encode(params, s.x, Mode::eval);
    CHECK(code.mu == code2.mu);
}

TEST_CASE("encode: reparameterization arithmetic") {
    auto arch = reduced_architecture();
    auto params = init_params<double>(arch, 5);
    auto s = random_sample<double>(arch, 13, std::nullopt);

    ForwardTrace<double> t;
    Workspace<double> ws;
    forward_trace(params, s, Mode::train, t, ws);
    for (int i = 0; i < arch.latent_dim; ++i)
        CHECK(t.code.z[i] ==
              doctest::Approx(t.code.mu[i] + std::exp(0.5 * t.code.logvar[i]) * t.code.eps[i]));

    // logvar = 0, eps = 1 => z = mu + 1. Force via zeroed projection weights.
    auto p2 = params;
    const auto& lw = p2.logvar_w();
    const auto& lb = p2.logvar_b();
    std::fill(p2.flat.begin() + lw.offset, p2.flat.begin() + lw.offset + lw.size, 0.0);
    std::fill(p2.flat.begin() + lb.offset, p2.flat.begin() + lb.offset + lb.size, 0.0);
    forward_trace(p2, s, Mode::train, t, ws);
    for (int i = 0; i < arch.latent_dim; ++i)
        CHECK(t.code.z[i] == doctest::Approx(t.code.mu[i] + t.code.eps[i]));
}

TEST_CASE("encode rejects non-finite input") {
    auto arch = reduced_architecture();
    auto params = init_params<double>(arch, 5);
    Tensor3<double> x(1, arch.input_leads, arch.input_samples);
    x.v[7] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(encode(params, x, Mode::eval), NumericError);
}

TEST_CASE("decode: determinism, shape, and z = 0") {
    auto arch = reduced_architecture();
    auto params = init_params<double>(arch, 5);
    VecX<double> z = VecX<double>::Zero(arch.latent_dim);
    auto a = decode(params, z);
    auto b = decode(params, z);
    CHECK(a.v == b.v);
    CHECK(a.c == 1);
    CHECK(a.h == arch.input_leads);
    CHECK(a.w == arch.input_samples);
    for (double v : a.v) CHECK(std::isfinite(v));
    VecX<double> bad = VecX<double>::Zero(arch.latent_dim + 1);
    CHECK_THROWS_AS(decode(params, bad), ParamError);
}

TEST_CASE("shape round-trip: decode(encode(x).mu) matches the input shape") {
    auto arch = small_vae_architecture(10, 10);
    auto params = init_params<float>(arch, 2);
    Rng rng(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int t = 0; t < 3; ++t) {
        Tensor3<float> x(1, 12, 400);
        for (auto& v : x.v) v = static_cast<float>(n01(rng));
        auto code = encode(params, x, Mode::eval);
        auto rec = decode(params, code.mu);
        CHECK(rec.h == 12);
        CHECK(rec.w == 400);
    }
}

TEST_CASE("predict_logit: head structure and split-task masking") {
    auto arch = small_vae_architecture(10, 2);
    auto params = init_params<float>(arch, 3);
    const auto& hw = params.head_w();
    const auto& hb = params.head_b();

    // w = 0 => logit = b.
    std::fill(params.flat.begin() + hw.offset, params.flat.begin() + hw.offset + hw.size, 0.0f);
    params.flat[hb.offset] = 1.5f;
    VecX<float> z = VecX<float>::Random(10);
    CHECK(predict_logit(params, z, 800.0f, 40.0f) == doctest::Approx(1.5f));

    // Single active weight reads z[0].
    params.flat[hb.offset] = 0.0f;
    params.flat[hw.offset] = 1.0f;
    z.setZero();
    z[0] = 2.5f;
    CHECK(predict_logit(params, z, 0.0f, 0.0f) == doctest::Approx(2.5f));

    // Changing a latent entry past pred_dim never moves the logit.
    auto params2 = init_params<float>(arch, 9);
    VecX<float> za = VecX<float>::Random(10);
    VecX<float> zb = za;
    zb[5] += 100.0f;
    zb[9] -= 3.0f;
    CHECK(predict_logit(params2, za, 700.0f, 30.0f) ==
          predict_logit(params2, zb, 700.0f, 30.0f));
}

TEST_CASE("init_params: He statistics, zero biases, determinism") {
    auto arch = small_vae_architecture(10, 10);
    auto params = init_params<float>(arch, 42);
    auto params2 = init_params<float>(arch, 42);
    CHECK(params.flat == params2.flat);

    const size_t count = param_count(params);
    CHECK(count >= 100000);
    CHECK(count <= 1000000);

    for (const auto& b : params.manifest) {
        if (b.name.ends_with(".b")) {
            for (size_t i = 0; i < b.size; ++i) CHECK(params.flat[b.offset + i] == 0.0f);
            continue;
        }
        if (b.size < 10000) continue; // too few samples for a variance check
        int fan_in = b.shape.size() == 4 ? b.shape[1] * b.shape[2] * b.shape[3] : b.shape[1];
        double var = 0.0;
        for (size_t i = 0; i < b.size; ++i)
            var += static_cast<double>(params.flat[b.offset + i]) * params.flat[b.offset + i];
        var /= static_cast<double>(b.size);
        const double want = 2.0 / fan_in;
        CHECK(var > 0.8 * want);
        CHECK(var < 1.2 * want);
    }
}

TEST_CASE("architecture validation") {
    auto arch = small_vae_architecture(10, 10);
    arch.pred_dim = 11;
    CHECK_THROWS_AS(build_plan(arch), ParamError);
    arch = small_vae_architecture(10, 10);
    arch.channels.pop_back();
    CHECK_THROWS_AS(build_plan(arch), ParamError);
    arch = small_vae_architecture(10, 10);
    arch.dropout_rate = 1.0;
    CHECK_THROWS_AS(build_plan(arch), ParamError);
}

TEST_CASE("plan: spatial reduction 400->25 and 12->3, mirrored decoder") {
    auto plan = build_plan(small_vae_architecture(10, 10));
    CHECK(plan.feat_h == 3);
    CHECK(plan.feat_w == 25);
    CHECK(plan.feat_c == 64);
    CHECK(plan.feat_dim == 4800);
    CHECK(plan.dec.back().out_c == 1);
    CHECK(plan.dec.back().out_h == 12);
    CHECK(plan.dec.back().out_w == 400);
    CHECK_FALSE(plan.dec.back().relu); // linear output layer
    int n_residual = 0;
    for (const auto& cp : plan.enc) n_residual += cp.residual;
    CHECK(n_residual == 3);
}

// ---------------------------------------------------------------------------
// Gradient verification on the reduced architecture (double precision,
// central differences, h = 1e-4).
// ---------------------------------------------------------------------------

TEST_CASE("analytic gradients match finite differences for every phase and mask") {
    const auto result = gradcheck::check_all(/*dropout_rate=*/0.2, /*param_seed=*/123,
                                             /*batch_seed=*/1000);
    CHECK(result.checked > 800 * 3); // all-mask phases cover every parameter
    CHECK(result.frozen_nonzero == 0);
    CHECK(result.max_rel_error < 1e-3);
    // ReLU kinks inside the h = 1e-4 stencil are rare at a generic point.
    CHECK(result.refined <= 10);
}

TEST_CASE("gamma = 0 leaves the head gradient exactly zero") {
    auto arch = reduced_architecture();
    auto params = init_params<double>(arch, 7);
    std::vector<VaeSample<double>> batch = {random_sample<double>(arch, 2000, 1)};
    const auto res =
        backward<double>(params, batch, {4.0, 0.0}, Phase::finetune_full, GradMask::all, 1);
    const auto& hw = params.head_w();
    const auto& hb = params.head_b();
    for (size_t i = 0; i < hw.size; ++i) CHECK(res.grad[hw.offset + i] == 0.0);
    CHECK(res.grad[hb.offset] == 0.0);
}

TEST_CASE("backward rejects an empty batch") {
    auto params = init_params<double>(reduced_architecture(), 1);
    std::vector<VaeSample<double>> batch;
    CHECK_THROWS_AS(backward<double>(params, batch, {}, Phase::pretrain, GradMask::all, 1),
                    ParamError);
}

TEST_CASE("multithreaded backward matches single-threaded to float accumulation order") {
    auto arch = reduced_architecture();
    auto params = init_params<double>(arch, 99);
    std::vector<VaeSample<double>> batch;
    for (int i = 0; i < 6; ++i)
        batch.push_back(random_sample<double>(arch, 3000 + i, i % 2));
    const auto a = backward<double>(params, batch, {4.0, 500.0}, Phase::finetune_full,
                                    GradMask::all, 1);
    const auto b = backward<double>(params, batch, {4.0, 500.0}, Phase::finetune_full,
                                    GradMask::all, 2);
    for (size_t i = 0; i < a.grad.size(); ++i)
        CHECK(a.grad[i] == doctest::Approx(b.grad[i]).epsilon(1e-12));
}
