#include "ecgvae/eval_stats.hpp"

#include <algorithm>
#include <cmath>

#include "ecgvae/trainer.hpp"

namespace ecgvae {

LatentStats latent_statistics(const VaeParams<float>& params, std::span<const MeanBeat> beats) {
    if (beats.empty()) throw ParamError("latent_statistics: no beats");
    const int L = params.arch.latent_dim;
    VecX<double> sum = VecX<double>::Zero(L), sumsq = VecX<double>::Zero(L);
    ForwardTrace<float> trace;
    Workspace<float> ws;
    for (const auto& beat : beats) {
        VaeSample<float> s = make_sample(beat, params.arch, params.input_scale);
        forward_trace(params, s, Mode::eval, trace, ws);
        for (int i = 0; i < L; ++i) {
            sum[i] += trace.code.mu[i];
            sumsq[i] += static_cast<double>(trace.code.mu[i]) * trace.code.mu[i];
        }
    }
    const double n = static_cast<double>(beats.size());
    LatentStats stats;
    stats.mu.resize(L);
    stats.sigma.resize(L);
    for (int i = 0; i < L; ++i) {
        const double m = sum[i] / n;
        const double var = std::max(0.0, sumsq[i] / n - m * m);
        stats.mu[i] = static_cast<float>(m);
        stats.sigma[i] = static_cast<float>(std::sqrt(var));
    }
    return stats;
}

std::pair<double, double> reconstruction_metrics(std::span<const float> x,
                                                 std::span<const float> xhat) {
    if (x.size() != xhat.size()) throw ParamError("reconstruction_metrics: size mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(xhat[i]) - x[i];
        mse += d * d;
    }
    mse /= static_cast<double>(x.size());
    const double corr = pearson(x.data(), xhat.data(), static_cast<int>(x.size()));
    return {mse, corr};
}

RocResult auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ParamError("auroc: size mismatch");
    RocResult r;
    for (int y : labels) (y == 1 ? r.n_pos : r.n_neg) += 1;
    if (r.n_pos == 0 || r.n_neg == 0)
        throw DataError("auroc requires both classes in the labels");

    // Sort ascending and walk tie groups, counting 2*wins + ties in integers.
    std::vector<int> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });

    unsigned long long twice_wins_plus_ties = 0;
    long long negs_below = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        long long gp = 0, gn = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? gp : gn) += 1;
            ++j;
        }
        twice_wins_plus_ties += static_cast<unsigned long long>(gp) * (2 * negs_below + gn);
        negs_below += gn;
        i = j;
    }
    const double a = static_cast<double>(twice_wins_plus_ties) /
                     (2.0 * static_cast<double>(r.n_pos) * static_cast<double>(r.n_neg));
    r.auroc = a;

    const double q1 = a / (2.0 - a);
    const double q2 = 2.0 * a * a / (1.0 + a);
    const double se2 = (a * (1.0 - a) + (r.n_pos - 1) * (q1 - a * a) +
                        (r.n_neg - 1) * (q2 - a * a)) /
                       (static_cast<double>(r.n_pos) * r.n_neg);
    r.se = se2 > 0.0 ? std::sqrt(se2) : 0.0;
    r.ci_lo = std::max(0.0, a - 1.96 * r.se);
    r.ci_hi = std::min(1.0, a + 1.96 * r.se);
    return r;
}

namespace {

double pearson_d(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    if (n < 2) return 0.0;
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < n; ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

} // namespace

std::pair<double, double> auroc_paired_test(std::span<const double> scores_a,
                                            std::span<const double> scores_b,
                                            std::span<const int> labels) {
    if (scores_a.size() != scores_b.size() || scores_a.size() != labels.size())
        throw ParamError("auroc_paired_test: size mismatch");
    const RocResult ra = auroc(scores_a, labels);
    const RocResult rb = auroc(scores_b, labels);

    std::vector<double> ap, an, bp, bn;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            ap.push_back(scores_a[i]);
            bp.push_back(scores_b[i]);
        } else {
            an.push_back(scores_a[i]);
            bn.push_back(scores_b[i]);
        }
    }
    const double r_avg = 0.5 * (pearson_d(ap, bp) + pearson_d(an, bn));

    const double var = ra.se * ra.se + rb.se * rb.se - 2.0 * r_avg * ra.se * rb.se;
    const double denom = var > 0.0 ? std::sqrt(var) : 0.0;
    double z = 0.0;
    if (denom > 1e-12) z = (ra.auroc - rb.auroc) / denom;
    const double p = denom > 1e-12 ? std::erfc(std::abs(z) / std::sqrt(2.0)) : 1.0;
    return {z, p};
}

double macro_f1(std::span<const double> scores, std::span<const int> labels, double threshold) {
    if (scores.size() != labels.size()) throw ParamError("macro_f1: size mismatch");
    // Confusion counts with "predicted positive" = score >= threshold.
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] == 1;
        if (pred && truth)
            ++tp;
        else if (pred && !truth)
            ++fp;
        else if (!pred && truth)
            ++fn;
        else
            ++tn;
    }
    auto f1_of = [](long long tp_c, long long fp_c, long long fn_c) {
        const long long pred = tp_c + fp_c, truth = tp_c + fn_c;
        if (pred == 0 && truth == 0) return 1.0;
        if (pred == 0 || truth == 0) return 0.0;
        const long long denom = 2 * tp_c + fp_c + fn_c;
        return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp_c) / static_cast<double>(denom);
    };
    const double f1_pos = f1_of(tp, fp, fn);
    const double f1_neg = f1_of(tn, fn, fp); // class-0 view: fp/fn swap roles
    return 0.5 * (f1_pos + f1_neg);
}

TraversalGrid factor_traversal(const VaeParams<float>& params, int feature_index,
                               const LatentStats& stats, int n_steps) {
    const int L = params.arch.latent_dim;
    if (feature_index < 0 || feature_index >= L)
        throw ParamError("factor_traversal: feature index out of range");
    if (n_steps < 1) throw ParamError("factor_traversal: n_steps must be >= 1");
    if (stats.mu.size() != L || stats.sigma.size() != L)
        throw ParamError("factor_traversal: latent stats do not match latent_dim");

    TraversalGrid grid;
    grid.feature_index = feature_index;
    grid.mu = stats.mu[feature_index];
    grid.sigma = stats.sigma[feature_index];

    // Symmetric by construction: offsets are negated pairs around mu_f.
    grid.values.assign(n_steps, grid.mu);
    for (int k = 0; k < n_steps / 2; ++k) {
        const double off =
            3.0 * grid.sigma * (n_steps - 1 - 2 * k) / static_cast<double>(n_steps - 1);
        grid.values[k] = grid.mu - off;
        grid.values[n_steps - 1 - k] = grid.mu + off;
    }

    const float inv_scale = static_cast<float>(1.0 / params.input_scale);
    for (double value : grid.values) {
        VecX<float> z = stats.mu;
        z[feature_index] = static_cast<float>(value);
        Tensor3<float> out = decode(params, z);
        std::vector<float> wave(out.v.size());
        for (size_t i = 0; i < wave.size(); ++i) wave[i] = out.v[i] * inv_scale;
        grid.decoded.push_back(std::move(wave));
    }
    return grid;
}

} // namespace ecgvae
