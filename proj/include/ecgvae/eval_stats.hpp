#ifndef ECGVAE_EVAL_STATS_HPP
#define ECGVAE_EVAL_STATS_HPP

#include <span>
#include <utility>
#include <vector>

#include "ecgvae/signal_prep.hpp"
#include "ecgvae/vae.hpp"

namespace ecgvae {

struct RocResult {
    double auroc = 0.0;
    double se = 0.0;      // Hanley-McNeil standard error
    double ci_lo = 0.0, ci_hi = 0.0; // 95% CI, clipped to [0, 1]
    int n_pos = 0, n_neg = 0;
};

/// (mse, Pearson correlation) between two flattened waveforms.
std::pair<double, double> reconstruction_metrics(std::span<const float> x,
                                                 std::span<const float> xhat);

/// AUROC via the Mann-Whitney statistic (ties count 1/2), computed with
/// integer pair counting so it matches exhaustive enumeration exactly.
/// SE via Hanley-McNeil. Throws DataError when only one class is present.
RocResult auroc(std::span<const double> scores, std::span<const int> labels);

/// Hanley-McNeil correlated-AUROC z test between two score vectors on the
/// same records. The correlation enters as the mean of the within-class
/// Pearson correlations of the scores (identity-mapped approximation of the
/// published table). Returns (z, two-sided p).
std::pair<double, double> auroc_paired_test(std::span<const double> scores_a,
                                            std::span<const double> scores_b,
                                            std::span<const int> labels);

/// Unweighted mean of the two per-class F1 scores at the given probability
/// threshold. A class with no predicted and no true members scores 1; with
/// members on one side only it scores 0.
double macro_f1(std::span<const double> scores, std::span<const int> labels,
                double threshold = 0.5);

/// Per-feature mean/std of eval-mode latent encodings.
struct LatentStats {
    VecX<float> mu;    // per-feature mean of encoded mu
    VecX<float> sigma; // per-feature std (population)
};

/// Eval-mode latent statistics over a set of mean beats (typically the
/// training fold).
LatentStats latent_statistics(const VaeParams<float>& params, std::span<const MeanBeat> beats);

struct TraversalGrid {
    int feature_index = 0;
    double mu = 0.0, sigma = 0.0;
    std::vector<double> values;               // swept latent values
    std::vector<std::vector<float>> decoded;  // per value, leads*samples in mV
};

/// Sweep feature f over mu_f +/- 3 sigma_f (n_steps values, symmetric around
/// mu_f by construction) with all other features pinned at their means.
/// Decoded waveforms are converted back to mV via params.input_scale.
TraversalGrid factor_traversal(const VaeParams<float>& params, int feature_index,
                               const LatentStats& stats, int n_steps = 7);

} // namespace ecgvae

#endif
