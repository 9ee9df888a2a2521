// Test-only reference implementations, kept independent of the library code
// paths they are used to check.

#ifndef ECGVAE_TESTS_ORACLES_HPP
#define ECGVAE_TESTS_ORACLES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace oracles {

/// O(n_pos * n_neg) pairwise AUROC with ties counting 1/2, accumulated in
/// integers exactly like a rank statistic should be.
inline double brute_force_auroc(std::span<const double> scores, std::span<const int> labels) {
    unsigned long long twice = 0;
    long long n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++n_pos;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] == 1) continue;
            if (scores[i] > scores[j])
                twice += 2;
            else if (scores[i] == scores[j])
                twice += 1;
        }
    }
    for (int y : labels) n_neg += (y != 1);
    return static_cast<double>(twice) / (2.0 * static_cast<double>(n_pos) * n_neg);
}

/// Bootstrap standard error of the AUROC (resampling records with
/// replacement; degenerate single-class resamples are redrawn).
inline double bootstrap_auroc_se(std::span<const double> scores, std::span<const int> labels,
                                 int n_boot, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick(0, scores.size() - 1);
    std::vector<double> aucs;
    std::vector<double> s(scores.size());
    std::vector<int> y(scores.size());
    while (static_cast<int>(aucs.size()) < n_boot) {
        int pos = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            const size_t k = pick(rng);
            s[i] = scores[k];
            y[i] = labels[k];
            pos += y[i];
        }
        if (pos == 0 || pos == static_cast<int>(scores.size())) continue;
        aucs.push_back(brute_force_auroc(s, y));
    }
    double mean = 0;
    for (double a : aucs) mean += a;
    mean /= aucs.size();
    double var = 0;
    for (double a : aucs) var += (a - mean) * (a - mean);
    return std::sqrt(var / (aucs.size() - 1));
}

/// Elastic-net logistic regression by cyclic coordinate descent with
/// one-dimensional Newton steps and soft thresholding, run to high precision.
/// Operates on already-standardized features; objective matches
/// mean BCE + l1*||w||_1 + l2*||w||_2^2/2 with an unpenalized intercept.
struct CdResult {
    Eigen::VectorXd coef;
    double intercept = 0.0;
    double objective = 0.0;
};

inline double cd_objective(const Eigen::MatrixXd& X, const std::vector<int>& y,
                           const Eigen::VectorXd& w, double b, double l1, double l2) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double s = X.row(i).dot(w) + b;
        acc += std::log1p(std::exp(-std::abs(s))) + std::max(s, 0.0) - s * y[i];
    }
    return acc / static_cast<double>(X.rows()) + l1 * w.lpNorm<1>() + 0.5 * l2 * w.squaredNorm();
}

inline CdResult coordinate_descent_logreg(const Eigen::MatrixXd& X, const std::vector<int>& y,
                                          double l1, double l2, int max_pass = 20000,
                                          double tol = 1e-13) {
    const Eigen::Index n = X.rows(), d = X.cols();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    double b = 0.0;
    double prev = cd_objective(X, y, w, b, l1, l2);
    Eigen::VectorXd scores = Eigen::VectorXd::Zero(n);
    for (int pass = 0; pass < max_pass; ++pass) {
        for (Eigen::Index j = -1; j < d; ++j) {
            // j == -1 updates the intercept.
            double g = 0.0, h = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double p = 1.0 / (1.0 + std::exp(-(scores[i] + b)));
                const double xij = j < 0 ? 1.0 : X(i, j);
                g += xij * (p - y[i]);
                h += xij * xij * p * (1.0 - p);
            }
            g /= static_cast<double>(n);
            h = h / static_cast<double>(n) + 1e-12;
            if (j < 0) {
                b -= g / h;
            } else {
                g += l2 * w[j];
                h += l2;
                const double w_new = [&] {
                    const double u = w[j] - g / h;
                    const double t = l1 / h;
                    if (u > t) return u - t;
                    if (u < -t) return u + t;
                    return 0.0;
                }();
                if (w_new != w[j]) {
                    scores += (w_new - w[j]) * X.col(j);
                    w[j] = w_new;
                }
            }
        }
        const double obj = cd_objective(X, y, w, b, l1, l2);
        if (prev - obj < tol && pass > 10) break;
        prev = obj;
    }
    return {w, b, cd_objective(X, y, w, b, l1, l2)};
}

} // namespace oracles

#endif
