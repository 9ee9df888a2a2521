#ifndef ECGVAE_BASELINES_HPP
#define ECGVAE_BASELINES_HPP

#include <Eigen/Dense>
#include <vector>

#include "ecgvae/common.hpp"

namespace ecgvae {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaModel {
    VectorXd mean;               // d
    MatrixXd components;         // k x d, orthonormal rows by decreasing variance
    VectorXd explained_variance; // k, non-increasing
};

/// PCA of the n x d data matrix via SVD of the centered matrix. Components
/// carry a deterministic sign: the largest-magnitude entry of each row is
/// positive. Requires n > k >= 1.
PcaModel pca_fit(const MatrixXd& data, int k);

VectorXd pca_transform(const PcaModel& model, const VectorXd& x);
VectorXd pca_inverse(const PcaModel& model, const VectorXd& code);

/// Mean reconstruction MSE (per entry) of rows of `data` through the model.
double pca_reconstruction_mse(const PcaModel& model, const MatrixXd& data);

// ---------------------------------------------------------------------------
// Elastic-net logistic regression
// ---------------------------------------------------------------------------

struct LogRegModel {
    VectorXd coef; // on standardized features
    double intercept = 0.0;
    double l1_weight = 0.0, l2_weight = 0.0;
    VectorXd feat_mean, feat_std; // training standardization
    double objective = 0.0;       // final penalized objective
    int iterations = 0;
};

/// Objective: mean BCE + l1*||w||_1 + l2*||w||_2^2 / 2, intercept unpenalized,
/// on features standardized by training statistics. Solved by proximal
/// gradient with backtracking line search; the objective never increases.
LogRegModel logreg_fit(const MatrixXd& features, const std::vector<int>& labels, double l1_weight,
                       double l2_weight, int max_iter = 2000, double tol = 1e-10);

VectorXd logreg_predict_proba(const LogRegModel& model, const MatrixXd& features);

/// The penalized objective at (coef, intercept) on already-standardized
/// features; exposed so independent optimizers can be compared.
double logreg_objective(const MatrixXd& standardized, const std::vector<int>& labels,
                        const VectorXd& coef, double intercept, double l1_weight,
                        double l2_weight);

/// Standardize columns by the model's training statistics.
MatrixXd logreg_standardize(const LogRegModel& model, const MatrixXd& features);

/// Train-on-train, score-on-test logistic regression over (sex, age) columns.
VectorXd sex_age_baseline(const MatrixXd& train_sex_age, const std::vector<int>& train_labels,
                          const MatrixXd& test_sex_age, double l1_weight = 1e-3,
                          double l2_weight = 1e-3);

} // namespace ecgvae

#endif
