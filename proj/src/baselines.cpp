#include "ecgvae/baselines.hpp"

#include <cmath>

namespace ecgvae {

PcaModel pca_fit(const MatrixXd& data, int k) {
    const Eigen::Index n = data.rows(), d = data.cols();
    if (k < 1) throw ParamError("k must be >= 1");
    if (k >= n) throw ParamError("pca_fit requires more samples than components (k < n)");
    if (k > d) throw ParamError("k must not exceed the feature dimension");

    PcaModel model;
    model.mean = data.colwise().mean();
    MatrixXd centered = data.rowwise() - model.mean.transpose();

    Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
    model.components = svd.matrixV().leftCols(k).transpose();
    model.explained_variance =
        svd.singularValues().head(k).array().square() / static_cast<double>(n - 1);

    // Deterministic sign: largest-magnitude entry of each component positive.
    for (int i = 0; i < k; ++i) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double a = std::abs(model.components(i, j));
            if (a > best) {
                best = a;
                arg = j;
            }
        }
        if (model.components(i, arg) < 0.0) model.components.row(i) = -model.components.row(i);
    }
    return model;
}

VectorXd pca_transform(const PcaModel& model, const VectorXd& x) {
    return model.components * (x - model.mean);
}

VectorXd pca_inverse(const PcaModel& model, const VectorXd& code) {
    return model.mean + model.components.transpose() * code;
}

double pca_reconstruction_mse(const PcaModel& model, const MatrixXd& data) {
    MatrixXd centered = data.rowwise() - model.mean.transpose();
    MatrixXd codes = centered * model.components.transpose(); // n x k
    MatrixXd resid = centered - codes * model.components;
    return resid.squaredNorm() / static_cast<double>(resid.size());
}

// ---------------------------------------------------------------------------

namespace {

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double mean_bce(const VectorXd& scores, const std::vector<int>& labels) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        const double s = scores[i];
        acc += std::log1p(std::exp(-std::abs(s))) + std::max(s, 0.0) - s * labels[i];
    }
    return acc / static_cast<double>(scores.size());
}

inline double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

} // namespace

double logreg_objective(const MatrixXd& standardized, const std::vector<int>& labels,
                        const VectorXd& coef, double intercept, double l1_weight,
                        double l2_weight) {
    VectorXd scores = (standardized * coef).array() + intercept;
    return mean_bce(scores, labels) + l1_weight * coef.lpNorm<1>() +
           0.5 * l2_weight * coef.squaredNorm();
}

LogRegModel logreg_fit(const MatrixXd& features, const std::vector<int>& labels, double l1_weight,
                       double l2_weight, int max_iter, double tol) {
    const Eigen::Index n = features.rows(), d = features.cols();
    if (d < 1) throw ParamError("logreg_fit requires at least one feature");
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw ParamError("labels length must match feature rows");
    if (l1_weight < 0.0 || l2_weight < 0.0) throw ParamError("penalty weights must be >= 0");
    int counts[2] = {0, 0};
    for (int y : labels) {
        if (y != 0 && y != 1) throw ParamError("labels must be 0 or 1");
        ++counts[y];
    }
    if (counts[0] == 0 || counts[1] == 0)
        throw DataError("logreg_fit requires both classes present");

    LogRegModel model;
    model.l1_weight = l1_weight;
    model.l2_weight = l2_weight;
    model.feat_mean = features.colwise().mean();
    model.feat_std.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double var = (features.col(j).array() - model.feat_mean[j]).square().mean();
        model.feat_std[j] = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    }
    MatrixXd X = features;
    X.rowwise() -= model.feat_mean.transpose();
    X.array().rowwise() /= model.feat_std.transpose().array();

    VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[i];

    VectorXd w = VectorXd::Zero(d);
    double b = 0.0;
    double step = 1.0;
    double obj = logreg_objective(X, labels, w, b, l1_weight, l2_weight);

    int it = 0;
    for (; it < max_iter; ++it) {
        VectorXd scores = (X * w).array() + b;
        VectorXd p = scores.unaryExpr([](double s) { return sigmoid(s); });
        VectorXd resid = p - y;
        VectorXd gw = X.transpose() * resid / static_cast<double>(n) + l2_weight * w;
        const double gb = resid.mean();
        const double smooth = mean_bce(scores, labels) + 0.5 * l2_weight * w.squaredNorm();

        // Backtracking proximal step.
        VectorXd w_new;
        double b_new = b, obj_new = obj;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            w_new = (w - step * gw).unaryExpr([&](double x) { return soft_threshold(x, step * l1_weight); });
            b_new = b - step * gb;
            VectorXd dw = w_new - w;
            const double db = b_new - b;
            VectorXd s_new = (X * w_new).array() + b_new;
            const double smooth_new = mean_bce(s_new, labels) + 0.5 * l2_weight * w_new.squaredNorm();
            const double quad = smooth + gw.dot(dw) + gb * db +
                                (dw.squaredNorm() + db * db) / (2.0 * step);
            if (smooth_new <= quad + 1e-15) {
                obj_new = smooth_new + l1_weight * w_new.lpNorm<1>();
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        // Guard the monotonicity contract against round-off.
        if (obj_new > obj + 1e-15) {
            step *= 0.5;
            continue;
        }
        const double decrease = obj - obj_new;
        w = w_new;
        b = b_new;
        obj = obj_new;
        step = std::min(step * 1.25, 1e4);
        if (decrease < tol) break;
    }

    model.coef = w;
    model.intercept = b;
    model.objective = obj;
    model.iterations = it;
    return model;
}

MatrixXd logreg_standardize(const LogRegModel& model, const MatrixXd& features) {
    MatrixXd X = features;
    X.rowwise() -= model.feat_mean.transpose();
    X.array().rowwise() /= model.feat_std.transpose().array();
    return X;
}

VectorXd logreg_predict_proba(const LogRegModel& model, const MatrixXd& features) {
    MatrixXd X = logreg_standardize(model, features);
    VectorXd scores = (X * model.coef).array() + model.intercept;
    return scores.unaryExpr([](double s) { return sigmoid(s); });
}

VectorXd sex_age_baseline(const MatrixXd& train_sex_age, const std::vector<int>& train_labels,
                          const MatrixXd& test_sex_age, double l1_weight, double l2_weight) {
    if (train_sex_age.cols() != 2 || test_sex_age.cols() != 2)
        throw ParamError("sex_age_baseline expects exactly two feature columns");
    const auto model = logreg_fit(train_sex_age, train_labels, l1_weight, l2_weight);
    return logreg_predict_proba(model, test_sex_age);
}

} // namespace ecgvae
