#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "ecgvae/baselines.hpp"
#include "ecgvae/eval_stats.hpp"
#include "oracles.hpp"

using namespace ecgvae;

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

TEST_CASE("pca: rank-1 data is explained by one component") {
    Rng rng(1);
    std::normal_distribution<double> n01(0.0, 1.0);
    VectorXd direction(6);
    for (int i = 0; i < 6; ++i) direction[i] = n01(rng);
    direction.normalize();
    MatrixXd X(40, 6);
    for (int i = 0; i < 40; ++i) X.row(i) = (2.0 * n01(rng)) * direction.transpose();
    auto model = pca_fit(X, 1);
    CHECK(pca_reconstruction_mse(model, X) == doctest::Approx(0.0).epsilon(1e-10));
    const double total_var = (X.rowwise() - X.colwise().mean()).squaredNorm() / (X.rows() - 1);
    CHECK(model.explained_variance[0] == doctest::Approx(total_var).epsilon(1e-9));
}

TEST_CASE("pca: full-rank 2-D data reconstructs exactly with k = 2") {
    Rng rng(2);
    std::normal_distribution<double> n01(0.0, 1.0);
    MatrixXd X(60, 2);
    for (int i = 0; i < 60; ++i) {
        X(i, 0) = n01(rng);
        X(i, 1) = n01(rng) + 3.0;
    }
    auto model = pca_fit(X, 2);
    CHECK(pca_reconstruction_mse(model, X) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pca matches a covariance-eigendecomposition oracle") {
    Rng rng(3);
    std::normal_distribution<double> n01(0.0, 1.0);
    const int n = 50, d = 80;
    MatrixXd X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = n01(rng) * (1.0 + j % 5) + (j % 3);

    MatrixXd centered = X.rowwise() - X.colwise().mean();
    MatrixXd cov = centered.transpose() * centered / double(n - 1);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);

    for (int k : {1, 3, 10}) {
        auto model = pca_fit(X, k);
        // Eigenvalues (descending) match explained variances.
        for (int i = 0; i < k; ++i)
            CHECK(model.explained_variance[i] ==
                  doctest::Approx(eig.eigenvalues()[d - 1 - i]).epsilon(1e-8));
        // Reconstruction MSE equals the variance left out of the top-k space.
        double tail = 0;
        for (int i = 0; i < d - k; ++i) tail += eig.eigenvalues()[i];
        tail *= double(n - 1) / n / d; // per entry, population scaling of residuals
        CHECK(pca_reconstruction_mse(model, X) == doctest::Approx(tail).epsilon(1e-8));
    }
}

TEST_CASE("pca: orthonormal components, deterministic sign, mean maps to zero") {
    Rng rng(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    MatrixXd X(30, 12);
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 12; ++j) X(i, j) = n01(rng) * (j + 1);
    auto model = pca_fit(X, 5);
    MatrixXd gram = model.components * model.components.transpose();
    CHECK((gram - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-6);
    for (int i = 0; i < 5; ++i) {
        Eigen::Index arg;
        model.components.row(i).cwiseAbs().maxCoeff(&arg);
        CHECK(model.components(i, arg) > 0.0);
    }
    for (int i = 1; i < 5; ++i)
        CHECK(model.explained_variance[i] <= model.explained_variance[i - 1] + 1e-12);

    VectorXd mean = X.colwise().mean();
    CHECK(pca_transform(model, mean).cwiseAbs().maxCoeff() < 1e-9);

    // In-span round trip.
    VectorXd in_span = mean + model.components.transpose() * VectorXd::Random(5);
    VectorXd back = pca_inverse(model, pca_transform(model, in_span));
    CHECK((back - in_span).cwiseAbs().maxCoeff() < 1e-9);

    CHECK_THROWS_AS(pca_fit(X, 30), ParamError); // k >= n
}

TEST_CASE("pca reconstruction error is non-increasing in k") {
    Rng rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    MatrixXd X(40, 25);
    for (int i = 0; i < 40; ++i)
        for (int j = 0; j < 25; ++j) X(i, j) = n01(rng) * (1.0 + (j % 7));
    double prev = 1e18;
    for (int k = 1; k <= 12; ++k) {
        const double mse = pca_reconstruction_mse(pca_fit(X, k), X);
        CHECK(mse <= prev + 1e-12);
        prev = mse;
    }
}

// ---------------------------------------------------------------------------
// Elastic-net logistic regression
// ---------------------------------------------------------------------------

namespace {

std::pair<MatrixXd, std::vector<int>> random_problem(int n, int d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    MatrixXd X(n, d);
    VectorXd w_true(d);
    for (int j = 0; j < d; ++j) w_true[j] = 2.0 * n01(rng);
    std::vector<int> y(n);
    int flips = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) X(i, j) = n01(rng);
        const double p = 1.0 / (1.0 + std::exp(-(X.row(i) * w_true)(0)));
        y[i] = std::bernoulli_distribution(p)(rng) ? 1 : 0;
        flips += y[i];
    }
    if (flips == 0) y[0] = 1;
    if (flips == n) y[0] = 0;
    return {X, y};
}

} // namespace

TEST_CASE("logreg: separable data reaches training accuracy 1") {
    MatrixXd X(20, 1);
    std::vector<int> y(20);
    for (int i = 0; i < 20; ++i) {
        X(i, 0) = i < 10 ? -2.0 + 0.1 * i : 2.0 + 0.1 * i;
        y[i] = i < 10 ? 0 : 1;
    }
    auto model = logreg_fit(X, y, 0.0, 1e-2);
    auto proba = logreg_predict_proba(model, X);
    for (int i = 0; i < 20; ++i) CHECK((proba[i] >= 0.5) == (y[i] == 1));
}

TEST_CASE("logreg: huge l1 zeroes the coefficients, intercept = base-rate logit") {
    auto [X, y] = random_problem(80, 3, 7);
    auto model = logreg_fit(X, y, 1e3, 0.0, 5000, 1e-14);
    for (int j = 0; j < 3; ++j) CHECK(model.coef[j] == 0.0);
    double rate = 0;
    for (int v : y) rate += v;
    rate /= y.size();
    CHECK(model.intercept == doctest::Approx(std::log(rate / (1.0 - rate))).epsilon(1e-6));
}

TEST_CASE("logreg objective matches a long-run coordinate-descent oracle") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const int n = 40 + static_cast<int>(seed) * 3, d = 1 + static_cast<int>(seed) % 4;
        auto [X, y] = random_problem(n, d, seed);
        const double l1 = 5e-3 * static_cast<double>(seed), l2 = 1e-3 * static_cast<double>(seed);
        auto model = logreg_fit(X, y, l1, l2, 20000, 1e-14);
        const MatrixXd Xs = logreg_standardize(model, X);
        const auto oracle = oracles::coordinate_descent_logreg(Xs, y, l1, l2);
        CHECK(model.objective == doctest::Approx(oracle.objective).epsilon(1e-6));
        CHECK(model.objective <= oracle.objective + 1e-6);
    }
}

TEST_CASE("logreg: l1 coefficients are exactly zero or clearly nonzero") {
    auto [X, y] = random_problem(60, 4, 11);
    auto model = logreg_fit(X, y, 5e-2, 1e-3);
    for (int j = 0; j < 4; ++j) {
        const double a = std::abs(model.coef[j]);
        CHECK((a == 0.0 || a > 1e-12));
    }
}

TEST_CASE("logreg: convexity - a perturbed rerun reaches the same objective") {
    auto [X, y] = random_problem(50, 3, 13);
    auto a = logreg_fit(X, y, 1e-2, 1e-2, 20000, 1e-14);
    // Second route: coordinate descent from zero on the standardized features.
    const auto b = oracles::coordinate_descent_logreg(logreg_standardize(a, X), y, 1e-2, 1e-2);
    CHECK(std::abs(a.objective - b.objective) < 1e-5);
}

TEST_CASE("logreg_predict_proba: structure") {
    MatrixXd X(4, 2);
    X << 0, 0, 1, 0, 2, 0, 3, 0;
    std::vector<int> y = {0, 0, 1, 1};
    auto model = logreg_fit(X, y, 1e-3, 1e-3);

    // Zero coefficients -> constant sigmoid(intercept).
    LogRegModel flat = model;
    flat.coef.setZero();
    auto proba = logreg_predict_proba(flat, X);
    for (int i = 1; i < 4; ++i) CHECK(proba[i] == doctest::Approx(proba[0]));

    // Monotone in a positively weighted feature.
    LogRegModel mono = model;
    mono.coef << 1.0, 0.0;
    mono.intercept = 0.0;
    auto p2 = logreg_predict_proba(mono, X);
    for (int i = 1; i < 4; ++i) CHECK(p2[i] > p2[i - 1]);

    // Hand-computed sigmoid on one standardized row.
    const double z = ((0.0 - mono.feat_mean[0]) / mono.feat_std[0]) * 1.0;
    CHECK(p2[0] == doctest::Approx(1.0 / (1.0 + std::exp(-z))));
}

TEST_CASE("logreg rejects single-class labels") {
    MatrixXd X(5, 1);
    X.setRandom();
    std::vector<int> y = {1, 1, 1, 1, 1};
    CHECK_THROWS_AS(logreg_fit(X, y, 1e-3, 1e-3), DataError);
}

// ---------------------------------------------------------------------------
// AUROC and Hanley-McNeil
// ---------------------------------------------------------------------------

TEST_CASE("auroc: separated scores give 1.0; the worked 4-score example") {
    std::vector<double> s1 = {0.9, 0.8, 0.1, 0.2};
    std::vector<int> y1 = {1, 1, 0, 0};
    CHECK(auroc(s1, y1).auroc == 1.0);

    std::vector<double> s2 = {0.1, 0.4, 0.35, 0.8};
    std::vector<int> y2 = {0, 0, 1, 1};
    auto r = auroc(s2, y2);
    CHECK(r.auroc == doctest::Approx(0.75));
    CHECK(r.se == doctest::Approx(0.2763).epsilon(5e-4)); // Q1=0.6, Q2~0.642857
    CHECK(r.ci_lo >= 0.0);
    CHECK(r.ci_hi <= 1.0);

    std::vector<int> single = {1, 1, 1, 1};
    CHECK_THROWS_AS(auroc(s2, single), DataError);
}

TEST_CASE("auroc equals brute-force pairwise counting exactly (ties included)") {
    Rng rng(17);
    std::uniform_int_distribution<int> n_dist(4, 200);
    std ::uniform_int_distribution<int> grid(0, 12); // coarse grid forces ties
    std::bernoulli_distribution lab(0.4);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = n_dist(rng);
        std::vector<double> s(n);
        std::vector<int> y(n);
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            s[i] = grid(rng) / 12.0;
            y[i] = lab(rng);
            pos += y[i];
        }
        if (pos == 0) y[0] = 1;
        if (pos == n) y[0] = 0;
        CHECK(auroc(s, y).auroc == oracles::brute_force_auroc(s, y));
    }
}

TEST_CASE("auroc is invariant under strictly monotone score transforms") {
    Rng rng(19);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> s(60), t(60);
    std::vector<int> y(60);
    for (int i = 0; i < 60; ++i) {
        s[i] = n01(rng);
        t[i] = std::exp(2.0 * s[i]) + 3.0; // strictly increasing map
        y[i] = i % 3 == 0;
    }
    CHECK(auroc(s, y).auroc == auroc(t, y).auroc);
}

TEST_CASE("Hanley-McNeil SE shrinks with n and tracks the bootstrap") {
    Rng rng(23);
    std::normal_distribution<double> neg(0.0, 1.0), pos(1.2, 1.0);
    auto simulate = [&](int per_class) {
        std::vector<double> s;
        std::vector<int> y;
        for (int i = 0; i < per_class; ++i) {
            s.push_back(neg(rng));
            y.push_back(0);
            s.push_back(pos(rng));
            y.push_back(1);
        }
        return std::make_pair(s, y);
    };
    auto [s_small, y_small] = simulate(25);
    auto [s_big, y_big] = simulate(100);
    const auto r_small = auroc(s_small, y_small);
    const auto r_big = auroc(s_big, y_big);
    CHECK(r_big.se <= r_small.se * 0.6);

    const double boot = oracles::bootstrap_auroc_se(s_big, y_big, 1500, 29);
    CHECK(std::abs(r_big.se - boot) / boot < 0.25);
}

TEST_CASE("paired test: identical scores give z = 0, p = 1") {
    std::vector<double> s = {0.1, 0.9, 0.4, 0.6, 0.2, 0.8};
    std::vector<int> y = {0, 1, 0, 1, 0, 1};
    auto [z, p] = auroc_paired_test(s, s, y);
    CHECK(z == 0.0);
    CHECK(p == 1.0);
}

TEST_CASE("paired test: a large AUROC gap is significant") {
    Rng rng(31);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> a, b;
    std::vector<int> y;
    for (int i = 0; i < 1000; ++i) {
        const int label = i % 2;
        y.push_back(label);
        a.push_back(label * 2.6 + n01(rng)); // AUROC ~ 0.97
        b.push_back(n01(rng));               // AUROC ~ 0.5
    }
    auto [z, p] = auroc_paired_test(a, b, y);
    CHECK(z > 2.58);
    CHECK(p < 0.01);
}

TEST_CASE("paired test: null calibration") {
    Rng rng(37);
    std::normal_distribution<double> n01(0.0, 1.0);
    int inside = 0;
    for (int sim = 0; sim < 100; ++sim) {
        std::vector<double> a, b;
        std::vector<int> y;
        for (int i = 0; i < 200; ++i) {
            y.push_back(i % 2);
            a.push_back(n01(rng));
            b.push_back(n01(rng));
        }
        auto [z, p] = auroc_paired_test(a, b, y);
        inside += std::abs(z) < 1.96;
    }
    CHECK(inside >= 90);
}

// ---------------------------------------------------------------------------
// Macro F1
// ---------------------------------------------------------------------------

TEST_CASE("macro_f1: perfect predictions and the all-negative example") {
    std::vector<double> perfect = {0.9, 0.1, 0.8, 0.2};
    std::vector<int> y = {1, 0, 1, 0};
    CHECK(macro_f1(perfect, y) == 1.0);

    std::vector<double> none(8, 0.0);
    std::vector<int> y2 = {1, 1, 0, 0, 0, 0, 0, 0};
    CHECK(macro_f1(none, y2) == doctest::Approx(0.5 * (0.0 + 12.0 / 14.0)));
}

TEST_CASE("macro_f1: degenerate thresholds") {
    std::vector<double> s = {0.2, 0.4, 0.6, 0.8};
    std::vector<int> y = {0, 1, 0, 1};
    // Threshold 0: everything predicted positive.
    const double f_pos_only = macro_f1(s, y, 0.0);
    CHECK(f_pos_only == doctest::Approx(0.5 * (2.0 * 2.0 / (2.0 * 2.0 + 2.0))));
    // Threshold just above 1: nothing predicted positive.
    const double f_neg_only = macro_f1(s, y, 1.0 + 1e-12);
    CHECK(f_neg_only == doctest::Approx(0.5 * (2.0 * 2.0 / (2.0 * 2.0 + 2.0))));
}

TEST_CASE("macro_f1 is symmetric under jointly swapping classes") {
    std::vector<double> s = {0.9, 0.2, 0.7, 0.4, 0.1};
    std::vector<int> y = {1, 0, 0, 1, 0};
    std::vector<double> s_flip;
    std::vector<int> y_flip;
    for (size_t i = 0; i < s.size(); ++i) {
        s_flip.push_back(1.0 - s[i]);
        y_flip.push_back(1 - y[i]);
    }
    // Complemented scores + flipped labels describe the same classification.
    CHECK(macro_f1(s, y, 0.5) == doctest::Approx(macro_f1(s_flip, y_flip, 0.500001)));
}

// ---------------------------------------------------------------------------
// Factor traversal
// ---------------------------------------------------------------------------

TEST_CASE("factor_traversal: grid layout, symmetry, and degenerate sigma") {
    auto arch = reduced_architecture();
    auto params = init_params<float>(arch, 43);
    params.input_scale = 50.0;
    LatentStats stats;
    stats.mu = VecX<float>::Zero(2);
    stats.sigma = VecX<float>::Zero(2);
    stats.mu << 0.5f, -1.0f;
    stats.sigma << 2.0f, 0.0f;

    auto grid = factor_traversal(params, 0, stats, 7);
    REQUIRE(grid.values.size() == 7);
    for (int k = 0; k < 7; ++k)
        CHECK(grid.values[k] == doctest::Approx(0.5 + 2.0 * (-3.0 + k * 1.0)));
    for (int k = 0; k < 3; ++k)
        CHECK(grid.values[k] - 0.5 == doctest::Approx(-(grid.values[6 - k] - 0.5)));

    // Center step decodes the all-means latent vector.
    VecX<float> mus = stats.mu;
    auto center = decode(params, mus);
    for (size_t i = 0; i < center.v.size(); ++i)
        CHECK(grid.decoded[3][i] ==
              doctest::Approx(center.v[i] / params.input_scale).epsilon(1e-6));

    // sigma = 0: every step identical.
    auto flat_grid = factor_traversal(params, 1, stats, 5);
    for (int k = 1; k < 5; ++k) CHECK(flat_grid.decoded[k] == flat_grid.decoded[0]);

    CHECK_THROWS_AS(factor_traversal(params, 2, stats, 7), ParamError);
}

TEST_CASE("reconstruction_metrics examples") {
    std::vector<float> x = {0.0f, 1.0f, 2.0f};
    std::vector<float> same = x;
    auto [mse0, corr0] = reconstruction_metrics(x, same);
    CHECK(mse0 == 0.0);
    CHECK(corr0 == doctest::Approx(1.0));

    std::vector<float> neg = {0.0f, -1.0f, -2.0f};
    CHECK(reconstruction_metrics(x, neg).second == doctest::Approx(-1.0));

    std::vector<float> xh = {0.0f, 2.0f, 4.0f};
    auto [mse, corr] = reconstruction_metrics(x, xh);
    CHECK(mse == doctest::Approx(5.0 / 3.0));
    CHECK(corr == doctest::Approx(1.0));
}
