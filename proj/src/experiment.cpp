#include "ecgvae/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace ecgvae {

using nlohmann::json;

namespace {

std::vector<MeanBeat> gather(std::span<const MeanBeat> beats,
                             const std::vector<std::string>& patients) {
    std::vector<MeanBeat> out;
    for (int i : select_by_patient(beats, patients)) out.push_back(beats[i]);
    return out;
}

/// Model-feature matrix (z columns + the two RR columns) of a feature table.
MatrixXd model_features(const FeatureTable& table) {
    const int w = table.n_model_features();
    MatrixXd X(table.rows.size(), w);
    for (size_t i = 0; i < table.rows.size(); ++i)
        for (int j = 0; j < w; ++j) X(static_cast<Eigen::Index>(i), j) = table.rows[i].values[j];
    return X;
}

std::vector<int> table_labels(const FeatureTable& table) {
    std::vector<int> y;
    y.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        if (!r.label.has_value()) throw DataError("feature table row without label");
        y.push_back(*r.label);
    }
    return y;
}

} // namespace

Experiment::Experiment(std::vector<MeanBeat> beats, SplitPlan plan, ExperimentConfig config)
    : beats_(std::move(beats)), plan_(std::move(plan)), cfg_(std::move(config)) {
    for (const auto& fold : plan_.folds) {
        fold_train_.push_back(gather(beats_, fold.train_patients));
        fold_val_.push_back(gather(beats_, fold.val_patients));
    }
    test_ = gather(beats_, plan_.test_patients);
    if (test_.empty()) throw DataError("split plan leaves the test set empty");
    int classes[2] = {0, 0};
    for (const auto& b : test_) {
        if (!b.label.has_value()) throw DataError("test records must be labeled for evaluation");
        ++classes[*b.label];
        test_labels_.push_back(*b.label);
    }
    if (classes[0] == 0 || classes[1] == 0)
        throw DataError("test set must contain both classes");
}

std::span<const MeanBeat> Experiment::fold_train(int fold) const { return fold_train_.at(fold); }
std::span<const MeanBeat> Experiment::fold_val(int fold) const { return fold_val_.at(fold); }

TrainConfig Experiment::phase_config(int max_epochs, std::uint64_t salt) const {
    TrainConfig c = cfg_.train;
    c.max_epochs = max_epochs;
    c.seed = mix_seed(cfg_.train.seed, salt);
    return c;
}

ModelFoldResult Experiment::evaluate_vae(const VaeParams<float>& params, int fold,
                                         const std::string& name) const {
    const auto train_table = extract_features(params, fold_train_[fold]);
    const auto test_table = extract_features(params, test_);
    const auto model =
        logreg_fit(model_features(train_table), table_labels(train_table), cfg_.logreg_l1,
                   cfg_.logreg_l2);
    const VectorXd proba = logreg_predict_proba(model, model_features(test_table));

    ModelFoldResult r;
    r.model = name;
    r.latent_dim = params.arch.latent_dim;
    r.pred_dim = params.arch.pred_dim;
    r.fold = fold;
    r.scores.assign(proba.data(), proba.data() + proba.size());
    r.roc = auroc(r.scores, test_labels_);
    r.f1 = macro_f1(r.scores, test_labels_);

    // Reconstruction in physical units (decode / input_scale vs the raw beat).
    double mse_acc = 0.0, corr_acc = 0.0;
    ForwardTrace<float> trace;
    Workspace<float> ws;
    const float inv_scale = static_cast<float>(1.0 / params.input_scale);
    std::vector<float> recon(kBeatFlat);
    for (const auto& beat : test_) {
        VaeSample<float> s = make_sample(beat, params.arch, params.input_scale);
        forward_trace(params, s, Mode::eval, trace, ws);
        const auto& out = trace.dec_act.back();
        for (int i = 0; i < kBeatFlat; ++i) recon[i] = out.v[i] * inv_scale;
        const auto [mse, corr] = reconstruction_metrics(beat.samples, recon);
        mse_acc += mse;
        corr_acc += corr;
    }
    r.mse = mse_acc / static_cast<double>(test_.size());
    r.corr = corr_acc / static_cast<double>(test_.size());
    return r;
}

std::pair<ModelFoldResult, VaeParams<float>> Experiment::train_naive(int fold, int latent_dim) {
    const std::uint64_t salt = 0x100 * (fold + 1) + latent_dim;
    auto params = init_params<float>(small_vae_architecture(latent_dim, latent_dim),
                                     mix_seed(cfg_.train.seed, salt));
    auto res = pretrain(params, fold_train_[fold], fold_val_[fold],
                        phase_config(cfg_.pretrain_epochs, salt));
    if (cfg_.verbose)
        std::fprintf(stderr, "[fold %d] pretrain L=%d: %zu epochs, best %d (val %.4f)\n", fold,
                     latent_dim, res.log.epochs.size(), res.log.best_epoch,
                     res.log.epochs.empty() ? 0.0 : res.log.epochs[res.log.best_epoch - 1].val.total);
    auto eval = evaluate_vae(res.params, fold, "task_naive");
    return {std::move(eval), std::move(res.params)};
}

std::pair<ModelFoldResult, VaeParams<float>> Experiment::finetune(int fold,
                                                                  const VaeParams<float>& pretrained,
                                                                  int pred_dim,
                                                                  const std::string& name) {
    const std::uint64_t salt = 0x10000 * (fold + 1) + pretrained.arch.latent_dim * 10 + pred_dim;
    VaeParams<float> params = pretrained;
    if (params.arch.pred_dim != pred_dim)
        params = reshape_head(params, pred_dim, mix_seed(cfg_.train.seed, salt));

    auto head = finetune_head(params, fold_train_[fold], fold_val_[fold],
                              phase_config(cfg_.head_epochs, salt + 1));
    auto full = finetune_full(head.params, fold_train_[fold], fold_val_[fold],
                              phase_config(cfg_.full_epochs, salt + 2));
    if (cfg_.verbose)
        std::fprintf(stderr, "[fold %d] finetune %s L=%d Lp=%d: head %zu ep, full %zu ep\n", fold,
                     name.c_str(), params.arch.latent_dim, pred_dim, head.log.epochs.size(),
                     full.log.epochs.size());
    auto eval = evaluate_vae(full.params, fold, name);
    return {std::move(eval), std::move(full.params)};
}

ModelFoldResult Experiment::pca_baseline(int fold, int components) {
    const auto& train = fold_train_[fold];
    MatrixXd X(train.size(), kBeatFlat);
    for (size_t i = 0; i < train.size(); ++i)
        for (int j = 0; j < kBeatFlat; ++j)
            X(static_cast<Eigen::Index>(i), j) = train[i].samples[j];
    const auto pca = pca_fit(X, components);

    // Features: PCA code + RR stats, mirroring the VAE feature layout.
    auto featurize = [&](std::span<const MeanBeat> beats) {
        MatrixXd F(beats.size(), components + 2);
        for (size_t i = 0; i < beats.size(); ++i) {
            VectorXd x(kBeatFlat);
            for (int j = 0; j < kBeatFlat; ++j) x[j] = beats[i].samples[j];
            F.row(static_cast<Eigen::Index>(i)).head(components) = pca_transform(pca, x);
            F(static_cast<Eigen::Index>(i), components) = beats[i].rr_mean_ms;
            F(static_cast<Eigen::Index>(i), components + 1) = beats[i].rr_std_ms;
        }
        return F;
    };
    std::vector<int> y_train;
    for (const auto& b : train) y_train.push_back(b.label.value());
    const auto model = logreg_fit(featurize(train), y_train, cfg_.logreg_l1, cfg_.logreg_l2);
    const VectorXd proba = logreg_predict_proba(model, featurize(test_));

    ModelFoldResult r;
    r.model = "pca";
    r.latent_dim = components;
    r.pred_dim = components;
    r.fold = fold;
    r.scores.assign(proba.data(), proba.data() + proba.size());
    r.roc = auroc(r.scores, test_labels_);
    r.f1 = macro_f1(r.scores, test_labels_);

    double mse_acc = 0.0, corr_acc = 0.0;
    std::vector<float> xf(kBeatFlat), rf(kBeatFlat);
    for (const auto& beat : test_) {
        VectorXd x(kBeatFlat);
        for (int j = 0; j < kBeatFlat; ++j) x[j] = beat.samples[j];
        const VectorXd rec = pca_inverse(pca, pca_transform(pca, x));
        for (int j = 0; j < kBeatFlat; ++j) {
            xf[j] = beat.samples[j];
            rf[j] = static_cast<float>(rec[j]);
        }
        const auto [mse, corr] = reconstruction_metrics(xf, rf);
        mse_acc += mse;
        corr_acc += corr;
    }
    r.mse = mse_acc / static_cast<double>(test_.size());
    r.corr = corr_acc / static_cast<double>(test_.size());
    return r;
}

ModelFoldResult Experiment::sexage_baseline(int fold) {
    const auto& train = fold_train_[fold];
    MatrixXd train_sa(train.size(), 2), test_sa(test_.size(), 2);
    std::vector<int> y_train;
    for (size_t i = 0; i < train.size(); ++i) {
        train_sa(static_cast<Eigen::Index>(i), 0) = train[i].sex;
        train_sa(static_cast<Eigen::Index>(i), 1) = train[i].age;
        y_train.push_back(train[i].label.value());
    }
    for (size_t i = 0; i < test_.size(); ++i) {
        test_sa(static_cast<Eigen::Index>(i), 0) = test_[i].sex;
        test_sa(static_cast<Eigen::Index>(i), 1) = test_[i].age;
    }
    const VectorXd proba =
        sex_age_baseline(train_sa, y_train, test_sa, cfg_.logreg_l1, cfg_.logreg_l2);

    ModelFoldResult r;
    r.model = "sex_age";
    r.latent_dim = 2;
    r.pred_dim = 2;
    r.fold = fold;
    r.scores.assign(proba.data(), proba.data() + proba.size());
    r.roc = auroc(r.scores, test_labels_);
    r.f1 = macro_f1(r.scores, test_labels_);
    return r;
}

ExperimentReport run_ordering_experiment(std::vector<MeanBeat> beats, SplitPlan plan,
                                         const ExperimentConfig& config) {
    Experiment ex(std::move(beats), std::move(plan), config);
    ExperimentReport report;
    report.notes =
        "Paired AUROC tests use the Hanley-McNeil correlated-ROC z statistic with r "
        "estimated as the mean within-class Pearson correlation of the two score vectors "
        "(identity-mapped approximation of the published r table).";

    const int n_folds = static_cast<int>(ex.plan().folds.size());
    for (int fold = 0; fold < n_folds; ++fold) {
        auto [naive2, pre2] = ex.train_naive(fold, 2);
        auto [spec2, ft2] = ex.finetune(fold, pre2, 2, "task_specific");
        auto [naive10, pre10] = ex.train_naive(fold, 10);
        auto [split10, ft10] = ex.finetune(fold, pre10, 2, "split_task");
        auto pca2 = ex.pca_baseline(fold, 2);
        auto pca10 = ex.pca_baseline(fold, 10);
        auto sexage = ex.sexage_baseline(fold);

        PairedComparison pc;
        pc.fold = fold;
        pc.auroc_a = spec2.roc.auroc;
        pc.auroc_b = naive2.roc.auroc;
        std::tie(pc.z, pc.p) = auroc_paired_test(spec2.scores, naive2.scores, ex.test_labels());
        report.naive_vs_specific.push_back(pc);

        for (auto* r : {&naive2, &spec2, &naive10, &split10, &pca2, &pca10, &sexage})
            report.results.push_back(std::move(*r));
    }
    return report;
}

std::vector<ModelFoldResult> run_latent_sweep(std::vector<MeanBeat> beats, SplitPlan plan,
                                              const ExperimentConfig& config,
                                              const std::vector<int>& latent_dims, int n_folds) {
    Experiment ex(std::move(beats), std::move(plan), config);
    const int folds = std::min<int>(n_folds, static_cast<int>(ex.plan().folds.size()));
    std::vector<ModelFoldResult> out;
    for (int L : latent_dims) {
        for (int fold = 0; fold < folds; ++fold) {
            auto [naive, pre] = ex.train_naive(fold, L);
            auto [spec, ft] = ex.finetune(fold, pre, L, "task_specific");
            auto pca = ex.pca_baseline(fold, L);
            out.push_back(std::move(naive));
            out.push_back(std::move(spec));
            out.push_back(std::move(pca));
        }
    }
    return out;
}

namespace {

json result_to_json(const ModelFoldResult& r) {
    json j = {{"model", r.model},
              {"latent_dim", r.latent_dim},
              {"pred_dim", r.pred_dim},
              {"fold", r.fold},
              {"auroc", r.roc.auroc},
              {"auroc_se", r.roc.se},
              {"auroc_ci", {r.roc.ci_lo, r.roc.ci_hi}},
              {"n_pos", r.roc.n_pos},
              {"n_neg", r.roc.n_neg},
              {"macro_f1", r.f1}};
    if (std::isfinite(r.mse)) j["mse"] = r.mse;
    if (std::isfinite(r.corr)) j["correlation"] = r.corr;
    return j;
}

} // namespace

void write_report_json(const std::filesystem::path& path, const ExperimentReport& report) {
    json results = json::array();
    for (const auto& r : report.results) results.push_back(result_to_json(r));
    json paired = json::array();
    for (const auto& p : report.naive_vs_specific)
        paired.push_back({{"fold", p.fold},
                          {"auroc_task_specific", p.auroc_a},
                          {"auroc_task_naive", p.auroc_b},
                          {"z", p.z},
                          {"p_value", p.p}});
    json j = {{"results", results}, {"paired_tests", paired}, {"notes", report.notes}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<ModelFoldResult>& results) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "model,latent_dim,pred_dim,fold,mse,correlation,auroc,auroc_se,ci_lo,ci_hi,macro_f1,"
           "n_pos,n_neg\n";
    out.precision(9);
    for (const auto& r : results) {
        out << r.model << "," << r.latent_dim << "," << r.pred_dim << "," << r.fold << ",";
        if (std::isfinite(r.mse)) out << r.mse;
        out << ",";
        if (std::isfinite(r.corr)) out << r.corr;
        out << "," << r.roc.auroc << "," << r.roc.se << "," << r.roc.ci_lo << "," << r.roc.ci_hi
            << "," << r.f1 << "," << r.roc.n_pos << "," << r.roc.n_neg << "\n";
    }
}

} // namespace ecgvae
