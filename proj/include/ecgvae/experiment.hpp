#ifndef ECGVAE_EXPERIMENT_HPP
#define ECGVAE_EXPERIMENT_HPP

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "ecgvae/baselines.hpp"
#include "ecgvae/eval_stats.hpp"
#include "ecgvae/io.hpp"
#include "ecgvae/trainer.hpp"

namespace ecgvae {

/// Trains each phase under its own epoch cap; early stopping still applies
/// inside the cap.
struct ExperimentConfig {
    TrainConfig train;
    int pretrain_epochs = 40;
    int head_epochs = 25;
    int full_epochs = 20;
    double logreg_l1 = 1e-3;
    double logreg_l2 = 1e-3;
    bool verbose = false;
};

/// One (model, fold) evaluation on the held-out test patients.
struct ModelFoldResult {
    std::string model; // task_naive | task_specific | split_task | pca | sex_age
    int latent_dim = 0;
    int pred_dim = 0;
    int fold = 0;
    double mse = std::numeric_limits<double>::quiet_NaN();  // mV^2
    double corr = std::numeric_limits<double>::quiet_NaN(); // mean per-record Pearson
    RocResult roc;
    double f1 = 0.0;
    std::vector<double> scores; // per test record, in test-set order
};

/// Drives training + evaluation over one dataset and split plan.
class Experiment {
  public:
    Experiment(std::vector<MeanBeat> beats, SplitPlan plan, ExperimentConfig config);

    /// Pretrain-only model; returns its evaluation and the trained parameters
    /// for later fine-tuning.
    std::pair<ModelFoldResult, VaeParams<float>> train_naive(int fold, int latent_dim);

    /// Two-step fine-tuning from a pretrained model. pred_dim < latent_dim
    /// reshapes the head into split-task mode.
    std::pair<ModelFoldResult, VaeParams<float>> finetune(int fold,
                                                          const VaeParams<float>& pretrained,
                                                          int pred_dim, const std::string& name);

    ModelFoldResult pca_baseline(int fold, int components);
    ModelFoldResult sexage_baseline(int fold);

    ModelFoldResult evaluate_vae(const VaeParams<float>& params, int fold,
                                 const std::string& name) const;

    const std::vector<int>& test_labels() const { return test_labels_; }
    const SplitPlan& plan() const { return plan_; }
    const std::vector<MeanBeat>& beats() const { return beats_; }
    std::span<const MeanBeat> fold_train(int fold) const;
    std::span<const MeanBeat> fold_val(int fold) const;

  private:
    TrainConfig phase_config(int max_epochs, std::uint64_t salt) const;

    std::vector<MeanBeat> beats_;
    SplitPlan plan_;
    ExperimentConfig cfg_;
    std::vector<std::vector<MeanBeat>> fold_train_, fold_val_;
    std::vector<MeanBeat> test_;
    std::vector<int> test_labels_;
};

struct PairedComparison {
    int fold = 0;
    double auroc_a = 0.0, auroc_b = 0.0;
    double z = 0.0, p = 1.0;
};

struct ExperimentReport {
    std::vector<ModelFoldResult> results;
    std::vector<PairedComparison> naive_vs_specific; // per fold, latent_dim = 2 run
    std::string notes;
};

/// The latent-dimension/ordering experiment: per fold trains task-naive and
/// task-specific models at L=2, a task-naive model and a split-task model
/// (pred_dim 2) at L=10, plus PCA and sex+age baselines, all evaluated on the
/// shared test set with Hanley-McNeil paired tests between the L=2 pair.
ExperimentReport run_ordering_experiment(std::vector<MeanBeat> beats, SplitPlan plan,
                                         const ExperimentConfig& config);

/// Latent-dimension sweep: task-naive, task-specific and PCA per L per fold.
std::vector<ModelFoldResult> run_latent_sweep(std::vector<MeanBeat> beats, SplitPlan plan,
                                              const ExperimentConfig& config,
                                              const std::vector<int>& latent_dims, int n_folds);

void write_report_json(const std::filesystem::path& path, const ExperimentReport& report);
void write_report_csv(const std::filesystem::path& path,
                      const std::vector<ModelFoldResult>& results);

} // namespace ecgvae

#endif
