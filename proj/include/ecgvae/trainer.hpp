#ifndef ECGVAE_TRAINER_HPP
#define ECGVAE_TRAINER_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgvae/signal_prep.hpp"
#include "ecgvae/vae.hpp"

namespace ecgvae {

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct PatientInfo {
    std::string id;
    std::optional<int> label;
};

/// Patient-grouped train/test split plus per-fold train/validation splits.
/// Folds are independent stratified (ratio : 1-ratio) draws from the training
/// patients.
struct SplitPlan {
    std::vector<std::string> test_patients;
    struct Fold {
        std::vector<std::string> train_patients;
        std::vector<std::string> val_patients;
    };
    std::vector<Fold> folds;
    double ratio = 0.85;
    std::uint64_t seed = 0;
};

/// Deduplicate records into per-patient entries. Throws DataError if a
/// patient appears with conflicting labels.
std::vector<PatientInfo> collect_patients(std::span<const MeanBeat> beats);
std::vector<PatientInfo> collect_patients(std::span<const EcgRecord> records);

SplitPlan make_splits(const std::vector<PatientInfo>& patients, double ratio, int n_folds,
                      std::uint64_t seed);

/// Indices of `beats` whose patient is in `patient_ids`.
std::vector<int> select_by_patient(std::span<const MeanBeat> beats,
                                   const std::vector<std::string>& patient_ids);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// One epoch of batches over the given record indices. With labels present in
/// both classes, the minority class is oversampled with replacement to a 1:1
/// expected ratio and every majority item is visited exactly once; otherwise
/// this is a plain shuffle.
std::vector<std::vector<int>> balanced_batches(std::span<const MeanBeat> beats,
                                               const std::vector<int>& indices, int batch_size,
                                               Rng& rng);

/// Plain shuffled batches (pretraining path; labels ignored).
std::vector<std::vector<int>> shuffled_batches(size_t n, int batch_size, Rng& rng);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    LossWeights weights;          // beta 4, gamma 500
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int batch_size = 64;
    int patience_epochs = 25;
    int max_epochs = 500;         // desk-scale safety bound on top of patience
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    double input_scale = 50.0;    // mV -> model units before the encoder
    int n_threads = 0;            // 0 = hardware concurrency
};

struct EpochLog {
    int epoch = 0; // 1-based
    LossBreakdown<float> train;
    LossBreakdown<float> val;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int best_epoch = 0;
    std::string stopping_reason; // "patience" | "max_epochs"
};

/// Decoupled-weight-decay Adam over the flat parameter vector. Frozen blocks
/// (mask) are never touched.
class AdamW {
  public:
    AdamW(size_t n_params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(VaeParams<float>& params, std::span<const float> grad, double lr,
              double weight_decay, GradMask mask);

  private:
    std::vector<float> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

/// Scales `grad` so its global L2 norm is at most clip_norm. Returns the
/// pre-clip norm.
double clip_gradient(std::span<float> grad, double clip_norm);

/// Tracks the running-minimum validation loss with strict improvement.
class EarlyStopper {
  public:
    explicit EarlyStopper(int patience) : patience_(patience) {}
    /// Call once per epoch (1-based). Returns true if this epoch improved.
    bool observe(int epoch, double val_loss);
    bool should_stop(int epoch) const { return best_epoch_ > 0 && epoch - best_epoch_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }

  private:
    int patience_;
    int best_epoch_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

struct TrainResult {
    VaeParams<float> params; // from the best validation epoch
    TrainLog log;
};

/// Self-supervised pretraining (labels ignored; loss = MSE + beta*KL).
TrainResult pretrain(const VaeParams<float>& params, std::span<const MeanBeat> train,
                     std::span<const MeanBeat> val, const TrainConfig& config);

/// Head-only fine-tuning: encoder/decoder bitwise frozen.
TrainResult finetune_head(const VaeParams<float>& params, std::span<const MeanBeat> train,
                          std::span<const MeanBeat> val, const TrainConfig& config);

/// End-to-end fine-tuning. Split-task behaviour follows params.arch.pred_dim:
/// prediction gradients reach only z[0..pred_dim).
TrainResult finetune_full(const VaeParams<float>& params, std::span<const MeanBeat> train,
                          std::span<const MeanBeat> val, const TrainConfig& config);

/// Resize the prediction head to a new pred_dim (weights re-initialized from
/// `seed`), keeping all other blocks bitwise intact. Used when fine-tuning a
/// pretrained checkpoint in split-task mode.
VaeParams<float> reshape_head(const VaeParams<float>& params, int new_pred_dim,
                              std::uint64_t seed);

/// Build the VaeSample (input-scaled beat + RR features + label) for a beat.
VaeSample<float> make_sample(const MeanBeat& beat, const VaeArchitecture& arch,
                             double input_scale);

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Per-record feature rows: eval-mode latent means plus raw RR statistics,
/// with sex/age/label/patient id carried along for the baselines.
struct FeatureTable {
    int latent_dim = 0;
    std::vector<std::string> columns; // z0..z{L-1}, rr_mean, rr_std, sex, age
    struct Row {
        std::vector<double> values; // aligned with columns
        std::optional<int> label;
        std::string patient_id;
    };
    std::vector<Row> rows;

    /// Width of the model-feature block (z + the two RR columns).
    int n_model_features() const { return latent_dim + 2; }
};

FeatureTable extract_features(const VaeParams<float>& params, std::span<const MeanBeat> beats);

} // namespace ecgvae

#endif
