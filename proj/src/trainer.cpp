#include "ecgvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace ecgvae {

namespace {

std::vector<PatientInfo> collect_patients_impl(
    const std::vector<std::pair<std::string, std::optional<int>>>& entries) {
    std::vector<PatientInfo> out;
    std::map<std::string, size_t> index;
    for (const auto& [id, label] : entries) {
        auto it = index.find(id);
        if (it == index.end()) {
            index[id] = out.size();
            out.push_back({id, label});
        } else if (out[it->second].label != label) {
            throw DataError("patient " + id + " has conflicting labels across records");
        }
    }
    return out;
}

/// Largest-remainder allocation of round(ratio * total) test slots across
/// strata, so the overall split hits the requested ratio exactly.
std::vector<int> allocate_counts(const std::vector<int>& group_sizes, double test_fraction) {
    const int total = std::accumulate(group_sizes.begin(), group_sizes.end(), 0);
    int want = static_cast<int>(std::lround(test_fraction * total));
    std::vector<int> counts(group_sizes.size());
    std::vector<std::pair<double, size_t>> rema;
    int assigned = 0;
    for (size_t g = 0; g < group_sizes.size(); ++g) {
        const double q = test_fraction * group_sizes[g];
        counts[g] = static_cast<int>(std::floor(q));
        counts[g] = std::min(counts[g], group_sizes[g]);
        assigned += counts[g];
        rema.push_back({q - counts[g], g});
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (size_t i = 0; i < rema.size() && assigned < want; ++i) {
        const size_t g = rema[i].second;
        if (counts[g] < group_sizes[g]) {
            ++counts[g];
            ++assigned;
        }
    }
    return counts;
}

/// Stratified split of patients into (kept, held_out) with |held_out| =
/// round((1-ratio) * n) per largest remainder over label strata.
std::pair<std::vector<std::string>, std::vector<std::string>>
stratified_split(const std::vector<PatientInfo>& patients, double ratio, Rng& rng) {
    // Strata: label 0, label 1, unlabeled.
    std::vector<std::vector<std::string>> strata(3);
    for (const auto& p : patients) {
        const int s = p.label.has_value() ? *p.label : 2;
        strata[s].push_back(p.id);
    }
    std::vector<int> sizes;
    for (auto& s : strata) {
        std::sort(s.begin(), s.end()); // independence from input order
        std::shuffle(s.begin(), s.end(), rng);
        sizes.push_back(static_cast<int>(s.size()));
    }
    const auto held_counts = allocate_counts(sizes, 1.0 - ratio);
    std::vector<std::string> kept, held;
    for (size_t g = 0; g < strata.size(); ++g) {
        for (size_t i = 0; i < strata[g].size(); ++i)
            (static_cast<int>(i) < held_counts[g] ? held : kept).push_back(strata[g][i]);
    }
    std::sort(kept.begin(), kept.end());
    std::sort(held.begin(), held.end());
    return {kept, held};
}

} // namespace

std::vector<PatientInfo> collect_patients(std::span<const MeanBeat> beats) {
    std::vector<std::pair<std::string, std::optional<int>>> entries;
    entries.reserve(beats.size());
    for (const auto& b : beats) entries.push_back({b.patient_id, b.label});
    return collect_patients_impl(entries);
}

std::vector<PatientInfo> collect_patients(std::span<const EcgRecord> records) {
    std::vector<std::pair<std::string, std::optional<int>>> entries;
    entries.reserve(records.size());
    for (const auto& r : records) entries.push_back({r.patient_id, r.label});
    return collect_patients_impl(entries);
}

SplitPlan make_splits(const std::vector<PatientInfo>& patients, double ratio, int n_folds,
                      std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ParamError("ratio must be in (0, 1)");
    if (n_folds < 1) throw ParamError("n_folds must be >= 1");
    int n_labeled[2] = {0, 0};
    for (const auto& p : patients)
        if (p.label.has_value()) ++n_labeled[*p.label];
    const bool any_labeled = n_labeled[0] + n_labeled[1] > 0;
    if (any_labeled && (n_labeled[0] < 2 || n_labeled[1] < 2))
        throw DataError("need at least 2 patients per label class for stratified splits");

    SplitPlan plan;
    plan.ratio = ratio;
    plan.seed = seed;

    Rng rng(mix_seed(seed, 0x517));
    auto [train_ids, test_ids] = stratified_split(patients, ratio, rng);
    plan.test_patients = std::move(test_ids);

    std::vector<PatientInfo> train_patients;
    for (const auto& p : patients)
        if (std::find(plan.test_patients.begin(), plan.test_patients.end(), p.id) ==
            plan.test_patients.end())
            train_patients.push_back(p);

    for (int k = 0; k < n_folds; ++k) {
        Rng fold_rng(mix_seed(seed, 0xf01d + static_cast<std::uint64_t>(k)));
        auto [fold_train, fold_val] = stratified_split(train_patients, ratio, fold_rng);
        plan.folds.push_back({std::move(fold_train), std::move(fold_val)});
    }
    return plan;
}

std::vector<int> select_by_patient(std::span<const MeanBeat> beats,
                                   const std::vector<std::string>& patient_ids) {
    std::vector<int> idx;
    for (size_t i = 0; i < beats.size(); ++i)
        if (std::find(patient_ids.begin(), patient_ids.end(), beats[i].patient_id) !=
            patient_ids.end())
            idx.push_back(static_cast<int>(i));
    return idx;
}

std::vector<std::vector<int>> shuffled_batches(size_t n, int batch_size, Rng& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> batches;
    for (size_t i = 0; i < order.size(); i += batch_size) {
        batches.emplace_back(order.begin() + i,
                             order.begin() + std::min(order.size(), i + batch_size));
    }
    return batches;
}

std::vector<std::vector<int>> balanced_batches(std::span<const MeanBeat> beats,
                                               const std::vector<int>& indices, int batch_size,
                                               Rng& rng) {
    if (batch_size < 1) throw ParamError("batch_size must be >= 1");
    std::vector<int> pos, neg;
    bool all_labeled = true;
    for (int i : indices) {
        if (!beats[i].label.has_value()) {
            all_labeled = false;
            break;
        }
        (*beats[i].label == 1 ? pos : neg).push_back(i);
    }
    if (!all_labeled || pos.empty() || neg.empty() || pos.size() == neg.size()) {
        // Nothing to balance: plain shuffle, every item once.
        auto batches = shuffled_batches(indices.size(), batch_size, rng);
        for (auto& b : batches)
            for (int& v : b) v = indices[v];
        return batches;
    }

    auto& minority = pos.size() < neg.size() ? pos : neg;
    auto& majority = pos.size() < neg.size() ? neg : pos;
    std::shuffle(majority.begin(), majority.end(), rng);
    std::vector<int> epoch = majority;
    std::uniform_int_distribution<size_t> pick(0, minority.size() - 1);
    for (size_t i = 0; i < majority.size(); ++i) epoch.push_back(minority[pick(rng)]);
    std::shuffle(epoch.begin(), epoch.end(), rng);

    std::vector<std::vector<int>> batches;
    for (size_t i = 0; i < epoch.size(); i += batch_size)
        batches.emplace_back(epoch.begin() + i,
                             epoch.begin() + std::min(epoch.size(), i + batch_size));
    return batches;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(size_t n_params, double beta1, double beta2, double eps)
    : m_(n_params, 0.0f), v_(n_params, 0.0f), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(VaeParams<float>& params, std::span<const float> grad, double lr,
                 double weight_decay, GradMask mask) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

    auto update_range = [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            const double g = grad[i];
            // A parameter with no gradient signal past or present stays put;
            // decay is tied to training activity so unused blocks (e.g. the
            // head under gamma = 0) remain bitwise intact.
            if (g == 0.0 && m_[i] == 0.0f && v_[i] == 0.0f) continue;
            m_[i] = static_cast<float>(beta1_ * m_[i] + (1.0 - beta1_) * g);
            v_[i] = static_cast<float>(beta2_ * v_[i] + (1.0 - beta2_) * g * g);
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params.flat[i] -= static_cast<float>(
                lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * params.flat[i]));
        }
    };

    if (mask == GradMask::all) {
        update_range(0, params.flat.size());
    } else {
        const auto& hw = params.head_w();
        const auto& hb = params.head_b();
        update_range(hw.offset, hw.offset + hw.size);
        update_range(hb.offset, hb.offset + hb.size);
    }
}

double clip_gradient(std::span<float> grad, double clip_norm) {
    double sq = 0.0;
    for (float g : grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > clip_norm && norm > 0.0) {
        const float scale = static_cast<float>(clip_norm / norm);
        for (float& g : grad) g *= scale;
    }
    return norm;
}

bool EarlyStopper::observe(int epoch, double val_loss) {
    if (val_loss < best_loss_) {
        best_loss_ = val_loss;
        best_epoch_ = epoch;
        return true;
    }
    return false;
}

// ---------------------------------------------------------------------------

VaeSample<float> make_sample(const MeanBeat& beat, const VaeArchitecture& arch,
                             double input_scale) {
    VaeSample<float> s;
    s.x.resize(1, arch.input_leads, arch.input_samples);
    if (beat.samples.size() != s.x.size())
        throw DataError("mean beat size does not match the model input shape");
    const float scale = static_cast<float>(input_scale);
    for (size_t i = 0; i < beat.samples.size(); ++i) s.x.v[i] = beat.samples[i] * scale;
    s.rr_mean_ms = static_cast<float>(beat.rr_mean_ms);
    s.rr_std_ms = static_cast<float>(beat.rr_std_ms);
    s.label = beat.label;
    return s;
}

namespace {

RrStats compute_rr_stats(std::span<const MeanBeat> beats) {
    double m1 = 0, m2 = 0;
    for (const auto& b : beats) {
        m1 += b.rr_mean_ms;
        m2 += b.rr_std_ms;
    }
    const double n = std::max<size_t>(beats.size(), 1);
    m1 /= n;
    m2 /= n;
    double v1 = 0, v2 = 0;
    for (const auto& b : beats) {
        v1 += (b.rr_mean_ms - m1) * (b.rr_mean_ms - m1);
        v2 += (b.rr_std_ms - m2) * (b.rr_std_ms - m2);
    }
    RrStats rr;
    rr.rr_mean_center = m1;
    rr.rr_mean_scale = std::max(std::sqrt(v1 / n), 1e-6);
    rr.rr_std_center = m2;
    rr.rr_std_scale = std::max(std::sqrt(v2 / n), 1e-6);
    return rr;
}

int thread_count(const TrainConfig& cfg) {
    if (cfg.n_threads > 0) return cfg.n_threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

TrainResult train_phase(VaeParams<float> params, std::span<const MeanBeat> train,
                        std::span<const MeanBeat> val, const TrainConfig& cfg, Phase phase,
                        GradMask mask) {
    if (train.empty() || val.empty()) throw ParamError("training and validation sets must be nonempty");
    if (cfg.patience_epochs < 1) throw ParamError("patience_epochs must be >= 1");
    if (!(cfg.clip_norm > 0.0)) throw ParamError("clip_norm must be > 0");

    params.input_scale = cfg.input_scale;
    params.rr = compute_rr_stats(train);

    std::vector<VaeSample<float>> train_samples, val_samples;
    train_samples.reserve(train.size());
    for (const auto& b : train) train_samples.push_back(make_sample(b, params.arch, cfg.input_scale));
    val_samples.reserve(val.size());
    for (const auto& b : val) val_samples.push_back(make_sample(b, params.arch, cfg.input_scale));

    const int threads = thread_count(cfg);
    AdamW opt(params.flat.size());
    EarlyStopper stopper(cfg.patience_epochs);
    TrainLog log;
    VaeParams<float> best = params;

    std::vector<int> all_indices(train.size());
    std::iota(all_indices.begin(), all_indices.end(), 0);
    Rng batch_rng(mix_seed(cfg.seed, 0xba7c4));
    std::uint64_t draw_counter = 0;

    std::vector<VaeSample<float>> batch;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto batches =
            phase == Phase::pretrain
                ? shuffled_batches(train_samples.size(), cfg.batch_size, batch_rng)
                : balanced_batches(train, all_indices, cfg.batch_size, batch_rng);

        LossBreakdown<float> train_acc;
        size_t n_train = 0;
        for (const auto& idx : batches) {
            batch.clear();
            for (int i : idx) {
                batch.push_back(train_samples[i]);
                batch.back().noise_seed = mix_seed(cfg.seed, ++draw_counter);
            }
            auto res = backward<float>(params, batch, cfg.weights, phase, mask, threads);
            clip_gradient(res.grad, cfg.clip_norm);
            opt.step(params, res.grad, cfg.learning_rate, cfg.weight_decay, mask);
            train_acc.total += res.loss.total * batch.size();
            train_acc.mse += res.loss.mse * batch.size();
            train_acc.kl += res.loss.kl * batch.size();
            train_acc.bce += res.loss.bce * batch.size();
            n_train += batch.size();
        }
        const float inv = 1.0f / static_cast<float>(n_train);
        train_acc.total *= inv;
        train_acc.mse *= inv;
        train_acc.kl *= inv;
        train_acc.bce *= inv;

        const auto val_loss = batch_loss<float>(params, val_samples, cfg.weights, phase, Mode::eval);
        log.epochs.push_back({epoch, train_acc, val_loss});

        if (stopper.observe(epoch, val_loss.total)) best = params;
        if (stopper.should_stop(epoch)) {
            log.stopping_reason = "patience";
            break;
        }
        if (epoch == cfg.max_epochs) log.stopping_reason = "max_epochs";
    }
    log.best_epoch = stopper.best_epoch();
    best.phase_tag = phase_name(phase);
    return {std::move(best), std::move(log)};
}

} // namespace

TrainResult pretrain(const VaeParams<float>& params, std::span<const MeanBeat> train,
                     std::span<const MeanBeat> val, const TrainConfig& config) {
    return train_phase(params, train, val, config, Phase::pretrain, GradMask::all);
}

TrainResult finetune_head(const VaeParams<float>& params, std::span<const MeanBeat> train,
                          std::span<const MeanBeat> val, const TrainConfig& config) {
    return train_phase(params, train, val, config, Phase::finetune_head, GradMask::head_only);
}

TrainResult finetune_full(const VaeParams<float>& params, std::span<const MeanBeat> train,
                          std::span<const MeanBeat> val, const TrainConfig& config) {
    return train_phase(params, train, val, config, Phase::finetune_full, GradMask::all);
}

VaeParams<float> reshape_head(const VaeParams<float>& params, int new_pred_dim,
                              std::uint64_t seed) {
    if (new_pred_dim < 1 || new_pred_dim > params.arch.latent_dim)
        throw ParamError("pred_dim must satisfy 1 <= pred_dim <= latent_dim");

    VaeArchitecture arch = params.arch;
    arch.pred_dim = new_pred_dim;
    VaeParams<float> out = init_params<float>(arch, seed);
    out.rr = params.rr;
    out.input_scale = params.input_scale;
    out.phase_tag = params.phase_tag;
    // All blocks except the head keep their trained values bitwise.
    for (const auto& b : out.manifest) {
        if (b.name == "head.w" || b.name == "head.b") continue;
        const auto& src = params.block(b.name);
        if (src.size != b.size) throw DataError("unexpected shape change in block " + b.name);
        std::copy(params.flat.begin() + src.offset, params.flat.begin() + src.offset + src.size,
                  out.flat.begin() + b.offset);
    }
    return out;
}

FeatureTable extract_features(const VaeParams<float>& params, std::span<const MeanBeat> beats) {
    FeatureTable table;
    table.latent_dim = params.arch.latent_dim;
    for (int i = 0; i < params.arch.latent_dim; ++i)
        table.columns.push_back("z" + std::to_string(i));
    table.columns.insert(table.columns.end(), {"rr_mean", "rr_std", "sex", "age"});

    ForwardTrace<float> trace;
    Workspace<float> ws;
    for (const auto& beat : beats) {
        VaeSample<float> s = make_sample(beat, params.arch, params.input_scale);
        forward_trace(params, s, Mode::eval, trace, ws);
        FeatureTable::Row row;
        row.values.reserve(table.columns.size());
        for (int i = 0; i < params.arch.latent_dim; ++i)
            row.values.push_back(trace.code.mu[i]);
        row.values.push_back(beat.rr_mean_ms);
        row.values.push_back(beat.rr_std_ms);
        row.values.push_back(beat.sex);
        row.values.push_back(beat.age);
        row.label = beat.label;
        row.patient_id = beat.patient_id;
        table.rows.push_back(std::move(row));
    }
    return table;
}

} // namespace ecgvae
