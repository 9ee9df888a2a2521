// ecgvae command-line pipeline: synth -> preprocess -> split -> pretrain ->
// finetune -> features/eval/traverse, plus baselines and the latent sweep.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ecgvae/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecgvae;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// ---------------------------------------------------------------------------
// Config file support: CLI flag > config file > built-in default.
// The file is a flat JSON object keyed by long option names; entries that
// match an option of the invoked subcommand are injected ahead of the user's
// own flags, which therefore win (options take the last occurrence).
// ---------------------------------------------------------------------------

std::vector<std::string> inject_config(const CLI::App& app, std::vector<std::string> args) {
    std::string config_path;
    for (size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") config_path = args[i + 1];
    if (config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw DataError("cannot open config file: " + config_path);
    json cfg;
    try {
        cfg = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed config file " + config_path + ": " + e.what());
    }
    if (!cfg.is_object()) throw DataError("config file must be a flat JSON object");

    // Locate the subcommand the user invoked.
    const CLI::App* sub = nullptr;
    size_t sub_pos = 0;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i].empty() || args[i][0] == '-') continue;
        if (const CLI::App* s = app.get_subcommand_no_throw(args[i]); s != nullptr) {
            sub = s;
            sub_pos = i;
            // Nested subcommand (baseline pca|logreg|sexage).
            for (size_t j = i + 1; j < args.size(); ++j) {
                if (args[j].empty() || args[j][0] == '-') break;
                if (const CLI::App* s2 = sub->get_subcommand_no_throw(args[j]); s2 != nullptr) {
                    sub = s2;
                    sub_pos = j;
                }
                break;
            }
            break;
        }
    }
    if (sub == nullptr) return args;

    std::vector<std::string> injected;
    for (const auto& [key, value] : cfg.items()) {
        const CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr) continue; // keys for other subcommands are fine
        injected.push_back("--" + key);
        injected.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    args.insert(args.begin() + sub_pos + 1, injected.begin(), injected.end());
    return args;
}

void write_effective_config(const fs::path& path, const std::string& subcommand, json flags) {
    flags["subcommand"] = subcommand;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << flags.dump(2) << "\n";
    std::fprintf(stderr, "effective config -> %s\n", path.string().c_str());
}

std::vector<MeanBeat> load_meanbeats(const std::string& dir) {
    return read_ebd_meanbeats(dir);
}

SplitPlan load_plan(const std::string& path) { return read_split_plan(path); }

struct FoldSets {
    std::vector<MeanBeat> train, val;
};

FoldSets fold_sets(const std::vector<MeanBeat>& beats, const SplitPlan& plan, int fold) {
    if (fold < 0 || fold >= static_cast<int>(plan.folds.size()))
        throw ParamError("fold index out of range (plan has " +
                         std::to_string(plan.folds.size()) + " folds)");
    FoldSets sets;
    for (int i : select_by_patient(beats, plan.folds[fold].train_patients))
        sets.train.push_back(beats[i]);
    for (int i : select_by_patient(beats, plan.folds[fold].val_patients))
        sets.val.push_back(beats[i]);
    if (sets.train.empty() || sets.val.empty())
        throw DataError("fold " + std::to_string(fold) + " selects no records");
    return sets;
}

json train_config_json(const TrainConfig& c) {
    return {{"beta", c.weights.beta},
            {"gamma", c.weights.gamma},
            {"lr", c.learning_rate},
            {"weight-decay", c.weight_decay},
            {"batch", c.batch_size},
            {"patience", c.patience_epochs},
            {"epochs", c.max_epochs},
            {"clip", c.clip_norm},
            {"seed", c.seed},
            {"input-scale", c.input_scale},
            {"threads", c.n_threads}};
}

void add_train_flags(CLI::App* cmd, TrainConfig& c) {
    cmd->add_option("--beta", c.weights.beta, "KL weight");
    cmd->add_option("--gamma", c.weights.gamma, "BCE weight");
    cmd->add_option("--lr", c.learning_rate, "learning rate");
    cmd->add_option("--weight-decay", c.weight_decay, "decoupled weight decay");
    cmd->add_option("--batch", c.batch_size, "batch size");
    cmd->add_option("--patience", c.patience_epochs, "early-stopping patience (epochs)");
    cmd->add_option("--epochs", c.max_epochs, "epoch cap");
    cmd->add_option("--clip", c.clip_norm, "global gradient-norm clip");
    cmd->add_option("--seed", c.seed, "training seed");
    cmd->add_option("--input-scale", c.input_scale, "mV -> model unit scale");
    cmd->add_option("--threads", c.n_threads, "worker threads (0 = hardware)");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    int patients = 100;
    int records_per_patient = 5;
    double prevalence = 0.115;
    std::uint64_t seed = 0;
    std::string out;
    double noise_std = 0.02;
    double amp_sigma = 0.35;
};

void run_synth(const SynthArgs& a) {
    DatasetConfig cfg;
    cfg.records_per_patient = a.records_per_patient;
    cfg.label_prevalence = a.prevalence;
    cfg.noise_std = a.noise_std;
    cfg.amp_scale_sigma = a.amp_sigma;
    auto records = generate_dataset(a.patients, cfg, a.seed);
    write_ebd(fs::path(a.out), std::span<const EcgRecord>(records));
    write_effective_config(fs::path(a.out) / "effective_config.json", "synth",
                           {{"patients", a.patients},
                            {"records-per-patient", a.records_per_patient},
                            {"prevalence", a.prevalence},
                            {"seed", a.seed},
                            {"noise-std", a.noise_std},
                            {"amp-sigma", a.amp_sigma},
                            {"out", a.out}});
    std::printf("synth: wrote %zu records (%d patients) to %s\n", records.size(), a.patients,
                a.out.c_str());
}

struct PreprocessArgs {
    std::string in, out, reject_report;
    FilterConfig filter;
};

void run_preprocess(const PreprocessArgs& a) {
    auto records = read_ebd_records(a.in);
    std::vector<MeanBeat> beats;
    std::vector<json> rejections;
    for (const auto& rec : records) {
        try {
            beats.push_back(preprocess(rec, a.filter));
        } catch (const RecordRejected& e) {
            rejections.push_back({{"patient_id", rec.patient_id}, {"reason", e.reason}});
        }
    }
    if (beats.empty()) throw DataError("preprocessing rejected every record");
    write_ebd(fs::path(a.out), std::span<const MeanBeat>(beats));

    const fs::path report =
        a.reject_report.empty() ? fs::path(a.out) / "rejections.jsonl" : fs::path(a.reject_report);
    std::ofstream rr(report, std::ios::trunc);
    for (const auto& r : rejections) rr << r.dump() << "\n";

    write_effective_config(fs::path(a.out) / "effective_config.json", "preprocess",
                           {{"in", a.in},
                            {"out", a.out},
                            {"mag-threshold", a.filter.magnitude_threshold_mv},
                            {"corr-mean", a.filter.corr_mean_threshold},
                            {"corr-max", a.filter.corr_max_threshold},
                            {"min-beats", a.filter.min_beats},
                            {"reject-report", report.string()}});
    std::printf("preprocess: %zu mean beats, %zu rejected -> %s\n", beats.size(),
                rejections.size(), a.out.c_str());
}

struct SplitArgs {
    std::string in, out;
    double ratio = 0.85;
    int folds = 5;
    std::uint64_t seed = 0;
};

void run_split(const SplitArgs& a) {
    std::vector<PatientInfo> patients;
    if (read_ebd_kind(a.in) == EbdKind::raw) {
        auto records = read_ebd_records(a.in);
        patients = collect_patients(std::span<const EcgRecord>(records));
    } else {
        auto beats = load_meanbeats(a.in);
        patients = collect_patients(std::span<const MeanBeat>(beats));
    }
    const auto plan = make_splits(patients, a.ratio, a.folds, a.seed);
    write_split_plan(a.out, plan);
    write_effective_config(a.out + ".config.json", "split",
                           {{"in", a.in},
                            {"ratio", a.ratio},
                            {"folds", a.folds},
                            {"seed", a.seed},
                            {"out", a.out}});
    std::printf("split: %zu test patients, %d folds -> %s\n", plan.test_patients.size(), a.folds,
                a.out.c_str());
}

struct PretrainArgs {
    std::string in, plan, out;
    int latent = 10;
    int fold = 0;
    std::uint64_t init_seed = 1;
    TrainConfig train;
};

void run_pretrain(const PretrainArgs& a) {
    const auto beats = load_meanbeats(a.in);
    const auto plan = load_plan(a.plan);
    const auto sets = fold_sets(beats, plan, a.fold);

    auto params = init_params<float>(small_vae_architecture(a.latent, a.latent), a.init_seed);
    std::fprintf(stderr, "pretrain: L=%d, %zu parameters, %zu train / %zu val records\n",
                 a.latent, param_count(params), sets.train.size(), sets.val.size());
    auto res = pretrain(params, sets.train, sets.val, a.train);
    save_checkpoint(a.out, res.params);
    write_train_log(a.out + ".trainlog.jsonl", res.log);

    json flags = train_config_json(a.train);
    flags.update(json{{"in", a.in},
                      {"plan", a.plan},
                      {"latent", a.latent},
                      {"fold", a.fold},
                      {"init-seed", a.init_seed},
                      {"out", a.out}});
    write_effective_config(a.out + ".config.json", "pretrain", flags);
    std::printf("pretrain: best epoch %d (%s) -> %s\n", res.log.best_epoch,
                res.log.stopping_reason.c_str(), a.out.c_str());
}

struct FinetuneArgs {
    std::string ckpt, in, plan, out, stage = "full";
    int pred_dim = 0; // 0 = keep checkpoint value
    int fold = 0;
    std::uint64_t head_seed = 2;
    TrainConfig train;
};

void run_finetune(const FinetuneArgs& a) {
    auto params = load_checkpoint(a.ckpt);
    const auto beats = load_meanbeats(a.in);
    const auto plan = load_plan(a.plan);
    const auto sets = fold_sets(beats, plan, a.fold);

    // The checkpoint must fit the dataset's beat shape.
    VaeArchitecture expected = params.arch;
    expected.input_leads = EcgRecord::kLeads;
    expected.input_samples = kBeatSamples;
    if (const auto diffs = architecture_mismatch(params.arch, expected); !diffs.empty()) {
        std::string fields;
        for (const auto& d : diffs) fields += (fields.empty() ? "" : ", ") + d;
        throw DataError("checkpoint architecture does not fit this dataset; differing fields: " +
                        fields);
    }

    if (a.pred_dim > 0 && a.pred_dim != params.arch.pred_dim)
        params = reshape_head(params, a.pred_dim, a.head_seed);

    TrainResult res;
    if (a.stage == "head")
        res = finetune_head(params, sets.train, sets.val, a.train);
    else if (a.stage == "full")
        res = finetune_full(params, sets.train, sets.val, a.train);
    else
        throw ParamError("stage must be \"head\" or \"full\"");

    save_checkpoint(a.out, res.params);
    write_train_log(a.out + ".trainlog.jsonl", res.log);
    json flags = train_config_json(a.train);
    flags.update(json{{"ckpt", a.ckpt},
                      {"in", a.in},
                      {"plan", a.plan},
                      {"pred-dim", a.pred_dim},
                      {"stage", a.stage},
                      {"fold", a.fold},
                      {"out", a.out}});
    write_effective_config(a.out + ".config.json", "finetune", flags);
    std::printf("finetune(%s): best epoch %d (%s) -> %s\n", a.stage.c_str(), res.log.best_epoch,
                res.log.stopping_reason.c_str(), a.out.c_str());
}

struct FeaturesArgs {
    std::string ckpt, in, out;
};

void run_features(const FeaturesArgs& a) {
    const auto params = load_checkpoint(a.ckpt);
    const auto beats = load_meanbeats(a.in);
    const auto table = extract_features(params, beats);
    write_features_csv(a.out, table);
    write_effective_config(a.out + ".config.json", "features",
                           {{"ckpt", a.ckpt}, {"in", a.in}, {"out", a.out}});
    std::printf("features: %zu rows x %d model features -> %s\n", table.rows.size(),
                table.n_model_features(), a.out.c_str());
}

struct EvalArgs {
    std::string ckpt, in, plan, out;
    int fold = 0;
    double l1 = 1e-3, l2 = 1e-3;
};

void run_eval(const EvalArgs& a) {
    const auto params = load_checkpoint(a.ckpt);
    const auto beats = load_meanbeats(a.in);
    const auto plan = load_plan(a.plan);

    ExperimentConfig cfg;
    cfg.logreg_l1 = a.l1;
    cfg.logreg_l2 = a.l2;
    Experiment ex(beats, plan, cfg);
    ExperimentReport report;
    report.results.push_back(ex.evaluate_vae(params, a.fold, params.phase_tag));
    report.notes = "single-checkpoint evaluation on the held-out test patients";
    write_report_json(a.out, report);
    const fs::path csv = fs::path(a.out).replace_extension(".csv");
    write_report_csv(csv, report.results);
    write_effective_config(a.out + ".config.json", "eval",
                           {{"ckpt", a.ckpt},
                            {"in", a.in},
                            {"plan", a.plan},
                            {"fold", a.fold},
                            {"l1", a.l1},
                            {"l2", a.l2},
                            {"out", a.out}});
    const auto& r = report.results.front();
    std::printf("eval: AUROC %.3f (%.3f-%.3f), F1 %.3f, MSE %.5f, corr %.3f -> %s\n",
                r.roc.auroc, r.roc.ci_lo, r.roc.ci_hi, r.f1, r.mse, r.corr, a.out.c_str());
}

struct TraverseArgs {
    std::string ckpt, in, plan, out;
    int feature = 0;
    int steps = 7;
    int fold = 0;
};

void run_traverse(const TraverseArgs& a) {
    const auto params = load_checkpoint(a.ckpt);
    const auto beats = load_meanbeats(a.in);
    const auto plan = load_plan(a.plan);
    const auto sets = fold_sets(beats, plan, a.fold);
    const auto stats = latent_statistics(params, sets.train);
    const auto grid = factor_traversal(params, a.feature, stats, a.steps);

    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + a.out);
    out << "# factor traversal: feature=" << grid.feature_index << " mu=" << grid.mu
        << " sigma=" << grid.sigma << " steps=" << a.steps
        << " leads=" << EcgRecord::kLeads << " samples=" << kBeatSamples << " units=mV\n";
    out << "step,latent_value";
    for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
        for (int i = 0; i < kBeatSamples; ++i) out << ",l" << lead << "_t" << i;
    out << "\n";
    out.precision(7);
    for (size_t s = 0; s < grid.values.size(); ++s) {
        out << s << "," << grid.values[s];
        for (float v : grid.decoded[s]) out << "," << v;
        out << "\n";
    }
    write_effective_config(a.out + ".config.json", "traverse",
                           {{"ckpt", a.ckpt},
                            {"in", a.in},
                            {"plan", a.plan},
                            {"feature", a.feature},
                            {"steps", a.steps},
                            {"fold", a.fold},
                            {"out", a.out}});
    std::printf("traverse: feature %d, %d steps -> %s\n", a.feature, a.steps, a.out.c_str());
}

struct SweepArgs {
    std::string in, plan, out;
    std::vector<int> latent_dims = {2, 5, 10, 20, 30};
    int folds = 5;
    int pretrain_epochs = 40, head_epochs = 25, full_epochs = 20;
    double l1 = 1e-3, l2 = 1e-3;
    TrainConfig train;
};

void run_sweep(const SweepArgs& a) {
    const auto beats = load_meanbeats(a.in);
    const auto plan = load_plan(a.plan);
    ExperimentConfig cfg;
    cfg.train = a.train;
    cfg.pretrain_epochs = a.pretrain_epochs;
    cfg.head_epochs = a.head_epochs;
    cfg.full_epochs = a.full_epochs;
    cfg.logreg_l1 = a.l1;
    cfg.logreg_l2 = a.l2;
    cfg.verbose = true;
    const auto results = run_latent_sweep(beats, plan, cfg, a.latent_dims, a.folds);
    write_report_csv(a.out, results);
    json flags = train_config_json(a.train);
    flags.update(json{{"in", a.in},
                      {"plan", a.plan},
                      {"latent-dims", a.latent_dims},
                      {"folds", a.folds},
                      {"pretrain-epochs", a.pretrain_epochs},
                      {"head-epochs", a.head_epochs},
                      {"full-epochs", a.full_epochs},
                      {"out", a.out}});
    write_effective_config(a.out + ".config.json", "sweep", flags);
    std::printf("sweep: %zu result rows -> %s\n", results.size(), a.out.c_str());
}

struct BaselinePcaArgs {
    std::string in, plan, out;
    int components = 10;
    int fold = 0;
};

void run_baseline_pca(const BaselinePcaArgs& a) {
    const auto beats = load_meanbeats(a.in);
    std::vector<MeanBeat> fit_set = beats;
    if (!a.plan.empty()) {
        const auto plan = load_plan(a.plan);
        fit_set = fold_sets(beats, plan, a.fold).train;
    }
    MatrixXd X(fit_set.size(), kBeatFlat);
    for (size_t i = 0; i < fit_set.size(); ++i)
        for (int j = 0; j < kBeatFlat; ++j)
            X(static_cast<Eigen::Index>(i), j) = fit_set[i].samples[j];
    const auto pca = pca_fit(X, a.components);

    FeatureTable table;
    table.latent_dim = a.components;
    for (int i = 0; i < a.components; ++i) table.columns.push_back("z" + std::to_string(i));
    table.columns.insert(table.columns.end(), {"rr_mean", "rr_std", "sex", "age"});
    for (const auto& b : beats) {
        VectorXd x(kBeatFlat);
        for (int j = 0; j < kBeatFlat; ++j) x[j] = b.samples[j];
        const VectorXd code = pca_transform(pca, x);
        FeatureTable::Row row;
        for (int i = 0; i < a.components; ++i) row.values.push_back(code[i]);
        row.values.insert(row.values.end(),
                          {b.rr_mean_ms, b.rr_std_ms, static_cast<double>(b.sex),
                           static_cast<double>(b.age)});
        row.label = b.label;
        row.patient_id = b.patient_id;
        table.rows.push_back(std::move(row));
    }
    write_features_csv(a.out, table);
    write_effective_config(a.out + ".config.json", "baseline pca",
                           {{"in", a.in},
                            {"plan", a.plan},
                            {"fold", a.fold},
                            {"components", a.components},
                            {"out", a.out}});
    double total_explained = pca.explained_variance.sum();
    std::printf("baseline pca: %d components, explained variance %.4g -> %s\n", a.components,
                total_explained, a.out.c_str());
}

struct BaselineLogregArgs {
    std::string features, plan, out;
    double l1 = 1e-3, l2 = 1e-3;
    int fold = 0;
};

void run_baseline_logreg(const BaselineLogregArgs& a) {
    const auto table = read_features_csv(a.features);
    std::vector<int> train_rows, eval_rows;
    if (!a.plan.empty()) {
        const auto plan = load_plan(a.plan);
        if (a.fold < 0 || a.fold >= static_cast<int>(plan.folds.size()))
            throw ParamError("fold index out of range");
        const auto& train_ids = plan.folds[a.fold].train_patients;
        for (size_t i = 0; i < table.rows.size(); ++i) {
            const auto& pid = table.rows[i].patient_id;
            if (std::find(train_ids.begin(), train_ids.end(), pid) != train_ids.end())
                train_rows.push_back(static_cast<int>(i));
            else if (std::find(plan.test_patients.begin(), plan.test_patients.end(), pid) !=
                     plan.test_patients.end())
                eval_rows.push_back(static_cast<int>(i));
        }
    } else {
        for (size_t i = 0; i < table.rows.size(); ++i) {
            train_rows.push_back(static_cast<int>(i));
            eval_rows.push_back(static_cast<int>(i));
        }
    }
    if (train_rows.empty() || eval_rows.empty())
        throw DataError("logreg baseline has empty train or eval selection");

    const int w = table.n_model_features();
    auto matrix_of = [&](const std::vector<int>& rows) {
        MatrixXd X(rows.size(), w);
        for (size_t i = 0; i < rows.size(); ++i)
            for (int j = 0; j < w; ++j)
                X(static_cast<Eigen::Index>(i), j) = table.rows[rows[i]].values[j];
        return X;
    };
    std::vector<int> y_train;
    for (int i : train_rows) {
        if (!table.rows[i].label.has_value()) throw DataError("unlabeled row in training selection");
        y_train.push_back(*table.rows[i].label);
    }
    const auto model = logreg_fit(matrix_of(train_rows), y_train, a.l1, a.l2);
    const VectorXd proba = logreg_predict_proba(model, matrix_of(eval_rows));

    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + a.out);
    out << "patient_id,label,score\n";
    out.precision(9);
    std::vector<double> scores;
    std::vector<int> labels;
    bool all_labeled = true;
    for (size_t i = 0; i < eval_rows.size(); ++i) {
        const auto& row = table.rows[eval_rows[i]];
        out << row.patient_id << ",";
        if (row.label.has_value())
            out << *row.label;
        else
            all_labeled = false;
        out << "," << proba[static_cast<Eigen::Index>(i)] << "\n";
        scores.push_back(proba[static_cast<Eigen::Index>(i)]);
        if (row.label.has_value()) labels.push_back(*row.label);
    }
    write_effective_config(a.out + ".config.json", "baseline logreg",
                           {{"features", a.features},
                            {"plan", a.plan},
                            {"fold", a.fold},
                            {"l1", a.l1},
                            {"l2", a.l2},
                            {"out", a.out}});
    if (all_labeled && !labels.empty()) {
        const auto roc = auroc(scores, labels);
        std::printf("baseline logreg: AUROC %.3f (%.3f-%.3f), F1 %.3f, obj %.6f -> %s\n",
                    roc.auroc, roc.ci_lo, roc.ci_hi, macro_f1(scores, labels), model.objective,
                    a.out.c_str());
    } else {
        std::printf("baseline logreg: scored %zu rows -> %s\n", scores.size(), a.out.c_str());
    }
}

struct BaselineSexAgeArgs {
    std::string in, plan, out;
    int fold = 0;
};

void run_baseline_sexage(const BaselineSexAgeArgs& a) {
    const auto beats = load_meanbeats(a.in);
    const auto plan = load_plan(a.plan);
    ExperimentConfig cfg;
    Experiment ex(beats, plan, cfg);
    const auto r = ex.sexage_baseline(a.fold);
    write_report_csv(a.out, {r});
    write_effective_config(a.out + ".config.json", "baseline sexage",
                           {{"in", a.in}, {"plan", a.plan}, {"fold", a.fold}, {"out", a.out}});
    std::printf("baseline sexage: AUROC %.3f (%.3f-%.3f), F1 %.3f -> %s\n", r.roc.auroc,
                r.roc.ci_lo, r.roc.ci_hi, r.f1, a.out.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ecgvae: joint VAE feature extraction for 12-lead ECGs"};
    app.require_subcommand(1);
    // Config-file values are injected before the user's own flags; taking the
    // last occurrence makes explicit flags win.
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string config_file;
    app.add_option("--config", config_file, "flat JSON config file (CLI flags win)")
        ->expected(1);

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate a labeled synthetic ECG dataset");
    synth_cmd->add_option("--patients", synth_args.patients, "number of patients")->required();
    synth_cmd->add_option("--records-per-patient", synth_args.records_per_patient, "records per patient");
    synth_cmd->add_option("--prevalence", synth_args.prevalence, "positive-patient fraction");
    synth_cmd->add_option("--seed", synth_args.seed, "generator seed");
    synth_cmd->add_option("--noise-std", synth_args.noise_std, "white-noise std (mV)");
    synth_cmd->add_option("--amp-sigma", synth_args.amp_sigma, "inter-patient amplitude spread");
    synth_cmd->add_option("--out", synth_args.out, "output dataset directory")->required();
    synth_cmd->callback([&] { run_synth(synth_args); });

    PreprocessArgs prep_args;
    auto* prep_cmd = app.add_subcommand("preprocess", "detect beats, filter, and average per record");
    prep_cmd->add_option("--in", prep_args.in, "raw dataset directory")->required();
    prep_cmd->add_option("--out", prep_args.out, "mean-beat output directory")->required();
    prep_cmd->add_option("--mag-threshold", prep_args.filter.magnitude_threshold_mv, "magnitude filter (mV)");
    prep_cmd->add_option("--corr-mean", prep_args.filter.corr_mean_threshold, "mean-correlation threshold");
    prep_cmd->add_option("--corr-max", prep_args.filter.corr_max_threshold, "max-correlation threshold");
    prep_cmd->add_option("--min-beats", prep_args.filter.min_beats, "minimum surviving beats");
    prep_cmd->add_option("--reject-report", prep_args.reject_report, "rejection report path (JSON lines)");
    prep_cmd->callback([&] { run_preprocess(prep_args); });

    SplitArgs split_args;
    auto* split_cmd = app.add_subcommand("split", "patient-grouped stratified train/test + CV folds");
    split_cmd->add_option("--in", split_args.in, "dataset directory")->required();
    split_cmd->add_option("--ratio", split_args.ratio, "train fraction");
    split_cmd->add_option("--folds", split_args.folds, "number of CV folds");
    split_cmd->add_option("--seed", split_args.seed, "split seed");
    split_cmd->add_option("--out", split_args.out, "plan JSON path")->required();
    split_cmd->callback([&] { run_split(split_args); });

    PretrainArgs pre_args;
    auto* pre_cmd = app.add_subcommand("pretrain", "self-supervised VAE pretraining");
    pre_cmd->add_option("--in", pre_args.in, "mean-beat dataset directory")->required();
    pre_cmd->add_option("--plan", pre_args.plan, "split plan JSON")->required();
    pre_cmd->add_option("--latent", pre_args.latent, "latent dimension");
    pre_cmd->add_option("--fold", pre_args.fold, "fold index");
    pre_cmd->add_option("--init-seed", pre_args.init_seed, "weight init seed");
    pre_cmd->add_option("--out", pre_args.out, "checkpoint path")->required();
    add_train_flags(pre_cmd, pre_args.train);
    pre_cmd->callback([&] { run_pretrain(pre_args); });

    FinetuneArgs ft_args;
    auto* ft_cmd = app.add_subcommand("finetune", "head-only or end-to-end fine-tuning");
    ft_cmd->add_option("--ckpt", ft_args.ckpt, "input checkpoint")->required();
    ft_cmd->add_option("--in", ft_args.in, "mean-beat dataset directory")->required();
    ft_cmd->add_option("--plan", ft_args.plan, "split plan JSON")->required();
    ft_cmd->add_option("--pred-dim", ft_args.pred_dim, "latent dims feeding the head (0 = keep)");
    ft_cmd->add_option("--stage", ft_args.stage, "head | full");
    ft_cmd->add_option("--fold", ft_args.fold, "fold index");
    ft_cmd->add_option("--head-seed", ft_args.head_seed, "head re-init seed for split task");
    ft_cmd->add_option("--out", ft_args.out, "output checkpoint")->required();
    add_train_flags(ft_cmd, ft_args.train);
    ft_cmd->callback([&] { run_finetune(ft_args); });

    FeaturesArgs feat_args;
    auto* feat_cmd = app.add_subcommand("features", "eval-mode latent feature table (CSV)");
    feat_cmd->add_option("--ckpt", feat_args.ckpt, "checkpoint")->required();
    feat_cmd->add_option("--in", feat_args.in, "mean-beat dataset directory")->required();
    feat_cmd->add_option("--out", feat_args.out, "CSV output")->required();
    feat_cmd->callback([&] { run_features(feat_args); });

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test set");
    eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint")->required();
    eval_cmd->add_option("--in", eval_args.in, "mean-beat dataset directory")->required();
    eval_cmd->add_option("--plan", eval_args.plan, "split plan JSON")->required();
    eval_cmd->add_option("--fold", eval_args.fold, "fold whose training set fits the probe");
    eval_cmd->add_option("--l1", eval_args.l1, "logreg l1 weight");
    eval_cmd->add_option("--l2", eval_args.l2, "logreg l2 weight");
    eval_cmd->add_option("--out", eval_args.out, "report JSON path")->required();
    eval_cmd->callback([&] { run_eval(eval_args); });

    TraverseArgs trav_args;
    auto* trav_cmd = app.add_subcommand("traverse", "factor traversal of one latent feature");
    trav_cmd->add_option("--ckpt", trav_args.ckpt, "checkpoint")->required();
    trav_cmd->add_option("--in", trav_args.in, "mean-beat dataset directory")->required();
    trav_cmd->add_option("--plan", trav_args.plan, "split plan JSON")->required();
    trav_cmd->add_option("--feature", trav_args.feature, "latent feature index")->required();
    trav_cmd->add_option("--steps", trav_args.steps, "number of sweep steps");
    trav_cmd->add_option("--fold", trav_args.fold, "fold providing the latent statistics");
    trav_cmd->add_option("--out", trav_args.out, "CSV output")->required();
    trav_cmd->callback([&] { run_traverse(trav_args); });

    SweepArgs sweep_args;
    auto* sweep_cmd = app.add_subcommand("sweep", "latent-dimension sweep (naive/specific/PCA)");
    sweep_cmd->add_option("--in", sweep_args.in, "mean-beat dataset directory")->required();
    sweep_cmd->add_option("--plan", sweep_args.plan, "split plan JSON")->required();
    sweep_cmd->add_option("--latent-dims", sweep_args.latent_dims, "latent dims to sweep")
        ->delimiter(',');
    sweep_cmd->add_option("--folds", sweep_args.folds, "folds to run");
    sweep_cmd->add_option("--pretrain-epochs", sweep_args.pretrain_epochs, "pretrain epoch cap");
    sweep_cmd->add_option("--head-epochs", sweep_args.head_epochs, "head stage epoch cap");
    sweep_cmd->add_option("--full-epochs", sweep_args.full_epochs, "full stage epoch cap");
    sweep_cmd->add_option("--l1", sweep_args.l1, "logreg l1 weight");
    sweep_cmd->add_option("--l2", sweep_args.l2, "logreg l2 weight");
    sweep_cmd->add_option("--out", sweep_args.out, "CSV output")->required();
    add_train_flags(sweep_cmd, sweep_args.train);
    sweep_cmd->callback([&] { run_sweep(sweep_args); });

    auto* base_cmd = app.add_subcommand("baseline", "PCA / logistic-regression / sex+age baselines");
    base_cmd->require_subcommand(1);

    BaselinePcaArgs pca_args;
    auto* pca_cmd = base_cmd->add_subcommand("pca", "PCA feature extraction");
    pca_cmd->add_option("--in", pca_args.in, "mean-beat dataset directory")->required();
    pca_cmd->add_option("--components", pca_args.components, "number of components");
    pca_cmd->add_option("--plan", pca_args.plan, "optional split plan (fit on fold train)");
    pca_cmd->add_option("--fold", pca_args.fold, "fold index");
    pca_cmd->add_option("--out", pca_args.out, "feature CSV output")->required();
    pca_cmd->callback([&] { run_baseline_pca(pca_args); });

    BaselineLogregArgs lr_args;
    auto* lr_cmd = base_cmd->add_subcommand("logreg", "elastic-net logistic regression on a feature table");
    lr_cmd->add_option("--features", lr_args.features, "feature CSV")->required();
    lr_cmd->add_option("--l1", lr_args.l1, "l1 weight");
    lr_cmd->add_option("--l2", lr_args.l2, "l2 weight");
    lr_cmd->add_option("--plan", lr_args.plan, "optional split plan (train on fold, score test)");
    lr_cmd->add_option("--fold", lr_args.fold, "fold index");
    lr_cmd->add_option("--out", lr_args.out, "scores CSV output")->required();
    lr_cmd->callback([&] { run_baseline_logreg(lr_args); });

    BaselineSexAgeArgs sa_args;
    auto* sa_cmd = base_cmd->add_subcommand("sexage", "sex+age logistic-regression baseline");
    sa_cmd->add_option("--in", sa_args.in, "mean-beat dataset directory")->required();
    sa_cmd->add_option("--plan", sa_args.plan, "split plan JSON")->required();
    sa_cmd->add_option("--fold", sa_args.fold, "fold index");
    sa_cmd->add_option("--out", sa_args.out, "report CSV output")->required();
    sa_cmd->callback([&] { run_baseline_sexage(sa_args); });

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        args = inject_config(app, std::move(args));
        std::reverse(args.begin(), args.end()); // CLI11 consumes args back to front
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const ParamError& e) {
        std::fprintf(stderr, "parameter error: %s\n", e.what());
        return kExitUsage;
    } catch (const RecordRejected& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return 0;
}
