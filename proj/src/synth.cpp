#include "ecgvae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecgvae {

const std::array<double, EcgRecord::kLeads> kLeadMix = {
    0.55, 1.00, 0.45, -0.75, 0.18, 0.72, -0.35, 0.60, 0.80, 0.95, 0.90, 0.75};

const std::array<double, kWaves> kBaseAmplitudes = {0.22, -0.20, 2.20, -0.50, 0.70};
const std::array<double, kWaves> kBaseWidths = {0.025, 0.010, 0.011, 0.010, 0.045};
const std::array<double, kWaves> kBaseCenters = {-0.16, -0.026, 0.0, 0.026, 0.30};

namespace {

void validate(const SynthParams& p) {
    if (!(p.heart_rate_bpm >= 30.0 && p.heart_rate_bpm <= 180.0))
        throw ParamError("heart_rate_bpm must be in [30, 180]");
    if (!(p.hr_variability_ms >= 0.0) || !std::isfinite(p.hr_variability_ms))
        throw ParamError("hr_variability_ms must be >= 0");
    for (double w : p.wave_widths)
        if (!(w > 0.0) || !std::isfinite(w)) throw ParamError("wave_widths must be > 0");
    for (const auto& lead : p.wave_amplitudes)
        for (double a : lead)
            if (!std::isfinite(a)) throw ParamError("wave_amplitudes must be finite");
    for (double c : p.wave_centers)
        if (!std::isfinite(c)) throw ParamError("wave_centers must be finite");
    if (!(p.noise_std >= 0.0)) throw ParamError("noise_std must be >= 0");
    if (!(p.baseline_wander_amp >= 0.0)) throw ParamError("baseline_wander_amp must be >= 0");
    if (p.label != 0 && p.label != 1) throw ParamError("label must be 0 or 1");
    if (p.sex != 0 && p.sex != 1) throw ParamError("sex must be 0 or 1");
}

// Adds one beat's bumps (all waves, all leads) centered at r_center_s.
void render_beat(EcgRecord& rec,
                 const std::array<std::array<double, kWaves>, EcgRecord::kLeads>& amps,
                 const std::array<double, kWaves>& widths,
                 const std::array<double, kWaves>& centers, double r_center_s) {
    const double fs = rec.fs_hz;
    for (int w = 0; w < kWaves; ++w) {
        const double c = r_center_s + centers[w];
        const double sigma = widths[w];
        // Gaussian support is negligible past 4 sigma.
        int lo = std::max(0, static_cast<int>(std::floor((c - 4.0 * sigma) * fs)));
        int hi = std::min(rec.n_samples - 1, static_cast<int>(std::ceil((c + 4.0 * sigma) * fs)));
        for (int i = lo; i <= hi; ++i) {
            const double t = i / fs;
            const double g = std::exp(-0.5 * (t - c) * (t - c) / (sigma * sigma));
            for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
                rec.at(lead, i) += static_cast<float>(amps[lead][w] * g);
        }
    }
}

std::array<std::array<double, kWaves>, EcgRecord::kLeads>
project_base(const std::array<double, kWaves>& base) {
    std::array<std::array<double, kWaves>, EcgRecord::kLeads> out{};
    for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
        for (int w = 0; w < kWaves; ++w) out[lead][w] = base[w] * kLeadMix[lead];
    return out;
}

} // namespace

SynthParams make_params_from_base(const std::array<double, kWaves>& base_amplitudes,
                                  const std::array<double, kWaves>& widths,
                                  const std::array<double, kWaves>& centers) {
    SynthParams p;
    p.wave_amplitudes = project_base(base_amplitudes);
    p.wave_widths = widths;
    p.wave_centers = centers;
    return p;
}

EcgRecord generate_record(const SynthParams& params) {
    validate(params);

    EcgRecord rec;
    rec.samples.assign(static_cast<size_t>(EcgRecord::kLeads) * rec.n_samples, 0.0f);
    rec.patient_id = params.patient_id;
    rec.label = params.label;
    rec.sex = params.sex;
    rec.age = params.age;

    auto amps = params.wave_amplitudes;
    auto widths = params.wave_widths;
    if (params.label == 1) {
        for (auto& lead : amps) {
            lead[kR] *= kLabelRAmpScale;
            lead[kT] *= kLabelTAmpScale;
        }
        widths[kS] *= kLabelSWidthScale;
    }

    Rng rng(params.seed);
    const double rr_mean_ms = 60000.0 / params.heart_rate_bpm;
    std::normal_distribution<double> rr_dist(rr_mean_ms, params.hr_variability_ms);
    std::uniform_real_distribution<double> offset_dist(0.35, 0.95);

    // Beat grid: one beat before t=0 and one past the end so record edges
    // carry realistic partial beats.
    const double duration_s = rec.n_samples / static_cast<double>(rec.fs_hz);
    std::vector<double> centers_s;
    double t = offset_dist(rng) * rr_mean_ms / 1000.0;
    centers_s.push_back(t - std::clamp(rr_dist(rng), 300.0, 3000.0) / 1000.0);
    centers_s.push_back(t);
    while (t < duration_s + rr_mean_ms / 1000.0) {
        double rr_s = std::clamp(params.hr_variability_ms > 0.0 ? rr_dist(rng) : rr_mean_ms,
                                 300.0, 3000.0) /
                      1000.0;
        t += rr_s;
        centers_s.push_back(t);
    }

    std::vector<int> peaks;
    for (double c : centers_s) {
        render_beat(rec, amps, widths, params.wave_centers, c);
        int idx = static_cast<int>(std::lround(c * rec.fs_hz));
        if (idx >= 0 && idx < rec.n_samples) peaks.push_back(idx);
    }
    rec.true_peak_indices = std::move(peaks);

    if (params.baseline_wander_amp > 0.0) {
        std::uniform_real_distribution<double> f_dist(0.15, 0.40);
        std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * kPi);
        const double f = f_dist(rng), phase = phase_dist(rng);
        for (int i = 0; i < rec.n_samples; ++i) {
            const float v = static_cast<float>(
                params.baseline_wander_amp * std::sin(2.0 * kPi * f * i / rec.fs_hz + phase));
            for (int lead = 0; lead < EcgRecord::kLeads; ++lead) rec.at(lead, i) += v;
        }
    }

    if (params.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, params.noise_std);
        for (float& v : rec.samples) v += static_cast<float>(noise(rng));
    }

    return rec;
}

std::vector<EcgRecord> generate_dataset(int n_patients, int records_per_patient,
                                        double label_prevalence, std::uint64_t seed) {
    DatasetConfig cfg;
    cfg.records_per_patient = records_per_patient;
    cfg.label_prevalence = label_prevalence;
    return generate_dataset(n_patients, cfg, seed);
}

std::vector<EcgRecord> generate_dataset(int n_patients, const DatasetConfig& cfg,
                                        std::uint64_t seed) {
    if (n_patients < 2) throw ParamError("n_patients must be >= 2 (grouped splits need at least two patients)");
    if (!(cfg.label_prevalence > 0.0 && cfg.label_prevalence < 1.0))
        throw ParamError("label_prevalence must be in (0, 1)");
    if (cfg.records_per_patient < 1) throw ParamError("records_per_patient must be >= 1");

    Rng rng(seed);
    std::uniform_int_distribution<int> age_dist(35, 85);
    std::bernoulli_distribution sex_dist(0.5);

    std::vector<int> ages(n_patients), sexes(n_patients);
    for (int p = 0; p < n_patients; ++p) {
        ages[p] = age_dist(rng);
        sexes[p] = sex_dist(rng) ? 1 : 0;
    }

    // Exactly n_pos positive patients, drawn without replacement with weights
    // exp(age_label_logodds * [age > 60]) so age carries a weak label signal.
    int n_pos = static_cast<int>(std::lround(cfg.label_prevalence * n_patients));
    n_pos = std::clamp(n_pos, 1, n_patients - 1);
    std::vector<std::pair<double, int>> keys(n_patients);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int p = 0; p < n_patients; ++p) {
        double w = std::exp(cfg.age_label_logodds * (ages[p] > 60 ? 1.0 : 0.0));
        double u = std::max(unif(rng), 1e-300);
        keys[p] = {std::pow(u, 1.0 / w), p}; // Efraimidis-Spirakis weighted sample
    }
    std::sort(keys.begin(), keys.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> labels(n_patients, 0);
    for (int i = 0; i < n_pos; ++i) labels[keys[i].second] = 1;

    std::vector<EcgRecord> out;
    out.reserve(static_cast<size_t>(n_patients) * cfg.records_per_patient);
    std::normal_distribution<double> normal01(0.0, 1.0);
    std::uniform_real_distribution<double> bpm_dist(cfg.bpm_lo, cfg.bpm_hi);
    std::uniform_real_distribution<double> hrv_dist(cfg.hr_var_lo_ms, cfg.hr_var_hi_ms);
    std::uniform_real_distribution<double> wander_dist(cfg.wander_lo, cfg.wander_hi);

    char idbuf[16];
    for (int p = 0; p < n_patients; ++p) {
        // Patient-level morphology, drawn once. Downward jitter is clamped so
        // every patient (label shift included) clears the default magnitude
        // filter; diversity is mostly upward and in shape.
        const double global_scale =
            std::clamp(std::exp(cfg.amp_scale_sigma * normal01(rng)), 0.80, 2.40);
        std::array<double, kWaves> base{}, widths{}, centers{};
        for (int w = 0; w < kWaves; ++w) {
            const double wave_jit =
                std::clamp(std::exp(cfg.wave_jitter_sigma * normal01(rng)), 0.65, 1.80);
            base[w] = kBaseAmplitudes[w] * global_scale * wave_jit;
            widths[w] = kBaseWidths[w] *
                        std::clamp(std::exp(cfg.width_jitter_sigma * normal01(rng)), 0.70, 1.60);
            centers[w] = kBaseCenters[w] + (w == kR ? 0.0 : 0.006 * normal01(rng));
        }
        const double bpm = bpm_dist(rng);
        const double hrv = hrv_dist(rng);
        const double wander = wander_dist(rng);
        std::snprintf(idbuf, sizeof(idbuf), "P%04d", p);

        for (int r = 0; r < cfg.records_per_patient; ++r) {
            std::array<double, kWaves> rec_base = base;
            const double rec_scale = std::exp(cfg.record_scale_sigma * normal01(rng));
            for (int w = 0; w < kWaves; ++w)
                rec_base[w] *= rec_scale * std::exp(cfg.record_wave_sigma * normal01(rng));

            SynthParams sp = make_params_from_base(rec_base, widths, centers);
            sp.heart_rate_bpm = std::clamp(bpm + 3.0 * normal01(rng), 30.0, 180.0);
            sp.hr_variability_ms = hrv;
            sp.noise_std = cfg.noise_std;
            sp.baseline_wander_amp = wander;
            sp.label = labels[p];
            sp.sex = sexes[p];
            sp.age = ages[p];
            sp.patient_id = idbuf;
            sp.seed = mix_seed(seed, static_cast<std::uint64_t>(p) * 10007 + r);
            out.push_back(generate_record(sp));
        }
    }
    return out;
}

CorruptMode parse_corrupt_mode(const std::string& name) {
    if (name == "flatline_beats") return CorruptMode::flatline_beats;
    if (name == "noise_burst") return CorruptMode::noise_burst;
    if (name == "rhythm_mix") return CorruptMode::rhythm_mix;
    throw ParamError("unknown corruption mode: " + name);
}

std::vector<int> corrupt_selection(int n_peaks, CorruptMode mode, double fraction,
                                   std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ParamError("fraction must be in [0, 1]");
    const int k = static_cast<int>(std::lround(fraction * n_peaks));
    std::vector<int> idx(n_peaks);
    std::iota(idx.begin(), idx.end(), 0);
    if (mode == CorruptMode::rhythm_mix) {
        // Alternate beats: even indices first, so the two morphologies interleave.
        std::vector<int> order;
        for (int i = 0; i < n_peaks; i += 2) order.push_back(i);
        for (int i = 1; i < n_peaks; i += 2) order.push_back(i);
        idx = order;
    } else {
        Rng rng(mix_seed(seed, 0x5e1ec7));
        std::shuffle(idx.begin(), idx.end(), rng);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

EcgRecord corrupt_record(const EcgRecord& record, CorruptMode mode, double fraction,
                         std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ParamError("fraction must be in [0, 1]");
    if (!record.true_peak_indices)
        throw ParamError("corrupt_record requires ground-truth peak indices");

    EcgRecord out = record;
    const auto& peaks = *record.true_peak_indices;
    const auto chosen = corrupt_selection(static_cast<int>(peaks.size()), mode, fraction, seed);
    if (chosen.empty()) return out;

    const int half = record.fs_hz * 2 / 5; // 400 ms
    Rng rng(mix_seed(seed, 0xb0a57));

    double burst_std = 0.0;
    if (mode == CorruptMode::noise_burst) {
        double mean = 0.0;
        for (float v : record.samples) mean += v;
        mean /= static_cast<double>(record.samples.size());
        double var = 0.0;
        for (float v : record.samples) var += (v - mean) * (v - mean);
        var /= static_cast<double>(record.samples.size());
        burst_std = std::max(6.0 * std::sqrt(var), 0.3);
    }

    // Second morphology for rhythm_mix, identical for every swapped beat.
    std::array<double, kWaves> alt_base = kBaseAmplitudes;
    alt_base[kP] *= 1.5;
    alt_base[kR] *= 0.45;
    alt_base[kT] *= 1.8;
    std::array<double, kWaves> alt_widths = kBaseWidths;
    for (double& w : alt_widths) w *= 1.35;
    const auto alt_amps = [&] {
        SynthParams tmp = make_params_from_base(alt_base, alt_widths, kBaseCenters);
        return tmp.wave_amplitudes;
    }();

    std::normal_distribution<double> noise(0.0, burst_std);
    for (int bi : chosen) {
        const int r = peaks[bi];
        const int lo = std::max(0, r - half);
        const int hi = std::min(record.n_samples, r + half);
        for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
            for (int i = lo; i < hi; ++i) out.at(lead, i) = 0.0f;
        if (mode == CorruptMode::noise_burst) {
            for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
                for (int i = lo; i < hi; ++i) out.at(lead, i) = static_cast<float>(noise(rng));
        } else if (mode == CorruptMode::rhythm_mix) {
            // Render the alternative beat into the cleared window only.
            EcgRecord tmp;
            tmp.fs_hz = record.fs_hz;
            tmp.n_samples = record.n_samples;
            tmp.samples.assign(record.samples.size(), 0.0f);
            render_beat(tmp, alt_amps, alt_widths, kBaseCenters, r / static_cast<double>(record.fs_hz));
            for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
                for (int i = lo; i < hi; ++i) out.at(lead, i) = tmp.at(lead, i);
        }
    }
    return out;
}

} // namespace ecgvae
