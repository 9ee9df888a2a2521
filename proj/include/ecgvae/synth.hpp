#ifndef ECGVAE_SYNTH_HPP
#define ECGVAE_SYNTH_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecgvae/common.hpp"

namespace ecgvae {

/// One 10 s, 12-lead ECG at 500 Hz, lead-major sample layout.
struct EcgRecord {
    static constexpr int kLeads = 12;

    int fs_hz = 500;
    int n_samples = 5000;
    std::vector<float> samples; // kLeads * n_samples, mV
    std::string patient_id;
    std::optional<int> label; // 0/1, absent for unlabeled data
    int sex = 0;              // 0/1
    int age = 0;              // years
    /// Ground-truth R-bump centers (sample indices), synthetic data only.
    std::optional<std::vector<int>> true_peak_indices;

    float& at(int lead, int i) { return samples[static_cast<size_t>(lead) * n_samples + i]; }
    float at(int lead, int i) const { return samples[static_cast<size_t>(lead) * n_samples + i]; }

    int duration_samples() const { return n_samples; }
};

/// Number of morphology bumps per beat: P, Q, R, S, T.
inline constexpr int kWaves = 5;
enum Wave { kP = 0, kQ = 1, kR = 2, kS = 3, kT = 4 };

/// Everything needed to render one synthetic record deterministically.
struct SynthParams {
    double heart_rate_bpm = 70.0;
    double hr_variability_ms = 20.0; // std of RR intervals
    /// Gaussian bump amplitude per lead and wave, mV.
    std::array<std::array<double, kWaves>, EcgRecord::kLeads> wave_amplitudes{};
    std::array<double, kWaves> wave_widths{};  // seconds
    std::array<double, kWaves> wave_centers{}; // seconds, relative to R
    double noise_std = 0.0;           // mV
    double baseline_wander_amp = 0.0; // mV
    int label = 0;                    // 0/1; label=1 applies the documented shift
    int sex = 0;
    int age = 50;
    std::uint64_t seed = 0;
    std::string patient_id = "P0000";
};

/// Per-lead projection of the base (lead II) morphology.
extern const std::array<double, EcgRecord::kLeads> kLeadMix;

/// Reference single-lead morphology in lead II units.
extern const std::array<double, kWaves> kBaseAmplitudes; // mV
extern const std::array<double, kWaves> kBaseWidths;     // s
extern const std::array<double, kWaves> kBaseCenters;    // s relative to R

/// Build SynthParams from a base (lead II) amplitude set, projecting all 12
/// leads through kLeadMix. Widths/centers default to the reference morphology.
SynthParams make_params_from_base(const std::array<double, kWaves>& base_amplitudes,
                                  const std::array<double, kWaves>& widths = kBaseWidths,
                                  const std::array<double, kWaves>& centers = kBaseCenters);

/// Render one record. Deterministic for a fixed SynthParams (incl. seed).
/// label == 1 scales R amplitude by 0.6, S width by 1.8 and T amplitude by
/// 0.5, so the label is decodable from beat morphology.
EcgRecord generate_record(const SynthParams& params);

inline constexpr double kLabelRAmpScale = 0.6;
inline constexpr double kLabelSWidthScale = 1.8;
inline constexpr double kLabelTAmpScale = 0.5;

/// Tunables for dataset generation. Ranges are engineering choices; the
/// defaults are calibrated so that a small reconstruction-only latent code
/// does not separate the classes trivially.
struct DatasetConfig {
    int records_per_patient = 5;
    double label_prevalence = 0.115;
    double amp_scale_sigma = 0.35;    // inter-patient lognormal amplitude spread
    double wave_jitter_sigma = 0.35;  // per-wave lognormal jitter
    double width_jitter_sigma = 0.08;
    double record_scale_sigma = 0.08; // per-record lognormal perturbation
    double record_wave_sigma = 0.05;
    double noise_std = 0.02;          // mV
    double bpm_lo = 55.0, bpm_hi = 95.0;
    double hr_var_lo_ms = 10.0, hr_var_hi_ms = 40.0;
    double wander_lo = 0.02, wander_hi = 0.08; // mV
    double age_label_logodds = 0.5;   // extra log-odds of label=1 for age > 60
};

/// Generate a labeled cohort: per-patient morphology drawn once and perturbed
/// per record; all records of a patient share label, sex and age; realized
/// prevalence within one patient of the target.
std::vector<EcgRecord> generate_dataset(int n_patients, int records_per_patient,
                                        double label_prevalence, std::uint64_t seed);

/// Same, with all knobs exposed.
std::vector<EcgRecord> generate_dataset(int n_patients, const DatasetConfig& config,
                                        std::uint64_t seed);

enum class CorruptMode { flatline_beats, noise_burst, rhythm_mix };

CorruptMode parse_corrupt_mode(const std::string& name);

/// Which beat windows (indices into true_peak_indices) a corruption pass with
/// these arguments touches. Exposed so tests can account per beat.
std::vector<int> corrupt_selection(int n_peaks, CorruptMode mode, double fraction,
                                   std::uint64_t seed);

/// Degrade a fraction of beat windows: zero them out, replace them with
/// high-amplitude noise, or swap in a second beat morphology.
EcgRecord corrupt_record(const EcgRecord& record, CorruptMode mode, double fraction,
                         std::uint64_t seed);

} // namespace ecgvae

#endif
