#ifndef ECGVAE_SIGNAL_PREP_HPP
#define ECGVAE_SIGNAL_PREP_HPP

#include <optional>
#include <string>
#include <vector>

#include "ecgvae/synth.hpp"

namespace ecgvae {

inline constexpr int kBeatSamples = 400;      // 400 ms each side at 500 Hz
inline constexpr int kBeatHalf = 200;         // samples before/after the R peak
inline constexpr int kBeatFlat = EcgRecord::kLeads * kBeatSamples; // 4800

/// One segmented heartbeat: 12 leads x 400 samples around an R peak.
struct Beat {
    std::vector<float> samples; // lead-major, kBeatFlat values
    int r_index = 0;            // source sample index of the R peak

    float at(int lead, int i) const {
        return samples[static_cast<size_t>(lead) * kBeatSamples + i];
    }
};

/// Quality-filtered per-record average beat plus rhythm statistics.
struct MeanBeat {
    std::vector<float> samples; // lead-major, kBeatFlat values
    double rr_mean_ms = 0.0;
    double rr_std_ms = 0.0;
    int n_beats_used = 0;
    std::string patient_id;
    std::optional<int> label;
    int sex = 0;
    int age = 0;
};

struct FilterConfig {
    double magnitude_threshold_mv = 0.05;
    double corr_mean_threshold = 0.5;
    double corr_max_threshold = 0.8;
    int min_beats = 3;
};

/// R-peak detection: band-pass (5-25 Hz, zero phase), differentiate, square,
/// 150 ms moving-window integration, adaptive threshold at 0.4x the running
/// peak level with a 250 ms refractory period, then refinement to the local
/// maximum of raw lead II within +/-40 ms. Returns strictly increasing sample
/// indices with pairwise gaps >= 125 samples; may be empty.
std::vector<int> detect_r_peaks(const EcgRecord& record);

/// One Beat per peak whose full [r-200, r+200) window fits in the record;
/// out-of-bounds windows are dropped silently.
std::vector<Beat> segment_beats(const EcgRecord& record, const std::vector<int>& peaks);

/// Keeps a beat iff mean |value| over all leads and samples >= threshold.
std::vector<Beat> magnitude_filter(const std::vector<Beat>& beats, const FilterConfig& config);

/// Per-beat inter-beat Pearson correlation on flattened 12-lead beats.
/// A beat is removed iff both its mean and its max correlation with the other
/// beats fall below the configured thresholds. Fewer than two beats pass
/// through unchanged.
std::vector<Beat> correlation_filter(const std::vector<Beat>& beats, const FilterConfig& config);

/// Elementwise mean over beats. Throws RecordRejected("too_few_beats") below
/// config.min_beats.
std::vector<float> average_beats(const std::vector<Beat>& beats, const FilterConfig& config);

/// Mean and population std of successive R-R intervals in ms.
/// Throws RecordRejected("too_few_peaks") for fewer than 3 peaks.
std::pair<double, double> rr_statistics(const std::vector<int>& peaks, int fs_hz);

/// Full per-record pipeline: detect, segment, filter, average.
MeanBeat preprocess(const EcgRecord& record, const FilterConfig& config);

/// Pearson correlation of two equal-length vectors; 0 if either has zero
/// variance.
double pearson(const float* a, const float* b, int n);

} // namespace ecgvae

#endif
