#include "ecgvae/signal_prep.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecgvae {

namespace {

constexpr int kRhythmLead = 1; // lead II

struct Biquad {
    double b0, b1, b2, a1, a2; // normalized, a0 == 1
};

// Constant-peak-gain band-pass biquad (RBJ audio EQ cookbook).
Biquad bandpass_biquad(double f_lo, double f_hi, double fs) {
    const double f0 = std::sqrt(f_lo * f_hi);
    const double q = f0 / (f_hi - f_lo);
    const double w0 = 2.0 * kPi * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad bq;
    bq.b0 = alpha / a0;
    bq.b1 = 0.0;
    bq.b2 = -alpha / a0;
    bq.a1 = -2.0 * std::cos(w0) / a0;
    bq.a2 = (1.0 - alpha) / a0;
    return bq;
}

void filter_inplace(const Biquad& f, std::vector<double>& x) {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
        const double x0 = v;
        const double y0 = f.b0 * x0 + f.b1 * x1 + f.b2 * x2 - f.a1 * y1 - f.a2 * y2;
        x2 = x1;
        x1 = x0;
        y2 = y1;
        y1 = y0;
        v = y0;
    }
}

// Zero-phase application with reflective padding to suppress edge transients.
std::vector<double> filtfilt(const Biquad& f, const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    const int pad = std::min(n - 1, 300);
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * pad);
    for (int i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (int i = n - 2; i >= n - 1 - pad; --i) ext.push_back(2.0 * x[n - 1] - x[i]);

    filter_inplace(f, ext);
    std::reverse(ext.begin(), ext.end());
    filter_inplace(f, ext);
    std::reverse(ext.begin(), ext.end());
    return {ext.begin() + pad, ext.begin() + pad + n};
}

std::vector<double> moving_average(const std::vector<double>& x, int win) {
    const int n = static_cast<int>(x.size());
    std::vector<double> out(n, 0.0);
    const int half = win / 2;
    double acc = 0.0;
    int lo = 0, hi = -1; // inclusive window [lo, hi]
    for (int i = 0; i < n; ++i) {
        const int want_lo = std::max(0, i - half);
        const int want_hi = std::min(n - 1, i + half);
        while (hi < want_hi) acc += x[++hi];
        while (lo < want_lo) acc -= x[lo++];
        out[i] = acc / (want_hi - want_lo + 1);
    }
    return out;
}

} // namespace

double pearson(const float* a, const float* b, int n) {
    double ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double saa = 0, sbb = 0, sab = 0;
    for (int i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

std::vector<int> detect_r_peaks(const EcgRecord& record) {
    const int n = record.n_samples;
    if (n < record.fs_hz) return {};
    const double fs = record.fs_hz;
    const int refractory = static_cast<int>(std::lround(0.25 * fs)); // 125 samples

    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = record.at(kRhythmLead, i);

    const auto bq = bandpass_biquad(5.0, 25.0, fs);
    std::vector<double> bp = filtfilt(bq, x);

    // Differentiate (central), square.
    std::vector<double> e(n, 0.0);
    for (int i = 1; i + 1 < n; ++i) {
        const double d = 0.5 * (bp[i + 1] - bp[i - 1]);
        e[i] = d * d;
    }
    const int mwi_win = static_cast<int>(std::lround(0.15 * fs)); // 75 samples
    std::vector<double> m = moving_average(e, mwi_win);

    const double total_max = *std::max_element(m.begin(), m.end());
    if (total_max <= 0.0) return {};

    // Running peak level: EMA of accepted peak heights, seeded from the first
    // two seconds.
    double level = *std::max_element(m.begin(), m.begin() + std::min(n, 2 * record.fs_hz));
    if (level <= 0.0) level = total_max;

    std::vector<int> accepted;
    for (int i = 0; i < n; ++i) {
        // Local max; record boundaries count so edge beats stay detectable.
        const bool left_ok = i == 0 || m[i] >= m[i - 1];
        const bool right_ok = i == n - 1 || m[i] > m[i + 1];
        if (!(left_ok && right_ok)) continue;
        if (m[i] < 0.4 * level) continue;
        if (!accepted.empty() && i - accepted.back() < refractory) {
            if (m[i] > m[accepted.back()]) accepted.back() = i;
            continue;
        }
        accepted.push_back(i);
        level = 0.875 * level + 0.125 * m[i];
    }

    // Refine to the raw lead II maximum within +/-40 ms.
    const int refine = static_cast<int>(std::lround(0.04 * fs)); // 20 samples
    std::vector<int> peaks;
    for (int i : accepted) {
        int lo = std::max(0, i - refine), hi = std::min(n - 1, i + refine);
        int best = lo;
        for (int j = lo + 1; j <= hi; ++j)
            if (record.at(kRhythmLead, j) > record.at(kRhythmLead, best)) best = j;
        // An argmax sitting exactly on a record boundary has no interior
        // downslope; it is indistinguishable from a beat centered outside
        // the record, so it cannot be certified as an R peak.
        if (best == 0 || best == n - 1) continue;
        peaks.push_back(best);
    }

    // Refinement can merge neighbours; enforce strict ordering + refractory,
    // keeping the larger raw peak.
    std::sort(peaks.begin(), peaks.end());
    std::vector<int> out;
    for (int p : peaks) {
        if (!out.empty() && p - out.back() < refractory) {
            if (record.at(kRhythmLead, p) > record.at(kRhythmLead, out.back())) out.back() = p;
        } else if (out.empty() || p != out.back()) {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<Beat> segment_beats(const EcgRecord& record, const std::vector<int>& peaks) {
    std::vector<Beat> beats;
    for (int r : peaks) {
        if (r - kBeatHalf < 0 || r + kBeatHalf > record.n_samples) continue;
        Beat b;
        b.r_index = r;
        b.samples.resize(kBeatFlat);
        for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
            for (int i = 0; i < kBeatSamples; ++i)
                b.samples[static_cast<size_t>(lead) * kBeatSamples + i] =
                    record.at(lead, r - kBeatHalf + i);
        beats.push_back(std::move(b));
    }
    return beats;
}

std::vector<Beat> magnitude_filter(const std::vector<Beat>& beats, const FilterConfig& config) {
    std::vector<Beat> kept;
    for (const auto& b : beats) {
        double mag = 0.0;
        for (float v : b.samples) mag += std::fabs(v);
        mag /= static_cast<double>(b.samples.size());
        if (mag >= config.magnitude_threshold_mv) kept.push_back(b);
    }
    return kept;
}

std::vector<Beat> correlation_filter(const std::vector<Beat>& beats, const FilterConfig& config) {
    const int n = static_cast<int>(beats.size());
    if (n < 2) return beats;

    std::vector<Beat> kept;
    for (int i = 0; i < n; ++i) {
        double sum = 0.0, maxc = -1.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double c = pearson(beats[i].samples.data(), beats[j].samples.data(), kBeatFlat);
            sum += c;
            maxc = std::max(maxc, c);
        }
        const double mean = sum / (n - 1);
        const bool remove = mean < config.corr_mean_threshold && maxc < config.corr_max_threshold;
        if (!remove) kept.push_back(beats[i]);
    }
    return kept;
}

std::vector<float> average_beats(const std::vector<Beat>& beats, const FilterConfig& config) {
    if (static_cast<int>(beats.size()) < config.min_beats)
        throw RecordRejected("too_few_beats",
                             "only " + std::to_string(beats.size()) + " beats survived filtering");
    std::vector<double> acc(kBeatFlat, 0.0);
    for (const auto& b : beats)
        for (int i = 0; i < kBeatFlat; ++i) acc[i] += b.samples[i];
    std::vector<float> mean(kBeatFlat);
    for (int i = 0; i < kBeatFlat; ++i)
        mean[i] = static_cast<float>(acc[i] / static_cast<double>(beats.size()));
    return mean;
}

std::pair<double, double> rr_statistics(const std::vector<int>& peaks, int fs_hz) {
    if (peaks.size() < 3)
        throw RecordRejected("too_few_peaks",
                             "need >= 3 peaks for RR statistics, got " + std::to_string(peaks.size()));
    const double to_ms = 1000.0 / fs_hz;
    std::vector<double> rr;
    for (size_t i = 1; i < peaks.size(); ++i) rr.push_back((peaks[i] - peaks[i - 1]) * to_ms);
    const double mean = std::accumulate(rr.begin(), rr.end(), 0.0) / rr.size();
    double var = 0.0;
    for (double v : rr) var += (v - mean) * (v - mean);
    var /= rr.size(); // population std
    return {mean, std::sqrt(var)};
}

MeanBeat preprocess(const EcgRecord& record, const FilterConfig& config) {
    const auto peaks = detect_r_peaks(record);
    const auto [rr_mean, rr_std] = rr_statistics(peaks, record.fs_hz);

    auto beats = segment_beats(record, peaks);
    beats = magnitude_filter(beats, config);
    beats = correlation_filter(beats, config);

    MeanBeat mb;
    mb.samples = average_beats(beats, config);
    mb.rr_mean_ms = rr_mean;
    mb.rr_std_ms = rr_std;
    mb.n_beats_used = static_cast<int>(beats.size());
    mb.patient_id = record.patient_id;
    mb.label = record.label;
    mb.sex = record.sex;
    mb.age = record.age;
    return mb;
}

} // namespace ecgvae
