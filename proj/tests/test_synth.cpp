#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "ecgvae/synth.hpp"

using namespace ecgvae;

namespace {

SynthParams clean_params(double bpm, double variability_ms) {
    SynthParams p = make_params_from_base(kBaseAmplitudes);
    p.heart_rate_bpm = bpm;
    p.hr_variability_ms = variability_ms;
    p.noise_std = 0.0;
    p.baseline_wander_amp = 0.0;
    p.seed = 123;
    return p;
}

} // namespace

TEST_CASE("60 bpm, no variability: 9 or 10 R peaks at 500-sample spacing") {
    auto rec = generate_record(clean_params(60.0, 0.0));
    const auto& peaks = *rec.true_peak_indices;
    CHECK((peaks.size() == 9 || peaks.size() == 10));
    for (size_t i = 1; i < peaks.size(); ++i) CHECK(peaks[i] - peaks[i - 1] == 500);
}

TEST_CASE("zero amplitudes, no noise or wander: all-zero record") {
    SynthParams p = clean_params(70.0, 10.0);
    for (auto& lead : p.wave_amplitudes) lead.fill(0.0);
    auto rec = generate_record(p);
    for (float v : rec.samples) CHECK(v == 0.0f);
}

TEST_CASE("identical params and seed give bit-identical records") {
    SynthParams p = clean_params(72.0, 25.0);
    p.noise_std = 0.03;
    p.baseline_wander_amp = 0.05;
    p.seed = 42;
    auto a = generate_record(p);
    auto b = generate_record(p);
    CHECK(a.samples == b.samples);
    CHECK(*a.true_peak_indices == *b.true_peak_indices);
}

TEST_CASE("invalid parameters name the offending field") {
    SynthParams p = clean_params(70.0, 10.0);
    p.heart_rate_bpm = 500.0;
    CHECK_THROWS_WITH_AS(generate_record(p), doctest::Contains("heart_rate_bpm"), ParamError);
    p = clean_params(70.0, 10.0);
    p.wave_widths[2] = 0.0;
    CHECK_THROWS_WITH_AS(generate_record(p), doctest::Contains("wave_widths"), ParamError);
    p = clean_params(70.0, 10.0);
    p.noise_std = -1.0;
    CHECK_THROWS_WITH_AS(generate_record(p), doctest::Contains("noise_std"), ParamError);
}

TEST_CASE("ground-truth peaks are local maxima of the clean signal") {
    auto rec = generate_record(clean_params(65.0, 30.0));
    for (int r : *rec.true_peak_indices) {
        const int lo = std::max(0, r - 50), hi = std::min(rec.n_samples - 1, r + 50);
        float best = -1e9f;
        int arg = lo;
        for (int i = lo; i <= hi; ++i)
            if (rec.at(1, i) > best) {
                best = rec.at(1, i);
                arg = i;
            }
        CHECK(std::abs(arg - r) <= 2);
    }
}

TEST_CASE("dataset: prevalence rounding and patient grouping") {
    auto ds = generate_dataset(100, 2, 0.115, 7);
    std::set<std::string> pos_patients, all_patients;
    for (const auto& r : ds) {
        all_patients.insert(r.patient_id);
        if (*r.label == 1) pos_patients.insert(r.patient_id);
    }
    CHECK(all_patients.size() == 100);
    CHECK(pos_patients.size() >= 11);
    CHECK(pos_patients.size() <= 12);

    auto ds2 = generate_dataset(10, 3, 0.5, 11);
    std::set<std::string> pos2;
    for (const auto& r : ds2)
        if (*r.label == 1) pos2.insert(r.patient_id);
    CHECK(pos2.size() == 5);
}

TEST_CASE("dataset: records of one patient share label, sex and age") {
    auto ds = generate_dataset(30, 4, 0.2, 3);
    std::map<std::string, std::tuple<int, int, int>> seen;
    for (const auto& r : ds) {
        auto key = std::make_tuple(*r.label, r.sex, r.age);
        auto [it, inserted] = seen.try_emplace(r.patient_id, key);
        if (!inserted) CHECK(it->second == key);
    }
}

TEST_CASE("dataset generation is deterministic per seed") {
    auto a = generate_dataset(12, 2, 0.25, 99);
    auto b = generate_dataset(12, 2, 0.25, 99);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].samples == b[i].samples);
        CHECK(a[i].patient_id == b[i].patient_id);
    }
    CHECK_THROWS_AS(generate_dataset(1, 2, 0.5, 0), ParamError);
}

TEST_CASE("label shift lowers the mean R amplitude") {
    auto ds = generate_dataset(60, 2, 0.4, 21);
    double amp_pos = 0, amp_neg = 0;
    int n_pos = 0, n_neg = 0;
    for (const auto& r : ds) {
        double best = 0;
        for (int i : *r.true_peak_indices) best = std::max(best, static_cast<double>(r.at(1, i)));
        if (*r.label == 1) {
            amp_pos += best;
            ++n_pos;
        } else {
            amp_neg += best;
            ++n_neg;
        }
    }
    CHECK(amp_pos / n_pos < amp_neg / n_neg);
}

TEST_CASE("corrupt_record: fraction 0 is the identity") {
    auto rec = generate_record(clean_params(70.0, 20.0));
    for (auto mode : {CorruptMode::flatline_beats, CorruptMode::noise_burst, CorruptMode::rhythm_mix}) {
        auto out = corrupt_record(rec, mode, 0.0, 5);
        CHECK(out.samples == rec.samples);
    }
}

TEST_CASE("corrupt_record: flatline fraction 1 zeroes all beat windows") {
    auto rec = generate_record(clean_params(70.0, 0.0));
    auto out = corrupt_record(rec, CorruptMode::flatline_beats, 1.0, 5);
    for (int r : *rec.true_peak_indices) {
        const int lo = std::max(0, r - 200), hi = std::min(rec.n_samples, r + 200);
        for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
            for (int i = lo; i < hi; ++i) CHECK(out.at(lead, i) == 0.0f);
    }
}

TEST_CASE("corrupt_record: noise bursts have std > 5x the clean beat std") {
    auto rec = generate_record(clean_params(70.0, 0.0));
    const auto& peaks = *rec.true_peak_indices;
    const int n = static_cast<int>(peaks.size());
    auto out = corrupt_record(rec, CorruptMode::noise_burst, 0.3, 17);
    const auto chosen = corrupt_selection(n, CorruptMode::noise_burst, 0.3, 17);
    CHECK(static_cast<int>(chosen.size()) == static_cast<int>(std::lround(0.3 * n)));

    auto window_std = [&](const EcgRecord& r, int peak) {
        const int lo = std::max(0, peak - 200), hi = std::min(r.n_samples, peak + 200);
        double mean = 0;
        int cnt = 0;
        for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
            for (int i = lo; i < hi; ++i) {
                mean += r.at(lead, i);
                ++cnt;
            }
        mean /= cnt;
        double var = 0;
        for (int lead = 0; lead < EcgRecord::kLeads; ++lead)
            for (int i = lo; i < hi; ++i) var += (r.at(lead, i) - mean) * (r.at(lead, i) - mean);
        return std::sqrt(var / cnt);
    };
    // Reference std from the clean record's beats.
    double clean_std = 0;
    for (int b = 0; b < n; ++b) clean_std += window_std(rec, peaks[b]);
    clean_std /= n;
    for (int b : chosen) CHECK(window_std(out, peaks[b]) > 5.0 * clean_std);
}

TEST_CASE("unknown corruption mode is rejected") {
    CHECK_THROWS_AS(parse_corrupt_mode("saturate"), ParamError);
    CHECK(parse_corrupt_mode("rhythm_mix") == CorruptMode::rhythm_mix);
}
