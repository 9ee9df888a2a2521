#ifndef ECGVAE_IO_HPP
#define ECGVAE_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "ecgvae/signal_prep.hpp"
#include "ecgvae/synth.hpp"
#include "ecgvae/trainer.hpp"
#include "ecgvae/vae.hpp"

namespace ecgvae {

// ---------------------------------------------------------------------------
// EBD containers (ECG Beat Data)
// ---------------------------------------------------------------------------
//
// A container is a directory holding
//   header.json   - shape, kind, checksum; parsed before the payload
//   payload.f32   - little-endian float32, record-major
//   meta.jsonl    - one JSON line per record (patient_id, label, ...)

enum class EbdKind { raw, meanbeat, features };

const char* ebd_kind_name(EbdKind kind);
EbdKind parse_ebd_kind(const std::string& name);

/// 64-bit FNV-1a over a byte range.
std::uint64_t fnv1a64(const void* data, size_t n_bytes);

void write_ebd(const std::filesystem::path& dir, std::span<const EcgRecord> records);
void write_ebd(const std::filesystem::path& dir, std::span<const MeanBeat> beats);

std::vector<EcgRecord> read_ebd_records(const std::filesystem::path& dir);
std::vector<MeanBeat> read_ebd_meanbeats(const std::filesystem::path& dir);

/// Header inspection without touching the payload.
EbdKind read_ebd_kind(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Single file: magic "ECGVAE01", u32 header length, JSON header
// (architecture, RR stats, input scale, phase tag, layer manifest, payload
// checksum), then the flat float32 parameter payload.

inline constexpr char kCheckpointMagic[9] = "ECGVAE01";

void save_checkpoint(const std::filesystem::path& path, const VaeParams<float>& params);
VaeParams<float> load_checkpoint(const std::filesystem::path& path);

/// Names of architecture fields differing between the two; empty when they
/// match. Used to produce the load-for-finetune mismatch error.
std::vector<std::string> architecture_mismatch(const VaeArchitecture& a,
                                               const VaeArchitecture& b);

// ---------------------------------------------------------------------------
// Feature tables (CSV), split plans and logs (JSON)
// ---------------------------------------------------------------------------

void write_features_csv(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_features_csv(const std::filesystem::path& path);

void write_split_plan(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan read_split_plan(const std::filesystem::path& path);

void write_train_log(const std::filesystem::path& path, const TrainLog& log);

} // namespace ecgvae

#endif
