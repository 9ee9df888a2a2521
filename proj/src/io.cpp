#include "ecgvae/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ecgvae {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "payloads are little-endian; big-endian hosts are unsupported");

const char* ebd_kind_name(EbdKind kind) {
    switch (kind) {
        case EbdKind::raw: return "raw";
        case EbdKind::meanbeat: return "meanbeat";
        case EbdKind::features: return "features";
    }
    return "?";
}

EbdKind parse_ebd_kind(const std::string& name) {
    if (name == "raw") return EbdKind::raw;
    if (name == "meanbeat") return EbdKind::meanbeat;
    if (name == "features") return EbdKind::features;
    throw DataError("unknown EBD kind: " + name);
}

std::uint64_t fnv1a64(const void* data, size_t n_bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n_bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string checksum_hex(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("short write: " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct EbdHeader {
    int version = 1;
    EbdKind kind = EbdKind::raw;
    size_t n_records = 0;
    int leads = 0;
    int samples_per_record = 0;
    int fs_hz = 0;
    bool has_labels = false;
    std::uint64_t payload_checksum = 0;
};

void write_ebd_files(const fs::path& dir, const EbdHeader& h, const std::vector<float>& payload,
                     const std::vector<json>& meta) {
    fs::create_directories(dir);
    const size_t n_bytes = payload.size() * sizeof(float);

    json header = {
        {"version", h.version},
        {"kind", ebd_kind_name(h.kind)},
        {"n_records", h.n_records},
        {"leads", h.leads},
        {"samples_per_record", h.samples_per_record},
        {"fs_hz", h.fs_hz},
        {"has_labels", h.has_labels},
        {"byte_order", "little"},
        {"payload_bytes", n_bytes},
        {"payload_checksum", checksum_hex(fnv1a64(payload.data(), n_bytes))},
    };
    write_file(dir / "header.json", header.dump(2) + "\n");

    std::ofstream out(dir / "payload.f32", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + (dir / "payload.f32").string());
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(n_bytes));
    if (!out) throw DataError("short write: " + (dir / "payload.f32").string());

    std::string lines;
    for (const auto& m : meta) lines += m.dump() + "\n";
    write_file(dir / "meta.jsonl", lines);
}

EbdHeader parse_ebd_header(const fs::path& dir) {
    json j;
    try {
        j = json::parse(read_file(dir / "header.json"));
    } catch (const json::exception& e) {
        throw DataError("malformed EBD header in " + dir.string() + ": " + e.what());
    }
    EbdHeader h;
    try {
        h.version = j.at("version").get<int>();
        h.kind = parse_ebd_kind(j.at("kind").get<std::string>());
        h.n_records = j.at("n_records").get<size_t>();
        h.leads = j.at("leads").get<int>();
        h.samples_per_record = j.at("samples_per_record").get<int>();
        h.fs_hz = j.at("fs_hz").get<int>();
        h.has_labels = j.at("has_labels").get<bool>();
        if (j.at("byte_order").get<std::string>() != "little")
            throw DataError("unsupported byte order in " + dir.string());
        h.payload_checksum = std::stoull(j.at("payload_checksum").get<std::string>(), nullptr, 16);
    } catch (const json::exception& e) {
        throw DataError("incomplete EBD header in " + dir.string() + ": " + e.what());
    }
    if (h.version != 1) throw DataError("unsupported EBD version " + std::to_string(h.version));
    return h;
}

std::vector<float> read_ebd_payload(const fs::path& dir, const EbdHeader& h) {
    const std::string raw = read_file(dir / "payload.f32");
    const size_t expected =
        h.n_records * static_cast<size_t>(h.leads) * h.samples_per_record * sizeof(float);
    if (raw.size() != expected)
        throw DataError("payload truncated at byte " + std::to_string(raw.size()) + ", expected " +
                        std::to_string(expected) + " bytes in " + dir.string());
    const std::uint64_t sum = fnv1a64(raw.data(), raw.size());
    if (sum != h.payload_checksum)
        throw DataError("payload checksum mismatch over bytes [0, " + std::to_string(raw.size()) +
                        ") in " + dir.string() + ": header says " +
                        checksum_hex(h.payload_checksum) + ", payload hashes to " +
                        checksum_hex(sum));
    std::vector<float> payload(raw.size() / sizeof(float));
    std::memcpy(payload.data(), raw.data(), raw.size());
    return payload;
}

std::vector<json> read_meta_lines(const fs::path& dir, size_t expected) {
    std::ifstream in(dir / "meta.jsonl");
    if (!in) throw DataError("cannot open: " + (dir / "meta.jsonl").string());
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw DataError("malformed metadata line " + std::to_string(out.size() + 1) + " in " +
                            dir.string() + ": " + e.what());
        }
    }
    if (out.size() != expected)
        throw DataError("metadata has " + std::to_string(out.size()) + " lines, expected " +
                        std::to_string(expected) + " in " + dir.string());
    return out;
}

} // namespace

void write_ebd(const fs::path& dir, std::span<const EcgRecord> records) {
    EbdHeader h;
    h.kind = EbdKind::raw;
    h.n_records = records.size();
    h.leads = EcgRecord::kLeads;
    h.samples_per_record = records.empty() ? 5000 : records.front().n_samples;
    h.fs_hz = records.empty() ? 500 : records.front().fs_hz;

    std::vector<float> payload;
    payload.reserve(h.n_records * static_cast<size_t>(h.leads) * h.samples_per_record);
    std::vector<json> meta;
    for (const auto& r : records) {
        if (static_cast<int>(r.samples.size()) != h.leads * h.samples_per_record ||
            r.n_samples != h.samples_per_record)
            throw DataError("record " + r.patient_id + " has inconsistent shape");
        payload.insert(payload.end(), r.samples.begin(), r.samples.end());
        json m = {{"patient_id", r.patient_id}, {"sex", r.sex}, {"age", r.age}};
        if (r.label.has_value()) {
            m["label"] = *r.label;
            h.has_labels = true;
        }
        if (r.true_peak_indices.has_value()) m["true_peaks"] = *r.true_peak_indices;
        meta.push_back(std::move(m));
    }
    write_ebd_files(dir, h, payload, meta);
}

void write_ebd(const fs::path& dir, std::span<const MeanBeat> beats) {
    EbdHeader h;
    h.kind = EbdKind::meanbeat;
    h.n_records = beats.size();
    h.leads = EcgRecord::kLeads;
    h.samples_per_record = kBeatSamples;
    h.fs_hz = 500;

    std::vector<float> payload;
    payload.reserve(h.n_records * static_cast<size_t>(kBeatFlat));
    std::vector<json> meta;
    for (const auto& b : beats) {
        if (b.samples.size() != static_cast<size_t>(kBeatFlat))
            throw DataError("mean beat for " + b.patient_id + " has inconsistent shape");
        payload.insert(payload.end(), b.samples.begin(), b.samples.end());
        json m = {{"patient_id", b.patient_id},
                  {"sex", b.sex},
                  {"age", b.age},
                  {"rr_mean_ms", b.rr_mean_ms},
                  {"rr_std_ms", b.rr_std_ms},
                  {"n_beats_used", b.n_beats_used}};
        if (b.label.has_value()) {
            m["label"] = *b.label;
            h.has_labels = true;
        }
        meta.push_back(std::move(m));
    }
    write_ebd_files(dir, h, payload, meta);
}

EbdKind read_ebd_kind(const fs::path& dir) { return parse_ebd_header(dir).kind; }

std::vector<EcgRecord> read_ebd_records(const fs::path& dir) {
    const EbdHeader h = parse_ebd_header(dir);
    if (h.kind != EbdKind::raw)
        throw DataError("expected a raw ECG container in " + dir.string() + ", found kind \"" +
                        ebd_kind_name(h.kind) + "\"");
    const auto payload = read_ebd_payload(dir, h);
    const auto meta = read_meta_lines(dir, h.n_records);

    std::vector<EcgRecord> out(h.n_records);
    const size_t stride = static_cast<size_t>(h.leads) * h.samples_per_record;
    for (size_t i = 0; i < h.n_records; ++i) {
        EcgRecord& r = out[i];
        r.fs_hz = h.fs_hz;
        r.n_samples = h.samples_per_record;
        r.samples.assign(payload.begin() + i * stride, payload.begin() + (i + 1) * stride);
        const json& m = meta[i];
        r.patient_id = m.at("patient_id").get<std::string>();
        r.sex = m.value("sex", 0);
        r.age = m.value("age", 0);
        if (m.contains("label") && !m.at("label").is_null())
            r.label = m.at("label").get<int>();
        if (m.contains("true_peaks")) r.true_peak_indices = m.at("true_peaks").get<std::vector<int>>();
    }
    return out;
}

std::vector<MeanBeat> read_ebd_meanbeats(const fs::path& dir) {
    const EbdHeader h = parse_ebd_header(dir);
    if (h.kind != EbdKind::meanbeat)
        throw DataError("expected a mean-beat container in " + dir.string() + ", found kind \"" +
                        ebd_kind_name(h.kind) + "\"");
    const auto payload = read_ebd_payload(dir, h);
    const auto meta = read_meta_lines(dir, h.n_records);

    std::vector<MeanBeat> out(h.n_records);
    const size_t stride = static_cast<size_t>(h.leads) * h.samples_per_record;
    for (size_t i = 0; i < h.n_records; ++i) {
        MeanBeat& b = out[i];
        b.samples.assign(payload.begin() + i * stride, payload.begin() + (i + 1) * stride);
        const json& m = meta[i];
        b.patient_id = m.at("patient_id").get<std::string>();
        b.sex = m.value("sex", 0);
        b.age = m.value("age", 0);
        b.rr_mean_ms = m.at("rr_mean_ms").get<double>();
        b.rr_std_ms = m.at("rr_std_ms").get<double>();
        b.n_beats_used = m.value("n_beats_used", 0);
        if (m.contains("label") && !m.at("label").is_null())
            b.label = m.at("label").get<int>();
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

json arch_to_json(const VaeArchitecture& a) {
    return {{"latent_dim", a.latent_dim},     {"pred_dim", a.pred_dim},
            {"channels", a.channels},         {"kernel_lead", a.kernel_lead},
            {"kernel_time", a.kernel_time},   {"residual_layers", a.residual_layers},
            {"input_leads", a.input_leads},   {"input_samples", a.input_samples},
            {"dropout_rate", a.dropout_rate}};
}

VaeArchitecture arch_from_json(const json& j) {
    VaeArchitecture a;
    a.latent_dim = j.at("latent_dim").get<int>();
    a.pred_dim = j.at("pred_dim").get<int>();
    a.channels = j.at("channels").get<std::vector<int>>();
    a.kernel_lead = j.at("kernel_lead").get<int>();
    a.kernel_time = j.at("kernel_time").get<int>();
    a.residual_layers = j.at("residual_layers").get<std::vector<int>>();
    a.input_leads = j.at("input_leads").get<int>();
    a.input_samples = j.at("input_samples").get<int>();
    a.dropout_rate = j.at("dropout_rate").get<double>();
    return a;
}

} // namespace

void save_checkpoint(const fs::path& path, const VaeParams<float>& params) {
    const size_t n_bytes = params.flat.size() * sizeof(float);
    json manifest = json::array();
    for (const auto& b : params.manifest)
        manifest.push_back({{"name", b.name}, {"offset", b.offset}, {"shape", b.shape}});
    json header = {
        {"version", 1},
        {"architecture", arch_to_json(params.arch)},
        {"rr_stats",
         {{"rr_mean_center", params.rr.rr_mean_center},
          {"rr_mean_scale", params.rr.rr_mean_scale},
          {"rr_std_center", params.rr.rr_std_center},
          {"rr_std_scale", params.rr.rr_std_scale}}},
        {"input_scale", params.input_scale},
        {"phase", params.phase_tag},
        {"param_count", params.flat.size()},
        {"manifest", manifest},
        {"payload_checksum", checksum_hex(fnv1a64(params.flat.data(), n_bytes))},
    };
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write(kCheckpointMagic, 8);
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(params.flat.data()),
              static_cast<std::streamsize>(n_bytes));
    if (!out) throw DataError("short write: " + path.string());
}

VaeParams<float> load_checkpoint(const fs::path& path) {
    const std::string raw = read_file(path);
    if (raw.size() < 12 || raw.compare(0, 8, kCheckpointMagic, 8) != 0)
        throw DataError("not a checkpoint (bad magic): " + path.string());
    std::uint32_t len = 0;
    std::memcpy(&len, raw.data() + 8, 4);
    if (raw.size() < 12 + static_cast<size_t>(len))
        throw DataError("checkpoint header truncated: " + path.string());
    json header;
    try {
        header = json::parse(raw.substr(12, len));
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.at("version").get<int>() != 1)
        throw DataError("unsupported checkpoint version in " + path.string());

    VaeParams<float> params;
    params.arch = arch_from_json(header.at("architecture"));
    params.plan = build_plan(params.arch);
    params.manifest = build_manifest(params.arch, params.plan);
    const auto& rr = header.at("rr_stats");
    params.rr.rr_mean_center = rr.at("rr_mean_center").get<double>();
    params.rr.rr_mean_scale = rr.at("rr_mean_scale").get<double>();
    params.rr.rr_std_center = rr.at("rr_std_center").get<double>();
    params.rr.rr_std_scale = rr.at("rr_std_scale").get<double>();
    params.input_scale = header.at("input_scale").get<double>();
    params.phase_tag = header.at("phase").get<std::string>();

    const size_t count = header.at("param_count").get<size_t>();
    size_t expected = 0;
    for (const auto& b : params.manifest) expected = std::max(expected, b.offset + b.size);
    if (count != expected)
        throw DataError("checkpoint manifest does not match its architecture in " + path.string());
    // Manifest sanity: stored shapes must match the rebuilt layout.
    const json& stored = header.at("manifest");
    if (stored.size() != params.manifest.size())
        throw DataError("checkpoint manifest length mismatch in " + path.string());
    for (size_t i = 0; i < params.manifest.size(); ++i) {
        if (stored[i].at("name").get<std::string>() != params.manifest[i].name ||
            stored[i].at("offset").get<size_t>() != params.manifest[i].offset ||
            stored[i].at("shape").get<std::vector<int>>() != params.manifest[i].shape)
            throw DataError("checkpoint manifest entry " + std::to_string(i) +
                            " inconsistent with architecture in " + path.string());
    }

    const size_t n_bytes = count * sizeof(float);
    if (raw.size() != 12 + len + n_bytes)
        throw DataError("checkpoint payload truncated at byte " + std::to_string(raw.size()) +
                        ", expected " + std::to_string(12 + len + n_bytes) + " in " +
                        path.string());
    params.flat.resize(count);
    std::memcpy(params.flat.data(), raw.data() + 12 + len, n_bytes);

    const std::uint64_t sum = fnv1a64(params.flat.data(), n_bytes);
    const std::uint64_t want =
        std::stoull(header.at("payload_checksum").get<std::string>(), nullptr, 16);
    if (sum != want)
        throw DataError("checkpoint payload checksum mismatch in " + path.string());
    return params;
}

std::vector<std::string> architecture_mismatch(const VaeArchitecture& a,
                                               const VaeArchitecture& b) {
    std::vector<std::string> diffs;
    if (a.latent_dim != b.latent_dim) diffs.push_back("latent_dim");
    if (a.pred_dim != b.pred_dim) diffs.push_back("pred_dim");
    if (a.channels != b.channels) diffs.push_back("channels");
    if (a.kernel_lead != b.kernel_lead) diffs.push_back("kernel_lead");
    if (a.kernel_time != b.kernel_time) diffs.push_back("kernel_time");
    if (a.residual_layers != b.residual_layers) diffs.push_back("residual_layers");
    if (a.input_leads != b.input_leads) diffs.push_back("input_leads");
    if (a.input_samples != b.input_samples) diffs.push_back("input_samples");
    if (a.dropout_rate != b.dropout_rate) diffs.push_back("dropout_rate");
    return diffs;
}

// ---------------------------------------------------------------------------

void write_features_csv(const fs::path& path, const FeatureTable& table) {
    std::ostringstream out;
    for (const auto& c : table.columns) out << c << ",";
    out << "label,patient_id\n";
    out.precision(9);
    for (const auto& row : table.rows) {
        for (double v : row.values) out << v << ",";
        if (row.label.has_value()) out << *row.label;
        out << "," << row.patient_id << "\n";
    }
    write_file(path, out.str());
}

FeatureTable read_features_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty feature table: " + path.string());

    FeatureTable table;
    {
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) table.columns.push_back(col);
        if (table.columns.size() < 2 || table.columns[table.columns.size() - 2] != "label" ||
            table.columns.back() != "patient_id")
            throw DataError("feature table must end with label,patient_id columns: " +
                            path.string());
        table.columns.resize(table.columns.size() - 2);
    }
    table.latent_dim = 0;
    for (const auto& c : table.columns)
        if (c.size() > 1 && c[0] == 'z') ++table.latent_dim;

    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        FeatureTable::Row row;
        for (size_t c = 0; c < table.columns.size(); ++c) {
            if (!std::getline(ss, cell, ','))
                throw DataError("short row at line " + std::to_string(line_no) + " in " +
                                path.string());
            row.values.push_back(std::stod(cell));
        }
        if (!std::getline(ss, cell, ','))
            throw DataError("missing label cell at line " + std::to_string(line_no));
        if (!cell.empty()) row.label = std::stoi(cell);
        if (!std::getline(ss, cell)) throw DataError("missing patient_id at line " + std::to_string(line_no));
        row.patient_id = cell;
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_split_plan(const fs::path& path, const SplitPlan& plan) {
    json folds = json::array();
    for (const auto& f : plan.folds)
        folds.push_back({{"train", f.train_patients}, {"val", f.val_patients}});
    json j = {{"test", plan.test_patients},
              {"folds", folds},
              {"ratio", plan.ratio},
              {"seed", plan.seed}};
    write_file(path, j.dump(2) + "\n");
}

SplitPlan read_split_plan(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError("malformed split plan " + path.string() + ": " + e.what());
    }
    SplitPlan plan;
    plan.test_patients = j.at("test").get<std::vector<std::string>>();
    for (const auto& f : j.at("folds")) {
        plan.folds.push_back({f.at("train").get<std::vector<std::string>>(),
                              f.at("val").get<std::vector<std::string>>()});
    }
    plan.ratio = j.value("ratio", 0.85);
    plan.seed = j.value("seed", 0ULL);
    return plan;
}

void write_train_log(const fs::path& path, const TrainLog& log) {
    std::ostringstream out;
    for (const auto& e : log.epochs) {
        json j = {{"epoch", e.epoch},
                  {"train", {{"total", e.train.total}, {"mse", e.train.mse}, {"kl", e.train.kl}, {"bce", e.train.bce}}},
                  {"val", {{"total", e.val.total}, {"mse", e.val.mse}, {"kl", e.val.kl}, {"bce", e.val.bce}}}};
        out << j.dump() << "\n";
    }
    json tail = {{"best_epoch", log.best_epoch}, {"stopping_reason", log.stopping_reason}};
    out << tail.dump() << "\n";
    write_file(path, out.str());
}

} // namespace ecgvae
