#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "amr/siggen.hpp"

namespace amr {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Provenance { original, augmented };

struct DatasetRecord {
    Waveform wave;
    Provenance provenance = Provenance::original;
    std::int64_t parent_id = 0;  // clean-parent code; augmented records point at their parent record
};

struct DatasetConfig {
    int per_class_count = 100;
    std::vector<double> snr_grid = {0.0};
    std::uint64_t seed = 1;
};

struct Dataset {
    std::vector<DatasetRecord> records;
    DatasetConfig config;
    int format_version = 1;
};

namespace detail {

// Stable ids: parent code identifies the clean pulse, record id appends the
// SNR slot; augmented variants take parent record id + variant number.
inline std::int64_t parent_code(int cls, int sample) {
    return static_cast<std::int64_t>(cls) * 1000000 + sample;
}
inline std::int64_t record_id(std::int64_t parent, int snr_idx) {
    return parent * 256 + snr_idx;
}

} // namespace detail

// Deterministic dataset synthesis: per class, per_class_count parameter
// draws; the same clean pulse is re-noised independently at every SNR so
// accuracy-vs-SNR comparisons share parents.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
    if (cfg.per_class_count < 1) throw std::invalid_argument("per_class_count must be >= 1");
    if (cfg.snr_grid.empty()) throw std::invalid_argument("snr_grid must be nonempty");

    Dataset ds;
    ds.config = cfg;
    const RngKey root{cfg.seed};
    for (int c = 0; c < kNumClasses; ++c) {
        const RngKey class_key = root.child(static_cast<std::uint64_t>(c));
        for (int s = 0; s < cfg.per_class_count; ++s) {
            const RngKey sample_key = class_key.child(static_cast<std::uint64_t>(s));
            Rng param_rng(sample_key.child(0));
            const auto params = sample_params(static_cast<Modulation>(c), param_rng);
            const Waveform clean = synthesize(params);
            const std::int64_t parent = detail::parent_code(c, s);
            for (std::size_t g = 0; g < cfg.snr_grid.size(); ++g) {
                Rng noise_rng(sample_key.child(1 + g));
                DatasetRecord rec;
                rec.wave = add_awgn(clean, cfg.snr_grid[g], noise_rng);
                rec.wave.sample_id = detail::record_id(parent, static_cast<int>(g));
                rec.provenance = Provenance::original;
                rec.parent_id = parent;
                ds.records.push_back(std::move(rec));
            }
        }
    }
    return ds;
}

// ---- container IO: manifest.json + samples.bin (f32 LE, row-major) ----

inline constexpr char kSamplesMagic[8] = {'A', 'M', 'R', 'D', 'S', '0', '0', '1'};

inline nlohmann::json params_to_json(const ModulationParams& p) {
    nlohmann::json j;
    j["class"] = to_string(p.cls);
    j["f0"] = p.f0;
    j["delta_f"] = p.delta_f;
    j["f1"] = p.f1;
    j["f2"] = p.f2;
    j["code_len"] = p.code_len;
    j["chirp_sign"] = p.chirp_sign;
    j["segments_m"] = p.segments_m;
    j["phase_states_n"] = p.phase_states_n;
    j["theta_code"] = p.theta_code;
    return j;
}

inline ModulationParams params_from_json(const nlohmann::json& j) {
    ModulationParams p;
    auto cls = modulation_from_string(j.at("class").get<std::string>());
    if (!cls) throw DatasetError("unknown modulation class in manifest");
    p.cls = *cls;
    p.f0 = j.at("f0").get<double>();
    p.delta_f = j.at("delta_f").get<double>();
    p.f1 = j.at("f1").get<double>();
    p.f2 = j.at("f2").get<double>();
    p.code_len = j.at("code_len").get<int>();
    p.chirp_sign = j.at("chirp_sign").get<int>();
    p.segments_m = j.at("segments_m").get<int>();
    p.phase_states_n = j.at("phase_states_n").get<int>();
    p.theta_code = j.at("theta_code").get<std::vector<std::uint8_t>>();
    return p;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    nlohmann::json manifest;
    manifest["format"] = "amr-dataset";
    manifest["format_version"] = ds.format_version;
    manifest["seed"] = ds.config.seed;
    manifest["per_class_count"] = ds.config.per_class_count;
    manifest["snr_grid"] = ds.config.snr_grid;

    std::ofstream bin(dir / "samples.bin", std::ios::binary);
    if (!bin) throw DatasetError("cannot open samples.bin for writing");
    bin.write(kSamplesMagic, 8);

    nlohmann::json recs = nlohmann::json::array();
    std::vector<float> row(kPulseLen);
    std::int64_t offset = 8;
    for (const auto& rec : ds.records) {
        nlohmann::json r;
        r["sample_id"] = rec.wave.sample_id;
        r["class"] = to_string(rec.wave.cls);
        if (rec.wave.snr_db) r["snr_db"] = *rec.wave.snr_db;
        else r["snr_db"] = nullptr;
        r["params"] = params_to_json(rec.wave.params);
        r["provenance"] = rec.provenance == Provenance::original ? "original" : "augmented";
        r["parent_id"] = rec.parent_id;
        r["byte_offset"] = offset;
        recs.push_back(std::move(r));

        for (std::size_t k = 0; k < kPulseLen; ++k)
            row[k] = static_cast<float>(rec.wave.samples[k]);
        bin.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
        offset += static_cast<std::int64_t>(kPulseLen * sizeof(float));
    }
    manifest["records"] = std::move(recs);

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw DatasetError("cannot open manifest.json for writing");
    mf << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw DatasetError("missing manifest.json in " + dir.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(std::string("corrupt manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != "amr-dataset")
        throw DatasetError("not an amr-dataset container: " + dir.string());
    if (manifest.value("format_version", -1) != 1)
        throw DatasetError("unsupported dataset format_version");

    std::ifstream bin(dir / "samples.bin", std::ios::binary);
    if (!bin) throw DatasetError("missing samples.bin in " + dir.string());
    char magic[8];
    bin.read(magic, 8);
    if (bin.gcount() != 8 || std::memcmp(magic, kSamplesMagic, 8) != 0)
        throw DatasetError("bad samples.bin magic");

    Dataset ds;
    ds.config.seed = manifest.value("seed", 0ull);
    ds.config.per_class_count = manifest.value("per_class_count", 0);
    ds.config.snr_grid = manifest.value("snr_grid", std::vector<double>{});

    std::vector<float> row(kPulseLen);
    for (const auto& r : manifest.at("records")) {
        DatasetRecord rec;
        rec.wave.sample_id = r.at("sample_id").get<std::int64_t>();
        rec.wave.params = params_from_json(r.at("params"));
        rec.wave.cls = rec.wave.params.cls;
        if (!r.at("snr_db").is_null()) rec.wave.snr_db = r.at("snr_db").get<double>();
        rec.provenance = r.at("provenance").get<std::string>() == "augmented"
                             ? Provenance::augmented : Provenance::original;
        rec.parent_id = r.at("parent_id").get<std::int64_t>();

        bin.seekg(r.at("byte_offset").get<std::int64_t>());
        bin.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (static_cast<std::size_t>(bin.gcount()) != row.size() * sizeof(float))
            throw DatasetError("truncated samples.bin at record " +
                               std::to_string(rec.wave.sample_id));
        rec.wave.samples.assign(row.begin(), row.end());
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

// FNV-1a over the manifest and sample bytes; used as the cache key upstream.
inline std::uint64_t dataset_hash(const std::filesystem::path& dir) {
    std::uint64_t h = 1469598103934665603ull;
    for (const char* name : {"manifest.json", "samples.bin"}) {
        std::ifstream f(dir / name, std::ios::binary);
        if (!f) throw DatasetError(std::string("missing ") + name + " in " + dir.string());
        char buf[65536];
        while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
            for (std::streamsize i = 0; i < f.gcount(); ++i) {
                h ^= static_cast<unsigned char>(buf[i]);
                h *= 1099511628211ull;
            }
        }
    }
    return h;
}

} // namespace amr
