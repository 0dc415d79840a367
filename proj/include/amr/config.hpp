#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "amr/dataset.hpp"
#include "amr/tfr.hpp"
#include "amr/train.hpp"

namespace amr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

// Strict section reader: every key consumed explicitly, leftovers rejected.
class SectionReader {
public:
    SectionReader(const nlohmann::json& j, std::string name) : name_(std::move(name)) {
        if (!j.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
        remaining_ = j;
    }
    template <class T>
    void get(const char* key, T& out) {
        auto it = remaining_.find(key);
        if (it == remaining_.end()) return;
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
        }
        remaining_.erase(it);
    }
    void finish() const {
        for (auto it = remaining_.begin(); it != remaining_.end(); ++it)
            throw ConfigError("unknown config key '" + name_ + "." + it.key() + "'");
    }

private:
    std::string name_;
    nlohmann::json remaining_;
};

} // namespace detail

// Declarative pipeline configuration. Every field has the documented default;
// unknown keys are rejected so typos fail loudly instead of silently using a
// default.
struct PipelineConfig {
    struct DatasetSection {
        int per_class_count = 100;
        std::vector<double> snr_grid = {0.0};
        std::uint64_t seed = 1;
    } dataset;

    struct TfrSection {
        std::string kernel = "cwd";  // "wvd" or "cwd"
        double alpha = 1.0;
        int lag_window = 63;
        int time_step = 16;
        int image_h = 64, image_w = 64;
    } tfr;

    struct ModelSection {
        std::string head = "cnn_lstm";  // or "cnn_only"
        bool batch_norm = true;
        double learning_rate = 0.003;
        int epochs = 100;
        int batch_size = 32;
        std::uint64_t seed = 1;
    } model;

    struct CurationSection {
        int runs = 10;
        double augment_threshold = 0.5;
        double exclude_threshold = 0.9;
        int variants_per_flagged = 4;
    } curation;

    struct EvalSection {
        int runs = 20;
        std::vector<int> batch_sizes = {1, 2, 4, 8, 16, 32, 64};
        int bench_repetitions = 100;
    } eval;

    std::string output_dir = "out";

    void validate() const {
        if (dataset.per_class_count < 1) throw ConfigError("dataset.per_class_count must be >= 1");
        if (dataset.snr_grid.empty()) throw ConfigError("dataset.snr_grid must be nonempty");
        if (tfr.kernel != "wvd" && tfr.kernel != "cwd")
            throw ConfigError("tfr.kernel must be 'wvd' or 'cwd'");
        if (tfr.alpha <= 0) throw ConfigError("tfr.alpha must be positive");
        if (tfr.lag_window < 1 || tfr.time_step < 1)
            throw ConfigError("tfr.lag_window and tfr.time_step must be >= 1");
        if (tfr.image_h < 8 || tfr.image_w < 8) throw ConfigError("tfr image size must be >= 8");
        if (model.head != "cnn_lstm" && model.head != "cnn_only")
            throw ConfigError("model.head must be 'cnn_lstm' or 'cnn_only'");
        if (model.learning_rate <= 0) throw ConfigError("model.learning_rate must be positive");
        if (model.epochs < 1 || model.batch_size < 1)
            throw ConfigError("model.epochs and model.batch_size must be >= 1");
        if (curation.runs < 2) throw ConfigError("curation.runs must be >= 2");
        if (!(0.0 <= curation.augment_threshold &&
              curation.augment_threshold <= curation.exclude_threshold &&
              curation.exclude_threshold <= 1.0))
            throw ConfigError("curation thresholds must satisfy 0 <= augment <= exclude <= 1");
        if (curation.variants_per_flagged < 1)
            throw ConfigError("curation.variants_per_flagged must be >= 1");
        if (eval.runs < 1 || eval.bench_repetitions < 2)
            throw ConfigError("eval.runs >= 1 and eval.bench_repetitions >= 2 required");
        for (int b : eval.batch_sizes)
            if (b < 1) throw ConfigError("eval.batch_sizes entries must be >= 1");
        if (output_dir.empty()) throw ConfigError("output_dir must be nonempty");
    }

    nlohmann::json to_json() const {
        return {{"dataset",
                 {{"per_class_count", dataset.per_class_count},
                  {"snr_grid", dataset.snr_grid},
                  {"seed", dataset.seed}}},
                {"tfr",
                 {{"kernel", tfr.kernel},
                  {"alpha", tfr.alpha},
                  {"lag_window", tfr.lag_window},
                  {"time_step", tfr.time_step},
                  {"image_h", tfr.image_h},
                  {"image_w", tfr.image_w}}},
                {"model",
                 {{"head", model.head},
                  {"batch_norm", model.batch_norm},
                  {"learning_rate", model.learning_rate},
                  {"epochs", model.epochs},
                  {"batch_size", model.batch_size},
                  {"seed", model.seed}}},
                {"curation",
                 {{"runs", curation.runs},
                  {"augment_threshold", curation.augment_threshold},
                  {"exclude_threshold", curation.exclude_threshold},
                  {"variants_per_flagged", curation.variants_per_flagged}}},
                {"eval",
                 {{"runs", eval.runs},
                  {"batch_sizes", eval.batch_sizes},
                  {"bench_repetitions", eval.bench_repetitions}}},
                {"output_dir", output_dir}};
    }

    static PipelineConfig from_json(const nlohmann::json& j) {
        PipelineConfig cfg;
        detail::SectionReader top(j, "config");
        nlohmann::json sec;

        sec = nlohmann::json::object();
        top.get("dataset", sec);
        {
            detail::SectionReader r(sec, "dataset");
            r.get("per_class_count", cfg.dataset.per_class_count);
            r.get("snr_grid", cfg.dataset.snr_grid);
            r.get("seed", cfg.dataset.seed);
            r.finish();
        }

        sec = nlohmann::json::object();
        top.get("tfr", sec);
        {
            detail::SectionReader r(sec, "tfr");
            r.get("kernel", cfg.tfr.kernel);
            r.get("alpha", cfg.tfr.alpha);
            r.get("lag_window", cfg.tfr.lag_window);
            r.get("time_step", cfg.tfr.time_step);
            r.get("image_h", cfg.tfr.image_h);
            r.get("image_w", cfg.tfr.image_w);
            r.finish();
        }

        sec = nlohmann::json::object();
        top.get("model", sec);
        {
            detail::SectionReader r(sec, "model");
            r.get("head", cfg.model.head);
            r.get("batch_norm", cfg.model.batch_norm);
            r.get("learning_rate", cfg.model.learning_rate);
            r.get("epochs", cfg.model.epochs);
            r.get("batch_size", cfg.model.batch_size);
            r.get("seed", cfg.model.seed);
            r.finish();
        }

        sec = nlohmann::json::object();
        top.get("curation", sec);
        {
            detail::SectionReader r(sec, "curation");
            r.get("runs", cfg.curation.runs);
            r.get("augment_threshold", cfg.curation.augment_threshold);
            r.get("exclude_threshold", cfg.curation.exclude_threshold);
            r.get("variants_per_flagged", cfg.curation.variants_per_flagged);
            r.finish();
        }

        sec = nlohmann::json::object();
        top.get("eval", sec);
        {
            detail::SectionReader r(sec, "eval");
            r.get("runs", cfg.eval.runs);
            r.get("batch_sizes", cfg.eval.batch_sizes);
            r.get("bench_repetitions", cfg.eval.bench_repetitions);
            r.finish();
        }

        top.get("output_dir", cfg.output_dir);
        top.finish();
        cfg.validate();
        return cfg;
    }

    static PipelineConfig load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file " + path.string());
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config parse error in " + path.string() + ": " + e.what());
        }
        return from_json(j);
    }

    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ull;
        for (char c : to_json().dump()) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return h;
    }

    // ---- projections onto the module-level config types ----

    DatasetConfig dataset_config() const {
        return {dataset.per_class_count, dataset.snr_grid, dataset.seed};
    }

    TfrConfig tfr_config() const {
        TfrConfig t;
        t.kernel.kind = kernel_from_string(tfr.kernel);
        t.kernel.alpha = tfr.alpha;
        t.kernel.lag_window = tfr.lag_window;
        t.kernel.time_step = tfr.time_step;
        t.image_h = static_cast<std::size_t>(tfr.image_h);
        t.image_w = static_cast<std::size_t>(tfr.image_w);
        return t;
    }

    ArchitectureSpec arch() const {
        ArchitectureSpec a;
        a.image_h = tfr.image_h;
        a.image_w = tfr.image_w;
        a.head = model.head == "cnn_only" ? HeadKind::cnn_only : HeadKind::cnn_lstm;
        a.batch_norm = model.batch_norm;
        return a;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.learning_rate = model.learning_rate;
        t.epochs = model.epochs;
        t.batch_size = model.batch_size;
        t.seed = model.seed;
        t.batch_norm = model.batch_norm;
        return t;
    }
};

} // namespace amr
