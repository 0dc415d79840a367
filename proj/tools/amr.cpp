// amr: end-to-end pipeline driver.
//
// Subcommands mirror the pipeline stages: generate -> transform -> train ->
// evaluate / outliers -> augment -> bench -> report. Every stage writes a
// manifest (config hash, seeds, format versions) next to its artifacts and
// is deterministic for a fixed config.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "amr/config.hpp"
#include "amr/curation.hpp"
#include "amr/dataset.hpp"
#include "amr/eval.hpp"
#include "amr/report.hpp"
#include "amr/tfr.hpp"
#include "amr/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitDiverged = 3;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string snr_tag(double snr) {
    std::ostringstream os;
    os << (snr < 0 ? "m" : "p") << std::abs(snr);
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

void write_manifest(const fs::path& dir, const amr::PipelineConfig& cfg,
                    const std::string& command, json extra = json::object()) {
    json m;
    m["command"] = command;
    m["config_hash"] = cfg.hash();
    m["config"] = cfg.to_json();
    m["format_version"] = 1;
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_text(dir / "run_manifest.json", m.dump(2) + "\n");
}

// Effective config: file (optional) overridden by flags the user passed.
struct ConfigCli {
    std::string config_path;
    std::string out;
    int per_class = -1;
    std::vector<double> snrs;
    std::uint64_t gen_seed = 0;
    bool has_gen_seed = false;
    std::string kernel;
    double alpha = -1;
    int epochs = -1;
    double lr = -1;
    std::uint64_t model_seed = 0;
    bool has_model_seed = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--out", out, "output root (default $AMR_OUT or ./out)");
        cmd->add_option("--per-class", per_class, "samples per class");
        cmd->add_option("--snr", snrs, "SNR grid in dB");
        cmd->add_option("--seed", gen_seed, "dataset seed")->each([this](std::string) {
            has_gen_seed = true;
        });
        cmd->add_option("--kernel", kernel, "tfr kernel: wvd or cwd");
        cmd->add_option("--alpha", alpha, "CWD alpha");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--model-seed", model_seed, "training seed")->each([this](std::string) {
            has_model_seed = true;
        });
    }

    amr::PipelineConfig resolve() const {
        amr::PipelineConfig cfg;
        if (!config_path.empty()) cfg = amr::PipelineConfig::load(config_path);
        if (!out.empty()) cfg.output_dir = out;
        else if (const char* env = std::getenv("AMR_OUT"); env && *env && config_path.empty())
            cfg.output_dir = env;
        if (per_class > 0) cfg.dataset.per_class_count = per_class;
        if (!snrs.empty()) cfg.dataset.snr_grid = snrs;
        if (has_gen_seed) cfg.dataset.seed = gen_seed;
        if (!kernel.empty()) cfg.tfr.kernel = kernel;
        if (alpha > 0) cfg.tfr.alpha = alpha;
        if (epochs > 0) cfg.model.epochs = epochs;
        if (lr > 0) cfg.model.learning_rate = lr;
        if (has_model_seed) cfg.model.seed = model_seed;
        cfg.validate();
        return cfg;
    }
};

fs::path dataset_dir(const amr::PipelineConfig& cfg) {
    return fs::path(cfg.output_dir) / "dataset";
}
fs::path cache_dir(const amr::PipelineConfig& cfg) {
    return fs::path(cfg.output_dir) / "cache";
}
fs::path train_dir(const amr::PipelineConfig& cfg, double snr) {
    return fs::path(cfg.output_dir) / "train" / ("snr_" + snr_tag(snr));
}

amr::Dataset load_dataset_or_die(const amr::PipelineConfig& cfg) {
    const fs::path dir = dataset_dir(cfg);
    if (!fs::exists(dir / "manifest.json"))
        throw DataError("no dataset at " + dir.string() + "; run `amr generate` first");
    return amr::load_dataset(dir);
}

amr::ImageCache load_cache_or_die(const amr::PipelineConfig& cfg) {
    const auto hash = amr::dataset_hash(dataset_dir(cfg));
    auto cache = amr::load_image_cache(cfg.tfr_config(), hash, cache_dir(cfg));
    if (!cache)
        throw DataError("no up-to-date image cache at " + cache_dir(cfg).string() +
                        "; run `amr transform` first");
    return *cache;
}

// Indices of the dataset slice at one SNR, in record order.
std::vector<int> snr_slice(const amr::Dataset& ds, double snr) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        if (ds.records[i].wave.snr_db && *ds.records[i].wave.snr_db == snr)
            idx.push_back(static_cast<int>(i));
    return idx;
}

struct SliceTable {
    std::vector<float> images;
    std::vector<int> labels;
    std::vector<std::int64_t> records;
    std::vector<char> augmented;  // provenance flag per row
};

// Stratified split over original rows only; augmented rows always train.
// Matches fit()'s internal split exactly when the table has no augmented rows.
amr::Split table_split(const SliceTable& t, const amr::TrainConfig& tc) {
    std::vector<int> orig;
    std::vector<int> orig_labels;
    for (std::size_t i = 0; i < t.labels.size(); ++i)
        if (!t.augmented[i]) {
            orig.push_back(static_cast<int>(i));
            orig_labels.push_back(t.labels[i]);
        }
    amr::Rng split_rng(amr::RngKey{tc.seed}.child(0));
    amr::Split sp = amr::stratified_split(orig_labels, tc.split_train, tc.split_val, split_rng);
    auto remap = [&](std::vector<int>& v) {
        for (int& i : v) i = orig[static_cast<std::size_t>(i)];
    };
    remap(sp.train);
    remap(sp.val);
    remap(sp.test);
    for (std::size_t i = 0; i < t.labels.size(); ++i)
        if (t.augmented[i]) sp.train.push_back(static_cast<int>(i));
    return sp;
}

SliceTable slice_table(const amr::Dataset& ds, const amr::ImageCache& cache, double snr,
                       int image_px) {
    SliceTable t;
    for (int i : snr_slice(ds, snr)) {
        const auto& img = cache.images[static_cast<std::size_t>(i)];
        if (static_cast<int>(img.px.size()) != image_px)
            throw DataError("image cache size mismatch for record " +
                            std::to_string(ds.records[static_cast<std::size_t>(i)].wave.sample_id));
        t.images.insert(t.images.end(), img.px.begin(), img.px.end());
        t.labels.push_back(static_cast<int>(ds.records[static_cast<std::size_t>(i)].wave.cls));
        t.records.push_back(ds.records[static_cast<std::size_t>(i)].wave.sample_id);
        t.augmented.push_back(ds.records[static_cast<std::size_t>(i)].provenance ==
                              amr::Provenance::augmented);
    }
    if (t.labels.empty()) throw DataError("dataset has no records at " + std::to_string(snr) + " dB");
    return t;
}

// ---- subcommand bodies ----

int cmd_generate(const amr::PipelineConfig& cfg, bool force) {
    const fs::path dir = dataset_dir(cfg);
    if (!force && fs::exists(dir / "manifest.json")) {
        try {
            auto existing = amr::load_dataset(dir);
            if (existing.config.per_class_count == cfg.dataset.per_class_count &&
                existing.config.snr_grid == cfg.dataset.snr_grid &&
                existing.config.seed == cfg.dataset.seed) {
                std::cout << "dataset up to date at " << dir << " (" << existing.records.size()
                          << " records)\n";
                return kExitOk;
            }
        } catch (const amr::DatasetError&) {
            // stale/corrupt: regenerate below
        }
    }
    auto ds = amr::generate_dataset(cfg.dataset_config());
    amr::save_dataset(ds, dir);
    write_manifest(dir, cfg, "generate", {{"records", ds.records.size()}});
    std::cout << "wrote " << ds.records.size() << " records (" << amr::kNumClasses << " classes x "
              << cfg.dataset.per_class_count << " samples x " << cfg.dataset.snr_grid.size()
              << " SNRs) to " << dir << "\n";
    return kExitOk;
}

int cmd_transform(const amr::PipelineConfig& cfg, bool force) {
    auto ds = load_dataset_or_die(cfg);
    const auto hash = amr::dataset_hash(dataset_dir(cfg));
    const auto tfr_cfg = cfg.tfr_config();
    if (!force) {
        if (auto cache = amr::load_image_cache(tfr_cfg, hash, cache_dir(cfg))) {
            std::cout << "image cache up to date (" << cache->images.size() << " images)\n";
            return kExitOk;
        }
    }
    amr::ImageCache cache;
    for (const auto& rec : ds.records) {
        try {
            cache.images.push_back(amr::waveform_to_image(rec.wave.samples, tfr_cfg));
        } catch (const std::exception& e) {
            throw DataError("transform failed on record " + std::to_string(rec.wave.sample_id) +
                            ": " + e.what());
        }
        cache.sample_ids.push_back(rec.wave.sample_id);
    }
    amr::save_image_cache(cache, tfr_cfg, hash, cache_dir(cfg));
    write_manifest(cache_dir(cfg), cfg, "transform", {{"images", cache.images.size()}});
    std::cout << "wrote " << cache.images.size() << " " << tfr_cfg.image_h << "x" << tfr_cfg.image_w
              << " images to " << cache_dir(cfg) << "\n";
    return kExitOk;
}

int cmd_train(const amr::PipelineConfig& cfg) {
    auto ds = load_dataset_or_die(cfg);
    auto cache = load_cache_or_die(cfg);
    const auto arch = cfg.arch();
    for (double snr : cfg.dataset.snr_grid) {
        auto table = slice_table(ds, cache, snr, arch.image_h * arch.image_w);
        const auto sp = table_split(table, cfg.train_config());
        const auto t0 = std::chrono::steady_clock::now();
        auto res = amr::fit(table.images, table.labels, arch, cfg.train_config(), &sp);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                .count();
        const fs::path dir = train_dir(cfg, snr);
        amr::save_checkpoint(res.checkpoint, dir);
        write_manifest(dir, cfg, "train",
                       {{"snr_db", snr},
                        {"seed", cfg.model.seed},
                        {"seconds_per_epoch", secs / cfg.model.epochs},
                        {"selected_epoch", res.checkpoint.selected_epoch}});
        std::cout << "snr " << snr << " dB: best epoch " << res.checkpoint.selected_epoch
                  << ", val acc " << res.checkpoint.selected_val_acc << " -> " << dir << "\n";
    }
    return kExitOk;
}

int cmd_evaluate(const amr::PipelineConfig& cfg) {
    auto ds = load_dataset_or_die(cfg);
    auto cache = load_cache_or_die(cfg);
    const fs::path out = fs::path(cfg.output_dir) / "evaluate";
    amr::SnrCurve curve;
    for (double snr : cfg.dataset.snr_grid) {
        const fs::path ck_dir = train_dir(cfg, snr);
        if (!fs::exists(ck_dir / "arch.json"))
            throw DataError("no checkpoint at " + ck_dir.string() + "; run `amr train` first");
        auto ckpt = amr::load_checkpoint(ck_dir);
        auto model = amr::model_from_checkpoint<float>(ckpt);
        auto table = slice_table(ds, cache, snr, model.arch.image_h * model.arch.image_w);

        // identical refold: the checkpoint was trained with this seed's split
        auto sp = table_split(table, cfg.train_config());
        std::vector<int> preds;
        auto [loss, acc] = amr::evaluate(model, table.images, table.labels, sp.test, 64, &preds);
        std::vector<int> truth;
        for (int i : sp.test) truth.push_back(table.labels[static_cast<std::size_t>(i)]);
        auto cm = amr::confusion_matrix(preds, truth, model.arch.classes);

        curve.snrs.push_back(snr);
        curve.accuracy.push_back(acc);
        write_text(out / ("confusion_" + snr_tag(snr) + ".csv"), cm.to_csv());
        write_text(out / ("confusion_" + snr_tag(snr) + ".svg"),
                   amr::svg::heatmap(cm, "Confusion at " + std::to_string(snr) + " dB"));
        std::cout << "snr " << snr << " dB: test acc " << acc << " (loss " << loss << ")\n";
    }
    write_text(out / "accuracy_vs_snr.csv", curve.to_csv());
    json summary;
    summary["accuracy"] = json::array();
    for (std::size_t i = 0; i < curve.snrs.size(); ++i)
        summary["accuracy"].push_back(
            {{"snr_db", curve.snrs[i]}, {"accuracy", curve.accuracy[i]}});
    write_text(out / "summary.json", summary.dump(2) + "\n");
    write_manifest(out, cfg, "evaluate");
    return kExitOk;
}

int cmd_outliers(const amr::PipelineConfig& cfg) {
    auto ds = load_dataset_or_die(cfg);
    auto cache = load_cache_or_die(cfg);
    const auto arch = cfg.arch();
    const fs::path out = fs::path(cfg.output_dir) / "outliers";
    for (double snr : cfg.dataset.snr_grid) {
        auto table = slice_table(ds, cache, snr, arch.image_h * arch.image_w);
        // error attribution is defined on original records only
        SliceTable orig;
        const int px = arch.image_h * arch.image_w;
        for (std::size_t i = 0; i < table.labels.size(); ++i)
            if (!table.augmented[i]) {
                orig.images.insert(orig.images.end(), table.images.begin() + static_cast<std::ptrdiff_t>(i) * px,
                                   table.images.begin() + static_cast<std::ptrdiff_t>(i + 1) * px);
                orig.labels.push_back(table.labels[i]);
                orig.records.push_back(table.records[i]);
            }
        auto rep = amr::per_sample_error_rates(orig.images, orig.labels, orig.records, arch,
                                               cfg.train_config(), cfg.curation.runs);
        write_text(out / ("report_" + snr_tag(snr) + ".json"),
                   amr::report_to_json(rep).dump(2) + "\n");
        auto part = amr::classify_samples(rep, amr::CurationPolicy{
                                                   cfg.curation.augment_threshold,
                                                   cfg.curation.exclude_threshold,
                                                   cfg.curation.variants_per_flagged});
        std::cout << "snr " << snr << " dB: " << part.keep.size() << " keep, "
                  << part.augment.size() << " augment, " << part.exclude.size() << " exclude\n";
    }
    write_manifest(out, cfg, "outliers", {{"runs", cfg.curation.runs}});
    return kExitOk;
}

int cmd_augment(const amr::PipelineConfig& cfg) {
    auto ds = load_dataset_or_die(cfg);
    const fs::path rep_dir = fs::path(cfg.output_dir) / "outliers";
    amr::CurationPolicy pol{cfg.curation.augment_threshold, cfg.curation.exclude_threshold,
                            cfg.curation.variants_per_flagged};

    std::map<std::int64_t, std::size_t> index_of;
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        index_of[ds.records[i].wave.sample_id] = i;

    amr::Dataset out_ds = ds;
    std::size_t added = 0;
    for (double snr : cfg.dataset.snr_grid) {
        const fs::path rep_path = rep_dir / ("report_" + snr_tag(snr) + ".json");
        std::ifstream f(rep_path);
        if (!f)
            throw DataError("no outlier report at " + rep_path.string() +
                            "; run `amr outliers` first");
        json j;
        f >> j;
        amr::ErrorRateReport rep;
        rep.runs = j.value("runs", 0);
        for (const auto& e : j["samples"]) {
            amr::SampleErrorStats s;
            s.record = e.at("record").get<std::int64_t>();
            s.tested = e.value("tested", false);
            s.times_in_test = e.value("times_in_test", 0);
            s.times_misclassified = e.value("times_misclassified", 0);
            s.error_rate = e.value("error_rate", 0.0);
            rep.samples.push_back(s);
        }
        auto part = amr::classify_samples(rep, pol);

        // cap each class's post-augmentation total at (1 + tolerance) x the
        // uniform share of the desired pool, keeping class balance
        std::map<int, int> class_total, class_added, class_desired;
        for (const auto& r : ds.records)
            if (r.wave.snr_db && *r.wave.snr_db == snr) ++class_total[static_cast<int>(r.wave.cls)];
        class_desired = class_total;
        for (std::int64_t rec_id : part.augment) {
            auto it = index_of.find(rec_id);
            if (it != index_of.end())
                class_desired[static_cast<int>(ds.records[it->second].wave.cls)] +=
                    pol.variants_per_flagged;
        }
        double desired_sum = 0.0;
        for (auto& [c, n] : class_desired) desired_sum += n;
        const int cap_total = static_cast<int>(
            (1.0 + pol.balance_tolerance) * desired_sum /
            static_cast<double>(std::max<std::size_t>(1, class_desired.size())));

        int serial = 0;
        const amr::RngKey key = amr::RngKey{cfg.dataset.seed}.child(0xA06);
        for (std::int64_t rec_id : part.augment) {
            auto it = index_of.find(rec_id);
            if (it == index_of.end()) continue;
            const auto& rec = ds.records[it->second];
            const int cls = static_cast<int>(rec.wave.cls);
            const int room = cap_total - class_total[cls] - class_added[cls];
            const int k = std::min(pol.variants_per_flagged, room);
            if (k <= 0) continue;
            class_added[cls] += k;
            amr::Waveform parent = amr::synthesize(rec.wave.params);
            amr::Rng rng(key.child(static_cast<std::uint64_t>(serial++)));
            for (auto& var : amr::augment(parent, pol, rng, k, snr)) {
                amr::DatasetRecord out_rec;
                out_rec.wave = std::move(var);
                out_rec.provenance = amr::Provenance::augmented;
                out_rec.parent_id = rec_id;
                out_ds.records.push_back(std::move(out_rec));
                ++added;
            }
        }
    }
    const fs::path out = fs::path(cfg.output_dir) / "augmented";
    amr::save_dataset(out_ds, out);
    write_manifest(out, cfg, "augment", {{"added", added}});
    std::cout << "wrote " << out_ds.records.size() << " records (" << added << " augmented) to "
              << out << "\n";
    return kExitOk;
}

int cmd_bench(const amr::PipelineConfig& cfg) {
    const double snr = cfg.dataset.snr_grid.front();
    const fs::path ck_dir = train_dir(cfg, snr);
    if (!fs::exists(ck_dir / "arch.json"))
        throw DataError("no checkpoint at " + ck_dir.string() + "; run `amr train` first");
    auto model = amr::model_from_checkpoint<float>(amr::load_checkpoint(ck_dir));
    auto rep = amr::bench_latency(model, cfg.eval.batch_sizes, cfg.eval.bench_repetitions);
    const fs::path out = fs::path(cfg.output_dir) / "bench";
    write_text(out / "latency.csv", rep.to_csv());
    write_text(out / "latency.svg", amr::render_bench_svg(rep));
    write_manifest(out, cfg, "bench", {{"threads", 1}});
    for (const auto& r : rep.rows)
        std::cout << "batch " << r.batch_size << ": median " << r.median_s * 1e3 << " ms, "
                  << r.throughput << " samples/s\n";
    return kExitOk;
}

int cmd_report(const amr::PipelineConfig& cfg) {
    const fs::path root = cfg.output_dir;
    const fs::path out = root / "report";
    amr::RunReport rep;
    rep.config_hash = cfg.hash();

    // accuracy curve + confusion matrices from evaluate artifacts
    {
        std::ifstream f(root / "evaluate" / "summary.json");
        if (!f)
            throw DataError("no evaluation summary at " + (root / "evaluate").string() +
                            "; run `amr evaluate` first");
        json j;
        f >> j;
        for (const auto& e : j["accuracy"]) {
            rep.accuracy_vs_snr.snrs.push_back(e.at("snr_db").get<double>());
            rep.accuracy_vs_snr.accuracy.push_back(e.at("accuracy").get<double>());
        }
    }

    // optional artifacts
    {
        std::ifstream f(root / "bench" / "latency.csv");
        if (f) {
            std::string line;
            std::getline(f, line);  // header
            while (std::getline(f, line)) {
                amr::BenchRow r;
                if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &r.batch_size, &r.median_s,
                                &r.p95_s, &r.throughput) == 4)
                    rep.bench.rows.push_back(r);
            }
            rep.has_bench = !rep.bench.rows.empty();
        }
    }

    write_text(out / "report.json", rep.to_json().dump(2) + "\n");
    write_text(out / "accuracy_vs_snr.csv", rep.accuracy_vs_snr.to_csv());
    write_text(out / "accuracy_vs_snr.svg", amr::render_snr_curve_svg(rep.accuracy_vs_snr));
    if (rep.has_bench) write_text(out / "latency.svg", amr::render_bench_svg(rep.bench));
    for (const auto& e : fs::directory_iterator(root / "evaluate"))
        if (e.path().extension() == ".csv" || e.path().extension() == ".svg")
            fs::copy_file(e.path(), out / e.path().filename(),
                          fs::copy_options::overwrite_existing);
    write_manifest(out, cfg, "report");
    std::cout << "report written to " << out << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"automatic modulation recognition pipeline"};
    app.require_subcommand(1);

    struct Cmd {
        ConfigCli cli;
        bool force = false;
        int jobs = 1;
    };
    std::map<std::string, Cmd> cmds;
    for (const char* name : {"generate", "transform", "train", "evaluate", "outliers", "augment",
                             "bench", "report"}) {
        auto* sub = app.add_subcommand(name);
        auto& c = cmds[name];
        c.cli.attach(sub);
        if (std::string(name) == "generate" || std::string(name) == "transform")
            sub->add_flag("--force", c.force, "rebuild even if up to date");
        sub->add_option("--jobs", c.jobs, "worker cap (stages currently run single-threaded)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        const auto& c = cmds.at(name);
        const auto cfg = c.cli.resolve();
        // effective merged config goes beside the outputs of every command
        write_text(fs::path(cfg.output_dir) / "effective_config.json",
                   cfg.to_json().dump(2) + "\n");
        if (name == "generate") return cmd_generate(cfg, c.force);
        if (name == "transform") return cmd_transform(cfg, c.force);
        if (name == "train") return cmd_train(cfg);
        if (name == "evaluate") return cmd_evaluate(cfg);
        if (name == "outliers") return cmd_outliers(cfg);
        if (name == "augment") return cmd_augment(cfg);
        if (name == "bench") return cmd_bench(cfg);
        if (name == "report") return cmd_report(cfg);
        return kExitUsage;
    } catch (const amr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const amr::DivergedError& e) {
        std::cerr << "numeric divergence: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
