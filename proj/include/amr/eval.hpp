#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "amr/curation.hpp"
#include "amr/train.hpp"

namespace amr {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- confusion matrix ----

struct ConfusionMatrix {
    std::vector<std::vector<int>> counts;  // rows = true class, cols = predicted
    int classes = 0;

    explicit ConfusionMatrix(int n = kNumClasses)
        : counts(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0)),
          classes(n) {}

    int total() const {
        int t = 0;
        for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), 0);
        return t;
    }
    int trace() const {
        int t = 0;
        for (int i = 0; i < classes; ++i)
            t += counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
        return t;
    }
    double overall_accuracy() const {
        const int t = total();
        return t == 0 ? 0.0 : static_cast<double>(trace()) / t;
    }
    double class_accuracy(int c) const {
        const auto& row = counts[static_cast<std::size_t>(c)];
        const int n = std::accumulate(row.begin(), row.end(), 0);
        return n == 0 ? 0.0 : static_cast<double>(row[static_cast<std::size_t>(c)]) / n;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "true\\pred";
        for (int j = 0; j < classes; ++j) os << "," << to_string(static_cast<Modulation>(j));
        os << "\n";
        for (int i = 0; i < classes; ++i) {
            os << to_string(static_cast<Modulation>(i));
            for (int j = 0; j < classes; ++j)
                os << "," << counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            os << "\n";
        }
        return os.str();
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                        const std::vector<int>& labels,
                                        int classes = kNumClasses) {
    if (preds.size() != labels.size())
        throw EvalError("confusion_matrix: preds/labels length mismatch");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes || preds[i] < 0 || preds[i] >= classes)
            throw EvalError("confusion_matrix: class index out of range");
        ++cm.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
    }
    return cm;
}

// ---- ablation grid ----

inline const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v = {"cnn", "cnn_aug", "cnn_lstm", "cnn_lstm_aug"};
    return v;
}

struct AblationTable {
    std::vector<double> snrs;
    // variant -> per-SNR mean accuracy over the paired seeds
    std::map<std::string, std::vector<double>> mean_acc;
    // variant -> per-SNR per-seed accuracies
    std::map<std::string, std::vector<std::vector<double>>> accs;

    std::vector<double> ratio(const std::string& variant) const {
        std::vector<double> r;
        const auto& base = mean_acc.at("cnn");
        const auto& v = mean_acc.at(variant);
        for (std::size_t i = 0; i < base.size(); ++i)
            r.push_back(base[i] > 0 ? v[i] / base[i] : 0.0);
        return r;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "snr_db";
        for (const auto& v : ablation_variants()) os << "," << v;
        for (const auto& v : ablation_variants()) os << "," << v << "_ratio";
        os << "\n";
        for (std::size_t i = 0; i < snrs.size(); ++i) {
            os << snrs[i];
            for (const auto& v : ablation_variants()) os << "," << mean_acc.at(v)[i];
            for (const auto& v : ablation_variants()) os << "," << ratio(v)[i];
            os << "\n";
        }
        return os.str();
    }
};

// One SNR level of a paired-seed ablation: the four variants share the seed's
// stratified split so accuracy differences come from the model/data change,
// not the fold. `set` carries the per-SNR curated extension (augmented rows
// plus exclusions) used only by the *_aug variants.
template <class T>
void ablation_at_snr(const CuratedSet<T>& set, const ArchitectureSpec& base_arch,
                     const TrainConfig& base_cfg, int seeds, AblationTable& table) {
    for (const auto& v : ablation_variants()) {
        table.mean_acc[v].push_back(0.0);
        table.accs[v].emplace_back();
    }
    const std::vector<int> orig_labels(
        set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(set.n_original));

    for (int s = 0; s < seeds; ++s) {
        TrainConfig cfg = base_cfg;
        cfg.seed = RngKey{base_cfg.seed}.child(static_cast<std::uint64_t>(s)).v;
        Rng split_rng(RngKey{cfg.seed}.child(0));
        const Split plain = stratified_split(orig_labels, cfg.split_train, cfg.split_val, split_rng);
        const Split curated = curated_split(set, cfg);

        for (const auto& v : ablation_variants()) {
            ArchitectureSpec arch = base_arch;
            arch.head = (v == "cnn" || v == "cnn_aug") ? HeadKind::cnn_only : HeadKind::cnn_lstm;
            const bool aug = v == "cnn_aug" || v == "cnn_lstm_aug";
            auto res = fit(set.images, set.labels, arch, cfg, aug ? &curated : &plain);
            auto model = model_from_checkpoint<T>(res.checkpoint);
            const auto [loss, acc] = evaluate(model, set.images, set.labels, plain.test);
            table.accs[v].back().push_back(acc);
        }
    }
    for (const auto& v : ablation_variants()) {
        const auto& a = table.accs[v].back();
        table.mean_acc[v].back() =
            a.empty() ? 0.0 : std::accumulate(a.begin(), a.end(), 0.0) / a.size();
    }
}

template <class T>
AblationTable ablation_grid(const std::vector<CuratedSet<T>>& sets,
                            const std::vector<double>& snrs, const ArchitectureSpec& base_arch,
                            const TrainConfig& base_cfg, int seeds) {
    if (sets.size() != snrs.size()) throw EvalError("ablation_grid: sets/snrs size mismatch");
    AblationTable table;
    table.snrs = snrs;
    for (std::size_t i = 0; i < sets.size(); ++i)
        ablation_at_snr(sets[i], base_arch, base_cfg, seeds, table);
    return table;
}

// ---- variance study ----

struct VarianceStats {
    std::vector<double> accs;
    double mean = 0, min = 0, max = 0;
    double bin_width = 0.005;  // 0.5 accuracy points
    std::vector<std::pair<double, int>> histogram;  // (bin lower edge, count)

    std::string to_csv() const {
        std::ostringstream os;
        os << "bin_lo,bin_hi,count\n";
        for (const auto& [lo, n] : histogram) os << lo << "," << lo + bin_width << "," << n << "\n";
        return os.str();
    }
};

inline VarianceStats summarize_variance(const std::vector<double>& accs,
                                        double bin_width = 0.005) {
    if (accs.size() < 2) throw EvalError("variance study needs at least 2 runs");
    VarianceStats st;
    st.accs = accs;
    st.bin_width = bin_width;
    st.mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
    const auto [lo, hi] = std::minmax_element(accs.begin(), accs.end());
    st.min = *lo;
    st.max = *hi;
    const long first = std::lround(std::floor(st.min / bin_width));
    const long last = std::lround(std::floor(st.max / bin_width));
    for (long b = first; b <= last; ++b) st.histogram.emplace_back(b * bin_width, 0);
    for (double a : accs) {
        long b = std::lround(std::floor(a / bin_width));
        b = std::clamp(b, first, last);  // max lands in the top bin
        ++st.histogram[static_cast<std::size_t>(b - first)].second;
    }
    return st;
}

// Independent stratified refolds, fresh training each; noise stays fixed.
template <class T>
VarianceStats variance_study(const std::vector<T>& images, const std::vector<int>& labels,
                             const ArchitectureSpec& arch, const TrainConfig& base_cfg, int runs) {
    if (runs < 2) throw EvalError("variance study needs at least 2 runs");
    std::vector<double> accs;
    for (int r = 0; r < runs; ++r) {
        TrainConfig cfg = base_cfg;
        cfg.seed = RngKey{base_cfg.seed}.child(static_cast<std::uint64_t>(r)).v;
        auto res = fit(images, labels, arch, cfg);
        auto model = model_from_checkpoint<T>(res.checkpoint);
        accs.push_back(evaluate(model, images, labels, res.split.test).second);
    }
    return summarize_variance(accs);
}

// Refold variance study over a curated table: augmented rows follow the
// training partition of every refold, exclusions stay out of training.
template <class T>
VarianceStats variance_study(const CuratedSet<T>& set, const ArchitectureSpec& arch,
                             const TrainConfig& base_cfg, int runs,
                             std::vector<ConfusionMatrix>* confusions = nullptr) {
    if (runs < 2) throw EvalError("variance study needs at least 2 runs");
    std::vector<double> accs;
    for (int r = 0; r < runs; ++r) {
        TrainConfig cfg = base_cfg;
        cfg.seed = RngKey{base_cfg.seed}.child(static_cast<std::uint64_t>(r)).v;
        const Split sp = curated_split(set, cfg);
        auto res = fit(set.images, set.labels, arch, cfg, &sp);
        auto model = model_from_checkpoint<T>(res.checkpoint);
        std::vector<int> preds;
        accs.push_back(
            evaluate(model, set.images, set.labels, sp.test, 64, confusions ? &preds : nullptr)
                .second);
        if (confusions) {
            std::vector<int> truth;
            for (int i : sp.test) truth.push_back(set.labels[static_cast<std::size_t>(i)]);
            confusions->push_back(confusion_matrix(preds, truth, arch.classes));
        }
    }
    return summarize_variance(accs);
}

// ---- accuracy-vs-SNR sweep ----

struct LiteratureRow {
    std::string model;
    double accuracy_0db;
    std::string params;
    std::string note;
};

// Published comparison points, rendered as fixed reference lines only.
inline const std::vector<LiteratureRow>& literature_rows() {
    static const std::vector<LiteratureRow> rows = {
        {"LSTM", 0.63, "203k", "reported, not reproduced"},
        {"SSLWCNN", 0.93, "1.28M", "reported, not reproduced"},
    };
    return rows;
}

struct SnrCurve {
    std::vector<double> snrs;
    std::vector<double> accuracy;

    std::string to_csv() const {
        std::ostringstream os;
        os << "snr_db,accuracy\n";
        for (std::size_t i = 0; i < snrs.size(); ++i) os << snrs[i] << "," << accuracy[i] << "\n";
        return os.str();
    }
};

// ---- latency/throughput benchmark ----

struct BenchRow {
    int batch_size = 0;
    double median_s = 0, p95_s = 0;
    double throughput = 0;  // samples/s = batch_size / median_s
};

struct BenchReport {
    std::vector<BenchRow> rows;
    int repetitions = 0, warmup = 0;

    std::string to_csv() const {
        std::ostringstream os;
        os << "batch_size,median_latency_s,p95_latency_s,throughput_sps\n";
        for (const auto& r : rows)
            os << r.batch_size << "," << r.median_s << "," << r.p95_s << "," << r.throughput
               << "\n";
        return os.str();
    }
};

template <class T>
BenchReport bench_latency(Model<T>& model, const std::vector<int>& batch_sizes,
                          int repetitions = 100, int warmup = 10) {
    if (repetitions < 2) throw EvalError("bench needs at least 2 repetitions");
    model.train_mode = false;
    const int px = model.arch.image_h * model.arch.image_w;
    BenchReport rep;
    rep.repetitions = repetitions;
    rep.warmup = warmup;
    Rng rng(987u);
    for (int b : batch_sizes) {
        std::vector<T> x(static_cast<std::size_t>(b) * px);
        for (auto& v : x) v = static_cast<T>(rng.uniform(0.0, 1.0));
        for (int i = 0; i < warmup; ++i) (void)model.forward(x, b);
        std::vector<double> times;
        for (int i = 0; i < repetitions; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            (void)model.forward(x, b);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        BenchRow row;
        row.batch_size = b;
        row.median_s = times[times.size() / 2];
        row.p95_s = times[static_cast<std::size_t>(0.95 * (times.size() - 1))];
        row.throughput = b / row.median_s;
        rep.rows.push_back(row);
    }
    return rep;
}

} // namespace amr
