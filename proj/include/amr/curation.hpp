#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "amr/dataset.hpp"
#include "amr/train.hpp"

namespace amr {

struct CurationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SampleErrorStats {
    std::int64_t record = 0;
    int cls = 0;
    int times_in_test = 0;
    int times_misclassified = 0;
    double error_rate = 0.0;  // meaningless when tested == false
    bool tested = false;
    int most_confused_with = -1;  // -1 when never misclassified
};

struct ErrorRateReport {
    std::vector<SampleErrorStats> samples;  // sorted by descending error_rate
    int runs = 0;
    std::uint64_t config_hash = 0;
};

struct CurationPolicy {
    double augment_threshold = 0.5;
    double exclude_threshold = 0.9;
    int variants_per_flagged = 4;
    double shift_fraction = 1.0 / 8.0;   // circular time shift bound, fraction of T
    double jitter_bound = 0.01;          // carrier offset bound, normalized frequency
    double balance_tolerance = 0.1;      // post-augmentation class-share tolerance

    void validate() const {
        if (!(0.0 <= augment_threshold && augment_threshold <= exclude_threshold &&
              exclude_threshold <= 1.0))
            throw std::invalid_argument("thresholds must satisfy 0 <= augment <= exclude <= 1");
        if (variants_per_flagged < 1) throw std::invalid_argument("variants_per_flagged >= 1");
    }
};

// Error rates from R independent refold/retrain cycles: each run gets its own
// split seed, so a sample's test appearances accumulate across runs.
template <class T>
ErrorRateReport per_sample_error_rates(const std::vector<T>& images,
                                       const std::vector<int>& labels,
                                       const std::vector<std::int64_t>& record_ids,
                                       const ArchitectureSpec& arch, const TrainConfig& base_cfg,
                                       int runs) {
    if (runs < 2) throw CurationError("insufficient replication: need at least 2 runs");
    if (images.size() != labels.size() * static_cast<std::size_t>(arch.image_h * arch.image_w) ||
        labels.size() != record_ids.size())
        throw CurationError("images/labels/record_ids size mismatch");

    struct Tally {
        int in_test = 0, wrong = 0, cls = 0;
        std::map<int, int> wrong_as;
    };
    std::map<std::int64_t, Tally> tally;
    for (std::size_t i = 0; i < record_ids.size(); ++i)
        tally[record_ids[i]].cls = labels[i];

    for (int r = 0; r < runs; ++r) {
        TrainConfig cfg = base_cfg;
        cfg.seed = RngKey{base_cfg.seed}.child(static_cast<std::uint64_t>(r)).v;
        auto res = fit(images, labels, arch, cfg);
        auto model = model_from_checkpoint<T>(res.checkpoint);
        std::vector<int> preds;
        evaluate(model, images, labels, res.split.test, 64, &preds);
        for (std::size_t i = 0; i < res.split.test.size(); ++i) {
            const int idx = res.split.test[i];
            auto& t = tally[record_ids[static_cast<std::size_t>(idx)]];
            ++t.in_test;
            if (preds[i] != labels[static_cast<std::size_t>(idx)]) {
                ++t.wrong;
                ++t.wrong_as[preds[i]];
            }
        }
    }

    ErrorRateReport rep;
    rep.runs = runs;
    {
        nlohmann::json j = {{"lr", base_cfg.learning_rate},
                            {"epochs", base_cfg.epochs},
                            {"batch_size", base_cfg.batch_size},
                            {"seed", base_cfg.seed},
                            {"runs", runs}};
        std::uint64_t h = 1469598103934665603ull;
        for (char c : j.dump()) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        rep.config_hash = h;
    }
    for (auto& [rec, t] : tally) {
        SampleErrorStats s;
        s.record = rec;
        s.cls = t.cls;
        s.times_in_test = t.in_test;
        s.times_misclassified = t.wrong;
        s.tested = t.in_test > 0;
        s.error_rate = s.tested ? static_cast<double>(t.wrong) / t.in_test : 0.0;
        for (auto& [pred, n] : t.wrong_as)
            if (s.most_confused_with < 0 || n > t.wrong_as[s.most_confused_with])
                s.most_confused_with = pred;
        rep.samples.push_back(s);
    }
    std::stable_sort(rep.samples.begin(), rep.samples.end(),
                     [](const SampleErrorStats& a, const SampleErrorStats& b) {
                         if (a.error_rate != b.error_rate) return a.error_rate > b.error_rate;
                         return a.record < b.record;
                     });
    return rep;
}

struct SamplePartition {
    std::vector<std::int64_t> keep, augment, exclude;
};

inline SamplePartition classify_samples(const ErrorRateReport& report,
                                        const CurationPolicy& policy) {
    policy.validate();
    SamplePartition part;
    for (const auto& s : report.samples) {
        if (s.tested && s.error_rate >= policy.exclude_threshold)
            part.exclude.push_back(s.record);
        else if (s.tested && s.error_rate >= policy.augment_threshold)
            part.augment.push_back(s.record);
        else
            part.keep.push_back(s.record);
    }
    return part;
}

namespace detail {

// Band occupied by the waveform's deterministic frequency content; used to
// reject carrier jitter that would push energy outside (0, 0.5).
inline void band_limits(const ModulationParams& p, double& lo, double& hi) {
    switch (p.cls) {
        case Modulation::BFSK:
            lo = std::min(p.f1, p.f2);
            hi = std::max(p.f1, p.f2);
            break;
        case Modulation::LFM:
        case Modulation::QFM:
            hi = chirp_freq_range(p, lo);
            break;
        default:
            lo = hi = p.f0;
            break;
    }
}

inline void circular_shift(std::vector<double>& x, int shift) {
    const int n = static_cast<int>(x.size());
    if (n == 0) return;
    shift = ((shift % n) + n) % n;
    std::rotate(x.begin(), x.begin() + (n - shift), x.end());
}

} // namespace detail

// k jittered/shifted/re-noised variants of one clean parent. Carrier jitter
// is rejection-sampled against the band limit; if no feasible jitter is found
// the variant keeps the parent carrier (shift + fresh noise only).
inline std::vector<Waveform> augment(const Waveform& parent, const CurationPolicy& policy,
                                     Rng& rng, int k, double snr_db) {
    if (parent.samples.empty()) throw CurationError("augment: clean parent required");
    policy.validate();
    const int n = static_cast<int>(parent.samples.size());
    const int max_shift = static_cast<int>(policy.shift_fraction * n);

    std::vector<Waveform> out;
    for (int v = 0; v < k; ++v) {
        ModulationParams p = parent.params;
        bool jittered = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const double d = rng.uniform(-policy.jitter_bound, policy.jitter_bound);
            ModulationParams cand = parent.params;
            cand.f0 += d;
            cand.f1 += d;
            cand.f2 += d;
            double lo = 0.0, hi = 0.0;
            detail::band_limits(cand, lo, hi);
            if (lo > 0.0 && hi < 0.5) {
                p = cand;
                jittered = true;
                break;
            }
        }
        Waveform clean = jittered ? synthesize(p, static_cast<std::size_t>(n)) : parent;
        detail::circular_shift(clean.samples, rng.uniform_int(-max_shift, max_shift));
        Waveform noisy = add_awgn(clean, snr_db, rng);
        noisy.cls = parent.cls;
        noisy.params = p;
        noisy.sample_id = parent.sample_id * 256 + 16 + v;  // distinct from SNR-slot ids
        out.push_back(std::move(noisy));
    }
    return out;
}

inline nlohmann::json report_to_json(const ErrorRateReport& rep) {
    nlohmann::json j;
    j["runs"] = rep.runs;
    j["config_hash"] = rep.config_hash;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : rep.samples) {
        nlohmann::json e = {{"record", s.record},
                            {"class", s.cls},
                            {"times_in_test", s.times_in_test},
                            {"times_misclassified", s.times_misclassified},
                            {"tested", s.tested},
                            {"error_rate", s.error_rate}};
        if (s.most_confused_with >= 0) e["most_confused_with"] = s.most_confused_with;
        j["samples"].push_back(e);
    }
    return j;
}

// ---- curated training assembly ----
//
// Extends a (images, labels) table with augmented variants of the flagged
// records and remembers which rows may only ever join a training partition.

template <class T>
struct CuratedSet {
    std::vector<T> images;        // originals first, augmented rows appended
    std::vector<int> labels;
    std::size_t n_original = 0;   // rows 0..n_original-1 are the input records
    std::vector<int> augmented;   // extended-table indices, train-only
    std::vector<int> excluded;    // original indices barred from training
};

// Augments flagged records and records exclusions. A per-class cap keeps every
// class's share of the augmented pool within balance_tolerance of uniform, so
// uneven flagging cannot skew the training distribution. `to_image` maps a
// Waveform to an image row of the table's pixel count. Flagged records are
// served in report order, i.e. worst error rates first.
template <class T, class ImageFn>
CuratedSet<T> build_curated_set(const std::vector<Waveform>& parents,
                               const std::vector<T>& images, const std::vector<int>& labels,
                               const std::vector<std::int64_t>& record_ids,
                               const ErrorRateReport& report, const CurationPolicy& policy,
                               double snr_db, RngKey key, ImageFn to_image) {
    policy.validate();
    auto part = classify_samples(report, policy);

    std::map<std::int64_t, int> index_of;
    for (std::size_t i = 0; i < record_ids.size(); ++i)
        index_of[record_ids[i]] = static_cast<int>(i);

    CuratedSet<T> out;
    out.images = images;
    out.labels = labels;
    out.n_original = labels.size();

    std::map<int, int> class_total, class_added;
    for (int l : labels) ++class_total[l];

    for (std::int64_t rec : part.exclude) {
        auto it = index_of.find(rec);
        if (it != index_of.end()) out.excluded.push_back(it->second);
    }

    // Desired per-class totals if every flagged record got its k variants,
    // then a cap at (1 + tolerance) x the uniform share of that pool.
    std::map<int, int> class_desired = class_total;
    for (std::int64_t rec : part.augment) {
        auto it = index_of.find(rec);
        if (it != index_of.end())
            class_desired[labels[static_cast<std::size_t>(it->second)]] +=
                policy.variants_per_flagged;
    }
    double desired_sum = 0.0;
    for (auto& [cls, n] : class_desired) desired_sum += n;
    const double cap_total =
        (1.0 + policy.balance_tolerance) * desired_sum /
        static_cast<double>(std::max<std::size_t>(1, class_desired.size()));

    int serial = 0;
    for (std::int64_t rec : part.augment) {
        auto it = index_of.find(rec);
        if (it == index_of.end()) continue;
        const int idx = it->second;
        const int cls = labels[static_cast<std::size_t>(idx)];
        const int room =
            static_cast<int>(cap_total) - class_total[cls] - class_added[cls];
        const int k = std::min(policy.variants_per_flagged, room);
        if (k <= 0) continue;
        Rng rng(key.child(static_cast<std::uint64_t>(serial++)));
        for (auto& var : augment(parents[static_cast<std::size_t>(idx)], policy, rng, k, snr_db)) {
            auto img = to_image(var);
            out.images.insert(out.images.end(), img.begin(), img.end());
            out.labels.push_back(cls);
            out.augmented.push_back(static_cast<int>(out.labels.size()) - 1);
            ++class_added[cls];
        }
    }
    return out;
}

// Split for a curated table: stratify the original rows only, then append the
// augmented rows to train and drop exclusions from train. Validation and test
// never see augmented rows; excluded records still count in test statistics.
template <class T>
Split curated_split(const CuratedSet<T>& set, const TrainConfig& cfg) {
    std::vector<int> orig_labels(set.labels.begin(),
                                 set.labels.begin() + static_cast<std::ptrdiff_t>(set.n_original));
    Rng split_rng(RngKey{cfg.seed}.child(0));
    Split sp = stratified_split(orig_labels, cfg.split_train, cfg.split_val, split_rng);
    std::vector<char> drop(set.n_original, 0);
    for (int i : set.excluded) drop[static_cast<std::size_t>(i)] = 1;
    std::erase_if(sp.train, [&](int i) { return drop[static_cast<std::size_t>(i)] != 0; });
    sp.train.insert(sp.train.end(), set.augmented.begin(), set.augmented.end());
    return sp;
}

} // namespace amr
