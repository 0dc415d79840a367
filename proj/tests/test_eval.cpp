#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "amr/eval.hpp"

using namespace amr;

namespace {

ArchitectureSpec tiny_arch() {
    ArchitectureSpec a;
    a.image_h = 8;
    a.image_w = 8;
    a.conv1_out = 2;
    a.conv2_out = 3;
    a.lstm_hidden = 4;
    a.classes = 3;
    a.enforce_budget = false;
    return a;
}

void toy_table(int per_class, std::vector<float>& images, std::vector<int>& labels,
               std::uint64_t seed = 17) {
    Rng rng(seed);
    const int px = 64;
    images.clear();
    labels.clear();
    for (int i = 0; i < 3 * per_class; ++i) {
        const int cls = i % 3;
        labels.push_back(cls);
        for (int j = 0; j < px; ++j)
            images.push_back(
                static_cast<float>(rng.uniform(0.0, 0.2) + 0.5 * (((j / 8) % 3) == cls)));
    }
}

} // namespace

TEST_CASE("confusion matrix: trivial shapes and the accuracy identity") {
    // perfect predictions -> diagonal
    std::vector<int> labels, preds;
    for (int c = 0; c < 11; ++c)
        for (int i = 0; i < 3; ++i) { labels.push_back(c); preds.push_back(c); }
    auto cm = confusion_matrix(preds, labels);
    CHECK(cm.overall_accuracy() == 1.0);
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j)
            CHECK(cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
                  (i == j ? 3 : 0));

    // all-one-class predictor -> single nonzero column
    std::fill(preds.begin(), preds.end(), 4);
    cm = confusion_matrix(preds, labels);
    for (int j = 0; j < 11; ++j) {
        int col = 0;
        for (int i = 0; i < 11; ++i)
            col += cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        CHECK(col == (j == 4 ? 33 : 0));
    }

    // row sums = per-class test counts; accuracy = trace/total = direct mean
    Rng rng(3u);
    for (auto& p : preds) p = static_cast<int>(rng.uniform_int(0, 10));
    cm = confusion_matrix(preds, labels);
    int agree = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) agree += preds[i] == labels[i];
    CHECK(cm.overall_accuracy() == static_cast<double>(agree) / preds.size());
    for (int i = 0; i < 11; ++i) {
        const auto& row = cm.counts[static_cast<std::size_t>(i)];
        CHECK(std::accumulate(row.begin(), row.end(), 0) == 3);
    }

    preds.pop_back();
    CHECK_THROWS_AS(confusion_matrix(preds, labels), EvalError);
}

TEST_CASE("confusion matrix CSV names all eleven classes") {
    auto cm = confusion_matrix({0, 10}, {0, 10});
    const auto csv = cm.to_csv();
    CHECK(csv.find("BFSK") != std::string::npos);
    CHECK(csv.find("T2") != std::string::npos);
    CHECK(csv.find("P4") != std::string::npos);
}

TEST_CASE("variance summary: stats and fixed-width histogram") {
    std::vector<double> accs = {0.951, 0.9638, 0.958, 0.958, 0.9701, 0.949};
    auto st = summarize_variance(accs);
    CHECK_THAT(st.mean, Catch::Matchers::WithinAbs(
                            std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size(), 1e-12));
    CHECK(st.min == 0.949);
    CHECK(st.max == 0.9701);
    CHECK(st.bin_width == 0.005);

    int total = 0;
    for (const auto& [lo, n] : st.histogram) total += n;
    CHECK(total == static_cast<int>(accs.size()));  // bin counts sum to run count

    // contiguous bins covering [min, max]
    for (std::size_t i = 1; i < st.histogram.size(); ++i)
        CHECK_THAT(st.histogram[i].first - st.histogram[i - 1].first,
                   Catch::Matchers::WithinAbs(st.bin_width, 1e-12));
    CHECK(st.histogram.front().first <= st.min);
    CHECK(st.histogram.back().first + st.bin_width >= st.max);

    CHECK_THROWS_AS(summarize_variance({0.5}), EvalError);
}

TEST_CASE("variance study: determinism and degenerate equal-runs case") {
    std::vector<float> images;
    std::vector<int> labels;
    toy_table(10, images, labels);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 5;

    auto st1 = variance_study(images, labels, tiny_arch(), cfg, 3);
    auto st2 = variance_study(images, labels, tiny_arch(), cfg, 3);
    CHECK(st1.accs == st2.accs);
    CHECK(st1.mean == st2.mean);

    // two runs with identical accuracies -> a single occupied bin
    auto st3 = summarize_variance({0.9512, 0.9512});
    CHECK(st3.histogram.size() == 1);
    CHECK(st3.histogram[0].second == 2);
}

TEST_CASE("ablation grid: shape, baseline ratio, paired folds") {
    std::vector<float> images;
    std::vector<int> labels;
    toy_table(10, images, labels);

    // curated set with no augmentation/exclusion: plain paired comparison
    CuratedSet<float> set;
    set.images = images;
    set.labels = labels;
    set.n_original = labels.size();

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 21;

    auto table = ablation_grid(std::vector<CuratedSet<float>>{set}, {0.0}, tiny_arch(), cfg, 2);
    REQUIRE(table.snrs == std::vector<double>{0.0});
    for (const auto& v : ablation_variants()) {
        REQUIRE(table.mean_acc.at(v).size() == 1);
        REQUIRE(table.accs.at(v)[0].size() == 2);
        for (double a : table.accs.at(v)[0]) {
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
    }
    for (double r : table.ratio("cnn")) CHECK(r == 1.0);

    const auto csv = table.to_csv();
    CHECK(csv.find("snr_db") != std::string::npos);
    CHECK(csv.find("cnn_lstm_aug_ratio") != std::string::npos);

    CHECK_THROWS_AS(ablation_grid(std::vector<CuratedSet<float>>{set}, {0.0, 10.0}, tiny_arch(),
                                  cfg, 2),
                    EvalError);
}

TEST_CASE("literature rows are labeled reported, not reproduced") {
    for (const auto& row : literature_rows()) CHECK(row.note == "reported, not reproduced");
    CHECK(literature_rows().size() == 2);
}

TEST_CASE("snr curve CSV emits one row per grid point") {
    SnrCurve c;
    c.snrs = {-10.0, 0.0, 10.0};
    c.accuracy = {0.5, 0.9, 0.95};
    const auto csv = c.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("latency bench: definitional identity and monotone latency") {
    Rng rng(9u);
    Model<float> m(tiny_arch(), rng);
    auto rep = bench_latency(m, {1, 8, 64}, 100, 10);
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.repetitions == 100);
    CHECK(rep.warmup == 10);
    for (const auto& r : rep.rows) {
        CHECK(r.throughput == r.batch_size / r.median_s);  // identity from its own columns
        CHECK(r.p95_s >= r.median_s);
    }
    CHECK(rep.rows[0].median_s <= rep.rows[2].median_s);

    const auto csv = rep.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    CHECK_THROWS_AS(bench_latency(m, {1}, 1, 0), EvalError);
}
