#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "amr/nn.hpp"
#include "amr/train.hpp"

using namespace amr;
namespace fs = std::filesystem;

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

ArchitectureSpec reference_arch() { return ArchitectureSpec{}; }

template <class T>
T loss_of(Model<T>& m, const std::vector<T>& x, const std::vector<int>& y) {
    m.train_mode = true;
    auto logits = m.forward(x, static_cast<int>(y.size()));
    std::vector<T> dl;
    return nn::softmax_ce(logits, y, m.arch.classes, dl);
}

double rel_err(double a, double b) {
    // Floor absorbs central-difference noise when the true gradient is ~0
    // (e.g. conv bias feeding straight into batch norm).
    const double denom = std::max(1e-6, std::abs(a) + std::abs(b));
    return std::abs(a - b) / denom;
}

} // namespace

TEST_CASE("reference architecture hits the parameter budget") {
    Rng rng(1u);
    Model<float> m(reference_arch(), rng);
    CHECK(m.param_count() == 12097);

    ArchitectureSpec fat = reference_arch();
    fat.lstm_hidden = 64;
    CHECK_THROWS_WITH((Model<float>(fat, rng)), Catch::Matchers::ContainsSubstring("budget"));

    ArchitectureSpec cnn_only = reference_arch();
    cnn_only.head = HeadKind::cnn_only;
    Model<float> mc(cnn_only, rng);
    CHECK(mc.param_count() >= 10000);
    CHECK(mc.param_count() <= 15000);
}

TEST_CASE("initialization is deterministic in the seed") {
    Rng r1(7u), r2(7u);
    Model<float> a(tiny_arch(), r1), b(tiny_arch(), r2);
    CHECK(a.conv1.w == b.conv1.w);
    CHECK(a.lstm.w_ih == b.lstm.w_ih);
    CHECK(a.dense.w == b.dense.w);
    // forget-gate bias = 1
    for (int j = 0; j < a.lstm.hidden; ++j)
        CHECK(a.lstm.b[static_cast<std::size_t>(a.lstm.hidden + j)] == 1.0f);
}

TEST_CASE("eval forward is deterministic and per-sample independent") {
    Rng rng(3u);
    Model<float> m(tiny_arch(), rng);
    m.train_mode = false;
    std::vector<float> img(64);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));

    std::vector<float> two(128);
    std::copy(img.begin(), img.end(), two.begin());
    std::copy(img.begin(), img.end(), two.begin() + 64);
    auto l2 = m.forward(two, 2);
    auto l1 = m.forward(img, 1);
    for (int j = 0; j < 3; ++j) {
        CHECK(l2[static_cast<std::size_t>(j)] == l1[static_cast<std::size_t>(j)]);
        CHECK(l2[static_cast<std::size_t>(3 + j)] == l1[static_cast<std::size_t>(j)]);
    }
    auto l1b = m.forward(img, 1);
    CHECK(l1 == l1b);

    CHECK_THROWS_AS(m.forward(img, 2), std::invalid_argument);  // shape mismatch
}

TEST_CASE("softmax probabilities sum to one") {
    Rng rng(9u);
    Model<float> m(tiny_arch(), rng);
    std::vector<float> x(2 * 64);
    for (auto& v : x) v = static_cast<float>(rng.uniform(0.0, 1.0));
    auto probs = predict(m, x, 2);
    for (int s = 0; s < 2; ++s) {
        float sum = 0.0f;
        for (int j = 0; j < 3; ++j) sum += probs[static_cast<std::size_t>(s * 3 + j)];
        CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }

    // uniform logits -> uniform probabilities
    std::vector<float> logits(11, 0.42f), unif;
    nn::softmax_rows(logits, 1, 11, unif);
    for (float p : unif) CHECK_THAT(p, Catch::Matchers::WithinAbs(1.0 / 11.0, 1e-6));
}

TEST_CASE("softmax-CE gradient equals the closed form") {
    Rng rng(13u);
    const int batch = 5, classes = 7;
    std::vector<double> logits(batch * classes);
    for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
    std::vector<int> labels(batch);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, classes - 1));

    std::vector<double> dl, probs;
    nn::softmax_ce(logits, labels, classes, dl);
    nn::softmax_rows(logits, batch, classes, probs);
    for (int s = 0; s < batch; ++s)
        for (int j = 0; j < classes; ++j) {
            const double onehot = labels[static_cast<std::size_t>(s)] == j ? 1.0 : 0.0;
            REQUIRE_THAT(dl[static_cast<std::size_t>(s * classes + j)],
                         Catch::Matchers::WithinAbs(
                             (probs[static_cast<std::size_t>(s * classes + j)] - onehot) / batch,
                             1e-12));
        }
}

TEST_CASE("finite differences validate every parameter gradient") {
    Rng rng(21u);
    Model<double> m(tiny_arch(), rng);
    const int batch = 4;
    std::vector<double> x(static_cast<std::size_t>(batch) * 64);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<int> y = {0, 1, 2, 1};

    m.train_mode = true;
    m.zero_grad();
    auto logits = m.forward(x, batch);
    m.backward(logits, y);

    const double h = 1e-4;
    for (auto& p : m.params()) {
        for (std::size_t j = 0; j < p.w->size(); ++j) {
            const double orig = (*p.w)[j];
            (*p.w)[j] = orig + h;
            const double lp = loss_of(m, x, y);
            (*p.w)[j] = orig - h;
            const double lm = loss_of(m, x, y);
            (*p.w)[j] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            INFO(p.name << "[" << j << "] fd=" << fd << " an=" << (*p.g)[j]);
            REQUIRE(rel_err(fd, (*p.g)[j]) <= 1e-4);
        }
    }
}

TEST_CASE("finite differences validate cnn_only head too") {
    Rng rng(22u);
    auto arch = tiny_arch();
    arch.head = HeadKind::cnn_only;
    Model<double> m(arch, rng);
    const int batch = 3;
    std::vector<double> x(static_cast<std::size_t>(batch) * 64);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<int> y = {2, 0, 1};

    m.train_mode = true;
    m.zero_grad();
    auto logits = m.forward(x, batch);
    m.backward(logits, y);

    const double h = 1e-4;
    for (auto& p : m.params()) {
        for (std::size_t j = 0; j < p.w->size(); ++j) {
            const double orig = (*p.w)[j];
            (*p.w)[j] = orig + h;
            const double lp = loss_of(m, x, y);
            (*p.w)[j] = orig - h;
            const double lm = loss_of(m, x, y);
            (*p.w)[j] = orig;
            REQUIRE(rel_err((lp - lm) / (2.0 * h), (*p.g)[j]) <= 1e-4);
        }
    }
}

TEST_CASE("LSTM gradients across four time steps") {
    Rng rng(31u);
    nn::LSTM<double> lstm;
    lstm.init(3, 3, rng);
    const int batch = 2, steps = 4;
    std::vector<double> x(static_cast<std::size_t>(batch) * steps * 3);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<double> r(static_cast<std::size_t>(batch) * 3);
    for (auto& v : r) v = rng.uniform(-1.0, 1.0);

    auto loss = [&]() {
        std::vector<double> hT;
        lstm.forward(x, batch, steps, hT, true);
        double acc = 0.0;
        for (std::size_t i = 0; i < hT.size(); ++i) acc += r[i] * hT[i];
        return acc;
    };

    loss();
    std::vector<double> dx;
    lstm.dw_ih.assign(lstm.dw_ih.size(), 0.0);
    lstm.dw_hh.assign(lstm.dw_hh.size(), 0.0);
    lstm.db.assign(lstm.db.size(), 0.0);
    lstm.backward(r, dx);

    const double h = 1e-5;
    auto check_block = [&](std::vector<double>& w, std::vector<double>& g) {
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double orig = w[j];
            w[j] = orig + h;
            const double lp = loss();
            w[j] = orig - h;
            const double lm = loss();
            w[j] = orig;
            REQUIRE(rel_err((lp - lm) / (2.0 * h), g[j]) <= 1e-4);
        }
    };
    check_block(lstm.w_ih, lstm.dw_ih);
    check_block(lstm.w_hh, lstm.dw_hh);
    check_block(lstm.b, lstm.db);

    // input gradient as well
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double orig = x[j];
        x[j] = orig + h;
        const double lp = loss();
        x[j] = orig - h;
        const double lm = loss();
        x[j] = orig;
        REQUIRE(rel_err((lp - lm) / (2.0 * h), dx[j]) <= 1e-4);
    }
}

TEST_CASE("Adam: null update at lr 0 and hand-computed first step") {
    std::vector<double> w = {1.0, 2.0}, g = {0.5, -1.0};
    std::vector<ParamRef<double>> ps = {{"w", &w, &g}};

    Adam<double> frozen(0.0);
    frozen.step(ps);
    CHECK(w == std::vector<double>{1.0, 2.0});

    // bias-corrected first step reduces to w -= lr * g / (|g| + eps)
    Adam<double> opt(0.01);
    opt.step(ps);
    CHECK_THAT(w[0], Catch::Matchers::WithinAbs(1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-12));
    CHECK_THAT(w[1], Catch::Matchers::WithinAbs(2.0 + 0.01 * 1.0 / (1.0 + 1e-8), 1e-12));
}

TEST_CASE("first training step decreases the loss") {
    Rng rng(41u);
    Model<double> m(tiny_arch(), rng);
    std::vector<double> x(4 * 64);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<int> y = {0, 1, 2, 0};

    const double before = loss_of(m, x, y);
    Adam<double> opt(1e-3);
    train_step(m, opt, x, y);
    const double after = loss_of(m, x, y);
    CHECK(after < before);
}

TEST_CASE("overfits a tiny batch; gradient vanishes at convergence") {
    Rng rng(43u);
    Model<double> m(tiny_arch(), rng);
    std::vector<double> x(4 * 64);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    std::vector<int> y = {0, 1, 2, 0};

    Adam<double> opt(0.01);
    double last = 0.0;
    for (int step = 0; step < 2000; ++step) last = train_step(m, opt, x, y);
    CHECK(last < 1e-3);

    m.train_mode = true;
    auto logits = m.forward(x, 4);
    for (int s = 0; s < 4; ++s) {
        const double* row = logits.data() + static_cast<std::size_t>(s) * 3;
        CHECK(static_cast<int>(std::max_element(row, row + 3) - row) ==
              y[static_cast<std::size_t>(s)]);
    }

    // one perfectly separable sample driven to convergence
    Rng rng2(44u);
    Model<double> m1(tiny_arch(), rng2);
    std::vector<double> x1(x.begin(), x.begin() + 64);
    std::vector<int> y1 = {1};
    Adam<double> opt1(0.01);
    for (int step = 0; step < 1500; ++step) train_step(m1, opt1, x1, y1);
    m1.train_mode = true;
    m1.zero_grad();
    auto l1 = m1.forward(x1, 1);
    m1.backward(l1, y1);
    double norm = 0.0;
    for (auto& p : m1.params())
        for (double v : *p.g) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-3);
}

TEST_CASE("stratified split matches the 0.6/0.2/0.2 contract") {
    std::vector<int> labels;
    for (int c = 0; c < 11; ++c)
        for (int i = 0; i < 100; ++i) labels.push_back(c);
    Rng rng(5u);
    auto sp = stratified_split(labels, 0.6, 0.2, rng);
    CHECK(sp.train.size() == 660);
    CHECK(sp.val.size() == 220);
    CHECK(sp.test.size() == 220);

    std::array<int, 11> train_counts{};
    for (int i : sp.train) train_counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]++;
    for (int c : train_counts) CHECK(c == 60);

    std::vector<int> small = {0, 0, 1};
    CHECK_THROWS_WITH(stratified_split(small, 0.6, 0.2, rng),
                      Catch::Matchers::ContainsSubstring("fewer than 3"));
}

TEST_CASE("fit: history, best-epoch selection, determinism") {
    Rng rng(51u);
    // small separable problem: class mean shifts
    const int n = 30, px = 64;
    std::vector<float> images(static_cast<std::size_t>(n) * px);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = i % 3;
        for (int j = 0; j < px; ++j)
            images[static_cast<std::size_t>(i * px + j)] =
                static_cast<float>(rng.uniform(0.0, 0.2) + 0.4 * (i % 3) * ((j / 8) % 3 == i % 3));
    }

    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = 99;
    auto arch = tiny_arch();

    auto res = fit(images, labels, arch, cfg);
    REQUIRE(res.checkpoint.history.size() == 5);
    double best = 0.0;
    for (const auto& st : res.checkpoint.history) best = std::max(best, st.val_acc);
    CHECK(res.checkpoint.selected_val_acc == best);

    auto res2 = fit(images, labels, arch, cfg);
    for (std::size_t e = 0; e < 5; ++e) {
        CHECK(res.checkpoint.history[e].train_loss == res2.checkpoint.history[e].train_loss);
        CHECK(res.checkpoint.history[e].val_acc == res2.checkpoint.history[e].val_acc);
    }
    CHECK(res.checkpoint.weights == res2.checkpoint.weights);

    // test partition untouched and disjoint
    std::set<int> seen;
    for (int i : res.split.train) seen.insert(i);
    for (int i : res.split.val) seen.insert(i);
    for (int i : res.split.test) CHECK(!seen.count(i));
}

TEST_CASE("checkpoint round trip reproduces logits bit-identically") {
    Rng rng(61u);
    const int n = 12, px = 64;
    std::vector<float> images(static_cast<std::size_t>(n) * px);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = i % 3;
        for (int j = 0; j < px; ++j)
            images[static_cast<std::size_t>(i * px + j)] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 7;
    auto res = fit(images, labels, tiny_arch(), cfg);

    const fs::path dir = fs::temp_directory_path() / "amr_test_ckpt";
    fs::remove_all(dir);
    save_checkpoint(res.checkpoint, dir);
    auto loaded = load_checkpoint(dir);
    CHECK(loaded.weights == res.checkpoint.weights);
    CHECK(loaded.selected_epoch == res.checkpoint.selected_epoch);
    CHECK(loaded.history.size() == res.checkpoint.history.size());

    auto m1 = model_from_checkpoint<float>(res.checkpoint);
    auto m2 = model_from_checkpoint<float>(loaded);
    std::vector<float> x(images.begin(), images.begin() + px);
    CHECK(m1.forward(x, 1) == m2.forward(x, 1));

    // truncated weights error cleanly
    fs::resize_file(dir / "weights.bin", 10);
    CHECK_THROWS_WITH(load_checkpoint(dir), Catch::Matchers::ContainsSubstring("corrupt checkpoint"));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint of the reference config stays under 64 KiB") {
    Rng rng(71u);
    Model<float> m(reference_arch(), rng);
    auto blob = detail::snapshot_weights(m);
    CHECK(blob.size() * sizeof(float) <= 64 * 1024);
    CHECK(blob.size() >= 12097);  // params + BN running stats
}
