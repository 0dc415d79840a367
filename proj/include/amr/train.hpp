#pragma once
#include <cstdio>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "amr/nn.hpp"
#include "amr/rng.hpp"

namespace amr {

struct TrainConfig {
    double learning_rate = 0.003;
    int epochs = 100;
    int batch_size = 32;
    double split_train = 0.6, split_val = 0.2, split_test = 0.2;
    std::uint64_t seed = 1;
    bool save_best = true;
    bool batch_norm = true;

    void validate() const {
        if (split_train <= 0 || split_val <= 0 || split_test <= 0 ||
            std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
            throw std::invalid_argument("split fractions must be positive and sum to 1");
        if (epochs < 1 || batch_size < 1) throw std::invalid_argument("bad train config");
    }
};

struct Split {
    std::vector<int> train, val, test;
};

// Per-class proportional partition; floor for train/val, remainder to test.
inline Split stratified_split(const std::vector<int>& labels, double f_train, double f_val,
                              Rng& rng) {
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int>(i));

    Split sp;
    for (auto& [cls, idx] : by_class) {
        if (idx.size() < 3)
            throw std::invalid_argument("class " + std::to_string(cls) +
                                        " has fewer than 3 samples; cannot stratify 3 ways");
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        const std::size_t n_train = static_cast<std::size_t>(f_train * idx.size());
        const std::size_t n_val = static_cast<std::size_t>(f_val * idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < n_train) sp.train.push_back(idx[i]);
            else if (i < n_train + n_val) sp.val.push_back(idx[i]);
            else sp.test.push_back(idx[i]);
        }
    }
    return sp;
}

struct EpochStats {
    int epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

struct Checkpoint {
    ArchitectureSpec arch;
    std::vector<float> weights;  // documented tensor order
    std::vector<EpochStats> history;
    int selected_epoch = 0;
    double selected_val_acc = 0, selected_val_loss = 0;
};

namespace detail {

template <class T>
std::vector<float> snapshot_weights(Model<T>& m) {
    std::vector<float> out;
    auto dump = [&](const std::vector<T>& v) {
        for (T x : v) out.push_back(static_cast<float>(x));
    };
    dump(m.conv1.w); dump(m.conv1.b);
    dump(m.bn1.gamma); dump(m.bn1.beta); dump(m.bn1.run_mean); dump(m.bn1.run_var);
    dump(m.conv2.w); dump(m.conv2.b);
    dump(m.bn2.gamma); dump(m.bn2.beta); dump(m.bn2.run_mean); dump(m.bn2.run_var);
    if (m.arch.head == HeadKind::cnn_lstm) {
        dump(m.lstm.w_ih); dump(m.lstm.w_hh); dump(m.lstm.b);
    }
    dump(m.dense.w); dump(m.dense.b);
    return out;
}

template <class T>
void restore_weights(Model<T>& m, const std::vector<float>& blob) {
    std::size_t pos = 0;
    auto load = [&](std::vector<T>& v) {
        if (pos + v.size() > blob.size()) throw std::runtime_error("corrupt checkpoint: short weight blob");
        for (auto& x : v) x = static_cast<T>(blob[pos++]);
    };
    load(m.conv1.w); load(m.conv1.b);
    load(m.bn1.gamma); load(m.bn1.beta); load(m.bn1.run_mean); load(m.bn1.run_var);
    load(m.conv2.w); load(m.conv2.b);
    load(m.bn2.gamma); load(m.bn2.beta); load(m.bn2.run_mean); load(m.bn2.run_var);
    if (m.arch.head == HeadKind::cnn_lstm) {
        load(m.lstm.w_ih); load(m.lstm.w_hh); load(m.lstm.b);
    }
    load(m.dense.w); load(m.dense.b);
    if (pos != blob.size()) throw std::runtime_error("corrupt checkpoint: weight blob size mismatch");
}

} // namespace detail

// Eval-mode loss/accuracy over an index subset.
template <class T>
std::pair<double, double> evaluate(Model<T>& model, const std::vector<T>& images,
                                   const std::vector<int>& labels, const std::vector<int>& subset,
                                   int batch_size = 64, std::vector<int>* preds_out = nullptr) {
    model.train_mode = false;
    const int px = model.arch.image_h * model.arch.image_w;
    double loss = 0.0;
    int correct = 0;
    std::vector<T> batch_imgs;
    std::vector<int> batch_labels;
    for (std::size_t start = 0; start < subset.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(subset.size(), start + static_cast<std::size_t>(batch_size));
        const int bsz = static_cast<int>(end - start);
        batch_imgs.resize(static_cast<std::size_t>(bsz) * px);
        batch_labels.resize(static_cast<std::size_t>(bsz));
        for (int i = 0; i < bsz; ++i) {
            const int idx = subset[start + static_cast<std::size_t>(i)];
            std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(idx) * px, px,
                        batch_imgs.begin() + static_cast<std::ptrdiff_t>(i) * px);
            batch_labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx)];
        }
        auto logits = model.forward(batch_imgs, bsz);
        std::vector<T> dl;
        loss += static_cast<double>(nn::softmax_ce(logits, batch_labels, model.arch.classes, dl)) * bsz;
        for (int i = 0; i < bsz; ++i) {
            const T* row = logits.data() + static_cast<std::size_t>(i) * model.arch.classes;
            const int pred = static_cast<int>(std::max_element(row, row + model.arch.classes) - row);
            if (pred == batch_labels[static_cast<std::size_t>(i)]) ++correct;
            if (preds_out) preds_out->push_back(pred);
        }
    }
    if (subset.empty()) return {0.0, 0.0};
    return {loss / static_cast<double>(subset.size()),
            static_cast<double>(correct) / static_cast<double>(subset.size())};
}

struct FitResult {
    Checkpoint checkpoint;
    Split split;
};

// Full training loop: stratified split, per-epoch validation, best-epoch
// selection (accuracy, tie -> lower val loss, then earlier epoch). The test
// partition is never touched here.
template <class T>
FitResult fit(const std::vector<T>& images, const std::vector<int>& labels,
              const ArchitectureSpec& arch_in, const TrainConfig& cfg,
              const Split* fixed_split = nullptr) {
    cfg.validate();
    ArchitectureSpec arch = arch_in;
    arch.batch_norm = cfg.batch_norm;

    Rng split_rng(RngKey{cfg.seed}.child(0));
    Split sp = fixed_split ? *fixed_split
                           : stratified_split(labels, cfg.split_train, cfg.split_val, split_rng);

    Rng init_rng(RngKey{cfg.seed}.child(1));
    Model<T> model(arch, init_rng);
    Adam<T> opt(static_cast<T>(cfg.learning_rate));
    Rng shuffle_rng(RngKey{cfg.seed}.child(2));

    const int px = arch.image_h * arch.image_w;
    FitResult res;
    res.split = sp;
    res.checkpoint.arch = arch;

    std::vector<int> order = sp.train;
    std::vector<T> batch_imgs;
    std::vector<int> batch_labels;
    double best_acc = -1.0, best_loss = 0.0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        double ep_loss = 0.0;
        int ep_correct = 0, ep_count = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const int bsz = static_cast<int>(end - start);
            batch_imgs.resize(static_cast<std::size_t>(bsz) * px);
            batch_labels.resize(static_cast<std::size_t>(bsz));
            for (int i = 0; i < bsz; ++i) {
                const int idx = order[start + static_cast<std::size_t>(i)];
                std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(idx) * px, px,
                            batch_imgs.begin() + static_cast<std::ptrdiff_t>(i) * px);
                batch_labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx)];
            }
            model.train_mode = true;
            model.zero_grad();
            auto logits = model.forward(batch_imgs, bsz);
            const T loss = model.backward(logits, batch_labels);
            if (!std::isfinite(static_cast<double>(loss)))
                throw DivergedError("training diverged at epoch " + std::to_string(epoch));
            opt.step(model.params());
            ep_loss += static_cast<double>(loss) * bsz;
            for (int i = 0; i < bsz; ++i) {
                const T* row = logits.data() + static_cast<std::size_t>(i) * arch.classes;
                if (static_cast<int>(std::max_element(row, row + arch.classes) - row) ==
                    batch_labels[static_cast<std::size_t>(i)])
                    ++ep_correct;
            }
            ep_count += bsz;
        }

        auto [val_loss, val_acc] = evaluate(model, images, labels, sp.val);
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = ep_loss / std::max(1, ep_count);
        st.train_acc = static_cast<double>(ep_correct) / std::max(1, ep_count);
        st.val_loss = val_loss;
        st.val_acc = val_acc;
        res.checkpoint.history.push_back(st);

        const bool better = val_acc > best_acc || (val_acc == best_acc && val_loss < best_loss);
        if (!cfg.save_best || better) {
            if (better) { best_acc = val_acc; best_loss = val_loss; }
            res.checkpoint.weights = detail::snapshot_weights(model);
            res.checkpoint.selected_epoch = epoch;
            res.checkpoint.selected_val_acc = val_acc;
            res.checkpoint.selected_val_loss = val_loss;
        }
    }
    return res;
}

template <class T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
    Rng dummy(0u);
    Model<T> m(ckpt.arch, dummy);
    detail::restore_weights(m, ckpt.weights);
    m.train_mode = false;
    return m;
}

template <class T>
std::vector<T> predict(Model<T>& model, const std::vector<T>& images, int batch) {
    model.train_mode = false;
    auto logits = model.forward(images, batch);
    std::vector<T> probs;
    nn::softmax_rows(logits, batch, model.arch.classes, probs);
    return probs;
}

// ---- checkpoint container: arch.json + weights.bin + history.csv ----

inline nlohmann::json arch_to_json(const ArchitectureSpec& a) {
    return {{"image_h", a.image_h},     {"image_w", a.image_w},
            {"conv1_out", a.conv1_out}, {"conv2_out", a.conv2_out},
            {"lstm_hidden", a.lstm_hidden}, {"classes", a.classes},
            {"head", a.head == HeadKind::cnn_lstm ? "cnn_lstm" : "cnn_only"},
            {"batch_norm", a.batch_norm}, {"enforce_budget", a.enforce_budget}};
}

inline ArchitectureSpec arch_from_json(const nlohmann::json& j) {
    ArchitectureSpec a;
    a.image_h = j.at("image_h").get<int>();
    a.image_w = j.at("image_w").get<int>();
    a.conv1_out = j.at("conv1_out").get<int>();
    a.conv2_out = j.at("conv2_out").get<int>();
    a.lstm_hidden = j.at("lstm_hidden").get<int>();
    a.classes = j.at("classes").get<int>();
    a.head = j.at("head").get<std::string>() == "cnn_lstm" ? HeadKind::cnn_lstm : HeadKind::cnn_only;
    a.batch_norm = j.at("batch_norm").get<bool>();
    a.enforce_budget = j.at("enforce_budget").get<bool>();
    return a;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json arch = arch_to_json(ckpt.arch);
    arch["format"] = "amr-checkpoint";
    arch["format_version"] = 1;
    arch["weight_count"] = ckpt.weights.size();
    arch["selected_epoch"] = ckpt.selected_epoch;
    arch["selected_val_acc"] = ckpt.selected_val_acc;
    arch["selected_val_loss"] = ckpt.selected_val_loss;
    std::ofstream aj(dir / "arch.json");
    aj << arch.dump(2) << "\n";

    std::ofstream wb(dir / "weights.bin", std::ios::binary);
    wb.write(reinterpret_cast<const char*>(ckpt.weights.data()),
             static_cast<std::streamsize>(ckpt.weights.size() * sizeof(float)));

    std::ofstream hist(dir / "history.csv");
    hist << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& st : ckpt.history)
        hist << st.epoch << "," << st.train_loss << "," << st.train_acc << "," << st.val_loss
             << "," << st.val_acc << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream aj(dir / "arch.json");
    if (!aj) throw std::runtime_error("missing arch.json in " + dir.string());
    nlohmann::json arch;
    try {
        aj >> arch;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("corrupt checkpoint: ") + e.what());
    }
    if (arch.value("format", "") != "amr-checkpoint" || arch.value("format_version", -1) != 1)
        throw std::runtime_error("corrupt checkpoint: bad format marker");

    Checkpoint ckpt;
    ckpt.arch = arch_from_json(arch);
    ckpt.selected_epoch = arch.value("selected_epoch", 0);
    ckpt.selected_val_acc = arch.value("selected_val_acc", 0.0);
    ckpt.selected_val_loss = arch.value("selected_val_loss", 0.0);

    const std::size_t count = arch.value("weight_count", std::size_t{0});
    std::ifstream wb(dir / "weights.bin", std::ios::binary);
    if (!wb) throw std::runtime_error("missing weights.bin in " + dir.string());
    ckpt.weights.resize(count);
    wb.read(reinterpret_cast<char*>(ckpt.weights.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(wb.gcount()) != count * sizeof(float))
        throw std::runtime_error("corrupt checkpoint: truncated weights.bin");

    std::ifstream hist(dir / "history.csv");
    if (hist) {
        std::string line;
        std::getline(hist, line);  // header
        while (std::getline(hist, line)) {
            EpochStats st;
            if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &st.epoch, &st.train_loss,
                            &st.train_acc, &st.val_loss, &st.val_acc) == 5)
                ckpt.history.push_back(st);
        }
    }
    return ckpt;
}

} // namespace amr
