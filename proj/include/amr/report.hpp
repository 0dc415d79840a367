#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "amr/eval.hpp"

namespace amr {

// ---- minimal SVG plotter ----
//
// Small, dependency-free renderers for the report figures: line charts
// (accuracy vs SNR, latency vs throughput), bar charts (variance histogram)
// and a heatmap (confusion matrix). Geometry is fixed-size with simple
// margins; labels use the SVG default font.

namespace svg {

struct Series {
    std::string name;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
    bool dashed = false;  // reference lines
};

inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> p = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                               "#9467bd", "#8c564b"};
    return p;
}

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

struct Frame {
    double w = 640, h = 420;
    double ml = 60, mr = 20, mt = 30, mb = 45;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

    double px(double x) const { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); }
    double py(double y) const { return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb); }

    void fit(const std::vector<Series>& series) {
        bool any = false;
        for (const auto& s : series)
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (!any) {
                    x0 = x1 = s.x[i];
                    y0 = y1 = s.y[i];
                    any = true;
                }
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, s.y[i]);
                y1 = std::max(y1, s.y[i]);
            }
        if (x1 == x0) x1 = x0 + 1;
        if (y1 == y0) y1 = y0 + 1;
        const double px = 0.05 * (x1 - x0), py = 0.08 * (y1 - y0);
        x0 -= px; x1 += px; y0 -= py; y1 += py;
    }

    void axes(std::ostringstream& os, const std::string& xlabel,
              const std::string& ylabel) const {
        os << "<rect x='" << ml << "' y='" << mt << "' width='" << w - ml - mr << "' height='"
           << h - mt - mb << "' fill='none' stroke='#333'/>\n";
        for (int i = 0; i <= 5; ++i) {
            const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
            os << "<text x='" << px(xv) << "' y='" << h - mb + 18
               << "' font-size='11' text-anchor='middle'>" << fmt(std::round(xv * 1000) / 1000)
               << "</text>\n";
            os << "<text x='" << ml - 6 << "' y='" << py(yv) + 4
               << "' font-size='11' text-anchor='end'>" << fmt(std::round(yv * 1000) / 1000)
               << "</text>\n";
        }
        os << "<text x='" << (ml + w - mr) / 2 << "' y='" << h - 8
           << "' font-size='12' text-anchor='middle'>" << xlabel << "</text>\n";
        os << "<text x='14' y='" << (mt + h - mb) / 2
           << "' font-size='12' text-anchor='middle' transform='rotate(-90 14 "
           << (mt + h - mb) / 2 << ")'>" << ylabel << "</text>\n";
    }
};

} // namespace detail

inline std::string line_chart(const std::vector<Series>& series, const std::string& title,
                              const std::string& xlabel, const std::string& ylabel) {
    detail::Frame f;
    f.fit(series);
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << f.w << "' height='" << f.h
       << "'>\n";
    os << "<text x='" << f.w / 2 << "' y='20' font-size='14' text-anchor='middle'>" << title
       << "</text>\n";
    f.axes(os, xlabel, ylabel);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5'";
        if (s.dashed) os << " stroke-dasharray='6 4'";
        os << " points='";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << f.px(s.x[i]) << "," << f.py(s.y[i]) << " ";
        os << "'/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx='" << f.px(s.x[i]) << "' cy='" << f.py(s.y[i]) << "' r='2.5' fill='"
               << s.color << "'/>\n";
        os << "<text x='" << f.w - f.mr - 6 << "' y='" << f.mt + 16 + 15 * static_cast<double>(si)
           << "' font-size='11' text-anchor='end' fill='" << s.color << "'>" << s.name
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string bar_chart(const std::vector<double>& bin_lo, const std::vector<int>& counts,
                             double bin_width, const std::string& title,
                             const std::string& xlabel) {
    detail::Frame f;
    Series env;
    for (std::size_t i = 0; i < bin_lo.size(); ++i) {
        env.x.push_back(bin_lo[i]);
        env.x.push_back(bin_lo[i] + bin_width);
        env.y.push_back(counts[i]);
        env.y.push_back(counts[i]);
    }
    env.y.push_back(0);
    env.x.push_back(env.x.empty() ? 1.0 : env.x.back());
    f.fit({env});
    f.y0 = 0;
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << f.w << "' height='" << f.h
       << "'>\n";
    os << "<text x='" << f.w / 2 << "' y='20' font-size='14' text-anchor='middle'>" << title
       << "</text>\n";
    f.axes(os, xlabel, "count");
    for (std::size_t i = 0; i < bin_lo.size(); ++i) {
        const double x = f.px(bin_lo[i]);
        const double wpx = f.px(bin_lo[i] + bin_width) - x;
        const double y = f.py(counts[i]);
        os << "<rect x='" << x << "' y='" << y << "' width='" << wpx * 0.94 << "' height='"
           << f.py(0) - y << "' fill='#1f77b4' stroke='#333' stroke-width='0.5'/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string heatmap(const ConfusionMatrix& cm, const std::string& title) {
    const int n = cm.classes;
    const double cell = 34, ml = 70, mt = 50;
    const double w = ml + n * cell + 20, h = mt + n * cell + 40;
    int row_max = 1;
    for (const auto& row : cm.counts)
        for (int v : row) row_max = std::max(row_max, v);
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    os << "<text x='" << w / 2 << "' y='20' font-size='14' text-anchor='middle'>" << title
       << "</text>\n";
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const int v = cm.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            const double t = static_cast<double>(v) / row_max;
            const int shade = static_cast<int>(255 - 205 * t);
            os << "<rect x='" << ml + j * cell << "' y='" << mt + i * cell << "' width='" << cell
               << "' height='" << cell << "' fill='rgb(" << shade << "," << shade
               << ",255)' stroke='#999' stroke-width='0.5'/>\n";
            if (v > 0)
                os << "<text x='" << ml + j * cell + cell / 2 << "' y='"
                   << mt + i * cell + cell / 2 + 4 << "' font-size='10' text-anchor='middle'>" << v
                   << "</text>\n";
        }
        os << "<text x='" << ml - 6 << "' y='" << mt + i * cell + cell / 2 + 4
           << "' font-size='10' text-anchor='end'>" << to_string(static_cast<Modulation>(i))
           << "</text>\n";
        os << "<text x='" << ml + i * cell + cell / 2 << "' y='" << mt + n * cell + 14
           << "' font-size='10' text-anchor='middle'>" << to_string(static_cast<Modulation>(i))
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace svg

// ---- aggregated run report ----

struct RunReport {
    static constexpr int kSchemaVersion = 1;

    std::uint64_t config_hash = 0;
    SnrCurve accuracy_vs_snr;
    std::vector<std::pair<double, ConfusionMatrix>> confusions;  // (snr, matrix)
    VarianceStats variance;
    bool has_variance = false;
    AblationTable ablation;
    bool has_ablation = false;
    BenchReport bench;
    bool has_bench = false;
    double train_seconds_per_epoch = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema_version"] = kSchemaVersion;
        j["config_hash"] = config_hash;

        nlohmann::json curve = nlohmann::json::array();
        for (std::size_t i = 0; i < accuracy_vs_snr.snrs.size(); ++i)
            curve.push_back({{"snr_db", accuracy_vs_snr.snrs[i]},
                             {"accuracy", accuracy_vs_snr.accuracy[i]}});
        j["accuracy_vs_snr"] = curve;

        j["literature"] = nlohmann::json::array();
        for (const auto& row : literature_rows())
            j["literature"].push_back({{"model", row.model},
                                       {"accuracy_0db", row.accuracy_0db},
                                       {"params", row.params},
                                       {"note", row.note}});

        j["confusion"] = nlohmann::json::array();
        for (const auto& [snr, cm] : confusions) {
            nlohmann::json e;
            e["snr_db"] = snr;
            e["overall_accuracy"] = cm.overall_accuracy();
            e["counts"] = cm.counts;
            j["confusion"].push_back(e);
        }

        if (has_variance) {
            nlohmann::json v;
            v["runs"] = accuracy_stats_runs();
            v["mean"] = variance.mean;
            v["min"] = variance.min;
            v["max"] = variance.max;
            v["bin_width"] = variance.bin_width;
            nlohmann::json bins = nlohmann::json::array();
            for (const auto& [lo, n] : variance.histogram)
                bins.push_back({{"bin_lo", lo}, {"count", n}});
            v["histogram"] = bins;
            j["variance"] = v;
        }

        if (has_ablation) {
            nlohmann::json a;
            a["snr_db"] = ablation.snrs;
            for (const auto& v : ablation_variants()) {
                a["mean_accuracy"][v] = ablation.mean_acc.at(v);
                a["ratio_vs_cnn"][v] = ablation.ratio(v);
            }
            j["ablation"] = a;
        }

        if (has_bench) {
            nlohmann::json b = nlohmann::json::array();
            for (const auto& r : bench.rows)
                b.push_back({{"batch_size", r.batch_size},
                             {"median_latency_s", r.median_s},
                             {"p95_latency_s", r.p95_s},
                             {"throughput_sps", r.throughput}});
            j["bench"] = {{"repetitions", bench.repetitions},
                          {"warmup", bench.warmup},
                          {"rows", b}};
        }
        if (train_seconds_per_epoch > 0) j["train_seconds_per_epoch"] = train_seconds_per_epoch;
        return j;
    }

private:
    int accuracy_stats_runs() const { return static_cast<int>(variance.accs.size()); }
};

// Figure renderers used by the report command.

inline std::string render_snr_curve_svg(const SnrCurve& curve) {
    std::vector<svg::Series> series;
    svg::Series ours;
    ours.name = "this work";
    ours.x = curve.snrs;
    ours.y = curve.accuracy;
    series.push_back(ours);
    std::size_t ci = 1;
    for (const auto& row : literature_rows()) {
        svg::Series ref;
        ref.name = row.model + " (" + row.note + ")";
        ref.x = curve.snrs;
        ref.y.assign(curve.snrs.size(), row.accuracy_0db);
        ref.color = svg::palette()[ci++ % svg::palette().size()];
        ref.dashed = true;
        series.push_back(ref);
    }
    return svg::line_chart(series, "Accuracy vs SNR", "SNR (dB)", "test accuracy");
}

inline std::string render_variance_svg(const VarianceStats& st) {
    std::vector<double> lo;
    std::vector<int> counts;
    for (const auto& [l, n] : st.histogram) {
        lo.push_back(l);
        counts.push_back(n);
    }
    return svg::bar_chart(lo, counts, st.bin_width, "Accuracy across refold runs",
                          "test accuracy");
}

inline std::string render_bench_svg(const BenchReport& rep) {
    svg::Series s;
    s.name = "measured";
    for (const auto& r : rep.rows) {
        s.x.push_back(r.throughput);
        s.y.push_back(r.median_s * 1e3);
    }
    return svg::line_chart({s}, "Latency vs Throughput", "throughput (samples/s)",
                           "median latency (ms)");
}

inline std::string render_ablation_svg(const AblationTable& t) {
    std::vector<svg::Series> series;
    std::size_t ci = 0;
    for (const auto& v : ablation_variants()) {
        svg::Series s;
        s.name = v;
        s.x = t.snrs;
        s.y = t.mean_acc.at(v);
        s.color = svg::palette()[ci++ % svg::palette().size()];
        series.push_back(s);
    }
    return svg::line_chart(series, "Model configurations", "SNR (dB)", "mean test accuracy");
}

} // namespace amr
