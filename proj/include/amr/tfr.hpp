#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "amr/fft.hpp"
#include "amr/siggen.hpp"

namespace amr {

// ---- analytic signal ----

struct AnalyticSignal {
    std::vector<cplx> samples;
    std::int64_t sample_id = 0;
};

// One-sided-spectrum construction: zero negative bins, double positive bins,
// DC and Nyquist kept single.
inline AnalyticSignal analytic_signal(const std::vector<double>& x, std::int64_t sample_id = 0) {
    const std::size_t n = x.size();
    if (n < 2 || n % 2 != 0) throw std::invalid_argument("analytic_signal: need even length >= 2");
    std::vector<cplx> spec(x.begin(), x.end());
    fft(spec);
    for (std::size_t k = 1; k < n / 2; ++k) spec[k] *= 2.0;
    for (std::size_t k = n / 2 + 1; k < n; ++k) spec[k] = 0.0;
    ifft(spec);
    return AnalyticSignal{std::move(spec), sample_id};
}

inline AnalyticSignal analytic_signal(const Waveform& w) {
    return analytic_signal(w.samples, w.sample_id);
}

// ---- kernels ----

enum class KernelKind { WVD, CWD, SPWVD };

inline KernelKind kernel_from_string(const std::string& s) {
    if (s == "wvd" || s == "WVD") return KernelKind::WVD;
    if (s == "cwd" || s == "CWD") return KernelKind::CWD;
    if (s == "spwvd" || s == "SPWVD") return KernelKind::SPWVD;
    throw std::invalid_argument("unknown kernel '" + s + "'");
}

inline const char* to_string(KernelKind k) {
    switch (k) {
        case KernelKind::WVD: return "wvd";
        case KernelKind::CWD: return "cwd";
        default: return "spwvd";
    }
}

struct KernelSpec {
    KernelKind kind = KernelKind::CWD;
    double alpha = 1.0;   // CWD spread
    int lag_window = 63;  // half-length L; frequency axis has 2L+2 bins
    int time_step = 16;   // time decimation

    void validate() const {
        if (kind == KernelKind::SPWVD)
            throw std::invalid_argument("unsupported kernel 'spwvd'");
        if (alpha <= 0.0) throw std::invalid_argument("kernel alpha must be > 0");
        if (lag_window < 1 || time_step < 1)
            throw std::invalid_argument("lag_window and time_step must be >= 1");
    }
};

// Ambiguity-domain weight. tau in lag bins, nu in cycles/sample along the
// time axis (grid-normalized).
inline double kernel_weight(const KernelSpec& spec, double tau, double nu) {
    spec.validate();
    if (spec.kind == KernelKind::WVD) return 1.0;
    const double x = tau * nu;
    return std::exp(-spec.alpha * x * x);
}

// ---- ambiguity function ----

enum class Boundary { zero_pad, circular };

namespace detail {

inline cplx z_at(const std::vector<cplx>& z, std::ptrdiff_t i, Boundary b) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(z.size());
    if (b == Boundary::circular) return z[static_cast<std::size_t>(((i % n) + n) % n)];
    if (i < 0 || i >= n) return cplx(0.0, 0.0);
    return z[static_cast<std::size_t>(i)];
}

// Unnormalized DFT with explicit sign (+1 matches e^{+j 2 pi l n / N}).
inline void dft_unnorm(std::vector<cplx>& a, int sign) {
    fft_inplace(a, sign);
    if (sign > 0) {
        const double n = static_cast<double>(a.size());
        for (auto& x : a) x *= n;
    }
}

} // namespace detail

// AF on the symmetric integer lag grid m = -N/2 .. N/2-1 (rows) with a
// doppler FFT over n per row: AF[m, l] = sum_n z[n+m] z*[n-m] e^{+j 2pi l n/N}.
struct AmbiguityMatrix {
    std::size_t n = 0;               // signal length, also doppler bins
    int lag_min = 0;                 // lag of row 0
    std::vector<std::vector<cplx>> rows;

    cplx at(int lag, std::size_t l) const {
        return rows[static_cast<std::size_t>(lag - lag_min)][l];
    }
    int lag_max() const { return lag_min + static_cast<int>(rows.size()) - 1; }
};

inline AmbiguityMatrix ambiguity_function(const AnalyticSignal& z,
                                          Boundary boundary = Boundary::zero_pad) {
    const std::size_t n = z.samples.size();
    AmbiguityMatrix af;
    af.n = n;
    af.lag_min = -static_cast<int>(n / 2);
    af.rows.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const int m = af.lag_min + static_cast<int>(r);
        std::vector<cplx> row(n);
        for (std::size_t t = 0; t < n; ++t) {
            const auto tt = static_cast<std::ptrdiff_t>(t);
            row[t] = detail::z_at(z.samples, tt + m, boundary) *
                     std::conj(detail::z_at(z.samples, tt - m, boundary));
        }
        detail::dft_unnorm(row, +1);
        af.rows[r] = std::move(row);
    }
    return af;
}

// ---- Cohen transforms ----

struct TFRComplex {
    std::size_t nt = 0, nf = 0;
    std::vector<cplx> v;  // row-major [nt][nf]
    cplx& at(std::size_t t, std::size_t f) { return v[t * nf + f]; }
    cplx at(std::size_t t, std::size_t f) const { return v[t * nf + f]; }
};

struct TFRReal {
    std::size_t nt = 0, nf = 0;
    int time_step = 1;
    std::vector<double> v;
    double& at(std::size_t t, std::size_t f) { return v[t * nf + f]; }
    double at(std::size_t t, std::size_t f) const { return v[t * nf + f]; }
};

// Signed doppler frequency of FFT bin l, in cycles/sample.
inline double signed_doppler(std::size_t l, std::size_t n) {
    const double ln = static_cast<double>(l);
    return (l < n / 2 ? ln : ln - static_cast<double>(n)) / static_cast<double>(n);
}

// Literal evaluation of the Cohen chain: AF over time, kernel multiply,
// inverse over doppler, then the lag-to-frequency transform. The 1/(4 pi^2)
// constant of the continuous definition is absorbed into the discrete
// forward/inverse normalization, so the WVD identity holds exactly.
// Oracle/test path only; rejects long inputs.
inline TFRComplex cohen_transform_reference(const AnalyticSignal& z, const KernelSpec& spec,
                                            Boundary boundary = Boundary::zero_pad) {
    spec.validate();
    const std::size_t n = z.samples.size();
    if (n > 512) throw std::invalid_argument("cohen_transform_reference: use production path");
    if (!is_pow2(n)) throw std::invalid_argument("cohen_transform_reference: length must be a power of two");

    const int lag_min = -static_cast<int>(n / 2);

    // instantaneous autocorrelation K[t, m], one doppler FFT and inverse per lag
    std::vector<std::vector<cplx>> ktilde(n);  // [lag row][t]
    for (std::size_t r = 0; r < n; ++r) {
        const int m = lag_min + static_cast<int>(r);
        std::vector<cplx> row(n);
        for (std::size_t t = 0; t < n; ++t) {
            const auto tt = static_cast<std::ptrdiff_t>(t);
            row[t] = detail::z_at(z.samples, tt + m, boundary) *
                     std::conj(detail::z_at(z.samples, tt - m, boundary));
        }
        detail::dft_unnorm(row, +1);  // -> AF[m, l]
        for (std::size_t l = 0; l < n; ++l)
            row[l] *= kernel_weight(spec, static_cast<double>(m), signed_doppler(l, n));
        detail::dft_unnorm(row, -1);  // back to time, unnormalized
        for (auto& x : row) x /= static_cast<double>(n);
        ktilde[r] = std::move(row);
    }

    // lag -> frequency; lags wrapped mod n into FFT order
    TFRComplex out;
    out.nt = n;
    out.nf = n;
    out.v.resize(n * n);
    std::vector<cplx> buf(n);
    for (std::size_t t = 0; t < n; ++t) {
        std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
        for (std::size_t r = 0; r < n; ++r) {
            const int m = lag_min + static_cast<int>(r);
            const std::size_t idx = static_cast<std::size_t>((m + static_cast<int>(n)) %
                                                             static_cast<int>(n));
            buf[idx] = ktilde[r][t];
        }
        detail::dft_unnorm(buf, -1);
        for (std::size_t w = 0; w < n; ++w) out.at(t, w) = buf[w];
    }
    return out;
}

// Production path: time-decimated, lag-windowed. The CWD kernel is applied
// as the equivalent per-lag Gaussian time smoothing of the instantaneous
// autocorrelation, sigma_t(m) = |m| * sqrt(2 alpha) / (2 pi). Decimation by
// time_step > 1 is anti-aliased: a Gaussian pre-filter of width time_step/2
// combines (in quadrature) with the kernel smoothing for every lag, so the
// decimated grid averages the skipped samples instead of discarding them.
// Out-of-range indices contribute zero.
inline TFRReal cohen_transform_fast(const AnalyticSignal& z, const KernelSpec& spec) {
    spec.validate();
    const std::size_t n = z.samples.size();
    const int L = spec.lag_window;
    const std::size_t nf = static_cast<std::size_t>(2 * L + 2);
    if (!is_pow2(nf))
        throw std::invalid_argument("cohen_transform_fast: 2*lag_window+2 must be a power of two");

    // per-lag smoothing windows; empty window = identity
    const double sigma_dec = spec.time_step > 1 ? spec.time_step / 2.0 : 0.0;
    std::vector<std::vector<double>> win(static_cast<std::size_t>(L + 1));
    for (int m = 0; m <= L; ++m) {
        const double sigma_cwd =
            spec.kind == KernelKind::CWD ? std::sqrt(2.0 * spec.alpha) * m / (2.0 * kPi) : 0.0;
        const double sigma = std::sqrt(sigma_cwd * sigma_cwd + sigma_dec * sigma_dec);
        if (sigma == 0.0) continue;
        const int half = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        std::vector<double> g(static_cast<std::size_t>(2 * half + 1));
        double sum = 0.0;
        for (int u = -half; u <= half; ++u) {
            const double w = std::exp(-0.5 * (u / sigma) * (u / sigma));
            g[static_cast<std::size_t>(u + half)] = w;
            sum += w;
        }
        for (auto& w : g) w /= sum;
        win[static_cast<std::size_t>(m)] = std::move(g);
    }

    const std::size_t nt = (n + static_cast<std::size_t>(spec.time_step) - 1) /
                           static_cast<std::size_t>(spec.time_step);
    TFRReal out;
    out.nt = nt;
    out.nf = nf;
    out.time_step = spec.time_step;
    out.v.resize(nt * nf);

    auto kval = [&](std::ptrdiff_t t, int m) {
        return detail::z_at(z.samples, t + m, Boundary::zero_pad) *
               std::conj(detail::z_at(z.samples, t - m, Boundary::zero_pad));
    };

    std::vector<cplx> buf(nf);
    for (std::size_t ti = 0; ti < nt; ++ti) {
        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(ti) * spec.time_step;
        std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
        for (int m = -L; m <= L; ++m) {
            cplx k;
            if (win[static_cast<std::size_t>(std::abs(m))].empty()) {
                k = kval(t, m);
            } else {
                const auto& g = win[static_cast<std::size_t>(std::abs(m))];
                const int half = static_cast<int>(g.size() / 2);
                cplx acc(0.0, 0.0);
                for (int u = -half; u <= half; ++u)
                    acc += g[static_cast<std::size_t>(u + half)] * kval(t + u, m);
                k = acc;
            }
            const std::size_t idx = static_cast<std::size_t>((m + static_cast<int>(nf)) %
                                                             static_cast<int>(nf));
            buf[idx] = k;
        }
        detail::dft_unnorm(buf, -1);
        for (std::size_t w = 0; w < nf; ++w) out.at(ti, w) = buf[w].real();
    }
    return out;
}

// ---- image reduction ----

struct Image {
    std::size_t h = 0, w = 0;
    std::vector<float> px;  // row-major, [0, 1]
    float at(std::size_t r, std::size_t c) const { return px[r * w + c]; }
};

namespace detail {

// Exact fractional-area box averaging from (nr x nc) to (h x w).
inline std::vector<double> area_resize(const std::vector<double>& in, std::size_t nr,
                                       std::size_t nc, std::size_t h, std::size_t w) {
    std::vector<double> out(h * w, 0.0);
    const double sr = static_cast<double>(nr) / static_cast<double>(h);
    const double sc = static_cast<double>(nc) / static_cast<double>(w);
    for (std::size_t i = 0; i < h; ++i) {
        const double r0 = i * sr, r1 = (i + 1) * sr;
        for (std::size_t j = 0; j < w; ++j) {
            const double c0 = j * sc, c1 = (j + 1) * sc;
            double acc = 0.0;
            for (std::size_t r = static_cast<std::size_t>(r0); r < nr && r < r1; ++r) {
                const double rw = std::min(r1, static_cast<double>(r) + 1.0) -
                                  std::max(r0, static_cast<double>(r));
                for (std::size_t c = static_cast<std::size_t>(c0); c < nc && c < c1; ++c) {
                    const double cw = std::min(c1, static_cast<double>(c) + 1.0) -
                                      std::max(c0, static_cast<double>(c));
                    acc += rw * cw * in[r * nc + c];
                }
            }
            out[i * w + j] = acc / (sr * sc);
        }
    }
    return out;
}

inline Image finalize_image(std::vector<double> logmag, std::size_t nr, std::size_t nc,
                            std::size_t h, std::size_t w) {
    auto resized = area_resize(logmag, nr, nc, h, w);
    double lo = resized[0], hi = resized[0];
    for (double v : resized) { lo = std::min(lo, v); hi = std::max(hi, v); }
    Image img;
    img.h = h;
    img.w = w;
    img.px.resize(h * w);
    const double span = hi - lo;
    if (span <= 0.0) return img;  // constant input -> all-zero image
    for (std::size_t i = 0; i < resized.size(); ++i)
        img.px[i] = static_cast<float>((resized[i] - lo) / span);
    return img;
}

} // namespace detail

// magnitude -> log1p -> area-average resize -> per-image min-max to [0, 1]
inline Image to_image(const TFRReal& tfr, std::size_t h = 64, std::size_t w = 64) {
    std::vector<double> logmag(tfr.v.size());
    for (std::size_t i = 0; i < tfr.v.size(); ++i) {
        if (!std::isfinite(tfr.v[i])) throw std::domain_error("to_image: non-finite TFR entry");
        logmag[i] = std::log1p(std::abs(tfr.v[i]));
    }
    return detail::finalize_image(std::move(logmag), tfr.nt, tfr.nf, h, w);
}

inline Image to_image(const TFRComplex& tfr, std::size_t h = 64, std::size_t w = 64) {
    std::vector<double> logmag(tfr.v.size());
    for (std::size_t i = 0; i < tfr.v.size(); ++i) {
        if (!std::isfinite(tfr.v[i].real()) || !std::isfinite(tfr.v[i].imag()))
            throw std::domain_error("to_image: non-finite TFR entry");
        logmag[i] = std::log1p(std::abs(tfr.v[i]));
    }
    return detail::finalize_image(std::move(logmag), tfr.nt, tfr.nf, h, w);
}

// ---- spectrogram cache (tfr_manifest.json + images.bin) ----

struct TfrConfig {
    KernelSpec kernel;
    std::size_t image_h = 64, image_w = 64;

    nlohmann::json to_json() const {
        return {{"kernel", to_string(kernel.kind)},
                {"alpha", kernel.alpha},
                {"lag_window", kernel.lag_window},
                {"time_step", kernel.time_step},
                {"image_h", image_h},
                {"image_w", image_w}};
    }
};

inline Image waveform_to_image(const std::vector<double>& samples, const TfrConfig& cfg) {
    const auto z = analytic_signal(samples);
    const auto tfr = cohen_transform_fast(z, cfg.kernel);
    return to_image(tfr, cfg.image_h, cfg.image_w);
}

struct ImageCache {
    std::vector<Image> images;
    std::vector<std::int64_t> sample_ids;  // manifest order
};

inline void save_image_cache(const ImageCache& cache, const TfrConfig& cfg,
                             std::uint64_t dataset_hash, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "amr-tfr-cache";
    manifest["format_version"] = 1;
    manifest["dataset_hash"] = dataset_hash;
    manifest["tfr"] = cfg.to_json();
    manifest["count"] = cache.images.size();
    manifest["sample_ids"] = cache.sample_ids;

    std::ofstream bin(dir / "images.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open images.bin for writing");
    for (const auto& img : cache.images)
        bin.write(reinterpret_cast<const char*>(img.px.data()),
                  static_cast<std::streamsize>(img.px.size() * sizeof(float)));

    std::ofstream mf(dir / "tfr_manifest.json");
    mf << manifest.dump(2) << "\n";
}

// Returns empty if the cache is missing or keyed differently.
inline std::optional<ImageCache> load_image_cache(const TfrConfig& cfg, std::uint64_t dataset_hash,
                                                  const std::filesystem::path& dir) {
    std::ifstream mf(dir / "tfr_manifest.json");
    if (!mf) return std::nullopt;
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
    if (manifest.value("format", "") != "amr-tfr-cache") return std::nullopt;
    if (manifest.value("format_version", -1) != 1) return std::nullopt;
    if (manifest.value("dataset_hash", 0ull) != dataset_hash) return std::nullopt;
    if (manifest.value("tfr", nlohmann::json()) != cfg.to_json()) return std::nullopt;

    ImageCache cache;
    cache.sample_ids = manifest.value("sample_ids", std::vector<std::int64_t>{});
    const std::size_t count = manifest.value("count", std::size_t{0});
    std::ifstream bin(dir / "images.bin", std::ios::binary);
    if (!bin) return std::nullopt;
    for (std::size_t i = 0; i < count; ++i) {
        Image img;
        img.h = cfg.image_h;
        img.w = cfg.image_w;
        img.px.resize(img.h * img.w);
        bin.read(reinterpret_cast<char*>(img.px.data()),
                 static_cast<std::streamsize>(img.px.size() * sizeof(float)));
        if (static_cast<std::size_t>(bin.gcount()) != img.px.size() * sizeof(float))
            return std::nullopt;
        cache.images.push_back(std::move(img));
    }
    return cache;
}

} // namespace amr
