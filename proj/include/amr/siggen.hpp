#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amr/rng.hpp"

namespace amr {

inline constexpr std::size_t kPulseLen = 2048;
inline constexpr double kPi = 3.14159265358979323846;

// The 11 intrapulse modulation classes, stable encoding 0..10 (alphabetical).
enum class Modulation : int {
    BFSK = 0, BPSK, Frank, LFM, P1, P2, P3, P4, QFM, T1, T2
};
inline constexpr int kNumClasses = 11;

inline const char* to_string(Modulation m) {
    static constexpr std::array<const char*, 11> names = {
        "BFSK", "BPSK", "Frank", "LFM", "P1", "P2", "P3", "P4", "QFM", "T1", "T2"};
    return names[static_cast<std::size_t>(m)];
}

inline std::optional<Modulation> modulation_from_string(const std::string& s) {
    for (int i = 0; i < kNumClasses; ++i)
        if (s == to_string(static_cast<Modulation>(i))) return static_cast<Modulation>(i);
    return std::nullopt;
}

// Barker codes, the canonical binary sequences at lengths 5/7/11/13.
inline const std::vector<int>& barker_code(int n) {
    static const std::vector<int> b5  = {1, 1, 1, -1, 1};
    static const std::vector<int> b7  = {1, 1, 1, -1, -1, 1, -1};
    static const std::vector<int> b11 = {1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1};
    static const std::vector<int> b13 = {1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1};
    switch (n) {
        case 5: return b5;
        case 7: return b7;
        case 11: return b11;
        case 13: return b13;
        default: throw std::invalid_argument("no Barker code of length " + std::to_string(n));
    }
}

// Per-class waveform parameters. Frequencies are normalized (cycles/sample).
struct ModulationParams {
    Modulation cls = Modulation::LFM;
    double f0 = 0.0;       // f0 / f_ini / f_min
    double delta_f = 0.0;  // frequency excursion (chirps, polytime)
    double f1 = 0.0, f2 = 0.0;  // BFSK tones
    int code_len = 0;      // Barker N, matrix order M, or chip count Nc
    int chirp_sign = +1;
    int segments_m = 4;    // T1/T2
    int phase_states_n = 2;
    std::vector<std::uint8_t> theta_code;  // BPSK: 1 -> pi chip; BFSK: 1 -> f2
};

struct Waveform {
    std::vector<double> samples;  // length kPulseLen
    Modulation cls = Modulation::LFM;
    std::optional<double> snr_db;  // nullopt = clean
    ModulationParams params;
    std::int64_t sample_id = 0;
};

namespace detail {

inline std::vector<std::uint8_t> barker_bits(int n) {
    std::vector<std::uint8_t> bits;
    for (int s : barker_code(n)) bits.push_back(s > 0 ? 0 : 1);
    return bits;
}

// Peak instantaneous frequency used for the Nyquist rejection test.
inline double chirp_freq_range(const ModulationParams& p, double& fmin) {
    double lo = p.f0, hi = p.f0;
    if (p.chirp_sign > 0) hi = p.f0 + p.delta_f;
    else lo = p.f0 - p.delta_f;
    fmin = lo;
    return hi;
}

} // namespace detail

// Uniform draw of per-class parameters within the documented ranges.
// Chirp pairs (f0, delta_f, sign) are rejection-sampled until the swept band
// stays inside (0, 0.5).
inline ModulationParams sample_params(Modulation cls, Rng& rng) {
    ModulationParams p;
    p.cls = cls;
    static const std::vector<int> barker_lens = {5, 7, 11, 13};
    static const std::vector<int> orders = {6, 7, 8};

    switch (cls) {
        case Modulation::LFM:
        case Modulation::QFM: {
            const double f0_hi = (cls == Modulation::LFM) ? 0.45 : 0.40;
            const double df_hi = (cls == Modulation::LFM) ? 0.40 : 0.30;
            for (;;) {
                p.f0 = rng.uniform(0.01, f0_hi);
                p.delta_f = rng.uniform(0.05, df_hi);
                p.chirp_sign = rng.coin() ? +1 : -1;
                double fmin = 0.0;
                double fmax = detail::chirp_freq_range(p, fmin);
                if (fmax < 0.5 && fmin > 0.0) break;
            }
            break;
        }
        case Modulation::BPSK:
            p.f0 = rng.uniform(0.05, 0.45);
            p.code_len = rng.choice(barker_lens);
            p.theta_code = detail::barker_bits(p.code_len);
            break;
        case Modulation::BFSK:
            p.f1 = rng.uniform(0.05, 0.45);
            do { p.f2 = rng.uniform(0.05, 0.45); } while (p.f2 == p.f1);
            p.code_len = rng.choice(barker_lens);
            p.theta_code = detail::barker_bits(p.code_len);
            break;
        case Modulation::Frank:
        case Modulation::P1:
        case Modulation::P2:
        case Modulation::P3:
        case Modulation::P4:
            p.f0 = rng.uniform(0.1, 0.4);
            p.code_len = rng.choice(orders);
            break;
        case Modulation::T1:
        case Modulation::T2:
            p.f0 = rng.uniform(0.05, 0.45);
            p.delta_f = rng.uniform(0.05, 0.40);
            p.segments_m = 4;
            p.phase_states_n = 2;
            break;
    }
    return p;
}

namespace detail {

inline double positive_fmod(double x, double m) {
    double r = std::fmod(x, m);
    return r < 0 ? r + m : r;
}

// Chip index for cyclically repeated codes: chip_dur = floor(T / n_chips).
inline int chip_of(std::size_t k, int n_chips, std::size_t pulse_len) {
    const std::size_t dur = pulse_len / static_cast<std::size_t>(n_chips);
    return static_cast<int>((k / dur) % static_cast<std::size_t>(n_chips));
}

// Polyphase code phase for chip c (0-based), per family.
inline double poly_code_phase(Modulation cls, int c, int order) {
    const double M = order;
    switch (cls) {
        case Modulation::Frank: {
            const int i = c % order + 1, j = c / order + 1;
            return 2.0 * kPi * (i - 1) * (j - 1) / M;
        }
        case Modulation::P1: {
            const int i = c % order + 1, j = c / order + 1;
            return -kPi * (M - (2.0 * j - 1.0)) * ((j - 1.0) * M + (i - 1.0)) / M;
        }
        case Modulation::P2: {
            const int i = c % order + 1, j = c / order + 1;
            return -kPi * (2.0 * i - 1.0 - M) * (2.0 * j - 1.0 - M) / (2.0 * M);
        }
        case Modulation::P3: {
            const int i = c + 1;
            return kPi * (i - 1.0) * (i - 1.0) / M;
        }
        case Modulation::P4: {
            const int i = c + 1;
            return kPi * ((i - 1.0) * (i - 1.0) / M - (i - 1.0));
        }
        default: throw std::logic_error("not a polyphase class");
    }
}

} // namespace detail

// Instantaneous phase phi[k] at integer sample times, sampling period 1,
// pulse duration T = pulse_len.
inline std::vector<double> instantaneous_phase(const ModulationParams& p,
                                               std::size_t pulse_len = kPulseLen) {
    std::vector<double> phi(pulse_len);
    const double T = static_cast<double>(pulse_len);

    switch (p.cls) {
        case Modulation::LFM: {
            const double mu = p.delta_f / T;
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const double t = static_cast<double>(k);
                phi[k] = 2.0 * kPi * (p.f0 * t + p.chirp_sign * 0.5 * mu * t * t);
            }
            break;
        }
        case Modulation::QFM: {
            // mu chosen so the cubic term's peak frequency deviation is delta_f
            const double mu = 8.0 * p.delta_f / (3.0 * T * T);
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const double t = static_cast<double>(k);
                const double d = t - T / 2.0;
                phi[k] = 2.0 * kPi * p.f0 * t + p.chirp_sign * kPi * mu * d * d * d;
            }
            break;
        }
        case Modulation::BPSK: {
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const int c = detail::chip_of(k, p.code_len, pulse_len);
                phi[k] = 2.0 * kPi * p.f0 * static_cast<double>(k) +
                         (p.theta_code[static_cast<std::size_t>(c)] ? kPi : 0.0);
            }
            break;
        }
        case Modulation::BFSK: {
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const int c = detail::chip_of(k, p.code_len, pulse_len);
                const double f = p.theta_code[static_cast<std::size_t>(c)] ? p.f2 : p.f1;
                phi[k] = 2.0 * kPi * f * static_cast<double>(k);
            }
            break;
        }
        case Modulation::Frank:
        case Modulation::P1:
        case Modulation::P2: {
            const int n_chips = p.code_len * p.code_len;
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const int c = detail::chip_of(k, n_chips, pulse_len);
                phi[k] = 2.0 * kPi * p.f0 * static_cast<double>(k) +
                         detail::poly_code_phase(p.cls, c, p.code_len);
            }
            break;
        }
        case Modulation::P3:
        case Modulation::P4: {
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const int c = detail::chip_of(k, p.code_len, pulse_len);
                phi[k] = 2.0 * kPi * p.f0 * static_cast<double>(k) +
                         detail::poly_code_phase(p.cls, c, p.code_len);
            }
            break;
        }
        case Modulation::T1: {
            const double n = p.phase_states_n, m = p.segments_m;
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const double t = static_cast<double>(k);
                const double j = std::floor(m * t / T);
                const double arg = (m * t - j * T) * (j * n / T);
                phi[k] = 2.0 * kPi * p.f0 * t +
                         detail::positive_fmod(2.0 * kPi / n * std::floor(arg), 2.0 * kPi);
            }
            break;
        }
        case Modulation::T2: {
            const double n = p.phase_states_n, m = p.segments_m;
            for (std::size_t k = 0; k < pulse_len; ++k) {
                const double t = static_cast<double>(k);
                const double j = std::floor(m * t / T);
                const double arg = (m * t - j * T) * ((2.0 * j - m + 1.0) / T) * (n / 2.0);
                phi[k] = 2.0 * kPi * p.f0 * t +
                         detail::positive_fmod(2.0 * kPi / n * std::floor(arg), 2.0 * kPi);
            }
            break;
        }
    }
    return phi;
}

// Clean real pulse: cos(phi[k]), unit amplitude.
inline Waveform synthesize(const ModulationParams& p, std::size_t pulse_len = kPulseLen) {
    Waveform w;
    w.cls = p.cls;
    w.params = p;
    const auto phi = instantaneous_phase(p, pulse_len);
    w.samples.resize(pulse_len);
    for (std::size_t k = 0; k < pulse_len; ++k) w.samples[k] = std::cos(phi[k]);
    return w;
}

inline double mean_power(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s / static_cast<double>(x.size());
}

// Adds zero-mean white Gaussian noise with variance P_s / 10^(snr/10).
inline Waveform add_awgn(const Waveform& w, double snr_db, Rng& rng) {
    const double ps = mean_power(w.samples);
    if (ps <= 0.0) throw std::domain_error("add_awgn: degenerate signal (zero power)");
    const double sigma = std::sqrt(ps / std::pow(10.0, snr_db / 10.0));
    Waveform out = w;
    out.snr_db = snr_db;
    for (auto& s : out.samples) s += rng.normal(0.0, sigma);
    return out;
}

} // namespace amr
