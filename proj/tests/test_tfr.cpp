#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "amr/dataset.hpp"
#include "amr/tfr.hpp"

using namespace amr;
namespace fs = std::filesystem;

namespace {

std::vector<cplx> random_analytic(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    return analytic_signal(x).samples;
}

// Brute-force Eq.-style AF on the same finite grid (zero outside).
cplx brute_af(const std::vector<cplx>& z, int m, std::size_t l) {
    const std::size_t n = z.size();
    cplx acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const std::ptrdiff_t a = static_cast<std::ptrdiff_t>(t) + m;
        const std::ptrdiff_t b = static_cast<std::ptrdiff_t>(t) - m;
        if (a < 0 || b < 0 || a >= static_cast<std::ptrdiff_t>(n) ||
            b >= static_cast<std::ptrdiff_t>(n))
            continue;
        const double ang = 2.0 * kPi * static_cast<double>(l) * static_cast<double>(t) /
                           static_cast<double>(n);
        acc += z[static_cast<std::size_t>(a)] * std::conj(z[static_cast<std::size_t>(b)]) *
               cplx(std::cos(ang), std::sin(ang));
    }
    return acc;
}

// Brute-force WVD: W(t, w) = sum_m z[t+m] z*[t-m] e^{-j 2 pi w m / N}.
cplx brute_wvd(const std::vector<cplx>& z, std::size_t t, std::size_t w) {
    const std::size_t n = z.size();
    cplx acc(0.0, 0.0);
    for (int m = -static_cast<int>(n / 2); m < static_cast<int>(n / 2); ++m) {
        const std::ptrdiff_t a = static_cast<std::ptrdiff_t>(t) + m;
        const std::ptrdiff_t b = static_cast<std::ptrdiff_t>(t) - m;
        if (a < 0 || b < 0 || a >= static_cast<std::ptrdiff_t>(n) ||
            b >= static_cast<std::ptrdiff_t>(n))
            continue;
        const double ang = -2.0 * kPi * static_cast<double>(w) * m / static_cast<double>(n);
        acc += z[static_cast<std::size_t>(a)] * std::conj(z[static_cast<std::size_t>(b)]) *
               cplx(std::cos(ang), std::sin(ang));
    }
    return acc;
}

double max_abs(const TFRComplex& m) {
    double peak = 0.0;
    for (const auto& v : m.v) peak = std::max(peak, std::abs(v));
    return peak;
}

} // namespace

TEST_CASE("analytic signal of a bin-aligned cosine is the complex tone") {
    const std::size_t n = 2048;
    std::vector<double> x(n);
    for (std::size_t k = 0; k < n; ++k) x[k] = std::cos(2.0 * kPi * 64.0 / 2048.0 * k);
    auto z = analytic_signal(x).samples;
    for (std::size_t k = 0; k < n; ++k) {
        const cplx expect(std::cos(2.0 * kPi * 64.0 / 2048.0 * k),
                          std::sin(2.0 * kPi * 64.0 / 2048.0 * k));
        REQUIRE(std::abs(z[k] - expect) <= 1e-9);
    }
}

TEST_CASE("analytic signal preserves the real part and handles zero") {
    Rng rng(5u);
    std::vector<double> x(256);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    auto z = analytic_signal(x).samples;
    for (std::size_t k = 0; k < x.size(); ++k)
        REQUIRE_THAT(z[k].real(), Catch::Matchers::WithinAbs(x[k], 1e-9));

    std::vector<double> zero(64, 0.0);
    for (const auto& v : analytic_signal(zero).samples) REQUIRE(std::abs(v) == 0.0);

    std::vector<double> odd(63, 0.0);
    CHECK_THROWS_AS(analytic_signal(odd), std::invalid_argument);
}

TEST_CASE("analytic signal spectrum is one-sided") {
    auto z = random_analytic(256, 21u);
    std::vector<cplx> spec = z;
    fft(spec);
    double pos = 0.0, neg = 0.0;
    for (std::size_t k = 0; k <= 128; ++k) pos += std::norm(spec[k]);
    for (std::size_t k = 129; k < 256; ++k) neg += std::norm(spec[k]);
    CHECK(neg / pos <= 1e-10);
}

TEST_CASE("ambiguity function at the origin is total energy") {
    auto z = random_analytic(64, 31u);
    auto af = ambiguity_function(AnalyticSignal{z});
    double energy = 0.0;
    for (const auto& v : z) energy += std::norm(v);
    CHECK_THAT(af.at(0, 0).real(), Catch::Matchers::WithinRel(energy, 1e-9));
    CHECK(std::abs(af.at(0, 0).imag()) <= 1e-9 * energy);
}

TEST_CASE("ambiguity function matches brute-force evaluation and its symmetry") {
    const std::size_t n = 32;
    auto z = random_analytic(n, 77u);
    auto af = ambiguity_function(AnalyticSignal{z});
    for (int m = af.lag_min; m <= af.lag_max(); ++m)
        for (std::size_t l = 0; l < n; ++l)
            REQUIRE(std::abs(af.at(m, l) - brute_af(z, m, l)) <= 1e-9 * std::abs(af.at(0, 0)));

    // AF(-tau, -nu) = conj(AF(tau, nu))
    for (int m = 1; m < af.lag_max(); ++m)
        for (std::size_t l = 1; l < n; ++l)
            REQUIRE(std::abs(af.at(-m, n - l) - std::conj(af.at(m, l))) <=
                    1e-9 * std::abs(af.at(0, 0)));
}

TEST_CASE("ambiguity of an impulse lives on the zero-lag row") {
    std::vector<cplx> z(64, cplx(0.0, 0.0));
    z[20] = cplx(1.0, 0.0);
    auto af = ambiguity_function(AnalyticSignal{z});
    for (int m = af.lag_min; m <= af.lag_max(); ++m) {
        if (m == 0) continue;
        for (std::size_t l = 0; l < 64; ++l) REQUIRE(std::abs(af.at(m, l)) == 0.0);
    }
}

TEST_CASE("kernel weights") {
    KernelSpec wvd{KernelKind::WVD, 1.0, 8, 1};
    CHECK(kernel_weight(wvd, 3.7, -0.2) == 1.0);

    KernelSpec cwd{KernelKind::CWD, 1.0, 8, 1};
    CHECK(kernel_weight(cwd, 0.0, 0.3) == 1.0);
    CHECK_THAT(kernel_weight(cwd, 2.0, 0.5), Catch::Matchers::WithinRel(std::exp(-1.0), 1e-12));

    KernelSpec spwvd{KernelKind::SPWVD, 1.0, 8, 1};
    CHECK_THROWS_WITH(kernel_weight(spwvd, 0.0, 0.0),
                      Catch::Matchers::ContainsSubstring("unsupported kernel"));
}

TEST_CASE("reference WVD equals the brute-force definition") {
    const std::size_t n = 64;
    auto z = random_analytic(n, 13u);
    KernelSpec spec{KernelKind::WVD, 1.0, 8, 1};
    auto c = cohen_transform_reference(AnalyticSignal{z}, spec);
    const double peak = max_abs(c);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t w = 0; w < n; ++w)
            REQUIRE(std::abs(c.at(t, w) - brute_wvd(z, t, w)) <= 1e-9 * peak);
}

TEST_CASE("reference path rejects long inputs") {
    AnalyticSignal z{std::vector<cplx>(1024, cplx(0.1, 0.0))};
    KernelSpec spec{KernelKind::WVD, 1.0, 8, 1};
    CHECK_THROWS_WITH(cohen_transform_reference(z, spec),
                      Catch::Matchers::ContainsSubstring("production path"));
}

TEST_CASE("WVD of a tone peaks at the right frequency bin") {
    const std::size_t n = 64;
    std::vector<cplx> z(n);
    for (std::size_t k = 0; k < n; ++k)
        z[k] = cplx(std::cos(2.0 * kPi * 8.0 / 64.0 * k), std::sin(2.0 * kPi * 8.0 / 64.0 * k));
    KernelSpec spec{KernelKind::WVD, 1.0, 8, 1};
    auto c = cohen_transform_reference(AnalyticSignal{z}, spec);
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t w = 0; w < n; ++w) {
        double acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) acc += std::abs(c.at(t, w));
        if (acc > best_v) { best_v = acc; best = w; }
    }
    CHECK(best == 16);  // bin = 2 * f0 * n
}

TEST_CASE("WVD is real and satisfies the time marginal") {
    const std::size_t n = 64;
    auto z = random_analytic(n, 51u);
    KernelSpec spec{KernelKind::WVD, 1.0, 8, 1};
    auto c = cohen_transform_reference(AnalyticSignal{z}, spec);
    const double peak = max_abs(c);
    for (const auto& v : c.v) REQUIRE(std::abs(v.imag()) <= 1e-9 * peak);

    for (std::size_t t = 0; t < n; ++t) {
        double marginal = 0.0;
        for (std::size_t w = 0; w < n; ++w) marginal += c.at(t, w).real();
        const double expect = static_cast<double>(n) * std::norm(z[t]);
        if (expect > 1e-12)
            REQUIRE_THAT(marginal, Catch::Matchers::WithinRel(expect, 1e-6));
    }
}

TEST_CASE("fast WVD path matches the reference path") {
    const std::size_t n = 64;
    auto z = random_analytic(n, 101u);
    KernelSpec ref_spec{KernelKind::WVD, 1.0, 8, 1};
    auto ref = cohen_transform_reference(AnalyticSignal{z}, ref_spec);

    KernelSpec fast_spec{KernelKind::WVD, 1.0, 31, 1};  // full window on the n=64 grid
    auto fast = cohen_transform_fast(AnalyticSignal{z}, fast_spec);
    REQUIRE(fast.nt == n);
    REQUIRE(fast.nf == n);
    const double peak = max_abs(ref);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t w = 0; w < n; ++w)
            REQUIRE(std::abs(fast.at(t, w) - ref.at(t, w).real()) <= 1e-9 * peak);
}

TEST_CASE("fast path grid arithmetic on the production config") {
    ModulationParams p;
    p.cls = Modulation::LFM;
    p.f0 = 0.1;
    p.delta_f = 0.2;
    auto w = synthesize(p);
    KernelSpec spec{KernelKind::CWD, 1.0, 63, 16};
    auto tfr = cohen_transform_fast(analytic_signal(w), spec);
    CHECK(tfr.nt == 128);
    CHECK(tfr.nf == 128);
}

TEST_CASE("CWD converges to WVD as alpha -> 0") {
    const std::size_t n = 64;
    auto z = random_analytic(n, 61u);
    KernelSpec wvd{KernelKind::WVD, 1.0, 31, 1};
    KernelSpec cwd{KernelKind::CWD, 1e-8, 31, 1};
    auto a = cohen_transform_fast(AnalyticSignal{z}, wvd);
    auto b = cohen_transform_fast(AnalyticSignal{z}, cwd);
    double peak = 0.0;
    for (double v : a.v) peak = std::max(peak, std::abs(v));
    for (std::size_t i = 0; i < a.v.size(); ++i)
        REQUIRE(std::abs(a.v[i] - b.v[i]) <= 1e-6 * peak);

    // reference path too
    KernelSpec wvd_r{KernelKind::WVD, 1.0, 8, 1};
    KernelSpec cwd_r{KernelKind::CWD, 1e-8, 8, 1};
    auto ar = cohen_transform_reference(AnalyticSignal{z}, wvd_r);
    auto br = cohen_transform_reference(AnalyticSignal{z}, cwd_r);
    const double rp = max_abs(ar);
    for (std::size_t i = 0; i < ar.v.size(); ++i)
        REQUIRE(std::abs(ar.v[i] - br.v[i]) <= 1e-6 * rp);
}

TEST_CASE("WVD translation covariance on the circular grid") {
    const std::size_t n = 64;
    auto z = random_analytic(n, 91u);
    const std::size_t shift = 11;
    std::vector<cplx> zs(n);
    for (std::size_t k = 0; k < n; ++k) zs[(k + shift) % n] = z[k];

    KernelSpec spec{KernelKind::WVD, 1.0, 8, 1};
    auto c0 = cohen_transform_reference(AnalyticSignal{z}, spec, Boundary::circular);
    auto c1 = cohen_transform_reference(AnalyticSignal{zs}, spec, Boundary::circular);
    const double peak = max_abs(c0);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t w = 0; w < n; ++w)
            REQUIRE(std::abs(c1.at((t + shift) % n, w) - c0.at(t, w)) <= 1e-9 * peak);
}

TEST_CASE("CWD of a -20 dB BFSK pulse is finite") {
    Rng rng(123u);
    auto p = sample_params(Modulation::BFSK, rng);
    auto clean = synthesize(p);
    auto noisy = add_awgn(clean, -20.0, rng);
    KernelSpec spec{KernelKind::CWD, 1.0, 63, 16};
    auto tfr = cohen_transform_fast(analytic_signal(noisy), spec);
    for (double v : tfr.v) REQUIRE(std::isfinite(v));
    auto img = to_image(tfr);
    for (float v : img.px) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }
}

TEST_CASE("to_image contract") {
    TFRReal constant;
    constant.nt = 8;
    constant.nf = 8;
    constant.v.assign(64, 3.5);
    auto img = to_image(constant, 4, 4);
    for (float v : img.px) REQUIRE(v == 0.0f);

    // hand-computed 2x2 block mean on a 4x4 -> 2x2 reduction
    TFRReal m;
    m.nt = 4;
    m.nf = 4;
    m.v = {1, 2, 5, 6,
           3, 4, 7, 8,
           0, 0, 1, 1,
           0, 0, 1, 3};
    auto img2 = to_image(m, 2, 2);
    auto block = [&](std::initializer_list<double> vals) {
        double s = 0.0;
        for (double v : vals) s += std::log1p(std::abs(v));
        return s / 4.0;
    };
    const double b00 = block({1, 2, 3, 4});
    const double b01 = block({5, 6, 7, 8});
    const double b10 = block({0, 0, 0, 0});
    const double b11 = block({1, 1, 1, 3});
    const double lo = b10, hi = b01;
    CHECK_THAT(img2.at(0, 0), Catch::Matchers::WithinAbs((b00 - lo) / (hi - lo), 1e-6));
    CHECK_THAT(img2.at(0, 1), Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK_THAT(img2.at(1, 0), Catch::Matchers::WithinAbs(0.0, 1e-6));
    CHECK_THAT(img2.at(1, 1), Catch::Matchers::WithinAbs((b11 - lo) / (hi - lo), 1e-6));
}

TEST_CASE("image cache round trip and invalidation") {
    const fs::path dir = fs::temp_directory_path() / "amr_test_tfr_cache";
    fs::remove_all(dir);

    TfrConfig cfg;
    cfg.kernel = {KernelKind::CWD, 1.0, 63, 16};
    ImageCache cache;
    ModulationParams p;
    p.cls = Modulation::LFM;
    p.f0 = 0.1;
    p.delta_f = 0.2;
    auto w = synthesize(p);
    cache.images.push_back(waveform_to_image(w.samples, cfg));
    cache.sample_ids.push_back(42);
    save_image_cache(cache, cfg, 777u, dir);

    auto loaded = load_image_cache(cfg, 777u, dir);
    REQUIRE(loaded.has_value());
    REQUIRE(loaded->images.size() == 1);
    CHECK(loaded->sample_ids == std::vector<std::int64_t>{42});
    CHECK(loaded->images[0].px == cache.images[0].px);

    // config change invalidates
    TfrConfig other = cfg;
    other.kernel.alpha = 2.0;
    CHECK(!load_image_cache(other, 777u, dir).has_value());
    CHECK(!load_image_cache(cfg, 778u, dir).has_value());

    fs::remove_all(dir);
}
