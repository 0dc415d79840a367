#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "amr/gemm.hpp"
#include "amr/rng.hpp"

namespace amr {

struct DivergedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class T>
struct ParamRef {
    std::string name;
    std::vector<T>* w;
    std::vector<T>* g;
};

namespace nn {

template <class T>
void fanin_uniform(std::vector<T>& w, int fan_in, Rng& rng) {
    const double s = std::sqrt(1.0 / fan_in);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-s, s));
}

// ---- conv 3x3 (stride 1, zero padding), direct fused-tap stencil ----

template <class T>
struct Conv2D {
    int in_c = 1, out_c = 1, k = 3, pad = 1;
    std::vector<T> w, b, dw, db;  // w: [out_c][in_c*k*k]

    // caches
    int batch = 0, h = 0, wd = 0;
    std::vector<T> xin;   // input copy, kept only in train mode for backward
    std::vector<T> zrow;  // zero row standing in for out-of-bounds neighbours

    void init(int in_channels, int out_channels, Rng& rng) {
        in_c = in_channels;
        out_c = out_channels;
        w.resize(static_cast<std::size_t>(out_c) * in_c * k * k);
        b.assign(static_cast<std::size_t>(out_c), T(0));
        fanin_uniform(w, in_c * k * k, rng);
        dw.assign(w.size(), T(0));
        db.assign(b.size(), T(0));
    }

    std::size_t param_count() const { return w.size() + b.size(); }

    // dst row i of one output channel += 3x3 correlation of src channel with wp
    // (wp row-major [ky][kx]); rows outside the image read from the zero row.
    void stencil_row(T* __restrict dst, const T* src, const T* wp, int i) const {
        const T* __restrict r0 = i > 0 ? src + static_cast<std::size_t>(i - 1) * wd : zrow.data();
        const T* __restrict r1 = src + static_cast<std::size_t>(i) * wd;
        const T* __restrict r2 =
            i < h - 1 ? src + static_cast<std::size_t>(i + 1) * wd : zrow.data();
        const T w00 = wp[0], w01 = wp[1], w02 = wp[2];
        const T w10 = wp[3], w11 = wp[4], w12 = wp[5];
        const T w20 = wp[6], w21 = wp[7], w22 = wp[8];
        dst[0] += w01 * r0[0] + w02 * r0[1] + w11 * r1[0] + w12 * r1[1] + w21 * r2[0] +
                  w22 * r2[1];
        for (int j = 1; j < wd - 1; ++j)
            dst[j] += w00 * r0[j - 1] + w01 * r0[j] + w02 * r0[j + 1] + w10 * r1[j - 1] +
                      w11 * r1[j] + w12 * r1[j + 1] + w20 * r2[j - 1] + w21 * r2[j] +
                      w22 * r2[j + 1];
        dst[wd - 1] += w00 * r0[wd - 2] + w01 * r0[wd - 1] + w10 * r1[wd - 2] + w11 * r1[wd - 1] +
                       w20 * r2[wd - 2] + w21 * r2[wd - 1];
    }

    void forward(const std::vector<T>& x, int b_, int h_, int w_, std::vector<T>& y, bool train) {
        batch = b_;
        h = h_;
        wd = w_;
        const int hw = h * wd;
        y.resize(static_cast<std::size_t>(batch) * out_c * hw);
        zrow.assign(static_cast<std::size_t>(wd), T(0));
        if (train) xin = x;
        for (int s = 0; s < batch; ++s) {
            const T* xs = x.data() + static_cast<std::size_t>(s) * in_c * hw;
            T* ys = y.data() + static_cast<std::size_t>(s) * out_c * hw;
            for (int oc = 0; oc < out_c; ++oc) {
                T* yc = ys + static_cast<std::size_t>(oc) * hw;
                std::fill(yc, yc + hw, b[static_cast<std::size_t>(oc)]);
                for (int ic = 0; ic < in_c; ++ic) {
                    const T* wp = w.data() + (static_cast<std::size_t>(oc) * in_c + ic) * k * k;
                    const T* xc = xs + static_cast<std::size_t>(ic) * hw;
                    for (int i = 0; i < h; ++i) stencil_row(yc + static_cast<std::size_t>(i) * wd, xc, wp, i);
                }
            }
        }
    }

    // want_dx = false skips the input gradient (first layer).
    void backward(const std::vector<T>& dy, std::vector<T>& dx, bool want_dx = true) {
        const int hw = h * wd;
        dx.assign(want_dx ? static_cast<std::size_t>(batch) * in_c * hw : 0, T(0));
        // dx is the correlation of dy with the flipped kernel; build the
        // flipped, (ic, oc)-indexed copy once per call.
        std::vector<T> wf(w.size());
        for (int oc = 0; oc < out_c; ++oc)
            for (int ic = 0; ic < in_c; ++ic)
                for (int t = 0; t < k * k; ++t)
                    wf[(static_cast<std::size_t>(ic) * out_c + oc) * k * k + t] =
                        w[(static_cast<std::size_t>(oc) * in_c + ic) * k * k + k * k - 1 - t];
        for (int s = 0; s < batch; ++s) {
            const T* dys = dy.data() + static_cast<std::size_t>(s) * out_c * hw;
            const T* xs = xin.data() + static_cast<std::size_t>(s) * in_c * hw;
            T* dxs = want_dx ? dx.data() + static_cast<std::size_t>(s) * in_c * hw : nullptr;
            for (int oc = 0; oc < out_c; ++oc) {
                T acc = T(0);
                const T* g = dys + static_cast<std::size_t>(oc) * hw;
#pragma omp simd reduction(+ : acc)
                for (int i = 0; i < hw; ++i) acc += g[i];
                db[static_cast<std::size_t>(oc)] += acc;
            }
            if (want_dx)
                for (int ic = 0; ic < in_c; ++ic) {
                    T* dc = dxs + static_cast<std::size_t>(ic) * hw;
                    for (int oc = 0; oc < out_c; ++oc) {
                        const T* wp = wf.data() + (static_cast<std::size_t>(ic) * out_c + oc) * k * k;
                        const T* gc = dys + static_cast<std::size_t>(oc) * hw;
                        for (int i = 0; i < h; ++i) stencil_row(dc + static_cast<std::size_t>(i) * wd, gc, wp, i);
                    }
                }
            // dw[ky][kx] = <dy, x shifted by the tap offset>. Each tap is one
            // contiguous dot over the flattened channel; terms where the column
            // shift wraps across a row boundary are subtracted afterwards.
            for (int oc = 0; oc < out_c; ++oc)
                for (int ic = 0; ic < in_c; ++ic) {
                    const T* gc = dys + static_cast<std::size_t>(oc) * hw;
                    const T* xc = xs + static_cast<std::size_t>(ic) * hw;
                    T* dwp = dw.data() + (static_cast<std::size_t>(oc) * in_c + ic) * k * k;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int d = (ky - pad) * wd + (kx - pad);
                            const int lo = std::max(0, -d), hi = std::min(hw, hw - d);
                            const T* __restrict a = gc + lo;
                            const T* __restrict bx = xc + lo + d;
                            const int n = hi - lo;
                            // four independent partial sums keep the fma
                            // pipeline full instead of serializing on one
                            // vector accumulator
                            const int q = n / 4;
                            T w0 = T(0), w1 = T(0), w2 = T(0), w3 = T(0);
#pragma omp simd reduction(+ : w0, w1, w2, w3)
                            for (int j = 0; j < q; ++j) {
                                w0 += a[j] * bx[j];
                                w1 += a[q + j] * bx[q + j];
                                w2 += a[2 * q + j] * bx[2 * q + j];
                                w3 += a[3 * q + j] * bx[3 * q + j];
                            }
                            for (int j = 4 * q; j < n; ++j) w0 += a[j] * bx[j];
                            T wg = w0 + w1 + w2 + w3;
                            if (kx == 0) {
                                for (int i = 0; i < h; ++i) {
                                    const int m = i * wd;
                                    if (m >= lo && m < hi) wg -= gc[m] * xc[m + d];
                                }
                            } else if (kx == k - 1) {
                                for (int i = 0; i < h; ++i) {
                                    const int m = i * wd + wd - 1;
                                    if (m >= lo && m < hi) wg -= gc[m] * xc[m + d];
                                }
                            }
                            dwp[ky * k + kx] += wg;
                        }
                }
        }
    }
};

// ---- batch norm over channels, with running statistics for eval ----

template <class T>
struct BatchNorm {
    int channels = 0;
    T momentum = T(0.9), eps = T(1e-5);
    std::vector<T> gamma, beta, dgamma, dbeta;
    std::vector<T> run_mean, run_var;

    // caches
    int batch = 0, hw = 0;
    std::vector<T> xhat, invstd;

    void init(int c) {
        channels = c;
        gamma.assign(static_cast<std::size_t>(c), T(1));
        beta.assign(static_cast<std::size_t>(c), T(0));
        dgamma.assign(static_cast<std::size_t>(c), T(0));
        dbeta.assign(static_cast<std::size_t>(c), T(0));
        run_mean.assign(static_cast<std::size_t>(c), T(0));
        run_var.assign(static_cast<std::size_t>(c), T(1));
    }

    std::size_t param_count() const { return gamma.size() + beta.size(); }

    void forward(std::vector<T>& x, int b_, int hw_, bool train, bool update_running = true) {
        batch = b_;
        hw = hw_;
        const std::size_t n = static_cast<std::size_t>(batch) * hw;
        if (train) {
            xhat.resize(x.size());
            invstd.resize(static_cast<std::size_t>(channels));
        }
        for (int c = 0; c < channels; ++c) {
            T mean, var;
            if (train) {
                double sum = 0.0, sq = 0.0;
                for (int s = 0; s < batch; ++s) {
                    const T* __restrict p =
                        x.data() + (static_cast<std::size_t>(s) * channels + c) * hw;
#pragma omp simd reduction(+ : sum, sq)
                    for (int i = 0; i < hw; ++i) {
                        sum += p[i];
                        sq += static_cast<double>(p[i]) * p[i];
                    }
                }
                mean = static_cast<T>(sum / static_cast<double>(n));
                var = static_cast<T>(sq / static_cast<double>(n)) - mean * mean;
                if (var < T(0)) var = T(0);
                if (update_running) {
                    run_mean[static_cast<std::size_t>(c)] =
                        momentum * run_mean[static_cast<std::size_t>(c)] + (T(1) - momentum) * mean;
                    run_var[static_cast<std::size_t>(c)] =
                        momentum * run_var[static_cast<std::size_t>(c)] + (T(1) - momentum) * var;
                }
            } else {
                mean = run_mean[static_cast<std::size_t>(c)];
                var = run_var[static_cast<std::size_t>(c)];
            }
            const T istd = T(1) / std::sqrt(var + eps);
            if (train) invstd[static_cast<std::size_t>(c)] = istd;
            const T g = gamma[static_cast<std::size_t>(c)], bb = beta[static_cast<std::size_t>(c)];
            for (int s = 0; s < batch; ++s) {
                T* __restrict p = x.data() + (static_cast<std::size_t>(s) * channels + c) * hw;
                if (train) {
                    T* __restrict xh =
                        xhat.data() + (static_cast<std::size_t>(s) * channels + c) * hw;
                    for (int i = 0; i < hw; ++i) {
                        const T v = (p[i] - mean) * istd;
                        xh[i] = v;
                        p[i] = g * v + bb;
                    }
                } else {
                    for (int i = 0; i < hw; ++i) p[i] = g * (p[i] - mean) * istd + bb;
                }
            }
        }
    }

    void backward(const std::vector<T>& dy, std::vector<T>& dx) {
        dx.resize(dy.size());
        const T n = static_cast<T>(batch) * static_cast<T>(hw);
        for (int c = 0; c < channels; ++c) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int s = 0; s < batch; ++s) {
                const std::size_t base = (static_cast<std::size_t>(s) * channels + c) * hw;
                const T* __restrict pd = dy.data() + base;
                const T* __restrict ph = xhat.data() + base;
#pragma omp simd reduction(+ : sum_dy, sum_dy_xh)
                for (int i = 0; i < hw; ++i) {
                    sum_dy += pd[i];
                    sum_dy_xh += static_cast<double>(pd[i]) * ph[i];
                }
            }
            dbeta[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
            dgamma[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xh);
            const T g = gamma[static_cast<std::size_t>(c)];
            const T istd = invstd[static_cast<std::size_t>(c)];
            const T k1 = g * istd, k2 = static_cast<T>(sum_dy) / n,
                    k3 = static_cast<T>(sum_dy_xh) / n;
            for (int s = 0; s < batch; ++s) {
                const std::size_t base = (static_cast<std::size_t>(s) * channels + c) * hw;
                const T* __restrict pd = dy.data() + base;
                const T* __restrict ph = xhat.data() + base;
                T* __restrict px = dx.data() + base;
                for (int i = 0; i < hw; ++i) px[i] = k1 * (pd[i] - k2 - ph[i] * k3);
            }
        }
    }
};

// ---- relu ----

template <class T>
struct ReLU {
    std::vector<std::uint8_t> mask;

    void forward(std::vector<T>& x, bool train) {
        T* __restrict p = x.data();
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
        if (train) {
            mask.resize(x.size());
            std::uint8_t* __restrict m = mask.data();
#pragma omp simd
            for (std::ptrdiff_t i = 0; i < n; ++i) {
                const T v = p[i];
                const bool on = v > T(0);
                m[i] = on;
                p[i] = on ? v : T(0);
            }
        } else {
#pragma omp simd
            for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = p[i] > T(0) ? p[i] : T(0);
        }
    }

    void backward(const std::vector<T>& dy, std::vector<T>& dx) {
        dx.resize(dy.size());
        const T* __restrict pd = dy.data();
        const std::uint8_t* __restrict m = mask.data();
        T* __restrict px = dx.data();
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(dy.size());
#pragma omp simd
        for (std::ptrdiff_t i = 0; i < n; ++i) px[i] = m[i] ? pd[i] : T(0);
    }
};

// ---- 2x2 max pool, stride 2 ----

template <class T>
struct MaxPool2 {
    int batch = 0, c = 0, h = 0, w = 0;  // input dims
    std::vector<std::uint32_t> argmax;

    void forward(const std::vector<T>& x, int b_, int c_, int h_, int w_, std::vector<T>& y,
                 bool train) {
        batch = b_;
        c = c_;
        h = h_;
        w = w_;
        const int oh = h / 2, ow = w / 2;
        y.resize(static_cast<std::size_t>(batch) * c * oh * ow);
        if (train) argmax.resize(y.size());
        std::size_t o = 0;
        for (int s = 0; s < batch; ++s)
            for (int ch = 0; ch < c; ++ch) {
                const T* p = x.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j, ++o) {
                        std::uint32_t best = static_cast<std::uint32_t>((2 * i) * w + 2 * j);
                        T bv = p[best];
                        for (int di = 0; di < 2; ++di)
                            for (int dj = 0; dj < 2; ++dj) {
                                const std::uint32_t idx =
                                    static_cast<std::uint32_t>((2 * i + di) * w + 2 * j + dj);
                                if (p[idx] > bv) { bv = p[idx]; best = idx; }
                            }
                        y[o] = bv;
                        if (train) argmax[o] = best;
                    }
            }
    }

    void backward(const std::vector<T>& dy, std::vector<T>& dx) {
        dx.assign(static_cast<std::size_t>(batch) * c * h * w, T(0));
        const int oh = h / 2, ow = w / 2;
        std::size_t o = 0;
        for (int s = 0; s < batch; ++s)
            for (int ch = 0; ch < c; ++ch) {
                T* p = dx.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
                for (int i = 0; i < oh * ow; ++i, ++o) p[argmax[o]] += dy[o];
            }
    }
};

// ---- LSTM over a [B, steps, D] sequence, gate order i, f, g, o ----

template <class T>
struct LSTM {
    int dim_in = 0, hidden = 0;
    std::vector<T> w_ih, w_hh, b, dw_ih, dw_hh, db;  // w_ih: [4H][D], w_hh: [4H][H]

    // caches
    int batch = 0, steps = 0;
    std::vector<T> gates;   // [steps][B][4H] post-activation
    std::vector<T> cells;   // [steps][B][H]
    std::vector<T> tanhc;   // [steps][B][H]
    std::vector<T> hs;      // [steps+1][B][H], hs[0] = 0
    const std::vector<T>* x_seq = nullptr;

    void init(int d, int h, Rng& rng) {
        dim_in = d;
        hidden = h;
        w_ih.resize(static_cast<std::size_t>(4) * h * d);
        w_hh.resize(static_cast<std::size_t>(4) * h * h);
        b.assign(static_cast<std::size_t>(4) * h, T(0));
        fanin_uniform(w_ih, d, rng);
        fanin_uniform(w_hh, h, rng);
        for (int i = 0; i < h; ++i) b[static_cast<std::size_t>(h + i)] = T(1);  // forget bias
        dw_ih.assign(w_ih.size(), T(0));
        dw_hh.assign(w_hh.size(), T(0));
        db.assign(b.size(), T(0));
    }

    std::size_t param_count() const { return w_ih.size() + w_hh.size() + b.size(); }

    static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

    // x: [B, steps, D]; returns final hidden state h_T in y: [B, H]
    void forward(const std::vector<T>& x, int b_, int steps_, std::vector<T>& y, bool train) {
        batch = b_;
        steps = steps_;
        x_seq = &x;
        const int h4 = 4 * hidden;
        gates.assign(static_cast<std::size_t>(steps) * batch * h4, T(0));
        cells.assign(static_cast<std::size_t>(steps) * batch * hidden, T(0));
        tanhc.assign(static_cast<std::size_t>(steps) * batch * hidden, T(0));
        hs.assign(static_cast<std::size_t>(steps + 1) * batch * hidden, T(0));

        // one projection gemm for all samples and steps: x is [B*steps, D] row-major
        std::vector<T> xp(static_cast<std::size_t>(batch) * steps * h4);
        gemm(false, true, batch * steps, h4, dim_in, T(1), x.data(), dim_in, w_ih.data(), dim_in,
             T(0), xp.data(), h4);
        std::vector<T> pre(static_cast<std::size_t>(batch) * h4);
        for (int t = 0; t < steps; ++t) {
            // pre = x_t W_ih^T + h_{t-1} W_hh^T + b
            for (int s = 0; s < batch; ++s) {
                const T* xps = xp.data() + (static_cast<std::size_t>(s) * steps + t) * h4;
                T* ps = pre.data() + static_cast<std::size_t>(s) * h4;
                for (int j = 0; j < h4; ++j) ps[j] = b[static_cast<std::size_t>(j)] + xps[j];
            }
            const T* hprev = hs.data() + static_cast<std::size_t>(t) * batch * hidden;
            gemm(false, true, batch, h4, hidden, T(1), hprev, hidden, w_hh.data(), hidden, T(1),
                 pre.data(), h4);

            T* gt = gates.data() + static_cast<std::size_t>(t) * batch * h4;
            T* ct = cells.data() + static_cast<std::size_t>(t) * batch * hidden;
            T* tct = tanhc.data() + static_cast<std::size_t>(t) * batch * hidden;
            T* ht = hs.data() + static_cast<std::size_t>(t + 1) * batch * hidden;
            const T* cprev =
                t > 0 ? cells.data() + static_cast<std::size_t>(t - 1) * batch * hidden : nullptr;
            for (int s = 0; s < batch; ++s) {
                const T* ps = pre.data() + static_cast<std::size_t>(s) * h4;
                for (int j = 0; j < hidden; ++j) {
                    const T gi = sigmoid(ps[j]);
                    const T gf = sigmoid(ps[hidden + j]);
                    const T gg = std::tanh(ps[2 * hidden + j]);
                    const T go = sigmoid(ps[3 * hidden + j]);
                    const std::size_t gbase = static_cast<std::size_t>(s) * h4;
                    gt[gbase + j] = gi;
                    gt[gbase + hidden + j] = gf;
                    gt[gbase + 2 * hidden + j] = gg;
                    gt[gbase + 3 * hidden + j] = go;
                    const T cp = cprev ? cprev[static_cast<std::size_t>(s) * hidden + j] : T(0);
                    const T cv = gf * cp + gi * gg;
                    ct[static_cast<std::size_t>(s) * hidden + j] = cv;
                    const T tc = std::tanh(cv);
                    tct[static_cast<std::size_t>(s) * hidden + j] = tc;
                    ht[static_cast<std::size_t>(s) * hidden + j] = go * tc;
                }
            }
        }
        y.assign(hs.begin() + static_cast<std::ptrdiff_t>(steps) * batch * hidden, hs.end());
        if (!train) { gates.clear(); cells.clear(); tanhc.clear(); }
    }

    // dh_final: [B, H] gradient at the last hidden state; dx: [B, steps, D]
    void backward(const std::vector<T>& dh_final, std::vector<T>& dx) {
        const int h4 = 4 * hidden;
        dx.assign(static_cast<std::size_t>(batch) * steps * dim_in, T(0));
        std::vector<T> dh = dh_final;
        std::vector<T> dc(static_cast<std::size_t>(batch) * hidden, T(0));
        std::vector<T> dpre_all(static_cast<std::size_t>(batch) * steps * h4);
        std::vector<T> dhprev(static_cast<std::size_t>(batch) * hidden);
        std::vector<T> dpre(static_cast<std::size_t>(batch) * h4);

        for (int t = steps - 1; t >= 0; --t) {
            const T* gt = gates.data() + static_cast<std::size_t>(t) * batch * h4;
            const T* ct = cells.data() + static_cast<std::size_t>(t) * batch * hidden;
            const T* tct = tanhc.data() + static_cast<std::size_t>(t) * batch * hidden;
            const T* cprev =
                t > 0 ? cells.data() + static_cast<std::size_t>(t - 1) * batch * hidden : nullptr;
            for (int s = 0; s < batch; ++s) {
                const std::size_t hb = static_cast<std::size_t>(s) * hidden;
                const std::size_t gb = static_cast<std::size_t>(s) * h4;
                for (int j = 0; j < hidden; ++j) {
                    const T gi = gt[gb + j], gf = gt[gb + hidden + j];
                    const T gg = gt[gb + 2 * hidden + j], go = gt[gb + 3 * hidden + j];
                    const T tc = tct[hb + j];
                    const T dht = dh[hb + j];
                    const T dct = dht * go * (T(1) - tc * tc) + dc[hb + j];
                    const T cp = cprev ? cprev[hb + j] : T(0);
                    dpre[gb + j] = dct * gg * gi * (T(1) - gi);
                    dpre[gb + hidden + j] = dct * cp * gf * (T(1) - gf);
                    dpre[gb + 2 * hidden + j] = dct * gi * (T(1) - gg * gg);
                    dpre[gb + 3 * hidden + j] = dht * tc * go * (T(1) - go);
                    dc[hb + j] = dct * gf;
                }
            }
            // accumulate recurrent weight grads; stash dpre for the batched
            // input-side gemms after the loop
            const T* hprev = hs.data() + static_cast<std::size_t>(t) * batch * hidden;
            gemm(true, false, h4, hidden, batch, T(1), dpre.data(), h4, hprev, hidden, T(1),
                 dw_hh.data(), hidden);
            for (int s = 0; s < batch; ++s) {
                const T* ps = dpre.data() + static_cast<std::size_t>(s) * h4;
                T* pd = dpre_all.data() + (static_cast<std::size_t>(s) * steps + t) * h4;
                for (int j = 0; j < h4; ++j) {
                    pd[j] = ps[j];
                    db[static_cast<std::size_t>(j)] += ps[j];
                }
            }
            // dh_{t-1} = dpre W_hh
            gemm(false, false, batch, hidden, h4, T(1), dpre.data(), h4, w_hh.data(), hidden, T(0),
                 dhprev.data(), hidden);
            dh = dhprev;
        }
        // dw_ih += dpre_all^T x, dx = dpre_all W_ih, over all samples and steps at once
        gemm(true, false, h4, dim_in, batch * steps, T(1), dpre_all.data(), h4, x_seq->data(),
             dim_in, T(1), dw_ih.data(), dim_in);
        gemm(false, false, batch * steps, dim_in, h4, T(1), dpre_all.data(), h4, w_ih.data(),
             dim_in, T(0), dx.data(), dim_in);
    }
};

// ---- dense ----

template <class T>
struct Dense {
    int dim_in = 0, dim_out = 0;
    std::vector<T> w, b, dw, db;  // w: [out][in]
    const std::vector<T>* x_cache = nullptr;
    int batch = 0;

    void init(int d_in, int d_out, Rng& rng) {
        dim_in = d_in;
        dim_out = d_out;
        w.resize(static_cast<std::size_t>(d_out) * d_in);
        b.assign(static_cast<std::size_t>(d_out), T(0));
        fanin_uniform(w, d_in, rng);
        dw.assign(w.size(), T(0));
        db.assign(b.size(), T(0));
    }

    std::size_t param_count() const { return w.size() + b.size(); }

    void forward(const std::vector<T>& x, int b_, std::vector<T>& y) {
        batch = b_;
        x_cache = &x;
        y.resize(static_cast<std::size_t>(batch) * dim_out);
        for (int s = 0; s < batch; ++s)
            for (int j = 0; j < dim_out; ++j)
                y[static_cast<std::size_t>(s) * dim_out + j] = b[static_cast<std::size_t>(j)];
        gemm(false, true, batch, dim_out, dim_in, T(1), x.data(), dim_in, w.data(), dim_in, T(1),
             y.data(), dim_out);
    }

    void backward(const std::vector<T>& dy, std::vector<T>& dx) {
        gemm(true, false, dim_out, dim_in, batch, T(1), dy.data(), dim_out, x_cache->data(), dim_in,
             T(1), dw.data(), dim_in);
        for (int s = 0; s < batch; ++s)
            for (int j = 0; j < dim_out; ++j)
                db[static_cast<std::size_t>(j)] += dy[static_cast<std::size_t>(s) * dim_out + j];
        dx.assign(static_cast<std::size_t>(batch) * dim_in, T(0));
        gemm(false, false, batch, dim_in, dim_out, T(1), dy.data(), dim_out, w.data(), dim_in,
             T(0), dx.data(), dim_in);
    }
};

// ---- softmax cross-entropy ----

template <class T>
void softmax_rows(const std::vector<T>& logits, int batch, int classes, std::vector<T>& probs) {
    probs.resize(logits.size());
    for (int s = 0; s < batch; ++s) {
        const T* row = logits.data() + static_cast<std::size_t>(s) * classes;
        T* out = probs.data() + static_cast<std::size_t>(s) * classes;
        T mx = row[0];
        for (int j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < classes; ++j) {
            out[j] = std::exp(row[j] - mx);
            sum += out[j];
        }
        for (int j = 0; j < classes; ++j) out[j] /= sum;
    }
}

// Returns mean cross-entropy; dlogits = (softmax - onehot) / B.
template <class T>
T softmax_ce(const std::vector<T>& logits, const std::vector<int>& labels, int classes,
             std::vector<T>& dlogits) {
    const int batch = static_cast<int>(labels.size());
    std::vector<T> probs;
    softmax_rows(logits, batch, classes, probs);
    T loss = T(0);
    dlogits = probs;
    for (int s = 0; s < batch; ++s) {
        const std::size_t idx = static_cast<std::size_t>(s) * classes +
                                static_cast<std::size_t>(labels[static_cast<std::size_t>(s)]);
        loss -= std::log(std::max(probs[idx], T(1e-12)));
        dlogits[idx] -= T(1);
    }
    for (auto& v : dlogits) v /= static_cast<T>(batch);
    return loss / static_cast<T>(batch);
}

} // namespace nn

// ---- model ----

enum class HeadKind { cnn_lstm, cnn_only };

struct ArchitectureSpec {
    int image_h = 64, image_w = 64;
    int conv1_out = 8, conv2_out = 16;
    int lstm_hidden = 10;
    int classes = 11;
    HeadKind head = HeadKind::cnn_lstm;
    bool batch_norm = true;
    bool enforce_budget = true;  // trainable parameter count must land in [10k, 15k]
};

template <class T>
class Model {
public:
    ArchitectureSpec arch;

    nn::Conv2D<T> conv1, conv2;
    nn::BatchNorm<T> bn1, bn2;
    nn::ReLU<T> relu1, relu2;
    nn::MaxPool2<T> pool1, pool2, pool3;  // pool3 only for cnn_only
    nn::LSTM<T> lstm;
    nn::Dense<T> dense;

    bool train_mode = true;

    // layer activations kept for backward
    std::vector<T> a_conv1, a_pool1, a_conv2, a_pool2, a_pool3, a_seq, a_head;
    int last_batch = 0;

    explicit Model(const ArchitectureSpec& spec, Rng& rng) : arch(spec) {
        conv1.init(1, arch.conv1_out, rng);
        bn1.init(arch.conv1_out);
        conv2.init(arch.conv1_out, arch.conv2_out, rng);
        bn2.init(arch.conv2_out);
        if (arch.head == HeadKind::cnn_lstm) {
            lstm.init(arch.conv2_out * (arch.image_w / 4), arch.lstm_hidden, rng);
            dense.init(arch.lstm_hidden, arch.classes, rng);
        } else {
            dense.init(arch.conv2_out * (arch.image_h / 8) * (arch.image_w / 8), arch.classes, rng);
        }
        if (arch.enforce_budget) {
            const std::size_t n = param_count();
            if (n < 10000 || n > 15000)
                throw std::invalid_argument("parameter budget violated: " + layer_counts());
        }
    }

    std::size_t param_count() const {
        std::size_t n = conv1.param_count() + conv2.param_count() + dense.param_count();
        if (arch.batch_norm) n += bn1.param_count() + bn2.param_count();
        if (arch.head == HeadKind::cnn_lstm) n += lstm.param_count();
        return n;
    }

    std::string layer_counts() const {
        std::ostringstream os;
        os << "conv1=" << conv1.param_count();
        if (arch.batch_norm) os << " bn1=" << bn1.param_count();
        os << " conv2=" << conv2.param_count();
        if (arch.batch_norm) os << " bn2=" << bn2.param_count();
        if (arch.head == HeadKind::cnn_lstm) os << " lstm=" << lstm.param_count();
        os << " dense=" << dense.param_count() << " total=" << param_count();
        return os.str();
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> ps = {
            {"conv1.w", &conv1.w, &conv1.dw}, {"conv1.b", &conv1.b, &conv1.db}};
        if (arch.batch_norm) {
            ps.push_back({"bn1.gamma", &bn1.gamma, &bn1.dgamma});
            ps.push_back({"bn1.beta", &bn1.beta, &bn1.dbeta});
        }
        ps.push_back({"conv2.w", &conv2.w, &conv2.dw});
        ps.push_back({"conv2.b", &conv2.b, &conv2.db});
        if (arch.batch_norm) {
            ps.push_back({"bn2.gamma", &bn2.gamma, &bn2.dgamma});
            ps.push_back({"bn2.beta", &bn2.beta, &bn2.dbeta});
        }
        if (arch.head == HeadKind::cnn_lstm) {
            ps.push_back({"lstm.w_ih", &lstm.w_ih, &lstm.dw_ih});
            ps.push_back({"lstm.w_hh", &lstm.w_hh, &lstm.dw_hh});
            ps.push_back({"lstm.b", &lstm.b, &lstm.db});
        }
        ps.push_back({"dense.w", &dense.w, &dense.dw});
        ps.push_back({"dense.b", &dense.b, &dense.db});
        return ps;
    }

    void zero_grad() {
        for (auto& p : params()) std::fill(p.g->begin(), p.g->end(), T(0));
    }

    // x: [B, H, W] flattened; returns logits [B, classes]
    std::vector<T> forward(const std::vector<T>& x, int batch) {
        const int h = arch.image_h, w = arch.image_w;
        if (x.size() != static_cast<std::size_t>(batch) * h * w)
            throw std::invalid_argument("forward: input shape mismatch");
        last_batch = batch;
        const bool train = train_mode;

        conv1.forward(x, batch, h, w, a_conv1, train);
        if (arch.batch_norm) bn1.forward(a_conv1, batch, h * w, train);
        relu1.forward(a_conv1, train);
        pool1.forward(a_conv1, batch, arch.conv1_out, h, w, a_pool1, train);

        const int h2 = h / 2, w2 = w / 2;
        conv2.forward(a_pool1, batch, h2, w2, a_conv2, train);
        if (arch.batch_norm) bn2.forward(a_conv2, batch, h2 * w2, train);
        relu2.forward(a_conv2, train);
        pool2.forward(a_conv2, batch, arch.conv2_out, h2, w2, a_pool2, train);

        const int h4 = h / 4, w4 = w / 4;
        std::vector<T> logits;
        if (arch.head == HeadKind::cnn_lstm) {
            // [B, C, H4, W4] -> sequence over rows: [B, steps=H4, D=C*W4]
            const int steps = h4, d = arch.conv2_out * w4;
            a_seq.resize(static_cast<std::size_t>(batch) * steps * d);
            for (int s = 0; s < batch; ++s)
                for (int c = 0; c < arch.conv2_out; ++c)
                    for (int i = 0; i < h4; ++i)
                        for (int j = 0; j < w4; ++j)
                            a_seq[(static_cast<std::size_t>(s) * steps + i) * d + c * w4 + j] =
                                a_pool2[((static_cast<std::size_t>(s) * arch.conv2_out + c) * h4 +
                                         i) * w4 + j];
            lstm.forward(a_seq, batch, steps, a_head, train);
            dense.forward(a_head, batch, logits);
        } else {
            pool3.forward(a_pool2, batch, arch.conv2_out, h4, w4, a_pool3, train);
            dense.forward(a_pool3, batch, logits);
        }
        return logits;
    }

    // Gradients of mean cross-entropy; call after a train-mode forward.
    T backward(const std::vector<T>& logits, const std::vector<int>& labels) {
        std::vector<T> dlogits;
        const T loss = nn::softmax_ce(logits, labels, arch.classes, dlogits);

        const int h = arch.image_h, w = arch.image_w;
        const int h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;
        std::vector<T> d_pool2;
        if (arch.head == HeadKind::cnn_lstm) {
            std::vector<T> d_h, d_seq;
            dense.backward(dlogits, d_h);
            lstm.backward(d_h, d_seq);
            const int steps = h4, d = arch.conv2_out * w4;
            d_pool2.resize(static_cast<std::size_t>(last_batch) * arch.conv2_out * h4 * w4);
            for (int s = 0; s < last_batch; ++s)
                for (int c = 0; c < arch.conv2_out; ++c)
                    for (int i = 0; i < h4; ++i)
                        for (int j = 0; j < w4; ++j)
                            d_pool2[((static_cast<std::size_t>(s) * arch.conv2_out + c) * h4 + i) *
                                        w4 + j] =
                                d_seq[(static_cast<std::size_t>(s) * steps + i) * d + c * w4 + j];
        } else {
            std::vector<T> d_pool3;
            dense.backward(dlogits, d_pool3);
            pool3.backward(d_pool3, d_pool2);
        }

        std::vector<T> d_conv2, tmp;
        pool2.backward(d_pool2, d_conv2);
        relu2.backward(d_conv2, tmp);
        if (arch.batch_norm) {
            bn2.backward(tmp, d_conv2);
        } else {
            d_conv2 = tmp;
        }
        std::vector<T> d_pool1;
        conv2.backward(d_conv2, d_pool1);

        std::vector<T> d_conv1;
        pool1.backward(d_pool1, d_conv1);
        relu1.backward(d_conv1, tmp);
        if (arch.batch_norm) {
            bn1.backward(tmp, d_conv1);
        } else {
            d_conv1 = tmp;
        }
        std::vector<T> d_input;
        conv1.backward(d_conv1, d_input, false);
        (void)w2;
        (void)h2;
        return loss;
    }
};

// ---- Adam ----

template <class T>
class Adam {
public:
    T lr = T(0.003), beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);

    explicit Adam(T learning_rate = T(0.003)) : lr(learning_rate) {}

    void step(std::vector<ParamRef<T>> ps) {
        if (m_.empty()) {
            for (auto& p : ps) {
                m_.emplace_back(p.w->size(), T(0));
                v_.emplace_back(p.w->size(), T(0));
            }
        }
        ++t_;
        const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t_));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto& w = *ps[i].w;
            auto& g = *ps[i].g;
            for (std::size_t j = 0; j < w.size(); ++j) {
                m_[i][j] = beta1 * m_[i][j] + (T(1) - beta1) * g[j];
                v_[i][j] = beta2 * v_[i][j] + (T(1) - beta2) * g[j] * g[j];
                const T mhat = m_[i][j] / bc1;
                const T vhat = v_[i][j] / bc2;
                w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    long step_count() const { return t_; }

private:
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// One optimizer step on a batch; returns batch loss.
template <class T>
T train_step(Model<T>& model, Adam<T>& opt, const std::vector<T>& images,
             const std::vector<int>& labels) {
    model.train_mode = true;
    model.zero_grad();
    const int batch = static_cast<int>(labels.size());
    auto logits = model.forward(images, batch);
    const T loss = model.backward(logits, labels);
    if (!std::isfinite(static_cast<double>(loss)))
        throw DivergedError("training diverged: non-finite loss at step " +
                            std::to_string(opt.step_count() + 1));
    opt.step(model.params());
    for (auto& p : model.params())
        for (T v : *p.w)
            if (!std::isfinite(static_cast<double>(v)))
                throw DivergedError("training diverged: non-finite parameter in " + p.name);
    return loss;
}

} // namespace amr
