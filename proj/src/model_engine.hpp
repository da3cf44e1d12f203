#pragma once

// Internal network engine: direct 'same'-padding convolutions and the
// convolutional LSTM cell, templated on the scalar type so the production
// float path and the 64-bit gradient-check path share one implementation.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "deltamon/model.hpp"

namespace deltamon::detail {

// tanh for the production float path: Cephes-style 13/6 rational (the form
// used by Eigen and TensorFlow), accurate to ~1e-7 on the clamped range and
// vectorizable. The 64-bit path keeps libm tanh so that finite-difference
// gradient checks see exact derivatives.
inline float fast_tanh(float x) {
    x = std::clamp(x, -7.90531110763549805f, 7.90531110763549805f);
    const float x2 = x * x;
    float p = -2.76076847742355e-16f;
    p = p * x2 + 2.00018790482477e-13f;
    p = p * x2 + -8.60467152213735e-11f;
    p = p * x2 + 5.12229709037114e-08f;
    p = p * x2 + 1.48572235717979e-05f;
    p = p * x2 + 6.37261928875436e-04f;
    p = p * x2 + 4.89352455891786e-03f;
    p = p * x;
    float q = 1.19825839466702e-06f;
    q = q * x2 + 1.18534705686654e-04f;
    q = q * x2 + 2.26843463243900e-03f;
    q = q * x2 + 4.89352518554385e-03f;
    return p / q;
}

inline double fast_tanh(double x) { return std::tanh(x); }

template <typename T>
T hard_sigmoid(T x) {
    return std::clamp(T(0.2) * x + T(0.5), T(0), T(1));
}

// Derivative recovered from the post-activation value; the clamp regions
// contribute zero gradient.
template <typename T>
T hard_sigmoid_grad(T y) {
    return (y > T(0) && y < T(1)) ? T(0.2) : T(0);
}

template <typename T>
struct ConvW {
    int oc = 0, ic = 0, ks = 1;
    std::vector<T> k;  // [oc][ic][ks][ks]
    std::vector<T> b;  // [oc]; empty means no bias term

    void allocate(int oc_, int ic_, int ks_, bool bias) {
        if (ks_ != 1 && ks_ != 3) fail("conv kernels must be 1x1 or 3x3");
        oc = oc_;
        ic = ic_;
        ks = ks_;
        k.assign(std::size_t(oc) * ic * ks * ks, T(0));
        b.assign(bias ? std::size_t(oc) : 0, T(0));
    }
};

/// Convolutional LSTM weights. Gates are stacked along the output channels in
/// the order input, forget, cell, output; the bias lives on the input kernel.
template <typename T>
struct LstmW {
    ConvW<T> input;      // oc = 4*channels, with bias
    ConvW<T> recurrent;  // oc = 4*channels, no bias

    int channels() const { return input.oc / 4; }
    void allocate(int channels_, int in_ch, int ks) {
        input.allocate(4 * channels_, in_ch, ks, true);
        recurrent.allocate(4 * channels_, channels_, ks, false);
    }
};

template <typename T>
struct NetWeights {
    ModelDescriptor arch;
    ConvW<T> opt_conv, sar_conv;
    LstmW<T> opt_lstm, sar_lstm;
    ConvW<T> trunk_conv;
    LstmW<T> trunk_lstm;
    ConvW<T> reduce_conv, head;

    void allocate(const ModelDescriptor& d) {
        arch = d;
        opt_conv.allocate(d.branch_filters, d.optical_bands, d.kernel, true);
        opt_lstm.allocate(d.branch_filters, d.branch_filters, d.kernel);
        sar_conv.allocate(d.branch_filters, d.sar_bands, d.kernel, true);
        sar_lstm.allocate(d.branch_filters, d.branch_filters, d.kernel);
        trunk_conv.allocate(d.trunk_filters, 2 * d.branch_filters, d.kernel, true);
        trunk_lstm.allocate(d.trunk_filters, d.trunk_filters, d.kernel);
        reduce_conv.allocate(d.reduce_filters, d.trunk_filters, d.kernel, true);
        head.allocate(1, d.reduce_filters, 1, true);
    }

    // Tensor traversal in the exact order of tensor_table().
    template <typename Fn>
    void visit(Fn&& fn) {
        fn(opt_conv.k), fn(opt_conv.b);
        fn(opt_lstm.input.k), fn(opt_lstm.recurrent.k), fn(opt_lstm.input.b);
        fn(sar_conv.k), fn(sar_conv.b);
        fn(sar_lstm.input.k), fn(sar_lstm.recurrent.k), fn(sar_lstm.input.b);
        fn(trunk_conv.k), fn(trunk_conv.b);
        fn(trunk_lstm.input.k), fn(trunk_lstm.recurrent.k), fn(trunk_lstm.input.b);
        fn(reduce_conv.k), fn(reduce_conv.b);
        fn(head.k), fn(head.b);
    }

    void load_flat(const std::vector<float>& flat) {
        std::size_t pos = 0;
        visit([&](std::vector<T>& t) {
            if (pos + t.size() > flat.size()) fail("parameter blob shorter than architecture");
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(flat[pos + i]);
            pos += t.size();
        });
        if (pos != flat.size()) fail("parameter blob longer than architecture");
    }

    template <typename U>
    void store_flat(std::vector<U>& out) const {
        out.clear();
        const_cast<NetWeights*>(this)->visit([&](std::vector<T>& t) {
            for (T v : t) out.push_back(U(v));
        });
    }
};

template <typename T>
struct Workspace {
    std::vector<T> pad_in, pad_grad, zeros;
    std::vector<T> z, act, act2, act3;
};

template <typename T, typename S>
void pad_planes(const S* in, int ch, int rows, int cols, int pad, std::vector<T>& out) {
    const int r2 = rows + 2 * pad, c2 = cols + 2 * pad;
    out.assign(std::size_t(ch) * r2 * c2, T(0));
    for (int c = 0; c < ch; ++c) {
        const S* src = in + std::size_t(c) * rows * cols;
        T* dst = out.data() + std::size_t(c) * r2 * c2;
        for (int y = 0; y < rows; ++y) {
            T* drow = dst + std::size_t(y + pad) * c2 + pad;
            const S* srow = src + std::size_t(y) * cols;
            for (int x = 0; x < cols; ++x) drow[x] = T(srow[x]);
        }
    }
}

template <typename T>
void conv_forward_padded(const ConvW<T>& w, const std::vector<T>& padded, int rows, int cols,
                         T* out, bool accumulate) {
    const int pad = w.ks / 2;
    const int c2 = cols + 2 * pad, r2 = rows + 2 * pad;
    const std::size_t hw = std::size_t(rows) * cols;
    for (int oc = 0; oc < w.oc; ++oc) {
        T* o = out + std::size_t(oc) * hw;
        if (!accumulate) std::fill(o, o + hw, w.b.empty() ? T(0) : w.b[oc]);
        for (int ic = 0; ic < w.ic; ++ic) {
            const T* kp = w.k.data() + (std::size_t(oc) * w.ic + ic) * w.ks * w.ks;
            const T* pin = padded.data() + std::size_t(ic) * r2 * c2;
            if (w.ks == 3) {
                for (int ky = 0; ky < 3; ++ky) {
                    const T w0 = kp[ky * 3], w1 = kp[ky * 3 + 1], w2 = kp[ky * 3 + 2];
                    for (int y = 0; y < rows; ++y) {
                        const T* pr = pin + std::size_t(y + ky) * c2;
                        T* orow = o + std::size_t(y) * cols;
                        for (int x = 0; x < cols; ++x)
                            orow[x] += w0 * pr[x] + w1 * pr[x + 1] + w2 * pr[x + 2];
                    }
                }
            } else {
                for (int ky = 0; ky < w.ks; ++ky)
                    for (int kx = 0; kx < w.ks; ++kx) {
                        const T wv = kp[ky * w.ks + kx];
                        for (int y = 0; y < rows; ++y) {
                            const T* pr = pin + std::size_t(y + ky) * c2 + kx;
                            T* orow = o + std::size_t(y) * cols;
                            for (int x = 0; x < cols; ++x) orow[x] += wv * pr[x];
                        }
                    }
            }
        }
    }
}

template <typename T, typename S>
void conv_forward(const ConvW<T>& w, const S* in, int rows, int cols, T* out, Workspace<T>& ws,
                  bool accumulate) {
    pad_planes<T, S>(in, w.ic, rows, cols, w.ks / 2, ws.pad_in);
    conv_forward_padded(w, ws.pad_in, rows, cols, out, accumulate);
}

template <typename T>
void conv_backward_data(const ConvW<T>& w, const T* dout, int rows, int cols, T* din,
                        Workspace<T>& ws) {
    const int pad = w.ks / 2;
    const int c2 = cols + 2 * pad, r2 = rows + 2 * pad;
    const std::size_t hw = std::size_t(rows) * cols;
    pad_planes<T, T>(dout, w.oc, rows, cols, pad, ws.pad_grad);
    for (int ic = 0; ic < w.ic; ++ic) {
        T* d = din + std::size_t(ic) * hw;
        std::fill(d, d + hw, T(0));
        for (int oc = 0; oc < w.oc; ++oc) {
            const T* kp = w.k.data() + (std::size_t(oc) * w.ic + ic) * w.ks * w.ks;
            const T* pin = ws.pad_grad.data() + std::size_t(oc) * r2 * c2;
            if (w.ks == 3) {
                for (int ky = 0; ky < 3; ++ky) {
                    // correlation with the 180-degree flipped kernel
                    const T w0 = kp[(2 - ky) * 3 + 2], w1 = kp[(2 - ky) * 3 + 1],
                            w2 = kp[(2 - ky) * 3];
                    for (int y = 0; y < rows; ++y) {
                        const T* pr = pin + std::size_t(y + ky) * c2;
                        T* drow = d + std::size_t(y) * cols;
                        for (int x = 0; x < cols; ++x)
                            drow[x] += w0 * pr[x] + w1 * pr[x + 1] + w2 * pr[x + 2];
                    }
                }
            } else {
                for (int ky = 0; ky < w.ks; ++ky)
                    for (int kx = 0; kx < w.ks; ++kx) {
                        const T wv = kp[(w.ks - 1 - ky) * w.ks + (w.ks - 1 - kx)];
                        for (int y = 0; y < rows; ++y) {
                            const T* pr = pin + std::size_t(y + ky) * c2 + kx;
                            T* drow = d + std::size_t(y) * cols;
                            for (int x = 0; x < cols; ++x) drow[x] += wv * pr[x];
                        }
                    }
            }
        }
    }
}

// Reductions over intensity planes use fixed-width lane accumulators so the
// loops vectorize without floating-point reassociation by the compiler; the
// summation order is part of the function's definition.
template <typename T>
constexpr int kLanes = std::is_same_v<T, float> ? 16 : 8;

template <typename T>
struct LaneAcc {
    T lane[kLanes<T>] = {};

    void add(const T* a, const T* b, int n) {
        int x = 0;
        for (; x + kLanes<T> <= n; x += kLanes<T>)
            for (int l = 0; l < kLanes<T>; ++l) lane[l] += a[x + l] * b[x + l];
        for (; x < n; ++x) lane[0] += a[x] * b[x];
    }

    void add(const T* a, int n) {
        int x = 0;
        for (; x + kLanes<T> <= n; x += kLanes<T>)
            for (int l = 0; l < kLanes<T>; ++l) lane[l] += a[x + l];
        for (; x < n; ++x) lane[0] += a[x];
    }

    T total() const {
        T s = T(0);
        for (int l = 0; l < kLanes<T>; ++l) s += lane[l];
        return s;
    }
};

template <typename T, typename S>
void conv_backward_weights(ConvW<T>& grad, const S* in, const T* dout, int rows, int cols,
                           Workspace<T>& ws) {
    const int pad = grad.ks / 2;
    const int c2 = cols + 2 * pad, r2 = rows + 2 * pad;
    const std::size_t hw = std::size_t(rows) * cols;
    pad_planes<T, S>(in, grad.ic, rows, cols, pad, ws.pad_in);
    for (int oc = 0; oc < grad.oc; ++oc) {
        const T* dout_oc = dout + std::size_t(oc) * hw;
        if (!grad.b.empty()) {
            LaneAcc<T> acc;
            acc.add(dout_oc, int(hw));
            grad.b[oc] += acc.total();
        }
        for (int ic = 0; ic < grad.ic; ++ic) {
            const T* pin = ws.pad_in.data() + std::size_t(ic) * r2 * c2;
            T* kg = grad.k.data() + (std::size_t(oc) * grad.ic + ic) * grad.ks * grad.ks;
            if (grad.ks == 3) {
                // all nine taps in one pass per dout row
                constexpr int L = kLanes<T>;
                T acc[9][L] = {};
                for (int y = 0; y < rows; ++y) {
                    const T* dr = dout_oc + std::size_t(y) * cols;
                    const T* p0 = pin + std::size_t(y) * c2;
                    const T* p1 = p0 + c2;
                    const T* p2 = p1 + c2;
                    int x = 0;
                    for (; x + L <= cols; x += L)
                        for (int l = 0; l < L; ++l) {
                            const T d = dr[x + l];
                            acc[0][l] += p0[x + l] * d;
                            acc[1][l] += p0[x + l + 1] * d;
                            acc[2][l] += p0[x + l + 2] * d;
                            acc[3][l] += p1[x + l] * d;
                            acc[4][l] += p1[x + l + 1] * d;
                            acc[5][l] += p1[x + l + 2] * d;
                            acc[6][l] += p2[x + l] * d;
                            acc[7][l] += p2[x + l + 1] * d;
                            acc[8][l] += p2[x + l + 2] * d;
                        }
                    for (; x < cols; ++x) {
                        const T d = dr[x];
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx)
                                acc[ky * 3 + kx][0] +=
                                    pin[std::size_t(y + ky) * c2 + x + kx] * d;
                    }
                }
                for (int j = 0; j < 9; ++j) {
                    T s = T(0);
                    for (int l = 0; l < L; ++l) s += acc[j][l];
                    kg[j] += s;
                }
            } else {
                LaneAcc<T> a0;
                for (int y = 0; y < rows; ++y)
                    a0.add(pin + std::size_t(y) * c2, dout_oc + std::size_t(y) * cols, cols);
                kg[0] += a0.total();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Network engine
// ---------------------------------------------------------------------------

template <typename T>
class Engine {
public:
    struct BranchCache {
        std::vector<std::vector<T>> x;      // post-dropout recurrent inputs, per valid step
        std::vector<std::vector<T>> gates;  // post-activation i,f,g,o
        std::vector<std::vector<T>> c;
        std::vector<std::vector<T>> h;
    };

    struct Cache {
        bool training = false;
        int rows = 0, cols = 0;
        std::vector<int> valid_steps;
        BranchCache opt, sar;
        std::vector<T> concat;  // conv3 input
        std::vector<T> trunk_x, trunk_gates, trunk_c, trunk_h;
        std::vector<T> reduce_relu;
        std::vector<T> pred;
        std::vector<T> mask_opt, mask_sar, mask_trunk;  // scaled dropout masks
    };

    explicit Engine(const ModelParams& p) {
        w_.allocate(p.arch);
        w_.load_flat(p.values);
    }

    const ModelDescriptor& arch() const { return w_.arch; }

    void forward(const WindowTensor& win, bool training, std::uint64_t dropout_seed,
                 std::vector<T>& pred, Cache* cache);
    void backward(const WindowTensor& win, const Cache& cache, const std::vector<T>& dpred,
                  NetWeights<T>& grads);

private:
    struct LstmState {
        std::vector<T> h, c;
        bool live = false;
        void reset(std::size_t n) {
            h.assign(n, T(0));
            c.assign(n, T(0));
            live = false;
        }
    };

    void make_mask(std::uint64_t seed, std::size_t n, std::vector<T>& mask) const {
        Rng rng(seed);
        const double keep = 1.0 - double(w_.arch.dropout);
        const T scale = T(1.0 / keep);
        mask.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            mask[i] = rng.uniform() < double(w_.arch.dropout) ? T(0) : scale;
    }

    // One recurrent step; gates land in gate_buf (post-activation).
    void lstm_step(const LstmW<T>& w, const T* x, LstmState& state, int rows, int cols,
                   T* gate_buf) {
        const std::size_t chw = std::size_t(w.channels()) * rows * cols;
        conv_forward<T, T>(w.input, x, rows, cols, gate_buf, ws_, false);
        if (state.live)
            conv_forward<T, T>(w.recurrent, state.h.data(), rows, cols, gate_buf, ws_, true);
        T* zi = gate_buf;
        T* zf = gate_buf + chw;
        T* zg = gate_buf + 2 * chw;
        T* zo = gate_buf + 3 * chw;
        for (std::size_t p = 0; p < chw; ++p) {
            const T i = hard_sigmoid(zi[p]);
            const T f = hard_sigmoid(zf[p]);
            const T g = fast_tanh(zg[p]);
            const T o = hard_sigmoid(zo[p]);
            const T cn = f * state.c[p] + i * g;
            state.c[p] = cn;
            state.h[p] = o * fast_tanh(cn);
            zi[p] = i;
            zf[p] = f;
            zg[p] = g;
            zo[p] = o;
        }
        state.live = true;
    }

    // Backward through one recurrent step. dh/dc enter as gradients w.r.t.
    // h_t/c_t and leave as gradients w.r.t. h_{t-1}/c_{t-1}.
    template <typename S>
    void lstm_step_backward(const LstmW<T>& w, LstmW<T>& g, const S* x, const T* h_prev,
                            const T* c_prev, const std::vector<T>& gates,
                            const std::vector<T>& c_t, std::vector<T>& dh, std::vector<T>& dc,
                            T* dx, int rows, int cols, bool first_step) {
        const std::size_t chw = std::size_t(w.channels()) * rows * cols;
        ws_.z.resize(4 * chw);
        if (first_step) {
            ws_.zeros.assign(chw, T(0));
            c_prev = ws_.zeros.data();
        }
        T* dzi = ws_.z.data();
        T* dzf = dzi + chw;
        T* dzg = dzi + 2 * chw;
        T* dzo = dzi + 3 * chw;
        const T* gi = gates.data();
        const T* gf = gi + chw;
        const T* gg = gi + 2 * chw;
        const T* go = gi + 3 * chw;
        for (std::size_t p = 0; p < chw; ++p) {
            const T tc = fast_tanh(c_t[p]);
            const T dho = dh[p];
            const T dcp = dc[p] + dho * go[p] * (T(1) - tc * tc);
            dzi[p] = dcp * gg[p] * hard_sigmoid_grad(gi[p]);
            dzf[p] = dcp * c_prev[p] * hard_sigmoid_grad(gf[p]);
            dzg[p] = dcp * gi[p] * (T(1) - gg[p] * gg[p]);
            dzo[p] = dho * tc * hard_sigmoid_grad(go[p]);
            dc[p] = dcp * gf[p];
        }
        conv_backward_weights<T, S>(g.input, x, ws_.z.data(), rows, cols, ws_);
        if (!first_step) {
            conv_backward_weights<T, T>(g.recurrent, h_prev, ws_.z.data(), rows, cols, ws_);
            conv_backward_data(w.recurrent, ws_.z.data(), rows, cols, dh.data(), ws_);
        }
        conv_backward_data(w.input, ws_.z.data(), rows, cols, dx, ws_);
    }

    NetWeights<T> w_;
    Workspace<T> ws_;
};

template <typename T>
void Engine<T>::forward(const WindowTensor& win, bool training, std::uint64_t dropout_seed,
                        std::vector<T>& pred, Cache* cache) {
    const ModelDescriptor& d = w_.arch;
    if (win.bands != d.window_bands())
        fail("window has " + std::to_string(win.bands) + " bands, network expects " +
             std::to_string(d.window_bands()));
    if (win.rows < d.kernel || win.cols < d.kernel) fail("window smaller than kernel");
    const int rows = win.rows, cols = win.cols;
    const std::size_t hw = std::size_t(rows) * cols;
    const std::size_t bfhw = std::size_t(d.branch_filters) * hw;
    const std::size_t tfhw = std::size_t(d.trunk_filters) * hw;

    std::vector<T> mask_opt, mask_sar, mask_trunk;
    if (training && d.dropout > 0.0f) {
        make_mask(mix_seed(dropout_seed, 1), bfhw, mask_opt);
        make_mask(mix_seed(dropout_seed, 2), bfhw, mask_sar);
        make_mask(mix_seed(dropout_seed, 3), tfhw, mask_trunk);
    }

    LstmState opt_state, sar_state;
    opt_state.reset(bfhw);
    sar_state.reset(bfhw);
    if (cache) {
        *cache = Cache{};
        cache->training = training;
        cache->rows = rows;
        cache->cols = cols;
    }

    std::vector<T>& a = ws_.act;
    std::vector<T> gate_scratch;
    for (int t = 0; t < win.steps; ++t) {
        if (!win.valid[t]) continue;
        const float* frame = win.frame(t);
        const float* sar_in = frame;  // SAR bands lead, optical bands follow
        const float* opt_in = frame + std::size_t(d.sar_bands) * hw;
        for (int branch = 0; branch < 2; ++branch) {
            const bool is_opt = branch == 0;
            const ConvW<T>& conv = is_opt ? w_.opt_conv : w_.sar_conv;
            const LstmW<T>& lstm = is_opt ? w_.opt_lstm : w_.sar_lstm;
            LstmState& state = is_opt ? opt_state : sar_state;
            const std::vector<T>& mask = is_opt ? mask_opt : mask_sar;

            a.resize(bfhw);
            conv_forward<T, float>(conv, is_opt ? opt_in : sar_in, rows, cols, a.data(), ws_,
                                   false);
            for (std::size_t p = 0; p < bfhw; ++p) a[p] = std::max(a[p], T(0));
            if (!mask.empty())
                for (std::size_t p = 0; p < bfhw; ++p) a[p] *= mask[p];

            T* gate_dst;
            if (cache) {
                BranchCache& bc = is_opt ? cache->opt : cache->sar;
                bc.x.push_back(a);
                bc.gates.emplace_back(4 * bfhw);
                gate_dst = bc.gates.back().data();
                lstm_step(lstm, a.data(), state, rows, cols, gate_dst);
                bc.c.push_back(state.c);
                bc.h.push_back(state.h);
            } else {
                gate_scratch.resize(4 * bfhw);
                lstm_step(lstm, a.data(), state, rows, cols, gate_scratch.data());
            }
        }
        if (cache) cache->valid_steps.push_back(t);
    }

    // Trunk: concatenated final branch states, shared conv + one recurrent
    // step, reduction conv, sigmoid head.
    std::vector<T>& concat = ws_.act2;
    concat.resize(2 * bfhw);
    std::copy(opt_state.h.begin(), opt_state.h.end(), concat.begin());
    std::copy(sar_state.h.begin(), sar_state.h.end(), concat.begin() + bfhw);

    std::vector<T>& tx = ws_.act3;
    tx.resize(tfhw);
    conv_forward<T, T>(w_.trunk_conv, concat.data(), rows, cols, tx.data(), ws_, false);
    for (std::size_t p = 0; p < tfhw; ++p) tx[p] = std::max(tx[p], T(0));
    if (!mask_trunk.empty())
        for (std::size_t p = 0; p < tfhw; ++p) tx[p] *= mask_trunk[p];

    LstmState trunk_state;
    trunk_state.reset(tfhw);
    std::vector<T> trunk_gates(4 * tfhw);
    lstm_step(w_.trunk_lstm, tx.data(), trunk_state, rows, cols, trunk_gates.data());

    std::vector<T> reduce(std::size_t(d.reduce_filters) * hw);
    conv_forward<T, T>(w_.reduce_conv, trunk_state.h.data(), rows, cols, reduce.data(), ws_,
                       false);
    for (T& v : reduce) v = std::max(v, T(0));

    pred.resize(hw);
    conv_forward<T, T>(w_.head, reduce.data(), rows, cols, pred.data(), ws_, false);
    // Keep outputs strictly inside (0,1) in finite precision.
    constexpr T kFloor = T(1e-7);
    for (std::size_t p = 0; p < hw; ++p) {
        const T s = T(1) / (T(1) + std::exp(-pred[p]));
        pred[p] = std::clamp(s, kFloor, T(1) - kFloor);
    }

    if (cache) {
        cache->concat = concat;
        cache->trunk_x = tx;
        cache->trunk_gates = std::move(trunk_gates);
        cache->trunk_c = trunk_state.c;
        cache->trunk_h = trunk_state.h;
        cache->reduce_relu = std::move(reduce);
        cache->pred = pred;
        cache->mask_opt = std::move(mask_opt);
        cache->mask_sar = std::move(mask_sar);
        cache->mask_trunk = std::move(mask_trunk);
    }
}

template <typename T>
void Engine<T>::backward(const WindowTensor& win, const Cache& cache,
                         const std::vector<T>& dpred, NetWeights<T>& grads) {
    const ModelDescriptor& d = w_.arch;
    if (cache.pred.empty()) fail("backward requires a retained forward context");
    const int rows = cache.rows, cols = cache.cols;
    const std::size_t hw = std::size_t(rows) * cols;
    if (dpred.size() != hw) fail("upstream gradient shape mismatch");
    const std::size_t bfhw = std::size_t(d.branch_filters) * hw;
    const std::size_t tfhw = std::size_t(d.trunk_filters) * hw;

    // Head: sigmoid then 1x1 conv.
    std::vector<T> dhead(hw);
    for (std::size_t p = 0; p < hw; ++p)
        dhead[p] = dpred[p] * cache.pred[p] * (T(1) - cache.pred[p]);
    conv_backward_weights<T, T>(grads.head, cache.reduce_relu.data(), dhead.data(), rows, cols,
                                ws_);
    std::vector<T> dreduce(std::size_t(d.reduce_filters) * hw);
    conv_backward_data(w_.head, dhead.data(), rows, cols, dreduce.data(), ws_);
    for (std::size_t p = 0; p < dreduce.size(); ++p)
        if (cache.reduce_relu[p] <= T(0)) dreduce[p] = T(0);

    conv_backward_weights<T, T>(grads.reduce_conv, cache.trunk_h.data(), dreduce.data(), rows,
                                cols, ws_);
    std::vector<T> dh_trunk(tfhw);
    conv_backward_data(w_.reduce_conv, dreduce.data(), rows, cols, dh_trunk.data(), ws_);

    std::vector<T> dc_trunk(tfhw, T(0));
    std::vector<T> dtx(tfhw);
    lstm_step_backward<T>(w_.trunk_lstm, grads.trunk_lstm, cache.trunk_x.data(), nullptr,
                          nullptr, cache.trunk_gates, cache.trunk_c, dh_trunk, dc_trunk,
                          dtx.data(), rows, cols, /*first_step=*/true);
    if (!cache.mask_trunk.empty())
        for (std::size_t p = 0; p < tfhw; ++p) dtx[p] *= cache.mask_trunk[p];
    for (std::size_t p = 0; p < tfhw; ++p)
        if (cache.trunk_x[p] <= T(0)) dtx[p] = T(0);

    conv_backward_weights<T, T>(grads.trunk_conv, cache.concat.data(), dtx.data(), rows, cols,
                                ws_);
    std::vector<T> dconcat(2 * bfhw);
    conv_backward_data(w_.trunk_conv, dtx.data(), rows, cols, dconcat.data(), ws_);

    // Branches, backward through time.
    std::vector<T> dh(bfhw), dc(bfhw), dx(bfhw);
    for (int branch = 0; branch < 2; ++branch) {
        const bool is_opt = branch == 0;
        const BranchCache& bc = is_opt ? cache.opt : cache.sar;
        const LstmW<T>& lstm = is_opt ? w_.opt_lstm : w_.sar_lstm;
        LstmW<T>& lstm_g = is_opt ? grads.opt_lstm : grads.sar_lstm;
        const ConvW<T>& conv = is_opt ? w_.opt_conv : w_.sar_conv;
        ConvW<T>& conv_g = is_opt ? grads.opt_conv : grads.sar_conv;
        const std::vector<T>& mask = is_opt ? cache.mask_opt : cache.mask_sar;

        const T* dsrc = dconcat.data() + (is_opt ? 0 : bfhw);
        std::copy(dsrc, dsrc + bfhw, dh.begin());
        std::fill(dc.begin(), dc.end(), T(0));
        const int steps = int(bc.x.size());
        for (int vt = steps - 1; vt >= 0; --vt) {
            const bool first = vt == 0;
            lstm_step_backward<T>(lstm, lstm_g, bc.x[vt].data(),
                                  first ? nullptr : bc.h[vt - 1].data(),
                                  first ? nullptr : bc.c[vt - 1].data(), bc.gates[vt], bc.c[vt],
                                  dh, dc, dx.data(), rows, cols, first);
            if (!mask.empty())
                for (std::size_t p = 0; p < bfhw; ++p) dx[p] *= mask[p];
            for (std::size_t p = 0; p < bfhw; ++p)
                if (bc.x[vt][p] <= T(0)) dx[p] = T(0);
            const int t = cache.valid_steps[vt];
            const float* frame = win.frame(t);
            const float* in = is_opt ? frame + std::size_t(d.sar_bands) * hw : frame;
            conv_backward_weights<T, float>(conv_g, in, dx.data(), rows, cols, ws_);
        }
    }
}

}  // namespace deltamon::detail
