/*
   Copyright 2026 The topolabel Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

// Small encoder-decoder segmentation network with skip connections.
//
//   input 4 x H x W
//   enc0  conv3x3(4  -> w)  relu          H
//   pool  avg 2x2
//   enc1  conv3x3(w  -> 2w) relu          H/2
//   pool
//   enc2  conv3x3(2w -> 4w) relu          H/4
//   pool
//   mid   conv3x3(4w -> 4w) relu          H/8
//   up x2 (nearest), concat enc2
//   dec2  conv3x3(8w -> 2w) relu          H/4
//   up x2, concat enc1
//   dec1  conv3x3(4w -> w)  relu          H/2
//   up x2, concat enc0
//   dec0  conv3x3(2w -> w)  relu          H
//   head  conv1x1(w  -> 3)                logits {none, A, B}
//
// Parameters live in one flat vector in the order above; each conv stores its
// weights as [out][in][ky][kx] followed by its bias [out].

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdlib>
#include <new>
#include <random>
#include <span>

#include "topolabel/common.hpp"

namespace topolabel::nn {

/// Cache-line aligned storage. Eigen picks its vectorized paths, and with
/// them the summation order, from pointer alignment; fixing the alignment of
/// every buffer makes results bit-reproducible from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr size_t kAlignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(size_t n) {
        size_t bytes = (n * sizeof(T) + kAlignment - 1) / kAlignment * kAlignment;
        void* p = std::aligned_alloc(kAlignment, std::max(bytes, kAlignment));
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, size_t) { std::free(p); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename S>
using Buffer = std::vector<S, AlignedAllocator<S>>;

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatrixMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatrixMap = Eigen::Map<const RowMatrix<S>>;

inline constexpr int kInputChannels = 4;
inline constexpr int kOutputClasses = 3;

struct ConvShape {
    int in = 0;
    int out = 0;
    int kernel = 3;
    size_t weight_offset = 0;
    size_t bias_offset = 0;

    size_t col_rows() const { return size_t(in) * kernel * kernel; }
    size_t weight_count() const { return size_t(out) * col_rows(); }
};

enum Layer { kEnc0, kEnc1, kEnc2, kMid, kDec2, kDec1, kDec0, kHead, kLayerCount };

inline constexpr std::array<const char*, kLayerCount> kLayerNames = {"enc0", "enc1", "enc2", "mid",
                                                                     "dec2", "dec1", "dec0", "head"};

struct Architecture {
    int base_width = 16;
    std::array<ConvShape, kLayerCount> layers{};
    size_t parameter_count = 0;

    explicit Architecture(int width = 16) : base_width(width) {
        if (width < 1) throw ValidationError("base width must be positive");
        const int w = width;
        const std::array<std::array<int, 3>, kLayerCount> dims = {{{kInputChannels, w, 3},
                                                                   {w, 2 * w, 3},
                                                                   {2 * w, 4 * w, 3},
                                                                   {4 * w, 4 * w, 3},
                                                                   {8 * w, 2 * w, 3},
                                                                   {4 * w, w, 3},
                                                                   {2 * w, w, 3},
                                                                   {w, kOutputClasses, 1}}};
        size_t offset = 0;
        for (int l = 0; l < kLayerCount; ++l) {
            ConvShape& c = layers[l];
            c.in = dims[l][0];
            c.out = dims[l][1];
            c.kernel = dims[l][2];
            c.weight_offset = offset;
            offset += c.weight_count();
            c.bias_offset = offset;
            offset += size_t(c.out);
        }
        parameter_count = offset;
    }

    std::string descriptor() const {
        return "unet3-avgpool-nearest-w" + std::to_string(base_width) + "-in4-out3";
    }
};

namespace detail {

// col[(c*k + ky)*k + kx][y*W + x] = in[c][y+ky-pad][x+kx-pad], zero outside.
template <typename S>
void im2col(const S* in, int channels, int h, int w, int k, S* col) {
    const int pad = k / 2;
    const size_t hw = size_t(h) * w;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                S* row = col + (size_t(c * k + ky) * k + kx) * hw;
                const S* plane = in + size_t(c) * hw;
                for (int y = 0; y < h; ++y) {
                    int iy = y + ky - pad;
                    S* dst = row + size_t(y) * w;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + w, S(0));
                        continue;
                    }
                    const S* src = plane + size_t(iy) * w;
                    int dx = kx - pad;
                    int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int x = 0; x < x0; ++x) dst[x] = S(0);
                    for (int x = x0; x < x1; ++x) dst[x] = src[x + dx];
                    for (int x = x1; x < w; ++x) dst[x] = S(0);
                }
            }
}

template <typename S>
void col2im_add(const S* col, int channels, int h, int w, int k, S* out) {
    const int pad = k / 2;
    const size_t hw = size_t(h) * w;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const S* row = col + (size_t(c * k + ky) * k + kx) * hw;
                S* plane = out + size_t(c) * hw;
                for (int y = 0; y < h; ++y) {
                    int iy = y + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const S* src = row + size_t(y) * w;
                    S* dst = plane + size_t(iy) * w;
                    int dx = kx - pad;
                    int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int x = x0; x < x1; ++x) dst[x + dx] += src[x];
                }
            }
}

template <typename S>
void avg_pool2(const S* in, int channels, int h, int w, S* out) {
    const int oh = h / 2, ow = w / 2;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const S* p = in + (size_t(c) * h + 2 * y) * w + 2 * x;
                out[(size_t(c) * oh + y) * ow + x] = S(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
            }
}

template <typename S>
void avg_pool2_backward_add(const S* dout, int channels, int h, int w, S* din) {
    const int oh = h / 2, ow = w / 2;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                S g = S(0.25) * dout[(size_t(c) * oh + y) * ow + x];
                S* p = din + (size_t(c) * h + 2 * y) * w + 2 * x;
                p[0] += g, p[1] += g, p[w] += g, p[w + 1] += g;
            }
}

// in: channels x h x w  ->  out: channels x 2h x 2w
template <typename S>
void upsample2(const S* in, int channels, int h, int w, S* out) {
    const int oh = 2 * h, ow = 2 * w;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < oh; ++y) {
            const S* src = in + (size_t(c) * h + y / 2) * w;
            S* dst = out + (size_t(c) * oh + y) * ow;
            for (int x = 0; x < ow; ++x) dst[x] = src[x / 2];
        }
}

template <typename S>
void upsample2_backward(const S* dout, int channels, int h, int w, S* din) {
    const int oh = 2 * h, ow = 2 * w;
    std::fill(din, din + size_t(channels) * h * w, S(0));
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < oh; ++y) {
            const S* src = dout + (size_t(c) * oh + y) * ow;
            S* dst = din + (size_t(c) * h + y / 2) * w;
            for (int x = 0; x < ow; ++x) dst[x / 2] += src[x];
        }
}

template <typename S>
void relu_inplace(S* data, size_t n) {
    for (size_t i = 0; i < n; ++i) data[i] = data[i] > S(0) ? data[i] : S(0);
}

// Zeroes gradient where the forward activation was clipped.
template <typename S>
void relu_backward(const S* activation, S* grad, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (!(activation[i] > S(0))) grad[i] = S(0);
}

}  // namespace detail

/// Forward-pass buffers, reusable across calls of the same spatial size.
template <typename S>
struct Workspace {
    int h = 0, w = 0;
    Buffer<S> input;
    std::array<Buffer<S>, kLayerCount> col;
    Buffer<S> e0, p0, e1, p1, e2, p2, mid, c2, d2, c1, d1, c0, d0, logits;
    // Backward scratch.
    Buffer<S> g_a, g_b, g_c, g_col, g_e0, g_e1, g_e2, g_logits, g_params;
};

template <typename S>
class UNet {
   public:
    explicit UNet(int base_width = 16) : arch_(base_width), params_(arch_.parameter_count, S(0)) {}

    const Architecture& architecture() const { return arch_; }
    std::span<S> parameters() { return params_; }
    std::span<const S> parameters() const { return params_; }
    size_t parameter_count() const { return params_.size(); }

    /// He-normal weights, zero biases.
    void initialize(uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (const ConvShape& c : arch_.layers) {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(c.col_rows())));
            for (size_t i = 0; i < c.weight_count(); ++i) params_[c.weight_offset + i] = S(dist(rng));
            std::fill_n(params_.begin() + std::ptrdiff_t(c.bias_offset), c.out, S(0));
        }
    }

    /// Logits (3 x h x w) for a 4 x h x w input; `ws` keeps what backward needs.
    const Buffer<S>& forward(std::span<const S> input, int h, int w, Workspace<S>& ws) const {
        if (h % 8 != 0 || w % 8 != 0 || h < 8 || w < 8) throw ValidationError("input size must be a multiple of 8");
        if (input.size() != size_t(kInputChannels) * h * w) throw ValidationError("input shape mismatch");
        const int bw = arch_.base_width;
        const size_t hw0 = size_t(h) * w, hw1 = hw0 / 4, hw2 = hw0 / 16, hw3 = hw0 / 64;
        ws.h = h, ws.w = w;
        ws.input.assign(input.begin(), input.end());
        resize(ws.e0, bw * hw0), resize(ws.p0, bw * hw1);
        resize(ws.e1, 2 * bw * hw1), resize(ws.p1, 2 * bw * hw2);
        resize(ws.e2, 4 * bw * hw2), resize(ws.p2, 4 * bw * hw3);
        resize(ws.mid, 4 * bw * hw3);
        resize(ws.c2, 8 * bw * hw2), resize(ws.d2, 2 * bw * hw2);
        resize(ws.c1, 4 * bw * hw1), resize(ws.d1, bw * hw1);
        resize(ws.c0, 2 * bw * hw0), resize(ws.d0, bw * hw0);
        resize(ws.logits, kOutputClasses * hw0);

        conv(kEnc0, ws.input.data(), h, w, ws, ws.e0.data(), true);
        detail::avg_pool2(ws.e0.data(), bw, h, w, ws.p0.data());
        conv(kEnc1, ws.p0.data(), h / 2, w / 2, ws, ws.e1.data(), true);
        detail::avg_pool2(ws.e1.data(), 2 * bw, h / 2, w / 2, ws.p1.data());
        conv(kEnc2, ws.p1.data(), h / 4, w / 4, ws, ws.e2.data(), true);
        detail::avg_pool2(ws.e2.data(), 4 * bw, h / 4, w / 4, ws.p2.data());
        conv(kMid, ws.p2.data(), h / 8, w / 8, ws, ws.mid.data(), true);

        detail::upsample2(ws.mid.data(), 4 * bw, h / 8, w / 8, ws.c2.data());
        std::copy(ws.e2.begin(), ws.e2.end(), ws.c2.begin() + std::ptrdiff_t(4 * bw * hw2));
        conv(kDec2, ws.c2.data(), h / 4, w / 4, ws, ws.d2.data(), true);

        detail::upsample2(ws.d2.data(), 2 * bw, h / 4, w / 4, ws.c1.data());
        std::copy(ws.e1.begin(), ws.e1.end(), ws.c1.begin() + std::ptrdiff_t(2 * bw * hw1));
        conv(kDec1, ws.c1.data(), h / 2, w / 2, ws, ws.d1.data(), true);

        detail::upsample2(ws.d1.data(), bw, h / 2, w / 2, ws.c0.data());
        std::copy(ws.e0.begin(), ws.e0.end(), ws.c0.begin() + std::ptrdiff_t(bw * hw0));
        conv(kDec0, ws.c0.data(), h, w, ws, ws.d0.data(), true);

        conv(kHead, ws.d0.data(), h, w, ws, ws.logits.data(), false);
        return ws.logits;
    }

    /// Accumulates parameter gradients for dL/dlogits into `grad_out`.
    /// `ws` must hold the forward pass that produced the logits.
    void backward(std::span<const S> dlogits_in, Workspace<S>& ws, std::span<S> grad_out) const {
        const int h = ws.h, w = ws.w, bw = arch_.base_width;
        const size_t hw0 = size_t(h) * w, hw1 = hw0 / 4, hw2 = hw0 / 16, hw3 = hw0 / 64;
        if (grad_out.size() != params_.size()) throw ValidationError("gradient buffer size mismatch");
        if (dlogits_in.size() != size_t(kOutputClasses) * hw0) throw ValidationError("logit gradient shape mismatch");
        // Work on aligned copies; the caller's buffers may sit anywhere.
        ws.g_logits.assign(dlogits_in.begin(), dlogits_in.end());
        ws.g_params.assign(params_.size(), S(0));
        const Buffer<S>& dlogits = ws.g_logits;
        std::span<S> grad(ws.g_params);
        auto& ga = ws.g_a;
        auto& gb = ws.g_b;
        auto& gc = ws.g_c;

        // head -> d0
        resize(ga, bw * hw0);
        std::fill(ga.begin(), ga.end(), S(0));
        conv_backward(kHead, ws.d0.data(), h, w, dlogits.data(), ws, grad, ga.data());
        detail::relu_backward(ws.d0.data(), ga.data(), ga.size());

        // dec0 -> c0 = [up(d1), e0]
        resize(gb, 2 * bw * hw0);
        std::fill(gb.begin(), gb.end(), S(0));
        conv_backward(kDec0, nullptr, h, w, ga.data(), ws, grad, gb.data());
        auto& g_e0 = ws.g_e0;
        g_e0.assign(gb.begin() + std::ptrdiff_t(bw * hw0), gb.end());
        resize(gc, bw * hw1);
        detail::upsample2_backward(gb.data(), bw, h / 2, w / 2, gc.data());
        detail::relu_backward(ws.d1.data(), gc.data(), gc.size());

        // dec1 -> c1 = [up(d2), e1]
        resize(gb, 4 * bw * hw1);
        std::fill(gb.begin(), gb.end(), S(0));
        conv_backward(kDec1, nullptr, h / 2, w / 2, gc.data(), ws, grad, gb.data());
        auto& g_e1 = ws.g_e1;
        g_e1.assign(gb.begin() + std::ptrdiff_t(2 * bw * hw1), gb.end());
        resize(gc, 2 * bw * hw2);
        detail::upsample2_backward(gb.data(), 2 * bw, h / 4, w / 4, gc.data());
        detail::relu_backward(ws.d2.data(), gc.data(), gc.size());

        // dec2 -> c2 = [up(mid), e2]
        resize(gb, 8 * bw * hw2);
        std::fill(gb.begin(), gb.end(), S(0));
        conv_backward(kDec2, nullptr, h / 4, w / 4, gc.data(), ws, grad, gb.data());
        auto& g_e2 = ws.g_e2;
        g_e2.assign(gb.begin() + std::ptrdiff_t(4 * bw * hw2), gb.end());
        resize(gc, 4 * bw * hw3);
        detail::upsample2_backward(gb.data(), 4 * bw, h / 8, w / 8, gc.data());
        detail::relu_backward(ws.mid.data(), gc.data(), gc.size());

        // mid -> p2 -> e2
        resize(gb, 4 * bw * hw3);
        std::fill(gb.begin(), gb.end(), S(0));
        conv_backward(kMid, nullptr, h / 8, w / 8, gc.data(), ws, grad, gb.data());
        detail::avg_pool2_backward_add(gb.data(), 4 * bw, h / 4, w / 4, g_e2.data());
        detail::relu_backward(ws.e2.data(), g_e2.data(), g_e2.size());

        // enc2 -> p1 -> e1
        resize(gb, 2 * bw * hw2);
        std::fill(gb.begin(), gb.end(), S(0));
        conv_backward(kEnc2, nullptr, h / 4, w / 4, g_e2.data(), ws, grad, gb.data());
        detail::avg_pool2_backward_add(gb.data(), 2 * bw, h / 2, w / 2, g_e1.data());
        detail::relu_backward(ws.e1.data(), g_e1.data(), g_e1.size());

        // enc1 -> p0 -> e0
        resize(gb, bw * hw1);
        std::fill(gb.begin(), gb.end(), S(0));
        conv_backward(kEnc1, nullptr, h / 2, w / 2, g_e1.data(), ws, grad, gb.data());
        detail::avg_pool2_backward_add(gb.data(), bw, h, w, g_e0.data());
        detail::relu_backward(ws.e0.data(), g_e0.data(), g_e0.size());

        conv_backward(kEnc0, nullptr, h, w, g_e0.data(), ws, grad, nullptr);
        for (size_t i = 0; i < grad_out.size(); ++i) grad_out[i] += grad[i];
    }

   private:
    static void resize(Buffer<S>& v, size_t n) {
        if (v.size() != n) v.resize(n);
    }

    void conv(int layer, const S* in, int h, int w, Workspace<S>& ws, S* out, bool relu) const {
        const ConvShape& c = arch_.layers[layer];
        const size_t hw = size_t(h) * w;
        const S* cols = in;
        if (c.kernel > 1) {
            resize(ws.col[layer], c.col_rows() * hw);
            detail::im2col(in, c.in, h, w, c.kernel, ws.col[layer].data());
            cols = ws.col[layer].data();
        }
        ConstMatrixMap<S> weights(params_.data() + c.weight_offset, c.out, Eigen::Index(c.col_rows()));
        ConstMatrixMap<S> colm(cols, Eigen::Index(c.col_rows()), Eigen::Index(hw));
        MatrixMap<S> outm(out, c.out, Eigen::Index(hw));
        outm.noalias() = weights * colm;
        for (int o = 0; o < c.out; ++o) outm.row(o).array() += params_[c.bias_offset + size_t(o)];
        if (relu) detail::relu_inplace(out, size_t(c.out) * hw);
    }

    // `in` is only needed for 1x1 layers (no stored columns).
    void conv_backward(int layer, const S* in, int h, int w, const S* dout, Workspace<S>& ws, std::span<S> grad,
                       S* din) const {
        const ConvShape& c = arch_.layers[layer];
        const size_t hw = size_t(h) * w;
        const S* cols = c.kernel > 1 ? ws.col[layer].data() : in;
        ConstMatrixMap<S> colm(cols, Eigen::Index(c.col_rows()), Eigen::Index(hw));
        ConstMatrixMap<S> doutm(dout, c.out, Eigen::Index(hw));
        MatrixMap<S> dweights(grad.data() + c.weight_offset, c.out, Eigen::Index(c.col_rows()));
        dweights.noalias() += doutm * colm.transpose();
        for (int o = 0; o < c.out; ++o) grad[c.bias_offset + size_t(o)] += doutm.row(o).sum();
        if (!din) return;
        ConstMatrixMap<S> weights(params_.data() + c.weight_offset, c.out, Eigen::Index(c.col_rows()));
        if (c.kernel == 1) {
            MatrixMap<S> dinm(din, c.in, Eigen::Index(hw));
            dinm.noalias() += weights.transpose() * doutm;
            return;
        }
        resize(ws.g_col, c.col_rows() * hw);
        MatrixMap<S> dcol(ws.g_col.data(), Eigen::Index(c.col_rows()), Eigen::Index(hw));
        dcol.noalias() = weights.transpose() * doutm;
        detail::col2im_add(ws.g_col.data(), c.in, h, w, c.kernel, din);
    }

    Architecture arch_;
    Buffer<S> params_;
};

/// Class-weighted softmax cross-entropy over all bins of one sample.
/// Writes dL/dlogits scaled by `grad_scale`; returns the weighted NLL sum.
template <typename S>
double weighted_cross_entropy(std::span<const S> logits, std::span<const uint8_t> target,
                              const std::array<double, kOutputClasses>& class_weight, double grad_scale,
                              std::span<S> dlogits) {
    const size_t n = target.size();
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double z[kOutputClasses];
        double zmax = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < kOutputClasses; ++k) zmax = std::max(zmax, z[k] = double(logits[k * n + i]));
        double sum = 0.0;
        for (double& v : z) sum += (v = std::exp(v - zmax));
        const int y = target[i];
        const double wy = class_weight[y];
        total += wy * -std::log(z[y] / sum);
        if (!dlogits.empty())
            for (int k = 0; k < kOutputClasses; ++k)
                dlogits[k * n + i] = S(grad_scale * wy * (z[k] / sum - (k == y ? 1.0 : 0.0)));
    }
    return total;
}

}  // namespace topolabel::nn
