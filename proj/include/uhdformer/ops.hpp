#pragma once

#include <optional>
#include <span>
#include <vector>

#include "uhdformer/tape.hpp"
#include "uhdformer/tensor.hpp"

namespace uhd {

// Differentiable primitives. Every op allocates a fresh output tensor and,
// when an active tape tracks at least one input, records a backward closure.
// Shapes are checked strictly: no broadcasting beyond the scalar forms
// (scale / cmul).

enum class PoolKind { Max, Mean };
enum class SoftmaxAxis { Channel, Last };

struct ComplexPair {
    Tensor re;
    Tensor im;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x * c with a plain (non-learnable) constant.
Tensor cmul(const Tensor& x, double c);
// x * s with a single-element tensor s; s receives a gradient.
Tensor scale(const Tensor& x, const Tensor& s);
// 1/s for a single-element tensor, with a magnitude floor guarding the
// division. Inside the floored region the derivative is defined as 0.
Tensor recip(const Tensor& s, double floor = 1e-8);
// tanh-approximation GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
Tensor gelu(const Tensor& x);
Tensor abs_val(const Tensor& x);  // d|0| defined as 0

// ---- reductions (output shape (1,1,1,1)) ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- structure ----
// Cross-correlation (no kernel flip). w is (out_c, in_c/groups, kh, kw),
// bias (1, out_c, 1, 1) when present; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b,
              int64_t stride = 1, int64_t pad = 0, int64_t groups = 1);

// Normalization over the channel axis at each (n,h,w) position, population
// variance. gamma/beta are (1,c,1,1).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

Tensor softmax(const Tensor& x, SoftmaxAxis axis);

// Space-to-channel rearrangement: (n,c,h,w) -> (n,c*s*s,h/s,w/s) with output
// channel c*s*s + si*s + sj holding sub-pixel (si,sj) of input channel c.
Tensor pixel_unshuffle(const Tensor& x, int64_t s);
// Exact inverse of pixel_unshuffle.
Tensor pixel_shuffle(const Tensor& x, int64_t s);

// Non-overlapping pooling, kernel = stride = k. Max-pool gradient goes to
// the first (row-major) maximal element of each window.
Tensor pool2d(const Tensor& x, PoolKind kind, int64_t k);

// Batched matrix product over the leading (n,c) dims: (n,c,p,q)x(n,c,q,r) ->
// (n,c,p,r). trans_a/trans_b transpose the trailing two dims of the
// respective operand. Plain 2-D matrices are (1,1,p,q).
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

Tensor concat_channels(std::span<const Tensor> xs);
std::vector<Tensor> split_channels(const Tensor& x, std::span<const int64_t> sizes);

// out channel j = x channel idx[j]; duplicates allowed, gradients sum into
// the source channels.
Tensor index_select_channels(const Tensor& x, std::span<const int64_t> idx);
// Per-sample variant: idx[i] selects channels for sample i. All index lists
// must have equal length.
Tensor gather_channels(const Tensor& x, const std::vector<std::vector<int64_t>>& idx);

// Same data, new extents (numel preserved). Copies, so no aliasing.
Tensor reshape(const Tensor& x, const Shape& shape);

// Full 2-D DFT per (n,c) plane, computed row-column. Both outputs are
// recorded, so gradients flow through re and im independently.
ComplexPair dft2(const Tensor& x);

// ---- untaped helpers ----
// Elementwise clamp to [0,1]; not differentiable, for IO/metric paths.
Tensor clamp01(const Tensor& x);

namespace hooks {
// Fault-injection switch used by the self-test's negative control: flips the
// sign of conv2d's weight gradient. Never set outside verification code.
extern bool corrupt_conv_weight_grad;
}  // namespace hooks

}  // namespace uhd
