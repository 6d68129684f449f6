#pragma once

#include <cstdint>
#include <vector>

#include "tacnet/tensor.hpp"

namespace tacnet::ops {

enum class Activation { kRelu, kSigmoid, kTanh };

/// Cross-correlation (no kernel flip). input [B,Cin,H,W], kernel [Cout,Cin,kh,kw],
/// bias [Cout] or undefined. Output extent (H + 2*padding - kh) / stride + 1 must
/// divide exactly.
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride = 1,
              int padding = 0);

Tensor activation(Graph& g, const Tensor& input, Activation kind);
inline Tensor relu(Graph& g, const Tensor& x) { return activation(g, x, Activation::kRelu); }
inline Tensor sigmoid(Graph& g, const Tensor& x) { return activation(g, x, Activation::kSigmoid); }

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
/// Scalar-valued sum of all elements, shape [1].
Tensor sum(Graph& g, const Tensor& x);
/// Sum of squares, shape [1].
Tensor sum_squares(Graph& g, const Tensor& x);

/// Row-wise softmax over the last axis, max-subtracted.
Tensor softmax_lastdim(Graph& g, const Tensor& x);

/// Channel dropout. In training mode each (batch, channel) plane is zeroed with
/// probability p and survivors are scaled by 1/(1-p); otherwise identity
/// (the input handle is returned unchanged).
Tensor dropout2d(Graph& g, const Tensor& x, double p, bool training, std::uint64_t seed);
/// Keep-mask replayed by dropout2d for a given seed: one entry per (b, c), true = kept.
std::vector<bool> dropout2d_mask(std::size_t batch, std::size_t channels, double p, std::uint64_t seed);

/// Concatenation along axis 1 of 4-D tensors with equal B, H, W.
Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);
Tensor slice_channels(Graph& g, const Tensor& x, std::size_t start, std::size_t count);
/// Concatenation along axis 0.
Tensor concat_batch(Graph& g, const std::vector<Tensor>& parts);
Tensor slice_batch(Graph& g, const Tensor& x, std::size_t start, std::size_t count);

/// Forward identity whose backward multiplies the incoming gradient by `scale`.
/// Used to inject deliberate gradient faults into checking suites.
Tensor scale_gradient(Graph& g, const Tensor& x, double scale);

}  // namespace tacnet::ops
