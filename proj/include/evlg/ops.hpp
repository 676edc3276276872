#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "evlg/tensor.hpp"

namespace evlg {

enum class Activation { Gelu, Tanh };

// 2-D products and layout.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);

// a: [rows x cols], bias: [cols], added to every row.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
// sum((a - b)^2)
Tensor squared_error(const Tensor& a, const Tensor& b);

Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor activate(const Tensor& a, Activation kind);

// Normalizes over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& a, Shape shape);
// Concatenation along axis 0; trailing extents must agree.
Tensor concat(std::span<const Tensor> parts);
// Concatenation of 2-D tensors along axis 1.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);

// Rows of table [K x d] selected by ids -> [ids.size() x d]. Gradient flows
// into the selected rows only.
Tensor embed_lookup(const Tensor& table, std::span<const int> ids);

// Row-wise softmax over entries where allow != 0; others get probability 0.
Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> allow);

// Sum over rows of -log softmax(logits[row])[target[row]]. A 1-D tensor is
// treated as a single row.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);
Tensor softmax_cross_entropy(const Tensor& logits, int target);

// Identity forward, no gradient.
Tensor stop_gradient(const Tensor& a);
// Forward value of `quantized`, gradient routed entirely to `input`.
Tensor straight_through(const Tensor& input, const Tensor& quantized);

struct ConvGeometry {
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;

    std::size_t output_extent(std::size_t input_extent) const;
};

// x: [B x H x W x C] -> patches [B*Ho*Wo x kernel*kernel*C], zero padded.
Tensor im2col(const Tensor& x, const ConvGeometry& geometry);
// x: [B x H x W x C] -> [B x H*f x W*f x C]
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

}  // namespace evlg
