#pragma once

#include <string>
#include <utility>
#include <vector>

#include "evlg/ops.hpp"
#include "evlg/rng.hpp"
#include "evlg/tensor.hpp"

namespace evlg {

using NamedTensor = std::pair<std::string, Tensor>;
using ParameterList = std::vector<NamedTensor>;

// Appends `items` to `out` with `prefix.` prepended to each name.
void append_prefixed(ParameterList& out, const std::string& prefix, const ParameterList& items);

// Uniform init in [-bound, bound].
Tensor init_uniform(Shape shape, double bound, Rng& rng);

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);

    // x: [rows x in] -> [rows x out]
    Tensor operator()(const Tensor& x) const;
    ParameterList parameters() const;
    Linear clone() const;
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;

    LayerNormParams() = default;
    explicit LayerNormParams(std::size_t d);

    Tensor operator()(const Tensor& x) const;
    ParameterList parameters() const;
};

// NHWC convolution realized as im2col followed by a matmul.
struct Conv2d {
    Tensor weight;  // [kernel*kernel*in x out]
    Tensor bias;    // [out]
    ConvGeometry geometry;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, ConvGeometry geometry, Rng& rng);

    // x: [B x H x W x in] -> [B x Ho x Wo x out]
    Tensor operator()(const Tensor& x) const;
    ParameterList parameters() const;
    Conv2d clone() const;
};

// Copies values from `src` into the matching tensors of `dst` (same names and shapes).
void copy_parameter_values(const ParameterList& src, const ParameterList& dst);

void zero_grads(const ParameterList& params);

}  // namespace evlg
