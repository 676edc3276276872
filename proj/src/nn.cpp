#include "evlg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "evlg/errors.hpp"

namespace evlg {

void append_prefixed(ParameterList& out, const std::string& prefix, const ParameterList& items) {
    for (const auto& [name, tensor] : items) out.emplace_back(prefix + "." + name, tensor);
}

Tensor init_uniform(Shape shape, double bound, Rng& rng) {
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(init_uniform({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias(Tensor::zeros({out}, true)) {}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

ParameterList Linear::parameters() const { return {{"weight", weight}, {"bias", bias}}; }

Linear Linear::clone() const {
    Linear out;
    out.weight = weight.clone(true);
    out.bias = bias.clone(true);
    return out;
}

LayerNormParams::LayerNormParams(std::size_t d) : gamma(Tensor::full({d}, 1.0, true)), beta(Tensor::zeros({d}, true)) {}

Tensor LayerNormParams::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

ParameterList LayerNormParams::parameters() const { return {{"gamma", gamma}, {"beta", beta}}; }

Conv2d::Conv2d(std::size_t in, std::size_t out, ConvGeometry geo, Rng& rng)
    : weight(init_uniform({geo.kernel * geo.kernel * in, out},
                          std::sqrt(6.0 / static_cast<double>(geo.kernel * geo.kernel * in)), rng)),
      bias(Tensor::zeros({out}, true)),
      geometry(geo),
      in_channels(in),
      out_channels(out) {}

Tensor Conv2d::operator()(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(3) != in_channels) {
        throw DimensionError("conv2d: expected [B x H x W x " + std::to_string(in_channels) + "], got " +
                             shape_to_string(x.shape()));
    }
    const std::size_t batch = x.dim(0);
    const std::size_t out_h = geometry.output_extent(x.dim(1));
    const std::size_t out_w = geometry.output_extent(x.dim(2));
    Tensor y = add_bias(matmul(im2col(x, geometry), weight), bias);
    return reshape(y, {batch, out_h, out_w, out_channels});
}

ParameterList Conv2d::parameters() const { return {{"weight", weight}, {"bias", bias}}; }

Conv2d Conv2d::clone() const {
    Conv2d out = *this;
    out.weight = weight.clone(true);
    out.bias = bias.clone(true);
    return out;
}

void copy_parameter_values(const ParameterList& src, const ParameterList& dst) {
    if (src.size() != dst.size()) throw ContractError("parameter lists differ in length");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape()) {
            throw ContractError("parameter mismatch: " + src[i].first + " vs " + dst[i].first);
        }
        auto out = Tensor(dst[i].second).mutable_data();
        std::copy(src[i].second.data().begin(), src[i].second.data().end(), out.begin());
    }
}

void zero_grads(const ParameterList& params) {
    for (const auto& [name, tensor] : params) Tensor(tensor).zero_grad();
}

}  // namespace evlg
