#include "evlg/optim.hpp"

#include <cmath>
#include <map>

#include "evlg/errors.hpp"

namespace evlg {

Adam::Adam(ParameterList params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& [name, tensor] : params_) {
        first_.emplace_back(tensor.size(), 0.0);
        second_.emplace_back(tensor.size(), 0.0);
    }
}

void Adam::step() {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor tensor = params_[p].second;
        if (!tensor.has_grad()) continue;
        auto grad = tensor.grad();
        auto data = tensor.mutable_data();
        auto& m = first_[p];
        auto& v = second_[p];
        for (std::size_t i = 0; i < data.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            data[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
    zero_grad();
}

void Adam::zero_grad() { zero_grads(params_); }

ParameterList Adam::state() const {
    ParameterList out;
    out.emplace_back("step", Tensor::scalar(static_cast<double>(steps_)));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const Shape& shape = params_[p].second.shape();
        out.emplace_back("m." + params_[p].first, Tensor::from_data(shape, first_[p]));
        out.emplace_back("v." + params_[p].first, Tensor::from_data(shape, second_[p]));
    }
    return out;
}

void Adam::load_state(const ParameterList& state) {
    std::map<std::string, Tensor> by_name(state.begin(), state.end());
    auto find = [&](const std::string& name) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointError("optimizer state is missing '" + name + "'");
        return it->second;
    };
    steps_ = static_cast<std::uint64_t>(find("step").item());
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const auto& m = find("m." + params_[p].first);
        const auto& v = find("v." + params_[p].first);
        if (m.shape() != params_[p].second.shape() || v.shape() != params_[p].second.shape()) {
            throw CheckpointError("optimizer state shape mismatch for '" + params_[p].first + "'");
        }
        first_[p].assign(m.data().begin(), m.data().end());
        second_[p].assign(v.data().begin(), v.data().end());
    }
}

}  // namespace evlg
