#pragma once

#include <cstdint>
#include <vector>

#include "evlg/nn.hpp"

namespace evlg {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam over a fixed, ordered parameter list. Moment buffers are indexed by
// position in that list, so the list must be identical across save/load.
class Adam {
   public:
    Adam() = default;
    Adam(ParameterList params, AdamConfig config);

    // Applies one update from the accumulated gradients, then clears them.
    void step();
    void zero_grad();

    const ParameterList& parameters() const { return params_; }
    const AdamConfig& config() const { return config_; }
    std::uint64_t steps_taken() const { return steps_; }

    // Optimizer state as named tensors (m.<name>, v.<name>, step) for checkpoints.
    ParameterList state() const;
    void load_state(const ParameterList& state);

   private:
    ParameterList params_;
    AdamConfig config_;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
    std::uint64_t steps_ = 0;
};

}  // namespace evlg
