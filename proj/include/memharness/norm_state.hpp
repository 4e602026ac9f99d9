// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <vector>

namespace memh {

struct LayerNormStats {
    Eigen::VectorXd running_mean;
    Eigen::VectorXd running_var;
};

// Per-feature running statistics for every normalization layer of a model,
// updated only in train mode. `rho` is the running-update coefficient:
// new = (1 - rho) * old + rho * batch.
struct NormState {
    std::vector<LayerNormStats> layers;
    double rho = 0.1;

    static constexpr double kEps = 1e-5;

    bool empty() const { return layers.empty(); }
};

}  // namespace memh
