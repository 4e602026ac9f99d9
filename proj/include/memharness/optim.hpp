// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <utility>
#include <variant>

#include "memharness/model.hpp"

namespace memh {

// ---------------------------------------------------------------------------
// Optimizer state (S1)

struct SgdMomentum {
    Eigen::VectorXd velocity;
    double beta = 0.9;
};

struct AdamW {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    std::variant<SgdMomentum, AdamW> state;
    std::int64_t step_count = 0;

    bool is_adamw() const { return std::holds_alternative<AdamW>(state); }
    void validate(Eigen::Index param_size) const;
};

OptimizerState make_sgd_momentum(Eigen::Index size, double beta);
OptimizerState make_adamw(Eigen::Index size, double beta1, double beta2, double eps,
                          double weight_decay);

// One optimizer step at learning rate `lr`.
//   SGD momentum: v <- beta v + (1-beta) g;   theta <- theta - lr v
//   AdamW:        m, v moment updates, bias-corrected, decoupled decay.
std::pair<ParamVector, OptimizerState> step(const ParamVector& params, const ParamVector& grad,
                                            const OptimizerState& opt, double lr);

// Zeroes velocity / moments; beta constants and weight decay untouched;
// step_count restarts so AdamW bias correction restarts with the fresh state.
OptimizerState reset_optimizer(const OptimizerState& opt);

// Steps until a past gradient's geometric weight halves: log(0.5)/log(beta).
double half_life(double beta);

// ---------------------------------------------------------------------------
// Weight averaging (S1) and teacher state (S5)

struct EmaState {
    Eigen::VectorXd weights;
    double alpha = 0.99;
    bool frozen = false;
};

struct SwaState {
    Eigen::VectorXd sum;
    std::int64_t count = 0;
};

struct TeacherState {
    Eigen::VectorXd weights;
    double alpha = 0.99;
};

struct AveragingState {
    std::optional<EmaState> ema;
    std::optional<SwaState> swa;
    std::optional<TeacherState> teacher;
};

// EMA (unless frozen) and teacher: w <- alpha w + (1-alpha) theta.
// SWA: sum += theta, count += 1.
AveragingState averaging_update(AveragingState avg, const Eigen::VectorXd& params);

// Returns sum/count and whether BN recalibration is required for the
// averaged weights (exactly when the model has a norm layer).
std::pair<Eigen::VectorXd, bool> swa_finalize(const AveragingState& avg, bool has_norm_layer);

// ---------------------------------------------------------------------------
// Learning-rate schedule

struct Schedule {
    enum class Kind { constant, cosine };

    double base_lr = 0.1;
    std::int64_t warmup_steps = 0;
    Kind kind = Kind::constant;
    std::int64_t total_steps = 0;  // cosine only

    // Rewarm wrap applied at a phase boundary: multiplicative warmup for
    // rewarm_len steps starting at rewarm_at.
    std::int64_t rewarm_at = -1;
    std::int64_t rewarm_len = 0;

    double lr(std::int64_t t) const;
    void validate() const;
    bool operator==(const Schedule&) const = default;
};

}  // namespace memh
