// SPDX-License-Identifier: Apache-2.0
#include "memharness/optim.hpp"

#include <cmath>
#include <numbers>

#include "memharness/errors.hpp"

namespace memh {

void OptimizerState::validate(Eigen::Index param_size) const {
    if (step_count < 0) throw ValidationError("step_count must be non-negative");
    if (const auto* sgd = std::get_if<SgdMomentum>(&state)) {
        if (sgd->beta < 0 || sgd->beta >= 1) throw ValidationError("beta must be in [0, 1)");
        if (sgd->velocity.size() != param_size) {
            throw ValidationError("velocity layout does not match parameters");
        }
    } else {
        const auto& a = std::get<AdamW>(state);
        if (a.beta1 < 0 || a.beta1 >= 1 || a.beta2 < 0 || a.beta2 >= 1) {
            throw ValidationError("beta1/beta2 must be in [0, 1)");
        }
        if (a.eps <= 0) throw ValidationError("eps must be positive");
        if (a.weight_decay < 0) throw ValidationError("weight_decay must be non-negative");
        if (a.m.size() != param_size || a.v.size() != param_size) {
            throw ValidationError("moment layout does not match parameters");
        }
    }
}

OptimizerState make_sgd_momentum(Eigen::Index size, double beta) {
    OptimizerState s;
    s.state = SgdMomentum{Eigen::VectorXd::Zero(size), beta};
    s.validate(size);
    return s;
}

OptimizerState make_adamw(Eigen::Index size, double beta1, double beta2, double eps,
                          double weight_decay) {
    OptimizerState s;
    s.state = AdamW{Eigen::VectorXd::Zero(size), Eigen::VectorXd::Zero(size), beta1, beta2, eps,
                    weight_decay};
    s.validate(size);
    return s;
}

std::pair<ParamVector, OptimizerState> step(const ParamVector& params, const ParamVector& grad,
                                            const OptimizerState& opt, double lr) {
    if (!params.same_layout(grad)) throw ValidationError("gradient layout mismatch");
    if (!grad.all_finite()) throw DivergenceError("non-finite gradient");
    opt.validate(params.size());

    OptimizerState next = opt;
    next.step_count = opt.step_count + 1;
    Eigen::VectorXd theta = params.values;

    if (auto* sgd = std::get_if<SgdMomentum>(&next.state)) {
        sgd->velocity = sgd->beta * sgd->velocity + (1.0 - sgd->beta) * grad.values;
        theta -= lr * sgd->velocity;
    } else {
        auto& a = std::get<AdamW>(next.state);
        const double t = static_cast<double>(next.step_count);
        a.m = a.beta1 * a.m + (1.0 - a.beta1) * grad.values;
        a.v = a.beta2 * a.v + (1.0 - a.beta2) * grad.values.array().square().matrix();
        const double mc = 1.0 - std::pow(a.beta1, t);
        const double vc = 1.0 - std::pow(a.beta2, t);
        const Eigen::ArrayXd m_hat = a.m.array() / mc;
        const Eigen::ArrayXd v_hat = a.v.array() / vc;
        theta.array() -= lr * (m_hat / (v_hat.sqrt() + a.eps));
        theta -= lr * a.weight_decay * params.values;
    }
    return {params.with_values(std::move(theta)), std::move(next)};
}

OptimizerState reset_optimizer(const OptimizerState& opt) {
    OptimizerState next = opt;
    next.step_count = 0;
    if (auto* sgd = std::get_if<SgdMomentum>(&next.state)) {
        sgd->velocity.setZero();
    } else {
        auto& a = std::get<AdamW>(next.state);
        a.m.setZero();
        a.v.setZero();
    }
    return next;
}

double half_life(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) {
        throw ValidationError("half_life requires beta in (0, 1)");
    }
    return std::log(0.5) / std::log(beta);
}

AveragingState averaging_update(AveragingState avg, const Eigen::VectorXd& params) {
    if (avg.ema && !avg.ema->frozen) {
        if (avg.ema->weights.size() != params.size()) {
            throw ValidationError("ema layout mismatch");
        }
        avg.ema->weights = avg.ema->alpha * avg.ema->weights + (1.0 - avg.ema->alpha) * params;
    }
    if (avg.teacher) {
        if (avg.teacher->weights.size() != params.size()) {
            throw ValidationError("teacher layout mismatch");
        }
        avg.teacher->weights =
            avg.teacher->alpha * avg.teacher->weights + (1.0 - avg.teacher->alpha) * params;
    }
    if (avg.swa) {
        if (avg.swa->sum.size() != params.size()) throw ValidationError("swa layout mismatch");
        avg.swa->sum += params;
        avg.swa->count += 1;
    }
    return avg;
}

std::pair<Eigen::VectorXd, bool> swa_finalize(const AveragingState& avg, bool has_norm_layer) {
    if (!avg.swa || avg.swa->count < 1) {
        throw ValidationError("swa_finalize requires at least one accumulated snapshot");
    }
    return {avg.swa->sum / static_cast<double>(avg.swa->count), has_norm_layer};
}

void Schedule::validate() const {
    if (base_lr <= 0) throw ValidationError("base_lr must be positive");
    if (warmup_steps < 0) throw ValidationError("warmup_steps must be non-negative");
    if (kind == Kind::cosine && total_steps <= 0) {
        throw ValidationError("cosine schedule requires total_steps > 0");
    }
    if (rewarm_len < 0 || (rewarm_len > 0 && rewarm_at < 0)) {
        throw ValidationError("invalid rewarm window");
    }
}

double Schedule::lr(std::int64_t t) const {
    if (t < 0) throw ValidationError("schedule position must be non-negative");
    double value = base_lr;
    if (t < warmup_steps) {
        value = base_lr * static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
    } else if (kind == Kind::cosine) {
        // Clamp so lr stays strictly positive at and past the horizon.
        const std::int64_t span = std::max<std::int64_t>(total_steps - warmup_steps, 1);
        const std::int64_t pos = std::min(t - warmup_steps, span - 1);
        const double progress = static_cast<double>(pos) / static_cast<double>(span);
        value = base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    if (rewarm_len > 0 && t >= rewarm_at && t < rewarm_at + rewarm_len) {
        value *= static_cast<double>(t - rewarm_at + 1) / static_cast<double>(rewarm_len);
    }
    return value;
}

}  // namespace memh
