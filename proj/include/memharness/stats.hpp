// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "memharness/model.hpp"
#include "memharness/rng.hpp"

namespace memh {

// ---------------------------------------------------------------------------
// Paired ATE with bootstrap CI

struct EffectEstimate {
    double ate = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double ci_width = 0.0;
    std::int64_t bootstrap_rounds = 0;
    std::vector<double> per_seed;
};

// ate = mean(z); CI = empirical 2.5/97.5 percentiles of B resampled means,
// type-7 (linear interpolation) quantiles.
EffectEstimate paired_ate_ci(const std::vector<double>& z, std::int64_t bootstrap_rounds,
                             RngStream& stream);

// Type-7 quantile of a sample (copied and sorted internally), q in [0, 1].
double quantile_type7(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Equivalence testing (TOST)

struct EquivalenceResult {
    double mean_delta = 0.0;
    double stddev = 0.0;
    std::int64_t n = 0;
    double epsilon = 0.0;
    double alpha_level = 0.0;
    double p_lower = 0.0;
    double p_upper = 0.0;
    double ci_lo = 0.0;  // (1 - 2 alpha) two-sided t CI
    double ci_hi = 0.0;
    bool equivalent = false;
};

// Two one-sided t tests of |mean| >= epsilon at level alpha, df = n-1.
// Equivalent iff both one-sided p-values are below alpha, equivalently the
// (1-2 alpha) CI lies inside (-epsilon, epsilon).
EquivalenceResult tost(const std::vector<double>& deltas, double epsilon, double alpha_level);

// ---------------------------------------------------------------------------
// Function-space distances and readouts

enum class DistanceKind { tv, js, hellinger };

// Distance between two discrete distributions over the same support.
// TV in [0,1]; JS with base-2 logs in [0,1]; Hellinger sqrt(1 - BC) in [0,1].
double prob_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q, DistanceKind kind);

// Fraction of probe rows whose argmax labels differ (ties to lowest index).
double disagreement(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Expected calibration error with equal-width confidence bins.
double ece(const Eigen::MatrixXd& preds, const std::vector<int>& labels, int bins);

struct NllResult {
    double value = 0.0;
    std::int64_t clamped = 0;  // labels whose probability was clamped at 1e-12
};
NllResult nll(const Eigen::MatrixXd& preds, const std::vector<int>& labels);

double accuracy(const Eigen::MatrixXd& preds, const std::vector<int>& labels);

// Linear CKA between activation matrices with P rows; columns centered
// internally. Errors on zero-variance activations.
double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

// ---------------------------------------------------------------------------
// Probe-level readouts

enum class MetricKind { tv, js, hellinger, l2, disagreement, acc, ece, nll };

struct MetricSpec {
    MetricKind kind = MetricKind::tv;
    int ece_bins = 10;

    // Distances yield z >= 0; scalar metrics yield signed deltas.
    bool is_distance() const;
    void validate_for(Task task) const;
};

// Mean probe distance D(a, b) for distance metrics, or M(b) - M(a) for
// scalar metrics. Classification rows are distributions; for regression and
// embedding outputs the tv / hellinger kinds use the closed-form distance
// between unit-variance Gaussians centered at the predictions.
double probe_metric(const MetricSpec& metric, const Probe& probe, const PredictiveOutput& control,
                    const PredictiveOutput& treat);

MetricKind metric_kind_from_string(const std::string& s);
const char* to_string(MetricKind kind);

}  // namespace memh
