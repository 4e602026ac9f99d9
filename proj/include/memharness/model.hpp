// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "memharness/bytes.hpp"
#include "memharness/norm_state.hpp"
#include "memharness/queue.hpp"
#include "memharness/rng.hpp"

namespace memh {

// ---------------------------------------------------------------------------
// Parameters

struct SegmentInfo {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;

    bool operator==(const SegmentInfo&) const = default;
};

// Named segments partitioning a flat parameter vector, no gaps or overlaps.
class ParamLayout {
  public:
    ParamLayout() = default;
    explicit ParamLayout(std::vector<SegmentInfo> segments);

    const std::vector<SegmentInfo>& segments() const { return segments_; }
    const SegmentInfo& segment(const std::string& name) const;
    std::size_t total() const { return total_; }

    bool operator==(const ParamLayout&) const = default;

  private:
    std::vector<SegmentInfo> segments_;
    std::size_t total_ = 0;
};

struct ParamVector {
    Eigen::VectorXd values;
    std::shared_ptr<const ParamLayout> layout;

    Eigen::Index size() const { return values.size(); }

    Eigen::VectorBlock<Eigen::VectorXd> seg(const std::string& name);
    Eigen::VectorBlock<const Eigen::VectorXd> seg(const std::string& name) const;

    bool same_layout(const ParamVector& other) const;
    ParamVector with_values(Eigen::VectorXd v) const { return ParamVector{std::move(v), layout}; }
    bool all_finite() const { return values.allFinite(); }
};

// ---------------------------------------------------------------------------
// Model and data

enum class ModelKind { linear_regression, logistic_regression, mlp, embedder };

enum class Task { classify, regress, contrastive, teacher_consistency };

struct ModelSpec {
    ModelKind kind = ModelKind::linear_regression;
    int input_dim = 1;
    int output_dim = 1;
    std::vector<int> hidden_sizes;  // mlp only
    bool norm = false;              // mlp only: one norm layer per hidden layer

    void validate() const;
    bool has_norm_layer() const { return kind == ModelKind::mlp && norm; }
    std::shared_ptr<const ParamLayout> make_layout() const;
};

struct Dataset {
    Task task = Task::regress;
    Eigen::MatrixXd inputs;    // n x input_dim
    std::vector<int> labels;   // classify/contrastive: class or cluster ids
    Eigen::MatrixXd targets;   // regress/teacher_consistency: n x output_dim
    int output_dim = 1;        // class count or target dim

    std::int64_t n() const { return inputs.rows(); }
    int input_dim() const { return static_cast<int>(inputs.cols()); }
    void validate() const;
    bool is_classification() const {
        return task == Task::classify || task == Task::contrastive;
    }
};

// Fixed evaluation inputs, shared read-only by every branch of an experiment.
struct Probe {
    Dataset data;
    bool frozen = true;
};

struct PredictiveOutput {
    // Per-example rows: softmax probabilities (classification) or means
    // (regression / embeddings).
    Eigen::MatrixXd rows;
    // Post-activation hidden outputs, captured on request for CKA.
    std::vector<Eigen::MatrixXd> activations;
};

enum class RunMode { train, eval };

// ---------------------------------------------------------------------------
// Objectives

enum class ObjectiveKind { squared, cross_entropy, infonce, teacher_consistency };

struct ObjectiveSpec {
    ObjectiveKind kind = ObjectiveKind::squared;
    double lambda = 0.1;       // teacher-consistency weight
    double temperature = 0.2;  // InfoNCE

    void validate() const;
};

// Side state an objective may read: teacher weights for the consistency term,
// queue entries as InfoNCE negatives. Never mutated here.
struct ObjectiveContext {
    const ParamVector* teacher = nullptr;
    const QueueState* queue = nullptr;
};

// A minibatch in canonical evaluation order: rows sorted by (id, aug_seed)
// so that loss and gradient are pure functions of the batch multiset.
struct BatchView {
    std::vector<std::uint32_t> ids;  // canonical order
    Eigen::MatrixXd inputs;
    std::vector<int> labels;
    Eigen::MatrixXd targets;
    Eigen::VectorXd weights;  // per-example importance weights (1 by default)

    std::int64_t size() const { return inputs.rows(); }
};

BatchView make_batch(const Dataset& data, const std::vector<std::uint32_t>& ids,
                     const std::vector<std::uint64_t>& aug_seeds, double aug_noise,
                     const Eigen::VectorXd* weights = nullptr);

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
    NormState norm;
    // Unit-norm embeddings of the batch (InfoNCE only), canonical order.
    Eigen::MatrixXd embeddings;
};

// ---------------------------------------------------------------------------
// Operations

ParamVector init_model(const ModelSpec& spec, RngStream& stream);

NormState init_norm_state(const ModelSpec& spec);

PredictiveOutput forward(const ModelSpec& spec, const ParamVector& params,
                         const Eigen::MatrixXd& inputs, const NormState& norm, RunMode mode,
                         Task task, bool capture_activations = false);

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const BatchView& batch,
                       const NormState& norm, const ObjectiveSpec& objective,
                       const ObjectiveContext& ctx = {}, RunMode mode = RunMode::train);

Dataset make_synthetic(Task task, std::int64_t n, int input_dim, int output_dim, double noise,
                       RngStream& stream);

Probe make_probe(Task task, std::int64_t n, int input_dim, int output_dim, double noise,
                 RngStream& stream);

// Replaces running stats with the exact per-feature mean/variance of each
// norm layer's inputs over the calibration slice (single pass, no momentum).
NormState bn_recalibrate(const ModelSpec& spec, const ParamVector& params, const NormState& norm,
                         const Eigen::MatrixXd& calib_inputs);

// Mean per-example loss of the task's natural objective, eval mode.
double eval_mean_loss(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                      const NormState& norm);

// Losses along the linear path (1-l)*a + l*b, l evenly spaced on [0,1],
// BN stats re-estimated on the first `calib_count` examples at each point.
std::vector<std::pair<double, double>> barrier_scan(const ModelSpec& spec, const ParamVector& a,
                                                    const ParamVector& b, const Dataset& data,
                                                    int points, std::int64_t calib_count);

// ---------------------------------------------------------------------------
// Serialization (MEMH-DS1): 16-byte header (magic, version u32, n u32), then
// little-endian body, then SHA-256 of all preceding bytes.

Bytes serialize_dataset(const Dataset& data, bool frozen_probe = false);
Dataset parse_dataset(const Bytes& bytes, bool* frozen_probe = nullptr);
void save_dataset(const Dataset& data, const std::string& path, bool frozen_probe = false);
Dataset load_dataset(const std::string& path, bool* frozen_probe = nullptr);

const char* to_string(Task task);
const char* to_string(ModelKind kind);
const char* to_string(ObjectiveKind kind);

}  // namespace memh
