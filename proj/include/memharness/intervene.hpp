// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "memharness/audit.hpp"
#include "memharness/model.hpp"
#include "memharness/optim.hpp"
#include "memharness/sampler.hpp"
#include "memharness/snapshot.hpp"
#include "memharness/stats.hpp"

namespace memh {

// ---------------------------------------------------------------------------
// Recipe: everything needed to construct and drive one training run.

struct OptimizerConfig {
    enum class Kind { sgd_momentum, adamw };
    Kind kind = Kind::sgd_momentum;
    double beta = 0.9;  // sgd momentum
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    // Decay of the first moment; sets the optimizer's memory half-life.
    double first_moment_beta() const { return kind == Kind::sgd_momentum ? beta : beta1; }
};

struct AveragingConfig {
    std::optional<double> ema_alpha;
    bool swa = false;
    std::optional<double> teacher_alpha;
};

struct DataConfig {
    Task task = Task::regress;
    std::int64_t n = 256;
    int input_dim = 8;
    int output_dim = 1;
    double noise = 0.1;
    double aug_noise = 0.0;
};

struct QueueConfig {
    std::int64_t capacity = 64;
};

struct Recipe {
    ModelSpec model;
    ObjectiveSpec objective;
    OptimizerConfig optimizer;
    Schedule schedule;
    SamplerPolicy sampler;
    DataConfig data;
    AveragingConfig averaging;
    std::optional<QueueConfig> queue;
    std::int64_t calib_size = 256;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Interventions

enum class InterventionKind {
    null_intervention,  // identity phi: determinism audit
    opt_reset,          // S1
    order_swap,         // S2
    phase_policy,       // S1
    teacher_lag,        // S5
    queue_op,           // S4
};

enum class QueueOpMode { freeze, clear };

struct InterventionSpec {
    InterventionKind kind = InterventionKind::null_intervention;
    // opt_reset
    bool freeze_ema = false;
    std::optional<std::int64_t> rewarm_k;
    // order_swap
    bool reuse_aug = true;
    // phase_policy
    StatePolicy phase_policy;
    std::int64_t k_epochs = 1;
    // teacher_lag
    double teacher_alpha_prime = 0.0;
    // queue_op
    QueueOpMode queue_mode = QueueOpMode::freeze;

    const char* source_tag() const;  // S1 / S2 / S4 / S5 / none
    void validate(const Recipe& recipe) const;

    // Snapshot components the treatment may legitimately change at t0.
    std::vector<std::string> intended_components() const;
};

// Context for matching the window to the perturbed source's lifetime.
struct WindowContext {
    std::optional<double> beta;           // optimizer first-moment decay
    std::optional<double> teacher_alpha;  // current teacher decay
    std::optional<std::int64_t> queue_capacity;
    std::optional<int> batch_size;
    std::optional<std::int64_t> dataset_n;
    std::optional<std::int64_t> k_epochs;
    std::optional<SamplerKind> sampler_kind;

    static WindowContext from_recipe(const Recipe& recipe);
};

// Table-of-lifetimes window suggestion: opt_reset 1.5 half-lives; order_swap
// one RR epoch (1000 steps under WR); teacher_lag 2/(1-alpha); queue_op
// ceil(K/B); phase_policy k_epochs * epoch_length.
std::int64_t suggest_window(const InterventionSpec& spec, const WindowContext& ctx);

// ---------------------------------------------------------------------------
// Branch-and-hold

struct BranchConfig {
    std::int64_t t0 = 100;
    std::int64_t window = 1;  // resolved (never "auto" here)
    std::int64_t horizon = 200;
    int seeds = 5;
    std::int64_t probe_size = 256;
    MetricSpec metric;
    bool bn_recal_before_final = false;

    void validate() const;
};

// A live training run: mutable state driven step by step. Snapshots are
// taken/restored at step boundaries only.
class TrainRun {
  public:
    static TrainRun fresh(const Recipe& recipe, const Dataset* data, RngManifest manifest,
                          AuditTrail* trail);
    static TrainRun from_snapshot(const Recipe& recipe, const Dataset* data, Snapshot snap,
                                  AuditTrail* trail);

    void step_live();
    void step_replay(const std::vector<std::uint32_t>& ids,
                     const std::vector<std::uint64_t>& aug_seeds);
    void run_live_to(std::int64_t target_step);

    OrderRecord record_window(std::int64_t w);
    Snapshot snapshot() const;

    PredictiveOutput eval_probe(const Probe& probe, bool capture_activations = false) const;

    std::int64_t step() const { return step_; }
    double last_loss() const { return last_loss_; }
    const Recipe& recipe() const { return *recipe_; }
    AuditTrail* trail() { return trail_; }

    // Intervention hooks (branch executor only).
    void reset_opt();
    void set_ema_frozen(bool frozen);
    void set_teacher_alpha(double alpha);
    void set_queue_frozen(bool frozen);
    void clear_queue();
    void wrap_schedule_rewarm(std::int64_t at, std::int64_t len);
    void recalibrate_bn(std::int64_t calib_size);

    void log_state_checks(const std::string& tag);

  private:
    TrainRun() = default;
    void apply_step(const std::vector<std::uint32_t>& ids,
                    const std::vector<std::uint64_t>& aug_seeds);
    ParamVector teacher_params() const;

    const Recipe* recipe_ = nullptr;
    const Dataset* data_ = nullptr;
    AuditTrail* trail_ = nullptr;

    std::int64_t step_ = 0;
    std::int64_t schedule_pos_ = 0;
    Schedule schedule_;
    ParamVector params_;
    OptimizerState opt_;
    AveragingState avg_;
    NormState norm_;
    SamplerState sampler_;
    std::optional<QueueState> queue_;
    RngStream augment_;
    RngStream model_stream_;
    RngStream eval_stream_;
    RngManifest manifest_;
    double last_loss_ = 0.0;
    bool has_loss_ = false;
};

// Per-seed paired outcome of one Control/Treat fork.
struct SeedBranchResult {
    int seed_index = 0;
    std::uint64_t root_seed = 0;
    double z_early = 0.0;
    double z_final = 0.0;
    bool aborted = false;
    std::string abort_reason;

    std::string window_hash_control;
    std::string window_hash_treat;
    bool identity_permutation = false;
    std::optional<double> final_cka;

    AuditTrail trail_root;
    AuditTrail trail_control;
    AuditTrail trail_treat;

    OrderRecord record_control;
    OrderRecord record_treat;  // differs from control only for order_swap

    Snapshot snap_root_t0;
    Snapshot snap_control_t0;
    Snapshot snap_treat_t0;
    Snapshot snap_control_final;
    Snapshot snap_treat_final;
};

// Runs root -> fork -> lockstep window -> resume for one seed. The probe is
// shared read-only across seeds and branches.
SeedBranchResult run_seed(const Recipe& recipe, const InterventionSpec& intervention,
                          const BranchConfig& cfg, const Probe& probe, int seed_index,
                          std::uint64_t seed_root);

struct BranchOutcome {
    std::vector<SeedBranchResult> seeds;

    std::vector<double> z_early() const;
    std::vector<double> z_final() const;
};

// All seeds of Algorithm "branch-and-hold". Seed roots are derived from the
// experiment root seed as derive_seed(root, "seed/<i>").
BranchOutcome branch_and_hold(const Recipe& recipe, const InterventionSpec& intervention,
                              const BranchConfig& cfg, const Probe& probe,
                              std::uint64_t experiment_root_seed, int jobs = 1);

const char* to_string(InterventionKind kind);
InterventionKind intervention_kind_from_string(const std::string& s);
const char* to_string(QueueOpMode mode);

}  // namespace memh
