// SPDX-License-Identifier: Apache-2.0
#include "memharness/intervene.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <future>

#include "memharness/errors.hpp"

namespace memh {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

// Batch partition of one RR epoch's permutation, tail kept.
std::vector<std::vector<std::uint32_t>> epoch_partition(const std::vector<std::uint32_t>& perm,
                                                        int batch_size) {
    std::vector<std::vector<std::uint32_t>> batches;
    for (std::size_t pos = 0; pos < perm.size(); pos += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(perm.size(), pos + static_cast<std::size_t>(batch_size));
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace

// ---------------------------------------------------------------------------
// Recipe

void Recipe::validate() const {
    model.validate();
    objective.validate();
    schedule.validate();
    if (data.n <= 0) throw ValidationError("data.n must be positive");
    if (data.input_dim != model.input_dim) {
        throw ValidationError("data.input_dim must match model.input_dim");
    }
    if (data.noise < 0 || data.aug_noise < 0) {
        throw ValidationError("noise levels must be non-negative");
    }
    if (calib_size <= 0) throw ValidationError("calib_size must be positive");
    sampler.validate(data.n);

    switch (objective.kind) {
        case ObjectiveKind::cross_entropy:
            if (data.task != Task::classify) {
                throw ValidationError("cross_entropy requires a classify task");
            }
            if (model.kind != ModelKind::logistic_regression && model.kind != ModelKind::mlp) {
                throw ValidationError("cross_entropy requires a classifier model");
            }
            if (model.output_dim != data.output_dim) {
                throw ValidationError("model.output_dim must equal class count");
            }
            break;
        case ObjectiveKind::squared:
            if (data.task != Task::regress) {
                throw ValidationError("squared objective requires a regress task");
            }
            if (model.kind == ModelKind::embedder || model.kind == ModelKind::logistic_regression) {
                throw ValidationError("squared objective requires a regression model");
            }
            if (model.output_dim != data.output_dim) {
                throw ValidationError("model.output_dim must equal target dim");
            }
            break;
        case ObjectiveKind::teacher_consistency:
            if (data.task != Task::teacher_consistency) {
                throw ValidationError("teacher_consistency requires the matching task");
            }
            if (model.kind == ModelKind::embedder || model.kind == ModelKind::logistic_regression) {
                throw ValidationError("teacher_consistency requires a regression model");
            }
            if (model.output_dim != data.output_dim) {
                throw ValidationError("model.output_dim must equal target dim");
            }
            if (objective.lambda > 0 && !averaging.teacher_alpha) {
                throw ValidationError("teacher_consistency with lambda > 0 requires a teacher");
            }
            break;
        case ObjectiveKind::infonce:
            if (data.task != Task::contrastive) {
                throw ValidationError("infonce requires a contrastive task");
            }
            if (model.kind != ModelKind::embedder) {
                throw ValidationError("infonce requires an embedder model");
            }
            if (!queue) throw ValidationError("infonce requires a queue");
            break;
    }
    if (queue && queue->capacity <= 0) throw ValidationError("queue capacity must be positive");
    for (auto alpha : {averaging.ema_alpha, averaging.teacher_alpha}) {
        if (alpha && !(*alpha >= 0 && *alpha < 1)) {
            throw ValidationError("averaging decay must be in [0, 1)");
        }
    }
}

// ---------------------------------------------------------------------------
// InterventionSpec

const char* InterventionSpec::source_tag() const {
    switch (kind) {
        case InterventionKind::null_intervention: return "none";
        case InterventionKind::opt_reset: return "S1";
        case InterventionKind::order_swap: return "S2";
        case InterventionKind::phase_policy: return "S1";
        case InterventionKind::teacher_lag: return "S5";
        case InterventionKind::queue_op: return "S4";
    }
    return "?";
}

void InterventionSpec::validate(const Recipe& recipe) const {
    switch (kind) {
        case InterventionKind::null_intervention:
        case InterventionKind::order_swap:
            break;
        case InterventionKind::opt_reset:
            if (freeze_ema && !recipe.averaging.ema_alpha) {
                throw ValidationError("freeze_ema requires an EMA in the recipe");
            }
            if (rewarm_k && *rewarm_k <= 0) {
                throw ValidationError("rewarm_k must be positive");
            }
            break;
        case InterventionKind::phase_policy:
            phase_policy.validate();
            if (k_epochs <= 0) throw ValidationError("k_epochs must be positive");
            break;
        case InterventionKind::teacher_lag:
            if (!recipe.averaging.teacher_alpha) {
                throw ValidationError("teacher_lag requires a teacher in the recipe");
            }
            if (!(teacher_alpha_prime >= 0 && teacher_alpha_prime < 1)) {
                throw ValidationError("teacher_alpha_prime must be in [0, 1)");
            }
            break;
        case InterventionKind::queue_op:
            if (!recipe.queue) throw ValidationError("queue_op requires a queue in the recipe");
            break;
    }
}

std::vector<std::string> InterventionSpec::intended_components() const {
    switch (kind) {
        case InterventionKind::null_intervention:
        case InterventionKind::order_swap:
            return {};
        case InterventionKind::opt_reset: {
            std::vector<std::string> out{"optimizer"};
            if (freeze_ema) out.push_back("ema");
            return out;
        }
        case InterventionKind::phase_policy:
            return phase_policy.touched_components();
        case InterventionKind::teacher_lag:
            return {"teacher"};
        case InterventionKind::queue_op:
            return {"queue"};
    }
    return {};
}

WindowContext WindowContext::from_recipe(const Recipe& recipe) {
    WindowContext ctx;
    ctx.beta = recipe.optimizer.first_moment_beta();
    ctx.teacher_alpha = recipe.averaging.teacher_alpha;
    if (recipe.queue) ctx.queue_capacity = recipe.queue->capacity;
    ctx.batch_size = recipe.sampler.batch_size;
    ctx.dataset_n = recipe.data.n;
    ctx.sampler_kind = recipe.sampler.kind;
    return ctx;
}

std::int64_t suggest_window(const InterventionSpec& spec, const WindowContext& ctx) {
    auto need = [](const auto& opt, const char* what) -> decltype(*opt) {
        if (!opt) throw ValidationError(std::string("suggest_window missing context: ") + what);
        return *opt;
    };
    switch (spec.kind) {
        case InterventionKind::opt_reset: {
            const double beta = need(ctx.beta, "beta");
            return std::max<std::int64_t>(1, std::llround(1.5 * half_life(beta)));
        }
        case InterventionKind::order_swap:
        case InterventionKind::null_intervention: {
            // One reshuffled epoch; a fixed 1000-step window under WR.
            if (ctx.sampler_kind && *ctx.sampler_kind == SamplerKind::with_replacement &&
                spec.kind == InterventionKind::order_swap) {
                return 1000;
            }
            const std::int64_t n = need(ctx.dataset_n, "dataset_n");
            const int b = need(ctx.batch_size, "batch_size");
            return epoch_length(n, b);
        }
        case InterventionKind::teacher_lag: {
            const double alpha = need(ctx.teacher_alpha, "teacher_alpha");
            if (alpha >= 1.0) throw ValidationError("teacher alpha must be < 1");
            return std::max<std::int64_t>(1, std::llround(2.0 / (1.0 - alpha)));
        }
        case InterventionKind::queue_op: {
            const std::int64_t k = need(ctx.queue_capacity, "queue_capacity");
            const int b = need(ctx.batch_size, "batch_size");
            return (k + b - 1) / b;
        }
        case InterventionKind::phase_policy: {
            const std::int64_t n = need(ctx.dataset_n, "dataset_n");
            const int b = need(ctx.batch_size, "batch_size");
            const std::int64_t k = need(ctx.k_epochs, "k_epochs");
            return k * epoch_length(n, b);
        }
    }
    throw ValidationError("unknown intervention kind");
}

void BranchConfig::validate() const {
    if (t0 < 0) throw ValidationError("t0 must be non-negative");
    if (window < 1) throw ValidationError("window must be at least 1");
    if (t0 + window > horizon) {
        throw ValidationError("require t0 < t0+W <= T");
    }
    if (seeds < 1) throw ValidationError("at least one seed required");
    if (probe_size < 1) throw ValidationError("probe_size must be positive");
}

// ---------------------------------------------------------------------------
// TrainRun

TrainRun TrainRun::fresh(const Recipe& recipe, const Dataset* data, RngManifest manifest,
                         AuditTrail* trail) {
    recipe.validate();
    TrainRun r;
    r.recipe_ = &recipe;
    r.data_ = data;
    r.trail_ = trail;
    r.schedule_ = recipe.schedule;
    r.manifest_ = std::move(manifest);

    RngStream init_stream = r.manifest_.derive(kStreamInit);
    RngStream order_stream = r.manifest_.derive(kStreamOrder);
    r.augment_ = r.manifest_.derive(kStreamAugment);
    r.model_stream_ = r.manifest_.derive(kStreamModel);
    r.eval_stream_ = r.manifest_.derive(kStreamEval);

    r.params_ = init_model(recipe.model, init_stream);
    r.manifest_.note_draws(init_stream);
    r.norm_ = init_norm_state(recipe.model);
    r.sampler_ = make_sampler(recipe.sampler, data->n(), std::move(order_stream));

    const Eigen::Index psize = r.params_.size();
    if (recipe.optimizer.kind == OptimizerConfig::Kind::sgd_momentum) {
        r.opt_ = make_sgd_momentum(psize, recipe.optimizer.beta);
    } else {
        r.opt_ = make_adamw(psize, recipe.optimizer.beta1, recipe.optimizer.beta2,
                            recipe.optimizer.eps, recipe.optimizer.weight_decay);
    }
    if (recipe.averaging.ema_alpha) {
        r.avg_.ema = EmaState{r.params_.values, *recipe.averaging.ema_alpha, false};
    }
    if (recipe.averaging.swa) {
        r.avg_.swa = SwaState{Eigen::VectorXd::Zero(psize), 0};
    }
    if (recipe.averaging.teacher_alpha) {
        r.avg_.teacher = TeacherState{r.params_.values, *recipe.averaging.teacher_alpha};
    }
    if (recipe.queue) {
        r.queue_ = QueueState{recipe.queue->capacity, {}, false};
    }

    if (trail != nullptr) {
        for (const auto& [name, rec] : r.manifest_.streams) {
            trail->log(0, RecordKind::stream_derived,
                       {{"name", name}, {"seed", fmt_hex(rec.derived_seed)}});
        }
    }
    return r;
}

TrainRun TrainRun::from_snapshot(const Recipe& recipe, const Dataset* data, Snapshot snap,
                                 AuditTrail* trail) {
    recipe.validate();
    TrainRun r;
    r.recipe_ = &recipe;
    r.data_ = data;
    r.trail_ = trail;
    r.step_ = snap.step;
    r.schedule_pos_ = snap.schedule_pos;
    r.schedule_ = snap.schedule;
    r.params_ = std::move(snap.params);
    r.opt_ = std::move(snap.opt);
    r.avg_ = std::move(snap.avg);
    r.norm_ = std::move(snap.norm);
    r.sampler_ = std::move(snap.sampler);
    r.queue_ = std::move(snap.queue);
    r.augment_ = std::move(snap.augment);
    r.model_stream_ = std::move(snap.model_stream);
    r.eval_stream_ = std::move(snap.eval_stream);
    r.manifest_ = std::move(snap.manifest);
    return r;
}

Snapshot TrainRun::snapshot() const {
    Snapshot s;
    s.step = step_;
    s.schedule_pos = schedule_pos_;
    s.schedule = schedule_;
    s.params = params_;
    s.opt = opt_;
    s.avg = avg_;
    s.norm = norm_;
    s.sampler = sampler_;
    s.queue = queue_;
    s.augment = augment_;
    s.model_stream = model_stream_;
    s.eval_stream = eval_stream_;
    s.manifest = manifest_;
    s.manifest.note_draws(sampler_.stream);
    s.manifest.note_draws(augment_);
    s.manifest.note_draws(model_stream_);
    s.manifest.note_draws(eval_stream_);
    return s;
}

ParamVector TrainRun::teacher_params() const {
    return ParamVector{avg_.teacher->weights, params_.layout};
}

void TrainRun::apply_step(const std::vector<std::uint32_t>& ids,
                          const std::vector<std::uint64_t>& aug_seeds) {
    Eigen::VectorXd weights;
    const bool prioritized = sampler_.policy.kind == SamplerKind::prioritized;
    if (prioritized) {
        weights = importance_weights(ids, sampler_.policy.priorities);
    }
    const BatchView batch = make_batch(*data_, ids, aug_seeds, recipe_->data.aug_noise,
                                       prioritized ? &weights : nullptr);

    ObjectiveContext ctx;
    ParamVector teacher;
    if (avg_.teacher) {
        teacher = teacher_params();
        ctx.teacher = &teacher;
    }
    if (queue_) ctx.queue = &*queue_;

    const LossGrad lg =
        loss_and_grad(recipe_->model, params_, batch, norm_, recipe_->objective, ctx);
    if (!std::isfinite(lg.loss)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step_));
    }
    last_loss_ = lg.loss;
    has_loss_ = true;

    const double lr = schedule_.lr(schedule_pos_);
    auto [next_params, next_opt] = memh::step(params_, lg.grad, opt_, lr);
    params_ = std::move(next_params);
    opt_ = std::move(next_opt);
    avg_ = averaging_update(std::move(avg_), params_.values);
    if (queue_ && recipe_->objective.kind == ObjectiveKind::infonce && !queue_->frozen) {
        queue_ = queue_step(std::move(*queue_), lg.embeddings, step_);
    }
    norm_ = lg.norm;
    step_ += 1;
    schedule_pos_ += 1;

    if (trail_ != nullptr) {
        if (avg_.ema || avg_.teacher) {
            Fields f;
            if (avg_.ema) {
                f.emplace_back("ema_alpha", fmt_double(avg_.ema->alpha));
                f.emplace_back("ema_frozen", avg_.ema->frozen ? "1" : "0");
            }
            if (avg_.teacher) {
                f.emplace_back("teacher_alpha", fmt_double(avg_.teacher->alpha));
            }
            trail_->log(step_, RecordKind::ema_decay, std::move(f));
        }
        if (step_ % 100 == 0) {
            log_state_checks("periodic");
        }
    }
}

void TrainRun::step_live() {
    if (trail_ != nullptr && sampler_.policy.kind == SamplerKind::random_reshuffle &&
        sampler_.cursor == 0) {
        const auto batches = epoch_partition(sampler_.permutation, sampler_.policy.batch_size);
        trail_->log(step_, RecordKind::order_hash,
                    {{"scope", "epoch"},
                     {"epoch", std::to_string(sampler_.epoch)},
                     {"hash", order_hash(batches)}});
    }
    const std::vector<std::uint32_t> ids = next_batch(sampler_);
    std::vector<std::uint64_t> seeds(ids.size());
    for (auto& s : seeds) s = augment_.next_u64();
    apply_step(ids, seeds);
}

void TrainRun::step_replay(const std::vector<std::uint32_t>& ids,
                           const std::vector<std::uint64_t>& aug_seeds) {
    apply_step(ids, aug_seeds);
}

void TrainRun::run_live_to(std::int64_t target_step) {
    while (step_ < target_step) step_live();
}

OrderRecord TrainRun::record_window(std::int64_t w) {
    return memh::record_window(sampler_, augment_, step_, w);
}

PredictiveOutput TrainRun::eval_probe(const Probe& probe, bool capture_activations) const {
    const Task out_task = probe.data.task == Task::classify ? Task::classify : Task::regress;
    return forward(recipe_->model, params_, probe.data.inputs, norm_, RunMode::eval, out_task,
                   capture_activations);
}

void TrainRun::reset_opt() { opt_ = reset_optimizer(opt_); }

void TrainRun::set_ema_frozen(bool frozen) {
    if (!avg_.ema) throw ValidationError("recipe has no EMA to freeze");
    avg_.ema->frozen = frozen;
}

void TrainRun::set_teacher_alpha(double alpha) {
    if (!avg_.teacher) throw ValidationError("recipe has no teacher");
    avg_.teacher->alpha = alpha;
}

void TrainRun::set_queue_frozen(bool frozen) {
    if (!queue_) throw ValidationError("recipe has no queue");
    queue_->frozen = frozen;
}

void TrainRun::clear_queue() {
    if (!queue_) throw ValidationError("recipe has no queue");
    queue_->entries.clear();
}

void TrainRun::wrap_schedule_rewarm(std::int64_t at, std::int64_t len) {
    if (len <= 0) throw ValidationError("rewarm length must be positive");
    schedule_.rewarm_at = at;
    schedule_.rewarm_len = len;
}

void TrainRun::recalibrate_bn(std::int64_t calib_size) {
    const std::int64_t c = std::min<std::int64_t>(calib_size, data_->n());
    norm_ = bn_recalibrate(recipe_->model, params_, norm_, data_->inputs.topRows(c));
}

void TrainRun::log_state_checks(const std::string& tag) {
    if (trail_ == nullptr) return;
    {
        Fields f{{"tag", tag}};
        if (const auto* sgd = std::get_if<SgdMomentum>(&opt_.state)) {
            f.emplace_back("velocity", fmt_double(sgd->velocity.norm()));
        } else {
            const auto& a = std::get<AdamW>(opt_.state);
            f.emplace_back("m", fmt_double(a.m.norm()));
            f.emplace_back("v", fmt_double(a.v.norm()));
        }
        f.emplace_back("theta", fmt_double(params_.values.norm()));
        if (has_loss_) f.emplace_back("loss", fmt_double(last_loss_));
        f.emplace_back("lr", fmt_double(schedule_.lr(std::max<std::int64_t>(schedule_pos_ - 1, 0))));
        trail_->log(step_, RecordKind::buffer_norms, std::move(f));
    }
    if (recipe_->model.has_norm_layer()) {
        double mean_sq = 0.0;
        double var_sq = 0.0;
        for (const auto& layer : norm_.layers) {
            mean_sq += layer.running_mean.squaredNorm();
            var_sq += layer.running_var.squaredNorm();
        }
        trail_->log(step_, RecordKind::bn_checksum,
                    {{"tag", tag},
                     {"mean_norm", fmt_double(std::sqrt(mean_sq))},
                     {"var_norm", fmt_double(std::sqrt(var_sq))}});
    }
    if (queue_) {
        trail_->log(step_, RecordKind::queue_fingerprint,
                    {{"tag", tag},
                     {"size", std::to_string(queue_->entries.size())},
                     {"frozen", queue_->frozen ? "1" : "0"},
                     {"fingerprint", queue_fingerprint(*queue_)}});
    }
}

// ---------------------------------------------------------------------------
// Branch-and-hold

namespace {

struct TreatSetup {
    OrderRecord record;      // window the treat branch replays
    bool identity = false;   // order_swap produced the identity permutation
};

// Applies phi to the treat branch at t0. Exactly one source may change.
TreatSetup apply_intervention(TrainRun& control, TrainRun& treat, const InterventionSpec& spec,
                              const OrderRecord& record, std::uint64_t seed_root) {
    TreatSetup setup;
    setup.record = record;
    AuditTrail* trail = treat.trail();
    Fields applied{{"intervention", to_string(spec.kind)}, {"source", spec.source_tag()}};

    switch (spec.kind) {
        case InterventionKind::null_intervention:
            break;
        case InterventionKind::opt_reset:
            treat.reset_opt();
            if (spec.freeze_ema) {
                treat.set_ema_frozen(true);
                applied.emplace_back("freeze_ema", "1");
            }
            if (spec.rewarm_k) {
                // Same K-step warmup in both branches to avoid confounding.
                control.wrap_schedule_rewarm(control.step(), *spec.rewarm_k);
                treat.wrap_schedule_rewarm(treat.step(), *spec.rewarm_k);
                applied.emplace_back("rewarm_k", std::to_string(*spec.rewarm_k));
            }
            break;
        case InterventionKind::order_swap: {
            RngStream swap_stream = make_stream(seed_root, "swap");
            if (trail != nullptr) {
                trail->log(treat.step(), RecordKind::stream_derived,
                           {{"name", "swap"}, {"seed", fmt_hex(swap_stream.state)}});
            }
            setup.record = permute_window(record, swap_stream);
            if (!spec.reuse_aug) {
                RngStream reseed = make_stream(seed_root, "swap-aug");
                if (trail != nullptr) {
                    trail->log(treat.step(), RecordKind::stream_derived,
                               {{"name", "swap-aug"}, {"seed", fmt_hex(reseed.state)}});
                }
                for (auto& seeds : setup.record.aug_seeds) {
                    for (auto& s : seeds) s = reseed.next_u64();
                }
            }
            setup.identity = setup.record.hash == record.hash;
            applied.emplace_back("reuse_aug", spec.reuse_aug ? "1" : "0");
            applied.emplace_back("identity_permutation", setup.identity ? "1" : "0");
            break;
        }
        case InterventionKind::phase_policy:
            applied.emplace_back("optimizer", to_string(spec.phase_policy.optimizer));
            applied.emplace_back("ema", to_string(spec.phase_policy.ema));
            applied.emplace_back("swa", to_string(spec.phase_policy.swa));
            applied.emplace_back("teacher", to_string(spec.phase_policy.teacher));
            applied.emplace_back("bn", to_string(spec.phase_policy.bn));
            applied.emplace_back("queue", to_string(spec.phase_policy.queue));
            break;  // applied via apply_policy before construction
        case InterventionKind::teacher_lag:
            treat.set_teacher_alpha(spec.teacher_alpha_prime);
            applied.emplace_back("alpha_prime", fmt_double(spec.teacher_alpha_prime));
            break;
        case InterventionKind::queue_op:
            if (spec.queue_mode == QueueOpMode::freeze) {
                treat.set_queue_frozen(true);
            } else {
                treat.clear_queue();
            }
            applied.emplace_back("mode", to_string(spec.queue_mode));
            break;
    }
    if (trail != nullptr) {
        trail->log(treat.step(), RecordKind::policy_applied, std::move(applied));
    }
    return setup;
}

// Hard isolation gate: the per-component checksum diff at t0 must be
// confined to the intervention's intended components.
void check_isolation(const Snapshot& control, const Snapshot& treat, const InterventionSpec& spec,
                     AuditTrail* trail) {
    const auto dc = all_component_digests(control);
    const auto dt = all_component_digests(treat);
    const auto intended = spec.intended_components();
    std::string diff_list;
    for (const auto& [name, digest] : dc) {
        if (dt.at(name) != digest) {
            diff_list += (diff_list.empty() ? "" : ",") + name;
            if (std::find(intended.begin(), intended.end(), name) == intended.end()) {
                throw DivergenceError("isolation violation: component '" + name +
                                      "' differs but intervention targets only its own source");
            }
        }
    }
    if (trail != nullptr) {
        trail->log(control.step, RecordKind::branch_event,
                   {{"event", "isolation_check"}, {"diff", diff_list.empty() ? "-" : diff_list}});
    }
}

void restore_after_window(TrainRun& treat, const InterventionSpec& spec, const Recipe& recipe) {
    switch (spec.kind) {
        case InterventionKind::opt_reset:
            if (spec.freeze_ema) treat.set_ema_frozen(false);
            break;
        case InterventionKind::teacher_lag:
            treat.set_teacher_alpha(*recipe.averaging.teacher_alpha);
            break;
        case InterventionKind::queue_op:
            if (spec.queue_mode == QueueOpMode::freeze) treat.set_queue_frozen(false);
            break;
        default:
            break;
    }
}

double branch_metric(const MetricSpec& metric, const Probe& probe, const TrainRun& control,
                     const TrainRun& treat) {
    return probe_metric(metric, probe, control.eval_probe(probe), treat.eval_probe(probe));
}

}  // namespace

SeedBranchResult run_seed(const Recipe& recipe, const InterventionSpec& intervention,
                          const BranchConfig& cfg, const Probe& probe, int seed_index,
                          std::uint64_t seed_root) {
    recipe.validate();
    intervention.validate(recipe);
    cfg.validate();
    if (!probe.frozen) throw ValidationError("experiment probes must be frozen");

    SeedBranchResult result;
    result.seed_index = seed_index;
    result.root_seed = seed_root;
    const std::string prefix = "s" + std::to_string(seed_index);
    result.trail_root = AuditTrail(prefix + ".root");
    result.trail_control = AuditTrail(prefix + ".control");
    result.trail_treat = AuditTrail(prefix + ".treat");

    // Per-seed dataset: seeds are genuine replicates of the data draw.
    RngManifest manifest{seed_root, {}};
    RngStream data_stream = manifest.derive("data");
    const Dataset dataset = make_synthetic(recipe.data.task, recipe.data.n, recipe.data.input_dim,
                                           recipe.data.output_dim, recipe.data.noise, data_stream);
    manifest.note_draws(data_stream);

    TrainRun root = TrainRun::fresh(recipe, &dataset, std::move(manifest), &result.trail_root);

    try {
        root.run_live_to(cfg.t0);
    } catch (const DivergenceError& e) {
        result.aborted = true;
        result.abort_reason = std::string("root: ") + e.what();
        return result;
    }
    root.log_state_checks("t0");

    const OrderRecord record = root.record_window(cfg.window);
    result.record_control = record;
    result.trail_root.log(cfg.t0, RecordKind::order_hash,
                          {{"scope", "window"},
                           {"t0", std::to_string(cfg.t0)},
                           {"w", std::to_string(cfg.window)},
                           {"hash", record.hash}});
    result.trail_root.log(cfg.t0, RecordKind::branch_event, {{"event", "snapshot"}});

    const Snapshot snap = root.snapshot();
    result.snap_root_t0 = snap;

    for (auto* trail : {&result.trail_control, &result.trail_treat}) {
        trail->log(cfg.t0, RecordKind::branch_event,
                   {{"event", "fork"}, {"root_seed", fmt_hex(seed_root)}});
    }

    TrainRun control = TrainRun::from_snapshot(recipe, &dataset, snap, &result.trail_control);
    Snapshot treat_snap = snap;
    if (intervention.kind == InterventionKind::phase_policy) {
        treat_snap = apply_policy(snap, intervention.phase_policy);
    }
    TrainRun treat = TrainRun::from_snapshot(recipe, &dataset, treat_snap, &result.trail_treat);

    const TreatSetup setup = apply_intervention(control, treat, intervention, record, seed_root);
    result.record_treat = setup.record;
    result.identity_permutation = setup.identity;
    result.window_hash_control = record.hash;
    result.window_hash_treat = setup.record.hash;

    result.trail_control.log(cfg.t0, RecordKind::order_hash,
                             {{"scope", "window"},
                              {"t0", std::to_string(cfg.t0)},
                              {"w", std::to_string(cfg.window)},
                              {"hash", record.hash}});
    result.trail_treat.log(cfg.t0, RecordKind::order_hash,
                           {{"scope", "window"},
                            {"t0", std::to_string(cfg.t0)},
                            {"w", std::to_string(cfg.window)},
                            {"hash", setup.record.hash},
                            {"identity", setup.identity ? "1" : "0"}});

    result.snap_control_t0 = control.snapshot();
    result.snap_treat_t0 = treat.snapshot();
    check_isolation(result.snap_control_t0, result.snap_treat_t0, intervention,
                    &result.trail_treat);
    control.log_state_checks("t0");
    treat.log_state_checks("t0");

    // Hold window: both branches replay the recorded minibatch ids and
    // augmentation seeds in lockstep.
    try {
        for (std::int64_t i = 0; i < cfg.window; ++i) {
            control.step_replay(record.batches[static_cast<std::size_t>(i)],
                                record.aug_seeds[static_cast<std::size_t>(i)]);
            treat.step_replay(setup.record.batches[static_cast<std::size_t>(i)],
                              setup.record.aug_seeds[static_cast<std::size_t>(i)]);
        }
    } catch (const DivergenceError& e) {
        result.aborted = true;
        result.abort_reason = std::string("window: ") + e.what();
        return result;
    }

    restore_after_window(treat, intervention, recipe);
    control.log_state_checks("t0+W");
    treat.log_state_checks("t0+W");

    result.z_early = branch_metric(cfg.metric, probe, control, treat);
    for (auto* trail : {&result.trail_control, &result.trail_treat}) {
        trail->log(control.step(), RecordKind::branch_event,
                   {{"event", "readout"},
                    {"which", "early"},
                    {"metric", to_string(cfg.metric.kind)},
                    {"z", fmt_double(result.z_early)}});
    }

    // Resume normal policies to the horizon; micro-order is free to differ
    // across branches beyond the recorded window.
    try {
        control.run_live_to(cfg.horizon);
        treat.run_live_to(cfg.horizon);
    } catch (const DivergenceError& e) {
        result.aborted = true;
        result.abort_reason = std::string("resume: ") + e.what();
        return result;
    }

    if (cfg.bn_recal_before_final && recipe.model.has_norm_layer()) {
        control.recalibrate_bn(recipe.calib_size);
        treat.recalibrate_bn(recipe.calib_size);
        for (auto* run : {&control, &treat}) {
            run->trail()->log(run->step(), RecordKind::branch_event,
                              {{"event", "bn_recalibrated"},
                               {"calib", std::to_string(recipe.calib_size)}});
        }
    }

    result.z_final = branch_metric(cfg.metric, probe, control, treat);
    control.log_state_checks("final");
    treat.log_state_checks("final");
    for (auto* trail : {&result.trail_control, &result.trail_treat}) {
        trail->log(control.step(), RecordKind::branch_event,
                   {{"event", "readout"},
                    {"which", "final"},
                    {"metric", to_string(cfg.metric.kind)},
                    {"z", fmt_double(result.z_final)}});
    }

    if (recipe.model.kind == ModelKind::mlp) {
        const PredictiveOutput a = control.eval_probe(probe, true);
        const PredictiveOutput b = treat.eval_probe(probe, true);
        if (!a.activations.empty()) {
            result.final_cka = linear_cka(a.activations.back(), b.activations.back());
        }
    }

    result.snap_control_final = control.snapshot();
    result.snap_treat_final = treat.snapshot();
    const Bytes control_bytes = serialize_snapshot(result.snap_control_final);
    const Bytes treat_bytes = serialize_snapshot(result.snap_treat_final);
    for (auto* r : {&result.trail_control, &result.trail_treat}) {
        const Snapshot& s =
            (r == &result.trail_control) ? result.snap_control_final : result.snap_treat_final;
        Fields f{{"event", "final_checksums"}};
        for (const auto& [name, digest] : all_component_digests(s)) {
            f.emplace_back(name, digest);
        }
        r->log(cfg.horizon, RecordKind::branch_event, std::move(f));
    }

    if (intervention.kind == InterventionKind::null_intervention) {
        if (result.z_early != 0.0 || result.z_final != 0.0 || control_bytes != treat_bytes) {
            throw DivergenceError("null intervention produced diverging branches (seed " +
                                  std::to_string(seed_index) + "): determinism fault");
        }
    }
    return result;
}

std::vector<double> BranchOutcome::z_early() const {
    std::vector<double> z;
    for (const auto& s : seeds) {
        if (!s.aborted) z.push_back(s.z_early);
    }
    return z;
}

std::vector<double> BranchOutcome::z_final() const {
    std::vector<double> z;
    for (const auto& s : seeds) {
        if (!s.aborted) z.push_back(s.z_final);
    }
    return z;
}

BranchOutcome branch_and_hold(const Recipe& recipe, const InterventionSpec& intervention,
                              const BranchConfig& cfg, const Probe& probe,
                              std::uint64_t experiment_root_seed, int jobs) {
    BranchOutcome outcome;
    outcome.seeds.resize(static_cast<std::size_t>(cfg.seeds));
    const int workers = std::max(1, jobs);

    auto work = [&](int i) {
        const std::uint64_t seed_root =
            derive_seed(experiment_root_seed, "seed/" + std::to_string(i));
        outcome.seeds[static_cast<std::size_t>(i)] =
            run_seed(recipe, intervention, cfg, probe, i, seed_root);
    };

    if (workers == 1) {
        for (int i = 0; i < cfg.seeds; ++i) work(i);
    } else {
        for (int base = 0; base < cfg.seeds; base += workers) {
            std::vector<std::future<void>> futures;
            for (int i = base; i < std::min(cfg.seeds, base + workers); ++i) {
                futures.push_back(std::async(std::launch::async, work, i));
            }
            for (auto& f : futures) f.get();
        }
    }
    return outcome;
}

const char* to_string(InterventionKind kind) {
    switch (kind) {
        case InterventionKind::null_intervention: return "null";
        case InterventionKind::opt_reset: return "opt_reset";
        case InterventionKind::order_swap: return "order_swap";
        case InterventionKind::phase_policy: return "phase_policy";
        case InterventionKind::teacher_lag: return "teacher_lag";
        case InterventionKind::queue_op: return "queue_op";
    }
    return "?";
}

InterventionKind intervention_kind_from_string(const std::string& s) {
    if (s == "null") return InterventionKind::null_intervention;
    if (s == "opt_reset") return InterventionKind::opt_reset;
    if (s == "order_swap") return InterventionKind::order_swap;
    if (s == "phase_policy") return InterventionKind::phase_policy;
    if (s == "teacher_lag") return InterventionKind::teacher_lag;
    if (s == "queue_op") return InterventionKind::queue_op;
    throw ValidationError("unknown intervention kind: " + s);
}

const char* to_string(QueueOpMode mode) {
    return mode == QueueOpMode::freeze ? "freeze" : "clear";
}

}  // namespace memh
