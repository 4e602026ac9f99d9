// SPDX-License-Identifier: Apache-2.0
#include "memharness/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "memharness/errors.hpp"
#include "memharness/sha256.hpp"

namespace memh {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ValidationError("config field " + path + ": " + what);
}

void require_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) fail(path + "." + key, "unknown field");
    }
}

template <typename T>
T get_field(const json& obj, const std::string& path, const std::string& key) {
    if (!obj.contains(key)) fail(path + "." + key, "missing");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(path + "." + key, e.what());
    }
}

template <typename T>
T get_or(const json& obj, const std::string& path, const std::string& key, T fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(path + "." + key, e.what());
    }
}

ModelSpec parse_model(const json& j, const std::string& path) {
    require_keys(j, path, {"kind", "input_dim", "output_dim", "hidden_sizes", "norm"});
    ModelSpec m;
    const std::string kind = get_field<std::string>(j, path, "kind");
    if (kind == "linear_regression") m.kind = ModelKind::linear_regression;
    else if (kind == "logistic_regression") m.kind = ModelKind::logistic_regression;
    else if (kind == "mlp") m.kind = ModelKind::mlp;
    else if (kind == "embedder") m.kind = ModelKind::embedder;
    else fail(path + ".kind", "unknown model kind '" + kind + "'");
    m.input_dim = get_field<int>(j, path, "input_dim");
    m.output_dim = get_field<int>(j, path, "output_dim");
    m.hidden_sizes = get_or<std::vector<int>>(j, path, "hidden_sizes", {});
    m.norm = get_or<bool>(j, path, "norm", false);
    return m;
}

ObjectiveSpec parse_objective(const json& j, const std::string& path) {
    require_keys(j, path, {"kind", "lambda", "temperature"});
    ObjectiveSpec o;
    const std::string kind = get_field<std::string>(j, path, "kind");
    if (kind == "squared") o.kind = ObjectiveKind::squared;
    else if (kind == "cross_entropy") o.kind = ObjectiveKind::cross_entropy;
    else if (kind == "infonce") o.kind = ObjectiveKind::infonce;
    else if (kind == "teacher_consistency") o.kind = ObjectiveKind::teacher_consistency;
    else fail(path + ".kind", "unknown objective '" + kind + "'");
    o.lambda = get_or<double>(j, path, "lambda", 0.1);
    o.temperature = get_or<double>(j, path, "temperature", 0.2);
    return o;
}

OptimizerConfig parse_optimizer(const json& j, const std::string& path) {
    require_keys(j, path, {"kind", "beta", "beta1", "beta2", "eps", "weight_decay"});
    OptimizerConfig o;
    const std::string kind = get_field<std::string>(j, path, "kind");
    if (kind == "sgd_momentum") o.kind = OptimizerConfig::Kind::sgd_momentum;
    else if (kind == "adamw") o.kind = OptimizerConfig::Kind::adamw;
    else fail(path + ".kind", "unknown optimizer '" + kind + "'");
    o.beta = get_or<double>(j, path, "beta", 0.9);
    o.beta1 = get_or<double>(j, path, "beta1", 0.9);
    o.beta2 = get_or<double>(j, path, "beta2", 0.999);
    o.eps = get_or<double>(j, path, "eps", 1e-8);
    o.weight_decay = get_or<double>(j, path, "weight_decay", 0.01);
    return o;
}

Schedule parse_schedule(const json& j, const std::string& path) {
    require_keys(j, path, {"base_lr", "warmup_steps", "kind", "total_steps"});
    Schedule s;
    s.base_lr = get_field<double>(j, path, "base_lr");
    s.warmup_steps = get_or<std::int64_t>(j, path, "warmup_steps", 0);
    const std::string kind = get_or<std::string>(j, path, "kind", "constant");
    if (kind == "constant") s.kind = Schedule::Kind::constant;
    else if (kind == "cosine") s.kind = Schedule::Kind::cosine;
    else fail(path + ".kind", "unknown schedule '" + kind + "'");
    s.total_steps = get_or<std::int64_t>(j, path, "total_steps", 0);
    return s;
}

SamplerPolicy parse_sampler(const json& j, const std::string& path, std::int64_t n) {
    require_keys(j, path, {"kind", "batch_size", "priorities", "renormalize_every"});
    SamplerPolicy p;
    const std::string kind = get_field<std::string>(j, path, "kind");
    if (kind == "rr") p.kind = SamplerKind::random_reshuffle;
    else if (kind == "wr") p.kind = SamplerKind::with_replacement;
    else if (kind == "prioritized") p.kind = SamplerKind::prioritized;
    else fail(path + ".kind", "unknown sampler '" + kind + "'");
    p.batch_size = get_field<int>(j, path, "batch_size");
    if (p.kind == SamplerKind::prioritized) {
        if (!j.contains("priorities") || j.at("priorities").is_null() ||
            (j.at("priorities").is_string() && j.at("priorities") == "uniform")) {
            p.priorities = Eigen::VectorXd::Ones(n);
        } else {
            const auto v = get_field<std::vector<double>>(j, path, "priorities");
            p.priorities = Eigen::Map<const Eigen::VectorXd>(
                v.data(), static_cast<Eigen::Index>(v.size()));
        }
        p.renormalize_every = get_or<std::int64_t>(j, path, "renormalize_every", 0);
    }
    return p;
}

DataConfig parse_data(const json& j, const std::string& path) {
    require_keys(j, path, {"task", "n", "input_dim", "output_dim", "noise", "aug_noise"});
    DataConfig d;
    const std::string task = get_field<std::string>(j, path, "task");
    if (task == "classify") d.task = Task::classify;
    else if (task == "regress") d.task = Task::regress;
    else if (task == "contrastive") d.task = Task::contrastive;
    else if (task == "teacher_consistency") d.task = Task::teacher_consistency;
    else fail(path + ".task", "unknown task '" + task + "'");
    d.n = get_field<std::int64_t>(j, path, "n");
    d.input_dim = get_field<int>(j, path, "input_dim");
    d.output_dim = get_field<int>(j, path, "output_dim");
    d.noise = get_or<double>(j, path, "noise", 0.1);
    d.aug_noise = get_or<double>(j, path, "aug_noise", 0.0);
    return d;
}

AveragingConfig parse_averaging(const json& j, const std::string& path) {
    require_keys(j, path, {"ema_alpha", "swa", "teacher_alpha"});
    AveragingConfig a;
    if (j.contains("ema_alpha") && !j.at("ema_alpha").is_null()) {
        a.ema_alpha = get_field<double>(j, path, "ema_alpha");
    }
    a.swa = get_or<bool>(j, path, "swa", false);
    if (j.contains("teacher_alpha") && !j.at("teacher_alpha").is_null()) {
        a.teacher_alpha = get_field<double>(j, path, "teacher_alpha");
    }
    return a;
}

StatePolicy parse_policy(const json& j, const std::string& path) {
    require_keys(j, path, {"optimizer", "ema", "swa", "teacher", "bn", "queue", "rewarm_len"});
    StatePolicy p;
    auto act = [&](const char* key, PolicyAction fallback) {
        const std::string v = get_or<std::string>(j, path, key, to_string(fallback));
        try {
            return policy_action_from_string(v);
        } catch (const ValidationError&) {
            fail(path + "." + key, "unknown action '" + v + "'");
        }
    };
    p.optimizer = act("optimizer", PolicyAction::carry);
    p.ema = act("ema", PolicyAction::carry);
    p.swa = act("swa", PolicyAction::carry);
    p.teacher = act("teacher", PolicyAction::carry);
    p.bn = act("bn", PolicyAction::carry);
    p.queue = act("queue", PolicyAction::carry);
    p.rewarm_len = get_or<std::int64_t>(j, path, "rewarm_len", 0);
    return p;
}

InterventionSpec parse_intervention(const json& j, const std::string& path) {
    require_keys(j, path,
                 {"kind", "freeze_ema", "rewarm_k", "reuse_aug", "policy", "k_epochs",
                  "teacher_alpha_prime", "queue_mode"});
    InterventionSpec spec;
    const std::string kind = get_field<std::string>(j, path, "kind");
    try {
        spec.kind = intervention_kind_from_string(kind);
    } catch (const ValidationError&) {
        fail(path + ".kind", "unknown intervention '" + kind + "'");
    }
    spec.freeze_ema = get_or<bool>(j, path, "freeze_ema", false);
    if (j.contains("rewarm_k") && !j.at("rewarm_k").is_null()) {
        spec.rewarm_k = get_field<std::int64_t>(j, path, "rewarm_k");
    }
    spec.reuse_aug = get_or<bool>(j, path, "reuse_aug", true);
    if (j.contains("policy") && !j.at("policy").is_null()) {
        spec.phase_policy = parse_policy(j.at("policy"), path + ".policy");
    }
    spec.k_epochs = get_or<std::int64_t>(j, path, "k_epochs", 1);
    spec.teacher_alpha_prime = get_or<double>(j, path, "teacher_alpha_prime", 0.0);
    const std::string mode = get_or<std::string>(j, path, "queue_mode", "freeze");
    if (mode == "freeze") spec.queue_mode = QueueOpMode::freeze;
    else if (mode == "clear") spec.queue_mode = QueueOpMode::clear;
    else fail(path + ".queue_mode", "unknown mode '" + mode + "'");
    if (spec.kind == InterventionKind::phase_policy &&
        (!j.contains("policy") || j.at("policy").is_null())) {
        fail(path + ".policy", "phase_policy requires a policy object");
    }
    return spec;
}

}  // namespace

void ExperimentConfig::validate() const {
    recipe.validate();
    intervention.validate(recipe);
    metric.validate_for(recipe.data.task);
    if (t0 < 0) throw ValidationError("config field cfg.t0: must be non-negative");
    if (window && *window < 1) {
        throw ValidationError("config field cfg.window: must be >= 1 (or \"auto\")");
    }
    if (seeds < 1) throw ValidationError("config field cfg.seeds: at least one seed required");
    if (probe_size < 1) throw ValidationError("config field cfg.probe_size: must be positive");
    if (bootstrap_rounds < 1) {
        throw ValidationError("config field cfg.bootstrap_rounds: must be >= 1");
    }
    if (epsilon && *epsilon <= 0) {
        throw ValidationError("config field cfg.epsilon: must be positive");
    }
    if (!(alpha > 0 && alpha < 0.5)) {
        throw ValidationError("config field cfg.alpha: must be in (0, 0.5)");
    }
    if (jobs < 1) throw ValidationError("config field cfg.jobs: must be >= 1");
    const std::int64_t w = resolved_window();
    if (t0 + w > horizon) {
        throw ValidationError("config field cfg.horizon: require t0 < t0+W <= horizon (W=" +
                              std::to_string(w) + ")");
    }
}

std::int64_t ExperimentConfig::resolved_window() const {
    if (window) return *window;
    WindowContext ctx = WindowContext::from_recipe(recipe);
    ctx.k_epochs = intervention.k_epochs;
    return suggest_window(intervention, ctx);
}

BranchConfig ExperimentConfig::branch_config() const {
    BranchConfig cfg;
    cfg.t0 = t0;
    cfg.window = resolved_window();
    cfg.horizon = horizon;
    cfg.seeds = seeds;
    cfg.probe_size = probe_size;
    cfg.metric = metric;
    cfg.bn_recal_before_final = bn_recal_before_final;
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    require_keys(root, "config", {"root_seed", "recipe", "intervention", "cfg"});

    ExperimentConfig c;
    c.root_seed = get_field<std::uint64_t>(root, "config", "root_seed");

    if (!root.contains("recipe")) fail("config.recipe", "missing");
    const json& r = root.at("recipe");
    require_keys(r, "recipe",
                 {"model", "objective", "optimizer", "schedule", "sampler", "data", "averaging",
                  "queue", "calib_size"});
    if (!r.contains("data")) fail("recipe.data", "missing");
    c.recipe.data = parse_data(r.at("data"), "recipe.data");
    if (!r.contains("model")) fail("recipe.model", "missing");
    c.recipe.model = parse_model(r.at("model"), "recipe.model");
    if (!r.contains("objective")) fail("recipe.objective", "missing");
    c.recipe.objective = parse_objective(r.at("objective"), "recipe.objective");
    if (!r.contains("optimizer")) fail("recipe.optimizer", "missing");
    c.recipe.optimizer = parse_optimizer(r.at("optimizer"), "recipe.optimizer");
    if (!r.contains("schedule")) fail("recipe.schedule", "missing");
    c.recipe.schedule = parse_schedule(r.at("schedule"), "recipe.schedule");
    if (!r.contains("sampler")) fail("recipe.sampler", "missing");
    c.recipe.sampler = parse_sampler(r.at("sampler"), "recipe.sampler", c.recipe.data.n);
    if (r.contains("averaging") && !r.at("averaging").is_null()) {
        c.recipe.averaging = parse_averaging(r.at("averaging"), "recipe.averaging");
    }
    if (r.contains("queue") && !r.at("queue").is_null()) {
        require_keys(r.at("queue"), "recipe.queue", {"capacity"});
        c.recipe.queue = QueueConfig{get_field<std::int64_t>(r.at("queue"), "recipe.queue",
                                                             "capacity")};
    }
    c.recipe.calib_size = get_or<std::int64_t>(r, "recipe", "calib_size", 256);

    if (!root.contains("intervention")) fail("config.intervention", "missing");
    c.intervention = parse_intervention(root.at("intervention"), "intervention");

    if (!root.contains("cfg")) fail("config.cfg", "missing");
    const json& g = root.at("cfg");
    require_keys(g, "cfg",
                 {"t0", "window", "horizon", "seeds", "probe_size", "metric", "bn_recal",
                  "bootstrap_rounds", "epsilon", "alpha", "jobs"});
    c.t0 = get_field<std::int64_t>(g, "cfg", "t0");
    if (g.contains("window") && !g.at("window").is_null()) {
        const json& w = g.at("window");
        if (w.is_string()) {
            if (w.get<std::string>() != "auto") fail("cfg.window", "expected integer or \"auto\"");
        } else {
            c.window = get_field<std::int64_t>(g, "cfg", "window");
        }
    }
    c.horizon = get_field<std::int64_t>(g, "cfg", "horizon");
    c.seeds = get_or<int>(g, "cfg", "seeds", 5);
    c.probe_size = get_or<std::int64_t>(g, "cfg", "probe_size", 256);
    c.metric.kind = metric_kind_from_string(get_or<std::string>(g, "cfg", "metric", "tv"));
    c.bn_recal_before_final = get_or<bool>(g, "cfg", "bn_recal", false);
    c.bootstrap_rounds = get_or<std::int64_t>(g, "cfg", "bootstrap_rounds", 10000);
    if (g.contains("epsilon") && !g.at("epsilon").is_null()) {
        c.epsilon = get_field<double>(g, "cfg", "epsilon");
    }
    c.alpha = get_or<double>(g, "cfg", "alpha", 0.05);
    c.jobs = get_or<int>(g, "cfg", "jobs", 1);

    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return parse_experiment_config(read_text_file(path));
}

std::string canonical_config_text(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    return root.dump() + "\n";
}

std::string config_digest_hex(const std::string& canonical_text) {
    return sha256_hex(canonical_text);
}

std::string to_json_text(const ExperimentConfig& c) {
    json j;
    j["root_seed"] = c.root_seed;

    json model;
    model["kind"] = to_string(c.recipe.model.kind);
    model["input_dim"] = c.recipe.model.input_dim;
    model["output_dim"] = c.recipe.model.output_dim;
    model["hidden_sizes"] = c.recipe.model.hidden_sizes;
    model["norm"] = c.recipe.model.norm;

    json objective;
    objective["kind"] = to_string(c.recipe.objective.kind);
    objective["lambda"] = c.recipe.objective.lambda;
    objective["temperature"] = c.recipe.objective.temperature;

    json optimizer;
    optimizer["kind"] = c.recipe.optimizer.kind == OptimizerConfig::Kind::sgd_momentum
                            ? "sgd_momentum"
                            : "adamw";
    optimizer["beta"] = c.recipe.optimizer.beta;
    optimizer["beta1"] = c.recipe.optimizer.beta1;
    optimizer["beta2"] = c.recipe.optimizer.beta2;
    optimizer["eps"] = c.recipe.optimizer.eps;
    optimizer["weight_decay"] = c.recipe.optimizer.weight_decay;

    json schedule;
    schedule["base_lr"] = c.recipe.schedule.base_lr;
    schedule["warmup_steps"] = c.recipe.schedule.warmup_steps;
    schedule["kind"] = c.recipe.schedule.kind == Schedule::Kind::constant ? "constant" : "cosine";
    schedule["total_steps"] = c.recipe.schedule.total_steps;

    json sampler;
    sampler["kind"] = to_string(c.recipe.sampler.kind);
    sampler["batch_size"] = c.recipe.sampler.batch_size;
    if (c.recipe.sampler.kind == SamplerKind::prioritized) {
        std::vector<double> pr(c.recipe.sampler.priorities.data(),
                               c.recipe.sampler.priorities.data() +
                                   c.recipe.sampler.priorities.size());
        sampler["priorities"] = pr;
        sampler["renormalize_every"] = c.recipe.sampler.renormalize_every;
    }

    json data;
    data["task"] = to_string(c.recipe.data.task);
    data["n"] = c.recipe.data.n;
    data["input_dim"] = c.recipe.data.input_dim;
    data["output_dim"] = c.recipe.data.output_dim;
    data["noise"] = c.recipe.data.noise;
    data["aug_noise"] = c.recipe.data.aug_noise;

    json averaging;
    if (c.recipe.averaging.ema_alpha) averaging["ema_alpha"] = *c.recipe.averaging.ema_alpha;
    averaging["swa"] = c.recipe.averaging.swa;
    if (c.recipe.averaging.teacher_alpha) {
        averaging["teacher_alpha"] = *c.recipe.averaging.teacher_alpha;
    }

    json recipe;
    recipe["model"] = model;
    recipe["objective"] = objective;
    recipe["optimizer"] = optimizer;
    recipe["schedule"] = schedule;
    recipe["sampler"] = sampler;
    recipe["data"] = data;
    recipe["averaging"] = averaging;
    if (c.recipe.queue) recipe["queue"] = json{{"capacity", c.recipe.queue->capacity}};
    recipe["calib_size"] = c.recipe.calib_size;
    j["recipe"] = recipe;

    json intervention;
    intervention["kind"] = to_string(c.intervention.kind);
    switch (c.intervention.kind) {
        case InterventionKind::opt_reset:
            intervention["freeze_ema"] = c.intervention.freeze_ema;
            if (c.intervention.rewarm_k) intervention["rewarm_k"] = *c.intervention.rewarm_k;
            break;
        case InterventionKind::order_swap:
            intervention["reuse_aug"] = c.intervention.reuse_aug;
            break;
        case InterventionKind::phase_policy: {
            json policy;
            policy["optimizer"] = to_string(c.intervention.phase_policy.optimizer);
            policy["ema"] = to_string(c.intervention.phase_policy.ema);
            policy["swa"] = to_string(c.intervention.phase_policy.swa);
            policy["teacher"] = to_string(c.intervention.phase_policy.teacher);
            policy["bn"] = to_string(c.intervention.phase_policy.bn);
            policy["queue"] = to_string(c.intervention.phase_policy.queue);
            policy["rewarm_len"] = c.intervention.phase_policy.rewarm_len;
            intervention["policy"] = policy;
            intervention["k_epochs"] = c.intervention.k_epochs;
            break;
        }
        case InterventionKind::teacher_lag:
            intervention["teacher_alpha_prime"] = c.intervention.teacher_alpha_prime;
            break;
        case InterventionKind::queue_op:
            intervention["queue_mode"] = to_string(c.intervention.queue_mode);
            break;
        case InterventionKind::null_intervention:
            break;
    }
    j["intervention"] = intervention;

    json cfg;
    cfg["t0"] = c.t0;
    if (c.window) cfg["window"] = *c.window;
    else cfg["window"] = "auto";
    cfg["horizon"] = c.horizon;
    cfg["seeds"] = c.seeds;
    cfg["probe_size"] = c.probe_size;
    cfg["metric"] = to_string(c.metric.kind);
    cfg["bn_recal"] = c.bn_recal_before_final;
    cfg["bootstrap_rounds"] = c.bootstrap_rounds;
    if (c.epsilon) cfg["epsilon"] = *c.epsilon;
    cfg["alpha"] = c.alpha;
    cfg["jobs"] = c.jobs;
    j["cfg"] = cfg;

    return j.dump() + "\n";
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace memh
