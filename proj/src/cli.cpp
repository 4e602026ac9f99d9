// SPDX-License-Identifier: Apache-2.0
#include "memharness/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "memharness/errors.hpp"
#include "memharness/experiment.hpp"

namespace memh {

namespace {

std::string fmt4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string fmt4g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

void print_estimate(const char* which, const EffectEstimate& est) {
    std::cout << which << ": ate=" << fmt4(est.ate) << ", CI=[" << fmt4(est.ci_lo) << ", "
              << fmt4(est.ci_hi) << "], width=" << fmt4g(est.ci_width)
              << ", B=" << est.bootstrap_rounds << ", seeds=" << est.per_seed.size() << "\n";
}

void print_tost(const char* which, const EquivalenceResult& t) {
    std::cout << "tost_" << which << ": mean=" << fmt4g(t.mean_delta) << ", s=" << fmt4g(t.stddev)
              << ", n=" << t.n << ", epsilon=" << fmt4g(t.epsilon)
              << " (pre-declared), alpha=" << fmt4g(t.alpha_level)
              << ", p_lower=" << fmt4g(t.p_lower) << ", p_upper=" << fmt4g(t.p_upper)
              << ", CI(1-2a)=[" << fmt4g(t.ci_lo) << ", " << fmt4g(t.ci_hi) << "], equivalent="
              << (t.equivalent ? "yes" : "no") << "\n";
}

struct RunOptions {
    std::string spec_path;
    std::string out_dir;
    std::optional<int> seeds;
    std::optional<std::int64_t> bootstrap_rounds;
    std::optional<double> epsilon;
    std::optional<double> alpha;
    std::optional<std::string> metric;
    bool bn_recal = false;
    std::optional<int> jobs;
};

int do_run(const RunOptions& opt) {
    const std::string file_text = read_text_file(opt.spec_path);
    ExperimentConfig config = parse_experiment_config(file_text);

    bool rewritten = false;
    if (const char* env = std::getenv("MEMH_ROOT_SEED")) {
        try {
            config.root_seed = std::stoull(env);
        } catch (const std::exception&) {
            throw ValidationError("MEMH_ROOT_SEED must be an unsigned integer");
        }
        config.root_seed_from_env = true;
        rewritten = true;
    }
    if (opt.seeds) { config.seeds = *opt.seeds; rewritten = true; }
    if (opt.bootstrap_rounds) { config.bootstrap_rounds = *opt.bootstrap_rounds; rewritten = true; }
    if (opt.epsilon) { config.epsilon = *opt.epsilon; rewritten = true; }
    if (opt.alpha) { config.alpha = *opt.alpha; rewritten = true; }
    if (opt.metric) { config.metric.kind = metric_kind_from_string(*opt.metric); rewritten = true; }
    if (opt.bn_recal) { config.bn_recal_before_final = true; rewritten = true; }
    if (opt.jobs) { config.jobs = *opt.jobs; rewritten = true; }
    config.validate();

    if (config.seeds < 5) {
        std::cerr << "warning: " << config.seeds
                  << " seeds; the protocol default is at least five seeds on small/medium "
                     "benchmarks (three at minimum on costlier regimes)\n";
    }

    // The stored config always reflects the effective settings, so replay
    // and the config digest stay faithful.
    const std::string canonical =
        rewritten ? to_json_text(config) : canonical_config_text(file_text);

    const ExperimentResult result = run_experiment(config, canonical, opt.out_dir);
    std::cout << "intervention: " << to_string(config.intervention.kind)
              << " (source " << config.intervention.source_tag() << "), window="
              << config.resolved_window() << ", metric=" << to_string(config.metric.kind)
              << "\n";
    print_estimate("early", result.early);
    print_estimate("final", result.final);
    if (result.tost_early) print_tost("early", *result.tost_early);
    if (result.tost_final) print_tost("final", *result.tost_final);
    for (const auto& a : result.aborted) std::cout << "aborted: " << a << "\n";
    std::cout << "run directory: " << opt.out_dir << "\n";
    return kExitOk;
}

int do_replay(const std::string& run_dir) {
    const std::string divergence = replay_run(run_dir);
    if (divergence.empty()) {
        std::cout << "replay: all stored checksums reproduced\n";
        return kExitOk;
    }
    std::cout << "replay: divergence: " << divergence << "\n";
    return kExitDivergence;
}

int do_verify(const std::string& run_dir) {
    const VerificationReport report = verify_run(run_dir);
    std::cout << report.to_text();
    return report.all_pass() ? kExitOk : kExitVerification;
}

int do_report(const std::string& run_dir, const std::string& out_path) {
    const std::string report = emit_report(run_dir);
    if (out_path.empty()) {
        std::cout << report;
    } else {
        write_text_file(out_path, report);
        std::cout << "report written: " << out_path << "\n";
    }
    return kExitOk;
}

int do_stats(const std::string& effects_path, std::optional<double> epsilon, double alpha,
             std::int64_t bootstrap_rounds, std::uint64_t root_seed) {
    const EffectsFile effects = parse_effects(read_text_file(effects_path));
    RngStream boot = make_stream(root_seed, kStreamBoot);
    const EffectEstimate early = paired_ate_ci(effects.z_early, bootstrap_rounds, boot);
    const EffectEstimate final_est = paired_ate_ci(effects.z_final, bootstrap_rounds, boot);
    print_estimate("early", early);
    print_estimate("final", final_est);
    if (epsilon) {
        if (effects.z_early.size() < 2) {
            throw ValidationError(
                "TOST requires at least 2 seed-level deltas: the t test has df = n - 1, "
                "which is undefined for n < 2");
        }
        print_tost("early", tost(effects.z_early, *epsilon, alpha));
        print_tost("final", tost(effects.z_final, *epsilon, alpha));
    }
    return kExitOk;
}

int do_window(const std::string& kind_s, std::optional<double> beta,
              std::optional<double> teacher_alpha, std::optional<std::int64_t> queue_k,
              std::optional<int> batch_size, std::optional<std::int64_t> n,
              std::optional<std::int64_t> k_epochs, const std::string& sampler) {
    InterventionSpec spec;
    spec.kind = intervention_kind_from_string(kind_s);
    WindowContext ctx;
    ctx.beta = beta;
    ctx.teacher_alpha = teacher_alpha;
    ctx.queue_capacity = queue_k;
    ctx.batch_size = batch_size;
    ctx.dataset_n = n;
    ctx.k_epochs = k_epochs;
    if (sampler == "rr") ctx.sampler_kind = SamplerKind::random_reshuffle;
    else if (sampler == "wr") ctx.sampler_kind = SamplerKind::with_replacement;
    else if (!sampler.empty()) throw ValidationError("unknown sampler: " + sampler);
    std::cout << suggest_window(spec, ctx) << "\n";
    return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"memharness: causal measurement of training memory"};
    app.require_subcommand(1);

    RunOptions run_opt;
    auto* run_cmd = app.add_subcommand("run", "run an experiment spec into a run directory");
    run_cmd->add_option("spec", run_opt.spec_path, "experiment spec (JSON)")->required();
    run_cmd->add_option("out_dir", run_opt.out_dir, "output run directory")->required();
    int seeds_flag = 0;
    std::int64_t boot_flag = 0;
    double eps_flag = 0, alpha_flag = 0;
    std::string metric_flag;
    int jobs_flag = 0;
    run_cmd->add_option("--seeds", seeds_flag, "number of paired seeds");
    run_cmd->add_option("--bootstrap-B", boot_flag, "bootstrap resamples");
    run_cmd->add_option("--epsilon", eps_flag, "equivalence margin");
    run_cmd->add_option("--alpha", alpha_flag, "TOST significance level");
    run_cmd->add_option("--metric", metric_flag,
                        "probe metric {tv|js|hellinger|l2|disagreement|acc|ece|nll}");
    run_cmd->add_flag("--bn-recal", run_opt.bn_recal, "recalibrate BN before final eval");
    run_cmd->add_option("--jobs", jobs_flag, "parallel seed workers");

    std::string replay_dir;
    auto* replay_cmd = app.add_subcommand("replay", "re-execute a run and compare checksums");
    replay_cmd->add_option("run_dir", replay_dir, "run directory")->required();

    std::string verify_dir;
    auto* verify_cmd = app.add_subcommand("verify", "verify artifacts of a run directory");
    verify_cmd->add_option("run_dir", verify_dir, "run directory")->required();

    std::string report_dir, report_out;
    auto* report_cmd = app.add_subcommand("report", "emit the memory-sensitive report");
    report_cmd->add_option("run_dir", report_dir, "run directory")->required();
    report_cmd->add_option("-o,--output", report_out, "write to file instead of stdout");

    std::string effects_path;
    double stats_eps = 0, stats_alpha = 0.05;
    std::int64_t stats_boot = 10000;
    std::uint64_t stats_seed = 1;
    auto* stats_cmd = app.add_subcommand("stats", "recompute ATE/CI (and TOST) from effects.tsv");
    stats_cmd->add_option("effects", effects_path, "effects.tsv path")->required();
    stats_cmd->add_option("--epsilon", stats_eps, "equivalence margin (enables TOST)");
    stats_cmd->add_option("--alpha", stats_alpha, "TOST significance level");
    stats_cmd->add_option("--bootstrap-B", stats_boot, "bootstrap resamples");
    stats_cmd->add_option("--root-seed", stats_seed, "root seed for the boot stream");

    std::string win_kind, win_sampler;
    double win_beta = 0, win_alpha = 0;
    std::int64_t win_queue = 0, win_n = 0, win_k_epochs = 0;
    int win_batch = 0;
    auto* window_cmd = app.add_subcommand("window", "suggest an intervention window W");
    window_cmd->add_option("--intervention", win_kind, "intervention kind")->required();
    window_cmd->add_option("--beta", win_beta, "optimizer first-moment decay");
    window_cmd->add_option("--teacher-alpha", win_alpha, "teacher EMA decay");
    window_cmd->add_option("--queue-k", win_queue, "queue capacity K");
    window_cmd->add_option("--batch-size", win_batch, "batch size B");
    window_cmd->add_option("--n", win_n, "dataset size");
    window_cmd->add_option("--k-epochs", win_k_epochs, "phase window in epochs");
    window_cmd->add_option("--sampler", win_sampler, "rr or wr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (run_cmd->parsed()) {
            if (run_cmd->count("--seeds")) run_opt.seeds = seeds_flag;
            if (run_cmd->count("--bootstrap-B")) run_opt.bootstrap_rounds = boot_flag;
            if (run_cmd->count("--epsilon")) run_opt.epsilon = eps_flag;
            if (run_cmd->count("--alpha")) run_opt.alpha = alpha_flag;
            if (run_cmd->count("--metric")) run_opt.metric = metric_flag;
            if (run_cmd->count("--jobs")) run_opt.jobs = jobs_flag;
            return do_run(run_opt);
        }
        if (replay_cmd->parsed()) return do_replay(replay_dir);
        if (verify_cmd->parsed()) return do_verify(verify_dir);
        if (report_cmd->parsed()) return do_report(report_dir, report_out);
        if (stats_cmd->parsed()) {
            std::optional<double> eps;
            if (stats_cmd->count("--epsilon")) eps = stats_eps;
            return do_stats(effects_path, eps, stats_alpha, stats_boot, stats_seed);
        }
        if (window_cmd->parsed()) {
            auto opt_if = [](bool set, auto value) {
                return set ? std::optional<decltype(value)>(value)
                           : std::optional<decltype(value)>();
            };
            return do_window(win_kind, opt_if(window_cmd->count("--beta") > 0, win_beta),
                             opt_if(window_cmd->count("--teacher-alpha") > 0, win_alpha),
                             opt_if(window_cmd->count("--queue-k") > 0, win_queue),
                             opt_if(window_cmd->count("--batch-size") > 0, win_batch),
                             opt_if(window_cmd->count("--n") > 0, win_n),
                             opt_if(window_cmd->count("--k-epochs") > 0, win_k_epochs),
                             win_sampler);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const VerificationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitVerification;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitValidation;
}

}  // namespace memh
