// SPDX-License-Identifier: Apache-2.0
#include "memharness/experiment.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "memharness/errors.hpp"

namespace memh {

namespace fs = std::filesystem;

namespace {

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (c == '\t' || c == '\n') c = ' ';
    }
    return s;
}

RunManifest build_manifest(const ExperimentConfig& config, const std::string& canonical_text) {
    RunManifest m;
    m.root_seed = config.root_seed;
    m.root_seed_from_env = config.root_seed_from_env;
    m.config_digest = config_digest_hex(canonical_text);
    m.substrate = substrate_note();

    const Recipe& r = config.recipe;
    m.recipe_summary.push_back(std::string("model=") + to_string(r.model.kind));
    m.recipe_summary.push_back(std::string("objective=") + to_string(r.objective.kind));
    m.recipe_summary.push_back(std::string("optimizer=") +
                               (r.optimizer.kind == OptimizerConfig::Kind::sgd_momentum
                                    ? "sgd_momentum"
                                    : "adamw"));
    m.recipe_summary.push_back(std::string("sampler=") + to_string(r.sampler.kind));
    m.recipe_summary.push_back(std::string("task=") + to_string(r.data.task));
    m.recipe_summary.push_back("intervention=" + std::string(to_string(config.intervention.kind)));
    m.recipe_summary.push_back("source=" + std::string(config.intervention.source_tag()));
    m.recipe_summary.push_back("metric=" + std::string(to_string(config.metric.kind)));
    m.recipe_summary.push_back("t0=" + std::to_string(config.t0));
    m.recipe_summary.push_back("window=" + std::to_string(config.resolved_window()));
    m.recipe_summary.push_back("horizon=" + std::to_string(config.horizon));
    m.recipe_summary.push_back("seeds=" + std::to_string(config.seeds));

    for (int i = 0; i < config.seeds; ++i) {
        const std::string name = "seed/" + std::to_string(i);
        m.streams.emplace_back(name, fmt_hex(derive_seed(config.root_seed, name)));
    }
    m.streams.emplace_back("eval", fmt_hex(derive_seed(config.root_seed, kStreamEval)));
    m.streams.emplace_back("boot", fmt_hex(derive_seed(config.root_seed, kStreamBoot)));
    return m;
}

}  // namespace

Probe build_probe(const ExperimentConfig& config) {
    RngStream eval_stream = make_stream(config.root_seed, kStreamEval);
    const DataConfig& d = config.recipe.data;
    return make_probe(d.task, config.probe_size, d.input_dim, d.output_dim, d.noise, eval_stream);
}

ExperimentResult execute_experiment(const ExperimentConfig& config) {
    config.validate();
    const Probe probe = build_probe(config);
    const BranchConfig cfg = config.branch_config();

    ExperimentResult result;
    result.outcome = branch_and_hold(config.recipe, config.intervention, cfg, probe,
                                     config.root_seed, config.jobs);

    for (const auto& seed : result.outcome.seeds) {
        if (seed.aborted) {
            result.aborted.push_back("s" + std::to_string(seed.seed_index) + ": " +
                                     seed.abort_reason);
        }
    }
    const std::vector<double> z_early = result.outcome.z_early();
    const std::vector<double> z_final = result.outcome.z_final();
    if (z_early.empty()) {
        throw DivergenceError("every seed aborted; no effect estimate possible");
    }

    RngStream boot = make_stream(config.root_seed, kStreamBoot);
    result.early = paired_ate_ci(z_early, config.bootstrap_rounds, boot);
    result.final = paired_ate_ci(z_final, config.bootstrap_rounds, boot);
    for (const auto& [name, est] :
         {std::pair<const char*, const EffectEstimate&>{"early", result.early},
          {"final", result.final}}) {
        if (!(est.ci_lo <= est.ate && est.ate <= est.ci_hi)) {
            result.warnings.push_back(std::string(name) +
                                      ": percentile CI does not contain the sample mean");
        }
    }

    if (config.epsilon && z_early.size() >= 2) {
        result.tost_early = tost(z_early, *config.epsilon, config.alpha);
        result.tost_final = tost(z_final, *config.epsilon, config.alpha);
    }
    return result;
}

std::string trail_path(const std::string& run_dir, int seed, const std::string& branch) {
    return run_dir + "/trail-s" + std::to_string(seed) + "." + branch + ".log";
}

std::string order_path(const std::string& run_dir, int seed, std::int64_t t0, bool treat) {
    return run_dir + "/order-s" + std::to_string(seed) + "-t" + std::to_string(t0) +
           (treat ? ".treat.bin" : ".bin");
}

std::string snapshot_path(const std::string& run_dir, int seed, const std::string& branch,
                          std::int64_t t) {
    return run_dir + "/snapshot-s" + std::to_string(seed) + "." + branch + "-t" +
           std::to_string(t) + ".bin";
}

std::string render_effects(const ExperimentResult& result) {
    std::ostringstream out;
    out << "seed\tz_early\tz_final\n";
    for (const auto& seed : result.outcome.seeds) {
        if (seed.aborted) continue;
        out << seed.seed_index << "\t" << fmt_g17(seed.z_early) << "\t" << fmt_g17(seed.z_final)
            << "\n";
    }
    auto summary = [&](const char* which, const EffectEstimate& est) {
        out << "# " << which << "\tate=" << fmt_g17(est.ate) << "\tci_lo=" << fmt_g17(est.ci_lo)
            << "\tci_hi=" << fmt_g17(est.ci_hi) << "\tci_width=" << fmt_g17(est.ci_width)
            << "\tB=" << est.bootstrap_rounds << "\tseeds=" << est.per_seed.size() << "\n";
    };
    summary("early", result.early);
    summary("final", result.final);
    auto tost_line = [&](const char* which, const EquivalenceResult& t) {
        out << "# tost_" << which << "\tepsilon=" << fmt_g17(t.epsilon)
            << "\talpha=" << fmt_g17(t.alpha_level) << "\tmean=" << fmt_g17(t.mean_delta)
            << "\ts=" << fmt_g17(t.stddev) << "\tn=" << t.n
            << "\tp_lower=" << fmt_g17(t.p_lower) << "\tp_upper=" << fmt_g17(t.p_upper)
            << "\tci_lo=" << fmt_g17(t.ci_lo) << "\tci_hi=" << fmt_g17(t.ci_hi)
            << "\tequivalent=" << (t.equivalent ? "1" : "0") << "\n";
    };
    if (result.tost_early) tost_line("early", *result.tost_early);
    if (result.tost_final) tost_line("final", *result.tost_final);
    for (const auto& note : result.aborted) {
        out << "# aborted\t" << sanitize(note) << "\n";
    }
    for (const auto& note : result.warnings) {
        out << "# warning\t" << sanitize(note) << "\n";
    }
    bool any_cka = false;
    for (const auto& seed : result.outcome.seeds) {
        if (!seed.aborted && seed.final_cka) any_cka = true;
    }
    if (any_cka) {
        out << "# cka_final";
        for (const auto& seed : result.outcome.seeds) {
            if (!seed.aborted && seed.final_cka) {
                out << "\ts" << seed.seed_index << "=" << fmt_g17(*seed.final_cka);
            }
        }
        out << "\n";
    }
    const int tests = 2 + (result.tost_early ? 2 : 0);
    out << "# tests\tcount=" << tests << "\n";
    return out.str();
}

EffectsFile parse_effects(const std::string& text) {
    EffectsFile f;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (lineno == 1 && line.rfind("seed", 0) == 0) continue;
        std::istringstream row(line);
        std::string seed_s, early_s, final_s;
        if (!std::getline(row, seed_s, '\t') || !std::getline(row, early_s, '\t') ||
            !std::getline(row, final_s, '\t')) {
            throw ValidationError("effects file: malformed row at line " +
                                  std::to_string(lineno));
        }
        try {
            f.seeds.push_back(std::stoi(seed_s));
            f.z_early.push_back(std::stod(early_s));
            f.z_final.push_back(std::stod(final_s));
        } catch (const std::exception&) {
            throw ValidationError("effects file: malformed row at line " +
                                  std::to_string(lineno));
        }
    }
    if (f.seeds.empty()) throw ValidationError("effects file: no seed rows");
    return f;
}

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& canonical_config_text,
                                const std::string& out_dir) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error("cannot create run directory: " + out_dir + " (" + ec.message() + ")");

    // Manifest goes first, before any training artifact.
    const RunManifest manifest = build_manifest(config, canonical_config_text);
    manifest.write(out_dir + "/manifest.txt");
    write_text_file(out_dir + "/config.json", canonical_config_text);

    ExperimentResult result = execute_experiment(config);
    const std::int64_t t0 = config.t0;
    const std::int64_t horizon = config.horizon;

    for (const auto& seed : result.outcome.seeds) {
        const int i = seed.seed_index;
        seed.trail_root.write(trail_path(out_dir, i, "root"));
        seed.trail_control.write(trail_path(out_dir, i, "control"));
        seed.trail_treat.write(trail_path(out_dir, i, "treat"));
        if (seed.aborted) continue;
        save_order_record(seed.record_control, order_path(out_dir, i, t0, false));
        if (config.intervention.kind == InterventionKind::order_swap) {
            save_order_record(seed.record_treat, order_path(out_dir, i, t0, true));
        }
        save_snapshot(seed.snap_root_t0, snapshot_path(out_dir, i, "root", t0));
        save_snapshot(seed.snap_control_t0, snapshot_path(out_dir, i, "control", t0));
        save_snapshot(seed.snap_treat_t0, snapshot_path(out_dir, i, "treat", t0));
        save_snapshot(seed.snap_control_final, snapshot_path(out_dir, i, "control", horizon));
        save_snapshot(seed.snap_treat_final, snapshot_path(out_dir, i, "treat", horizon));
    }

    write_text_file(out_dir + "/effects.tsv", render_effects(result));
    write_text_file(out_dir + "/report.md", emit_report(out_dir));
    return result;
}

std::string replay_run(const std::string& run_dir) {
    const std::string config_text = read_text_file(run_dir + "/config.json");
    ExperimentConfig config = parse_experiment_config(config_text);
    const RunManifest manifest = RunManifest::load(run_dir + "/manifest.txt");
    if (manifest.config_digest != config_digest_hex(canonical_config_text(config_text))) {
        return "config.json digest does not match manifest";
    }

    ExperimentResult result = execute_experiment(config);

    // Earliest signals first: the recorded window, then end states, then the
    // effect table.
    for (const auto& seed : result.outcome.seeds) {
        if (seed.aborted) continue;
        const int i = seed.seed_index;
        OrderRecord stored;
        try {
            stored = load_order_record(order_path(run_dir, i, config.t0, false));
        } catch (const Error& e) {
            return "seed " + std::to_string(i) + ": order record unreadable: " + e.what();
        }
        if (stored.hash != seed.record_control.hash) {
            return "seed " + std::to_string(i) + ": order hash diverged at step " +
                   std::to_string(config.t0);
        }
        for (const auto& branch : {std::string("control"), std::string("treat")}) {
            // The stored checksums live in the hash-chained trail; loading it
            // re-verifies the chain, so a truncated or edited trail fails here
            // with a chain diagnostic.
            const Snapshot& fresh =
                branch == "control" ? seed.snap_control_final : seed.snap_treat_final;
            try {
                const AuditTrail trail = AuditTrail::load(trail_path(run_dir, i, branch));
                const AuditRecord* final_rec = nullptr;
                for (const auto* rec : trail.find(RecordKind::branch_event)) {
                    if (field_value(*rec, "event") == "final_checksums") final_rec = rec;
                }
                if (final_rec == nullptr) {
                    return "seed " + std::to_string(i) + ": " + branch +
                           " trail has no final checksums";
                }
                for (const auto& [name, digest] : all_component_digests(fresh)) {
                    if (field_value(*final_rec, name) != digest) {
                        return "seed " + std::to_string(i) + ": " + branch + " component '" +
                               name + "' diverged at step " + std::to_string(config.horizon);
                    }
                }
            } catch (const std::exception& e) {
                return "seed " + std::to_string(i) + ": " + branch + " trail: " + e.what();
            }

            const std::string path = snapshot_path(run_dir, i, branch, config.horizon);
            Bytes stored_bytes;
            try {
                std::ifstream f(path, std::ios::binary);
                if (!f) return "seed " + std::to_string(i) + ": missing snapshot " + path;
                stored_bytes.assign((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
            } catch (const std::exception& e) {
                return "seed " + std::to_string(i) + ": snapshot unreadable: " + e.what();
            }
            if (serialize_snapshot(fresh) != stored_bytes) {
                return "seed " + std::to_string(i) + ": " + branch +
                       " snapshot bytes diverged at step " + std::to_string(config.horizon);
            }
        }
    }

    const std::string stored_effects = read_text_file(run_dir + "/effects.tsv");
    if (render_effects(result) != stored_effects) {
        return "effects.tsv diverged";
    }
    return "";
}

}  // namespace memh
