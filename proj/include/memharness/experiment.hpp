// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "memharness/audit.hpp"
#include "memharness/config.hpp"
#include "memharness/intervene.hpp"

namespace memh {

struct ExperimentResult {
    BranchOutcome outcome;
    EffectEstimate early;
    EffectEstimate final;
    std::optional<EquivalenceResult> tost_early;
    std::optional<EquivalenceResult> tost_final;
    std::vector<std::string> aborted;   // "s<i>: reason"
    std::vector<std::string> warnings;  // logged invariant violations
};

// Runs every seed in memory: root -> fork -> window -> horizon, then the
// bootstrap summary on the per-seed paired outcomes (stream "boot").
ExperimentResult execute_experiment(const ExperimentConfig& config);

// execute + write the full run directory (manifest.txt first, then
// config.json, trails, order records, snapshots, effects.tsv, report.md).
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const std::string& canonical_config_text,
                                const std::string& out_dir);

// Re-executes a stored run and compares window hashes, final snapshots and
// effects bytes. Returns empty string when everything matches, else a
// description of the first divergence.
std::string replay_run(const std::string& run_dir);

// ---------------------------------------------------------------------------
// Run-directory layout

std::string trail_path(const std::string& run_dir, int seed, const std::string& branch);
std::string order_path(const std::string& run_dir, int seed, std::int64_t t0, bool treat);
std::string snapshot_path(const std::string& run_dir, int seed, const std::string& branch,
                          std::int64_t t);

// ---------------------------------------------------------------------------
// Effects table (TSV: header, one row per seed, then a '#' summary block).

struct EffectsFile {
    std::vector<int> seeds;
    std::vector<double> z_early;
    std::vector<double> z_final;
};

std::string render_effects(const ExperimentResult& result);
EffectsFile parse_effects(const std::string& text);

// Probe shared by every branch of the experiment (stream "eval" from the
// experiment root seed).
Probe build_probe(const ExperimentConfig& config);

}  // namespace memh
