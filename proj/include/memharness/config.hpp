// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "memharness/intervene.hpp"

namespace memh {

// One experiment: recipe + intervention + branch configuration + statistics
// settings, parsed from a JSON spec file.
struct ExperimentConfig {
    std::uint64_t root_seed = 1;
    bool root_seed_from_env = false;
    Recipe recipe;
    InterventionSpec intervention;

    std::int64_t t0 = 100;
    std::optional<std::int64_t> window;  // nullopt = "auto"
    std::int64_t horizon = 200;
    int seeds = 5;
    std::int64_t probe_size = 256;
    MetricSpec metric;
    bool bn_recal_before_final = false;

    std::int64_t bootstrap_rounds = 10000;
    std::optional<double> epsilon;
    double alpha = 0.05;
    int jobs = 1;

    void validate() const;
    std::int64_t resolved_window() const;
    BranchConfig branch_config() const;
};

// Parses and validates; errors carry the offending field path.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical byte form for digesting: parsed JSON re-serialized with sorted
// keys, compact separators, UTF-8, one trailing LF.
std::string canonical_config_text(const std::string& json_text);
std::string config_digest_hex(const std::string& canonical_text);

// Canonical JSON for a config value (used when a config is built in code).
std::string to_json_text(const ExperimentConfig& config);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace memh
