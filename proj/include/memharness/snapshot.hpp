// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "memharness/bytes.hpp"
#include "memharness/model.hpp"
#include "memharness/optim.hpp"
#include "memharness/queue.hpp"
#include "memharness/rng.hpp"
#include "memharness/sampler.hpp"

namespace memh {

// The full augmented training state S_t. Restoring a snapshot and driving it
// with identical inputs reproduces an identical downstream trajectory.
struct Snapshot {
    std::int64_t step = 0;
    std::int64_t schedule_pos = 0;
    Schedule schedule;
    ParamVector params;
    OptimizerState opt;
    AveragingState avg;
    NormState norm;
    SamplerState sampler;
    std::optional<QueueState> queue;
    RngStream augment;
    RngStream model_stream;
    RngStream eval_stream;
    RngManifest manifest;
};

enum class PolicyAction { carry, reset, rewarm };

// Per-component action at a phase boundary. Rewarm is only meaningful for
// the optimizer (it adds a warmup wrap to the schedule).
struct StatePolicy {
    PolicyAction optimizer = PolicyAction::carry;
    PolicyAction ema = PolicyAction::carry;
    PolicyAction swa = PolicyAction::carry;
    PolicyAction teacher = PolicyAction::carry;
    PolicyAction bn = PolicyAction::carry;
    PolicyAction queue = PolicyAction::carry;
    std::int64_t rewarm_len = 0;

    void validate() const;
    bool all_carry() const;
    // Snapshot components whose bytes this policy may change.
    std::vector<std::string> touched_components() const;
};

// Applies carry/reset/rewarm per component. Reset semantics: optimizer
// moments zeroed; EMA/teacher re-anchored to current params; SWA emptied;
// BN stats to mean 0 / var 1; queue emptied. Rewarm also wraps the schedule
// with a warmup starting at the snapshot step.
Snapshot apply_policy(const Snapshot& s, const StatePolicy& policy);

struct ComponentChecksum {
    std::map<std::string, double> norms;
    std::string digest;  // sha256 of the component's serialized section
};

// Section names: meta, schedule, params, optimizer, ema, swa, teacher, bn,
// sampler, queue, rng, manifest.
std::vector<std::string> component_names();
ComponentChecksum component_checksum(const Snapshot& s, const std::string& component);
std::map<std::string, std::string> all_component_digests(const Snapshot& s);

// MEMH-SS1 container: length-prefixed sections, each followed by its
// SHA-256; manifest section is human-readable; trailing whole-file checksum.
Bytes serialize_snapshot(const Snapshot& s);
Snapshot parse_snapshot(const Bytes& bytes);
void save_snapshot(const Snapshot& s, const std::string& path);
Snapshot load_snapshot(const std::string& path);

const char* to_string(PolicyAction action);
PolicyAction policy_action_from_string(const std::string& s);

}  // namespace memh
