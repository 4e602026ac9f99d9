// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace memh {

// Counter-style SplitMix64 stream. Every consumer of randomness in the
// harness draws from a named stream derived from a single root seed, so
// that branch pairs can replay identical noise and audits can account
// for every draw.
struct RngStream {
    std::string name;
    std::uint64_t state = 0;
    std::uint64_t draws = 0;

    std::uint64_t next_u64();

    // Uniform on [0, 1), 53-bit mantissa.
    double uniform();

    // Standard normal via Box-Muller; always consumes exactly two draws.
    double normal();

    // Unbiased draw from [0, n) by rejection.
    std::uint64_t bounded(std::uint64_t n);
};

// derived_seed = first 8 bytes (big-endian) of
// SHA-256(root_seed as u64 BE || 0x00 || UTF-8 name).
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view name);

RngStream make_stream(std::uint64_t root_seed, std::string_view name);

struct StreamRecord {
    std::uint64_t derived_seed = 0;
    std::uint64_t draws_consumed = 0;

    bool operator==(const StreamRecord&) const = default;
};

// Registry of every named stream derived from one root key. Streams are
// value types; callers sync draw counts back via note_draws before the
// manifest is serialized.
struct RngManifest {
    std::uint64_t root_seed = 0;
    std::map<std::string, StreamRecord> streams;

    // Registers the name (duplicate registration is an error) and returns
    // a fresh stream positioned at its derived seed.
    RngStream derive(std::string_view name);

    void note_draws(const RngStream& stream);

    bool operator==(const RngManifest&) const = default;
};

// Canonical stream names registered for every training run.
inline constexpr const char* kStreamInit = "init";
inline constexpr const char* kStreamOrder = "order";
inline constexpr const char* kStreamAugment = "augment";
inline constexpr const char* kStreamModel = "model";
inline constexpr const char* kStreamEval = "eval";
inline constexpr const char* kStreamBoot = "boot";

}  // namespace memh
