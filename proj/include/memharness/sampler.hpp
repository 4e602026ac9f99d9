// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "memharness/bytes.hpp"
#include "memharness/rng.hpp"

namespace memh {

enum class SamplerKind { random_reshuffle, with_replacement, prioritized };

struct SamplerPolicy {
    SamplerKind kind = SamplerKind::random_reshuffle;
    int batch_size = 1;
    // Prioritized only.
    Eigen::VectorXd priorities;
    std::int64_t renormalize_every = 0;  // 0 = every epoch

    void validate(std::int64_t dataset_size) const;
};

// Single-owner mutable sampler position. All evolution is a deterministic
// function of (policy, dataset size, order-stream state).
struct SamplerState {
    SamplerPolicy policy;
    std::int64_t n = 0;
    std::int64_t epoch = 0;
    std::int64_t cursor = 0;
    std::int64_t batches_drawn = 0;
    std::vector<std::uint32_t> permutation;  // RR only
    Eigen::VectorXd live_priorities;         // prioritized only
    RngStream stream;
};

SamplerState make_sampler(const SamplerPolicy& policy, std::int64_t dataset_size,
                          RngStream order_stream);

// Advances the state and returns the next batch of example ids. RR keeps the
// final short batch of an epoch so per-epoch coverage is exact.
std::vector<std::uint32_t> next_batch(SamplerState& state);

std::int64_t epoch_length(std::int64_t n, int batch_size);

// Recorded window of minibatch id sequences plus per-example augmentation
// seeds, immutable once created.
struct OrderRecord {
    std::int64_t t0 = 0;
    std::vector<std::vector<std::uint32_t>> batches;
    std::vector<std::vector<std::uint64_t>> aug_seeds;
    std::string hash;  // order_hash(batches), 64 hex chars

    std::int64_t window() const { return static_cast<std::int64_t>(batches.size()); }
};

// Pre-fetches the next W batches (advancing `state` past the window) and
// draws one augmentation seed per example slot from `augment`.
OrderRecord record_window(SamplerState& state, RngStream& augment, std::int64_t t0, std::int64_t w);

// Fresh Fisher-Yates permutation of the flat (id, aug_seed) sequence,
// re-partitioned into the same batch sizes. Seeds follow their example.
OrderRecord permute_window(const OrderRecord& record, RngStream& stream);

// SHA-256 over, per batch, u32 big-endian length then each id as u64
// big-endian; hex encoded. Bit-exact across implementations.
std::string order_hash(const std::vector<std::vector<std::uint32_t>>& batches);

// weight_i = 1 / (n * p_i) with p_i = priority_i / sum(priorities).
Eigen::VectorXd importance_weights(const std::vector<std::uint32_t>& ids,
                                   const Eigen::VectorXd& priorities);

// MEMH-OR1 container with a trailing whole-file checksum.
Bytes serialize_order_record(const OrderRecord& record);
OrderRecord parse_order_record(const Bytes& bytes);
void save_order_record(const OrderRecord& record, const std::string& path);
OrderRecord load_order_record(const std::string& path);

const char* to_string(SamplerKind kind);

}  // namespace memh
