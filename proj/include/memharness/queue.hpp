// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <deque>
#include <string>

namespace memh {

struct QueueEntry {
    Eigen::VectorXd value;
    std::int64_t inserted_at = 0;
};

// FIFO embedding queue (external memory). An entry enqueued at step t with
// steady enqueue of B per step is evicted ceil(K/B) enqueue-steps later.
struct QueueState {
    std::int64_t capacity = 0;
    std::deque<QueueEntry> entries;
    bool frozen = false;

    std::int64_t size() const { return static_cast<std::int64_t>(entries.size()); }
};

// Enqueues each row of `embeddings`, evicting oldest entries past capacity.
// Throws on a frozen queue: enqueues inside a freeze window are an
// intervention-window violation.
QueueState queue_step(QueueState q, const Eigen::MatrixXd& embeddings, std::int64_t step);

// SHA-256 over entries in queue order, each element as f64 big-endian.
std::string queue_fingerprint(const QueueState& q);

}  // namespace memh
