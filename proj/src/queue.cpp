// SPDX-License-Identifier: Apache-2.0
#include "memharness/queue.hpp"

#include "memharness/bytes.hpp"
#include "memharness/errors.hpp"
#include "memharness/sha256.hpp"

namespace memh {

QueueState queue_step(QueueState q, const Eigen::MatrixXd& embeddings, std::int64_t step) {
    if (q.frozen) {
        throw DivergenceError("enqueue on frozen queue at step " + std::to_string(step));
    }
    for (Eigen::Index r = 0; r < embeddings.rows(); ++r) {
        q.entries.push_back(QueueEntry{embeddings.row(r).transpose(), step});
        while (q.size() > q.capacity) {
            q.entries.pop_front();
        }
    }
    return q;
}

std::string queue_fingerprint(const QueueState& q) {
    ByteWriter w;
    for (const auto& e : q.entries) {
        for (Eigen::Index i = 0; i < e.value.size(); ++i) {
            w.f64_be(e.value[i]);
        }
    }
    return sha256_hex(w.data());
}

}  // namespace memh
