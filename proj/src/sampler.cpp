// SPDX-License-Identifier: Apache-2.0
#include "memharness/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "memharness/errors.hpp"
#include "memharness/sha256.hpp"

namespace memh {

namespace {

void fisher_yates(std::vector<std::uint32_t>& ids, RngStream& stream) {
    for (std::size_t i = ids.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(stream.bounded(i));
        std::swap(ids[i - 1], ids[j]);
    }
}

std::vector<std::uint32_t> fresh_permutation(std::int64_t n, RngStream& stream) {
    std::vector<std::uint32_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0u);
    fisher_yates(perm, stream);
    return perm;
}

}  // namespace

void SamplerPolicy::validate(std::int64_t dataset_size) const {
    if (batch_size <= 0) throw ValidationError("batch_size must be positive");
    if (batch_size > dataset_size) {
        throw ValidationError("batch_size must not exceed dataset size");
    }
    if (kind == SamplerKind::prioritized) {
        if (priorities.size() != dataset_size) {
            throw ValidationError("priorities must cover every example");
        }
        for (Eigen::Index i = 0; i < priorities.size(); ++i) {
            if (!(priorities[i] > 0) || !std::isfinite(priorities[i])) {
                throw ValidationError("priorities must be strictly positive and finite");
            }
        }
        if (renormalize_every < 0) throw ValidationError("renormalize_every must be >= 0");
    }
}

SamplerState make_sampler(const SamplerPolicy& policy, std::int64_t dataset_size,
                          RngStream order_stream) {
    policy.validate(dataset_size);
    SamplerState s;
    s.policy = policy;
    s.n = dataset_size;
    s.stream = std::move(order_stream);
    if (policy.kind == SamplerKind::random_reshuffle) {
        s.permutation = fresh_permutation(dataset_size, s.stream);
    } else if (policy.kind == SamplerKind::prioritized) {
        s.live_priorities = policy.priorities;
    }
    return s;
}

std::int64_t epoch_length(std::int64_t n, int batch_size) {
    return (n + batch_size - 1) / batch_size;
}

std::vector<std::uint32_t> next_batch(SamplerState& state) {
    const int b = state.policy.batch_size;
    std::vector<std::uint32_t> ids;

    switch (state.policy.kind) {
        case SamplerKind::random_reshuffle: {
            const std::int64_t take = std::min<std::int64_t>(b, state.n - state.cursor);
            ids.assign(state.permutation.begin() + state.cursor,
                       state.permutation.begin() + state.cursor + take);
            state.cursor += take;
            if (state.cursor >= state.n) {
                state.epoch += 1;
                state.cursor = 0;
                state.permutation = fresh_permutation(state.n, state.stream);
            }
            break;
        }
        case SamplerKind::with_replacement: {
            ids.reserve(static_cast<std::size_t>(b));
            for (int i = 0; i < b; ++i) {
                ids.push_back(static_cast<std::uint32_t>(
                    state.stream.bounded(static_cast<std::uint64_t>(state.n))));
            }
            break;
        }
        case SamplerKind::prioritized: {
            // B draws proportional to priority, without replacement within
            // the batch.
            Eigen::VectorXd p = state.live_priorities;
            ids.reserve(static_cast<std::size_t>(b));
            for (int k = 0; k < b; ++k) {
                const double total = p.sum();
                double x = state.stream.uniform() * total;
                Eigen::Index pick = p.size() - 1;
                for (Eigen::Index i = 0; i < p.size(); ++i) {
                    if (p[i] <= 0) continue;
                    x -= p[i];
                    if (x < 0) {
                        pick = i;
                        break;
                    }
                }
                ids.push_back(static_cast<std::uint32_t>(pick));
                p[pick] = 0.0;
            }
            state.batches_drawn += 1;
            const std::int64_t cadence = state.policy.renormalize_every > 0
                                             ? state.policy.renormalize_every
                                             : epoch_length(state.n, b);
            if (state.batches_drawn % cadence == 0) {
                state.live_priorities *=
                    static_cast<double>(state.n) / state.live_priorities.sum();
            }
            break;
        }
    }
    return ids;
}

OrderRecord record_window(SamplerState& state, RngStream& augment, std::int64_t t0,
                          std::int64_t w) {
    if (w < 1) throw ValidationError("window must be at least 1");
    OrderRecord record;
    record.t0 = t0;
    record.batches.reserve(static_cast<std::size_t>(w));
    record.aug_seeds.reserve(static_cast<std::size_t>(w));
    for (std::int64_t i = 0; i < w; ++i) {
        std::vector<std::uint32_t> ids = next_batch(state);
        std::vector<std::uint64_t> seeds(ids.size());
        for (auto& s : seeds) s = augment.next_u64();
        record.batches.push_back(std::move(ids));
        record.aug_seeds.push_back(std::move(seeds));
    }
    record.hash = order_hash(record.batches);
    return record;
}

OrderRecord permute_window(const OrderRecord& record, RngStream& stream) {
    std::vector<std::pair<std::uint32_t, std::uint64_t>> flat;
    for (std::size_t b = 0; b < record.batches.size(); ++b) {
        for (std::size_t i = 0; i < record.batches[b].size(); ++i) {
            flat.emplace_back(record.batches[b][i], record.aug_seeds[b][i]);
        }
    }
    for (std::size_t i = flat.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(stream.bounded(i));
        std::swap(flat[i - 1], flat[j]);
    }

    OrderRecord out;
    out.t0 = record.t0;
    std::size_t pos = 0;
    for (const auto& batch : record.batches) {
        std::vector<std::uint32_t> ids(batch.size());
        std::vector<std::uint64_t> seeds(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i, ++pos) {
            ids[i] = flat[pos].first;
            seeds[i] = flat[pos].second;
        }
        out.batches.push_back(std::move(ids));
        out.aug_seeds.push_back(std::move(seeds));
    }
    out.hash = order_hash(out.batches);
    return out;
}

std::string order_hash(const std::vector<std::vector<std::uint32_t>>& batches) {
    Sha256 h;
    for (const auto& batch : batches) {
        ByteWriter w;
        w.u32_be(static_cast<std::uint32_t>(batch.size()));
        for (std::uint32_t id : batch) {
            w.u64_be(id);
        }
        h.update(w.data());
    }
    return digest_hex(h.finish());
}

Eigen::VectorXd importance_weights(const std::vector<std::uint32_t>& ids,
                                   const Eigen::VectorXd& priorities) {
    const double total = priorities.sum();
    const double n = static_cast<double>(priorities.size());
    Eigen::VectorXd w(static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = static_cast<Eigen::Index>(ids[i]);
        if (id >= priorities.size()) throw ValidationError("id out of priority range");
        const double pri = priorities[id];
        if (!(pri > 0)) throw ValidationError("priority must be positive");
        const double p = pri / total;
        w[static_cast<Eigen::Index>(i)] = 1.0 / (n * p);
    }
    return w;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kOrderMagic[9] = "MEMH-OR1";
constexpr std::uint32_t kOrderVersion = 1;
}  // namespace

Bytes serialize_order_record(const OrderRecord& record) {
    ByteWriter w;
    w.raw(kOrderMagic, 8);
    w.u32_le(kOrderVersion);
    w.u64_le(static_cast<std::uint64_t>(record.t0));
    w.u32_le(static_cast<std::uint32_t>(record.batches.size()));
    for (const auto& batch : record.batches) {
        w.u32_be(static_cast<std::uint32_t>(batch.size()));
        for (std::uint32_t id : batch) w.u64_be(id);
    }
    for (const auto& seeds : record.aug_seeds) {
        for (std::uint64_t s : seeds) w.u64_be(s);
    }
    if (record.hash.size() != 64) throw ValidationError("order hash must be 64 hex chars");
    w.str_raw(record.hash);
    const Digest file_digest = sha256(w.data());
    w.raw(file_digest.data(), file_digest.size());
    return w.take();
}

OrderRecord parse_order_record(const Bytes& bytes) {
    if (bytes.size() < 32) throw ParseError("order record too small");
    Digest stored{};
    std::copy(bytes.end() - 32, bytes.end(), stored.begin());
    if (sha256(bytes.data(), bytes.size() - 32) != stored) {
        throw VerificationError("order record file checksum mismatch");
    }
    ByteReader r(bytes.data(), bytes.size() - 32);
    const Bytes magic = r.raw(8);
    if (std::string(magic.begin(), magic.end()) != kOrderMagic) {
        throw ParseError("bad order record magic");
    }
    if (r.u32_le() != kOrderVersion) throw VerificationError("order record version mismatch");

    OrderRecord record;
    record.t0 = static_cast<std::int64_t>(r.u64_le());
    const std::uint32_t w = r.u32_le();
    record.batches.resize(w);
    record.aug_seeds.resize(w);
    for (auto& batch : record.batches) {
        const std::uint32_t len = r.u32_be();
        batch.resize(len);
        for (auto& id : batch) id = static_cast<std::uint32_t>(r.u64_be());
    }
    for (std::uint32_t b = 0; b < w; ++b) {
        record.aug_seeds[b].resize(record.batches[b].size());
        for (auto& s : record.aug_seeds[b]) s = r.u64_be();
    }
    const Bytes hex = r.raw(64);
    record.hash.assign(hex.begin(), hex.end());
    if (!r.done()) throw ParseError("trailing bytes in order record");
    if (order_hash(record.batches) != record.hash) {
        throw VerificationError("order hash mismatch in record");
    }
    return record;
}

void save_order_record(const OrderRecord& record, const std::string& path) {
    const Bytes b = serialize_order_record(record);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

OrderRecord load_order_record(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_order_record(b);
}

const char* to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::random_reshuffle: return "rr";
        case SamplerKind::with_replacement: return "wr";
        case SamplerKind::prioritized: return "prioritized";
    }
    return "?";
}

}  // namespace memh
