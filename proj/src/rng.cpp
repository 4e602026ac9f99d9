// SPDX-License-Identifier: Apache-2.0
#include "memharness/rng.hpp"

#include <cmath>
#include <numbers>

#include "memharness/bytes.hpp"
#include "memharness/errors.hpp"
#include "memharness/sha256.hpp"

namespace memh {

std::uint64_t RngStream::next_u64() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    ++draws;
    return z ^ (z >> 31);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    // u1 on (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::bounded(std::uint64_t n) {
    if (n == 0) {
        throw ValidationError("bounded draw requires n > 0");
    }
    const std::uint64_t min = (0 - n) % n;  // 2^64 mod n
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x < min);
    return x % n;
}

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view name) {
    ByteWriter w;
    w.u64_be(root_seed);
    w.u8(0x00);
    w.str_raw(name);
    const Digest d = sha256(w.data());
    std::uint64_t seed = 0;
    for (int i = 0; i < 8; ++i) {
        seed = (seed << 8) | d[static_cast<std::size_t>(i)];
    }
    return seed;
}

RngStream make_stream(std::uint64_t root_seed, std::string_view name) {
    return RngStream{std::string(name), derive_seed(root_seed, name), 0};
}

RngStream RngManifest::derive(std::string_view name) {
    if (name.empty()) {
        throw ValidationError("stream name must be nonempty");
    }
    const std::string key(name);
    if (streams.contains(key)) {
        throw ValidationError("duplicate RNG stream registration: " + key);
    }
    RngStream s = make_stream(root_seed, name);
    streams.emplace(key, StreamRecord{s.state, 0});
    return s;
}

void RngManifest::note_draws(const RngStream& stream) {
    auto it = streams.find(stream.name);
    if (it == streams.end()) {
        throw ValidationError("stream not registered in manifest: " + stream.name);
    }
    it->second.draws_consumed = stream.draws;
}

}  // namespace memh
