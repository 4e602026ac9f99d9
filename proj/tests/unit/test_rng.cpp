// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "memharness/bytes.hpp"
#include "memharness/sha256.hpp"
#include "memharness/errors.hpp"
#include "memharness/rng.hpp"

using namespace memh;

TEST_SUITE("rng") {

TEST_CASE("same root and name give identical draws") {
    RngStream a = make_stream(42, "order");
    RngStream b = make_stream(42, "order");
    for (int i = 0; i < 10; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_CASE("distinct names give distinct first draws") {
    RngStream a = make_stream(42, "order");
    RngStream b = make_stream(42, "augment");
    CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("derivation matches the pinned sha256 construction") {
    // Independent recomputation of the derivation rule.
    ByteWriter w;
    w.u64_be(42);
    w.u8(0x00);
    w.str_raw("order");
    const Digest d = sha256(w.data());
    std::uint64_t expect = 0;
    for (int i = 0; i < 8; ++i) expect = (expect << 8) | d[static_cast<std::size_t>(i)];
    CHECK(derive_seed(42, "order") == expect);
}

TEST_CASE("manifest records draws after sync") {
    RngManifest m{7, {}};
    RngStream s = m.derive("order");
    for (int i = 0; i < 5; ++i) s.next_u64();
    m.note_draws(s);
    CHECK(m.streams.at("order").draws_consumed == 5);
}

TEST_CASE("duplicate registration is an error") {
    RngManifest m{7, {}};
    (void)m.derive("order");
    CHECK_THROWS_AS((void)m.derive("order"), ValidationError);
}

TEST_CASE("stream independence: order draws unaffected by augment draws") {
    RngManifest m1{13, {}};
    RngStream o1 = m1.derive("order");
    RngManifest m2{13, {}};
    RngStream a2 = m2.derive("augment");
    RngStream o2 = m2.derive("order");
    for (int i = 0; i < 100; ++i) (void)a2.next_u64();
    for (int i = 0; i < 10; ++i) {
        CHECK(o1.next_u64() == o2.next_u64());
    }
}

TEST_CASE("bounded draws cover the range without bias artifacts") {
    RngStream s = make_stream(3, "order");
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 500; ++i) {
        const std::uint64_t v = s.bounded(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
    CHECK(s.draws >= 500);
}

TEST_CASE("uniform stays in [0,1) and normal is finite") {
    RngStream s = make_stream(9, "model");
    for (int i = 0; i < 1000; ++i) {
        const double u = s.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        CHECK(std::isfinite(s.normal()));
    }
}

}  // TEST_SUITE
