// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "memharness/errors.hpp"
#include "memharness/intervene.hpp"
#include "memharness/queue.hpp"
#include "memharness/snapshot.hpp"

using namespace memh;

namespace {

Recipe tiny_recipe() {
    Recipe r;
    r.model = ModelSpec{ModelKind::linear_regression, 4, 1, {}, false};
    r.objective = ObjectiveSpec{ObjectiveKind::squared};
    r.optimizer.kind = OptimizerConfig::Kind::sgd_momentum;
    r.optimizer.beta = 0.9;
    r.schedule.base_lr = 0.05;
    r.sampler.kind = SamplerKind::random_reshuffle;
    r.sampler.batch_size = 8;
    r.data = DataConfig{Task::regress, 32, 4, 1, 0.1, 0.0};
    return r;
}

struct LiveFixture {
    Recipe recipe = tiny_recipe();
    Dataset data;
    TrainRun run;

    explicit LiveFixture(std::uint64_t seed = 5)
        : data([&] {
              RngManifest m{seed, {}};
              RngStream ds = m.derive("data");
              return make_synthetic(Task::regress, 32, 4, 1, 0.1, ds);
          }()),
          run([&] {
              RngManifest m{seed, {}};
              RngStream ds = m.derive("data");
              (void)make_synthetic(Task::regress, 32, 4, 1, 0.1, ds);
              m.note_draws(ds);
              return TrainRun::fresh(recipe, &data, std::move(m), nullptr);
          }()) {}
};

}  // namespace

TEST_SUITE("statekit") {

TEST_CASE("queue entries persist for exactly ceil(K/B) enqueue-steps") {
    QueueState q{8, {}, false};
    const Eigen::MatrixXd batch = Eigen::MatrixXd::Ones(2, 3);
    q = queue_step(std::move(q), batch, 0);
    for (std::int64_t t = 1; t <= 3; ++t) {
        q = queue_step(std::move(q), batch, t);
        CHECK(q.entries.front().inserted_at == 0);  // still resident
    }
    q = queue_step(std::move(q), batch, 4);
    CHECK(q.entries.front().inserted_at == 1);  // evicted at t = 0 + 4
    CHECK(q.size() == 8);
}

TEST_CASE("frozen queue rejects enqueue and keeps its fingerprint") {
    QueueState q{4, {}, false};
    q = queue_step(std::move(q), Eigen::MatrixXd::Random(2, 3), 0);
    const std::string fp = queue_fingerprint(q);
    q.frozen = true;
    CHECK_THROWS_AS(queue_step(QueueState(q), Eigen::MatrixXd::Random(2, 3), 1),
                    DivergenceError);
    CHECK(queue_fingerprint(q) == fp);
}

TEST_CASE("cleared queue fingerprint equals the empty-stream digest") {
    QueueState q{4, {}, false};
    CHECK(queue_fingerprint(q) == kEmptySha256Hex);
}

TEST_CASE("snapshot -> restore -> snapshot round-trips byte-identically") {
    LiveFixture fx;
    fx.run.run_live_to(13);
    const Snapshot s = fx.run.snapshot();
    const Bytes blob = serialize_snapshot(s);
    const Snapshot back = parse_snapshot(blob);
    CHECK(serialize_snapshot(back) == blob);
}

TEST_CASE("restored run reproduces the root continuation bitwise") {
    LiveFixture fx;
    fx.run.run_live_to(20);
    const Snapshot s = fx.run.snapshot();

    TrainRun resumed = TrainRun::from_snapshot(fx.recipe, &fx.data, s, nullptr);
    fx.run.run_live_to(70);
    resumed.run_live_to(70);
    CHECK(serialize_snapshot(fx.run.snapshot()) == serialize_snapshot(resumed.snapshot()));
}

TEST_CASE("tampered snapshot bytes fail verification on load") {
    LiveFixture fx;
    fx.run.run_live_to(3);
    Bytes blob = serialize_snapshot(fx.run.snapshot());
    SUBCASE("section payload") { blob[64] ^= 0x01; }
    SUBCASE("stored digest") { blob[blob.size() - 1] ^= 0x01; }
    SUBCASE("magic") { blob[0] ^= 0x01; }
    CHECK_THROWS(parse_snapshot(blob));
}

TEST_CASE("apply_policy: all-carry is byte identical") {
    LiveFixture fx;
    fx.run.run_live_to(9);
    const Snapshot s = fx.run.snapshot();
    const Snapshot out = apply_policy(s, StatePolicy{});
    CHECK(serialize_snapshot(out) == serialize_snapshot(s));
}

TEST_CASE("apply_policy resets the intended components only") {
    LiveFixture fx;
    fx.run.run_live_to(9);
    const Snapshot s = fx.run.snapshot();

    StatePolicy policy;
    policy.optimizer = PolicyAction::reset;
    const Snapshot out = apply_policy(s, policy);
    const auto& sgd = std::get<SgdMomentum>(out.opt.state);
    CHECK(sgd.velocity.norm() == 0.0);
    CHECK(out.opt.step_count == 0);

    const auto before = all_component_digests(s);
    const auto after = all_component_digests(out);
    for (const auto& [name, digest] : before) {
        if (name == "optimizer") {
            CHECK(after.at(name) != digest);
        } else {
            CHECK(after.at(name) == digest);
        }
    }
}

TEST_CASE("apply_policy rewarm wraps the schedule at the snapshot step") {
    LiveFixture fx;
    fx.run.run_live_to(9);
    StatePolicy policy;
    policy.optimizer = PolicyAction::rewarm;
    policy.rewarm_len = 4;
    const Snapshot out = apply_policy(fx.run.snapshot(), policy);
    CHECK(out.schedule.rewarm_at == 9);
    CHECK(out.schedule.rewarm_len == 4);
    CHECK(out.schedule.lr(9) == doctest::Approx(fx.recipe.schedule.base_lr * 0.25));
}

TEST_CASE("rewarm on a non-optimizer component is rejected") {
    StatePolicy policy;
    policy.bn = PolicyAction::rewarm;
    CHECK_THROWS_AS(policy.validate(), ValidationError);
    StatePolicy no_len;
    no_len.optimizer = PolicyAction::rewarm;
    CHECK_THROWS_AS(no_len.validate(), ValidationError);
}

TEST_CASE("ema reset re-anchors to current params") {
    Recipe recipe = tiny_recipe();
    recipe.averaging.ema_alpha = 0.9;
    RngManifest m{3, {}};
    RngStream ds = m.derive("data");
    const Dataset data = make_synthetic(Task::regress, 32, 4, 1, 0.1, ds);
    m.note_draws(ds);
    TrainRun run = TrainRun::fresh(recipe, &data, std::move(m), nullptr);
    run.run_live_to(15);
    const Snapshot s = run.snapshot();
    CHECK(s.avg.ema->weights != s.params.values);

    StatePolicy policy;
    policy.ema = PolicyAction::reset;
    const Snapshot out = apply_policy(s, policy);
    CHECK(out.avg.ema->weights == out.params.values);
}

TEST_CASE("component checksums: fresh reset optimizer has zero norms") {
    LiveFixture fx;
    fx.run.run_live_to(5);
    Snapshot s = fx.run.snapshot();
    s.opt = reset_optimizer(s.opt);
    const ComponentChecksum c = component_checksum(s, "optimizer");
    CHECK(c.norms.at("velocity") == 0.0);
}

TEST_CASE("equal snapshots have equal digests; a one-coordinate change differs") {
    LiveFixture fx;
    fx.run.run_live_to(5);
    const Snapshot a = fx.run.snapshot();
    Snapshot b = a;
    for (const auto& name : component_names()) {
        CHECK(component_checksum(a, name).digest == component_checksum(b, name).digest);
    }
    b.params.values[0] = std::nextafter(b.params.values[0], 1e300);
    CHECK(component_checksum(a, "params").digest != component_checksum(b, "params").digest);
    CHECK(component_checksum(a, "optimizer").digest ==
          component_checksum(b, "optimizer").digest);
    CHECK_THROWS_AS(component_checksum(a, "no_such_component"), ValidationError);
}

TEST_CASE("snapshot round trip across recipe variants") {
    auto roundtrip = [](Recipe recipe, Task task, std::uint64_t seed) {
        RngManifest m{seed, {}};
        RngStream ds = m.derive("data");
        const Dataset data = make_synthetic(task, recipe.data.n, recipe.data.input_dim,
                                            recipe.data.output_dim, recipe.data.noise, ds);
        m.note_draws(ds);
        TrainRun run = TrainRun::fresh(recipe, &data, std::move(m), nullptr);
        run.run_live_to(11);
        const Snapshot s = run.snapshot();
        const Bytes blob = serialize_snapshot(s);
        const Snapshot back = parse_snapshot(blob);
        CHECK(serialize_snapshot(back) == blob);

        // Continuations from the original and the re-parsed state agree.
        TrainRun a = TrainRun::from_snapshot(recipe, &data, s, nullptr);
        TrainRun b = TrainRun::from_snapshot(recipe, &data, back, nullptr);
        a.run_live_to(25);
        b.run_live_to(25);
        CHECK(serialize_snapshot(a.snapshot()) == serialize_snapshot(b.snapshot()));
    };

    SUBCASE("adamw with ema, swa, teacher, cosine warmup") {
        Recipe r = tiny_recipe();
        r.data.task = Task::teacher_consistency;
        r.objective = ObjectiveSpec{ObjectiveKind::teacher_consistency, 0.1};
        r.optimizer.kind = OptimizerConfig::Kind::adamw;
        r.schedule.kind = Schedule::Kind::cosine;
        r.schedule.warmup_steps = 3;
        r.schedule.total_steps = 64;
        r.averaging.ema_alpha = 0.95;
        r.averaging.swa = true;
        r.averaging.teacher_alpha = 0.9;
        roundtrip(r, Task::teacher_consistency, 61);
    }
    SUBCASE("prioritized sampler with importance weights") {
        Recipe r = tiny_recipe();
        r.sampler.kind = SamplerKind::prioritized;
        r.sampler.batch_size = 4;
        r.sampler.priorities = Eigen::VectorXd::LinSpaced(32, 0.5, 3.0);
        roundtrip(r, Task::regress, 62);
    }
    SUBCASE("contrastive embedder with a partially filled queue") {
        Recipe r;
        r.model = ModelSpec{ModelKind::embedder, 4, 6, {}, false};
        r.objective = ObjectiveSpec{ObjectiveKind::infonce, 0.1, 0.2};
        r.optimizer.kind = OptimizerConfig::Kind::sgd_momentum;
        r.schedule.base_lr = 0.05;
        r.sampler.kind = SamplerKind::with_replacement;
        r.sampler.batch_size = 4;
        r.data = DataConfig{Task::contrastive, 32, 4, 3, 0.3, 0.0};
        r.queue = QueueConfig{64};
        roundtrip(r, Task::contrastive, 63);
    }
    SUBCASE("mlp with norm layers and augmentation noise") {
        Recipe r = tiny_recipe();
        r.model = ModelSpec{ModelKind::mlp, 4, 3, {6}, true};
        r.objective = ObjectiveSpec{ObjectiveKind::cross_entropy};
        r.data = DataConfig{Task::classify, 32, 4, 3, 0.5, 0.1};
        roundtrip(r, Task::classify, 64);
    }
}

TEST_CASE("manifest draws survive the snapshot round trip") {
    LiveFixture fx;
    fx.run.run_live_to(4);
    const Snapshot s = fx.run.snapshot();
    const Snapshot back = parse_snapshot(serialize_snapshot(s));
    CHECK(back.manifest == s.manifest);
    CHECK(back.manifest.streams.at("order").draws_consumed ==
          s.sampler.stream.draws);
}

}  // TEST_SUITE
