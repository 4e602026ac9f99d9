# SPDX-License-Identifier: Apache-2.0
import json
import math
import os
import subprocess

import numpy as np
import pytest

import memharness as mh


def null_spec(tmp_path, seeds=2):
    return {
        "root_seed": 17,
        "recipe": {
            "model": {"kind": "linear_regression", "input_dim": 4, "output_dim": 1},
            "objective": {"kind": "squared"},
            "optimizer": {"kind": "sgd_momentum", "beta": 0.9},
            "schedule": {"base_lr": 0.05},
            "sampler": {"kind": "rr", "batch_size": 8},
            "data": {
                "task": "regress",
                "n": 32,
                "input_dim": 4,
                "output_dim": 1,
                "noise": 0.2,
            },
        },
        "intervention": {"kind": "null"},
        "cfg": {
            "t0": 10,
            "window": 5,
            "horizon": 25,
            "seeds": seeds,
            "probe_size": 16,
            "metric": "l2",
        },
    }


def test_half_life_formula():
    assert mh.half_life(0.9) == pytest.approx(math.log(0.5) / math.log(0.9))
    assert mh.half_life(0.99) == pytest.approx(68.9676, abs=1e-3)
    with pytest.raises(ValueError):
        mh.half_life(1.0)


def test_order_hash_empty_is_pinned():
    assert mh.order_hash([]) == mh.EMPTY_SHA256
    assert mh.order_hash([[0, 1], [2]]) != mh.order_hash([[0], [1, 2]])


def test_distances_and_metrics():
    p = np.array([0.5, 0.5])
    q = np.array([1.0, 0.0])
    assert mh.prob_distance(p, q, "tv") == pytest.approx(0.5)
    assert mh.prob_distance(p, p, "js") == pytest.approx(0.0)

    preds = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert mh.disagreement(preds, preds) == 0.0
    assert mh.accuracy(preds, [0, 1]) == 1.0
    value, clamped = mh.nll(preds, [0, 1])
    assert value > 0.0 and clamped == 0

    x = np.random.default_rng(0).normal(size=(40, 4))
    assert mh.linear_cka(x, 2.0 * x) == pytest.approx(1.0)


def test_paired_ate_and_tost():
    est = mh.paired_ate_ci([1.0, 2.0, 3.0], bootstrap_rounds=2000, root_seed=3)
    assert est["ate"] == pytest.approx(2.0)
    assert est["ci_lo"] <= est["ate"] <= est["ci_hi"]

    r = mh.tost([0.1, -0.1, 0.05, -0.05, 0.0], epsilon=0.5, alpha=0.05)
    assert r["equivalent"]
    assert r["p_lower"] < 1e-3 and r["p_upper"] < 1e-3


def test_suggest_window():
    assert mh.suggest_window("opt_reset", beta=0.99) == 103
    assert mh.suggest_window("queue_op", queue_capacity=4096, batch_size=64) == 64
    assert mh.suggest_window("teacher_lag", teacher_alpha=0.99) == 200
    with pytest.raises(ValueError):
        mh.suggest_window("teacher_lag")


def test_run_verify_replay_report(tmp_path):
    spec = json.dumps(null_spec(tmp_path))
    run_dir = str(tmp_path / "run")
    result = mh.run_experiment(spec, run_dir)
    assert result["early"]["ate"] == 0.0
    assert result["early"]["ci_lo"] == 0.0 and result["early"]["ci_hi"] == 0.0
    assert all(not s["aborted"] for s in result["seeds"])

    verdict = mh.verify_run(run_dir)
    assert verdict["all_pass"], [c for c in verdict["checks"] if not c["pass"]]

    assert mh.replay_run(run_dir) == ""

    report = mh.emit_report(run_dir)
    for section in ("## Datasets", "## Uncertainty", "## Artifacts"):
        assert section in report

    digest = mh.config_digest(spec)
    assert len(digest) == 64


@pytest.mark.skipif("MEMH_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_window_subcommand():
    out = subprocess.run(
        [os.environ["MEMH_CLI"], "window", "--intervention", "opt_reset", "--beta", "0.99"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "103"
