# SPDX-License-Identifier: Apache-2.0
"""Causal measurement harness for training memory.

Thin wrapper over the C++ core: branch-and-hold interventions, paired ATE
estimates with bootstrap CIs, TOST equivalence, function-space distances, and
tamper-evident audit artifacts.
"""

from ._core import (  # noqa: F401
    EMPTY_SHA256,
    DivergenceError,
    ValidationError,
    VerificationError,
    __version__,
    accuracy,
    canonical_config,
    config_digest,
    derive_seed,
    disagreement,
    ece,
    emit_report,
    half_life,
    linear_cka,
    nll,
    order_hash,
    paired_ate_ci,
    prob_distance,
    replay_run,
    run_experiment,
    suggest_window,
    tost,
    verify_run,
)
