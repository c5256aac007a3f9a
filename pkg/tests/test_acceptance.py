"""Acceptance suite: one test per release criterion, each at its stated
tolerance, printing a PASS line when it holds."""

import math
import time

import numpy as np
import pytest

from vsm_actr.cli import main
from vsm_actr.codec import emit_text, parse_text
from vsm_actr.dataset import generate_problem_sets, render_prompt
from vsm_actr.engine import (
    Engine,
    EngineConfig,
    EventKind,
    Production,
    UtilityPrecision,
    audit_utility_updates,
    select,
    softmax_probabilities,
)
from vsm_actr.features import pca_reduce, pca_spectrum, sree_component_count
from vsm_actr.manifest import read_manifest
from vsm_actr.probe import chance_baseline, fit_probe, probe_loss_grad, progression_stats
from vsm_actr.task import BASE_INSTANCE, STRATEGY_EXPERT, run_batch


def report(criterion: str):
    print(f"ACCEPTANCE PASS: {criterion}")


def replay(u_prev, reward, dt_ms, precision=UtilityPrecision.SINGLE):
    p = Production("X")
    engine = Engine([p], EngineConfig(alpha=0.2, utility_precision=precision))
    p.utility = float(u_prev)
    p.last_selection_ms = 0
    p.fired_since_last_reward = True
    engine._fired_order = [p]
    engine.apply_reward(reward, now=dt_ms / 1000.0)
    return p.utility


def test_golden_utility_arithmetic(golden_trace_text):
    """All 22 recorded utility updates reproduce within 1e-5 in 32-bit mode."""
    start = time.perf_counter()
    log = parse_text(golden_trace_text)
    updates = [e for e in log if e.kind is EventKind.UTILITY_UPDATE]
    assert len(updates) == 22
    for event in updates:
        payload = event.payload
        got = replay(payload["u_prev"], payload["reward"], payload["dt_ms"])
        assert got == pytest.approx(payload["u_new"], abs=1e-5), payload["production"]
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(f"golden utility arithmetic: 22/22 values within 1e-5 in {elapsed:.3f}s")


def test_worked_example_consistency():
    """alpha=0.2, R=-2, decay 0.5 -> R_eff=-2.5; U(6)=-0.65 yields U(7)=-1.02 within 1e-9."""
    u6 = (-1.02 + 0.5) / 0.8  # inversion of the update rule
    assert u6 == pytest.approx(-0.65, abs=1e-12)
    u7 = replay(u6, -2.0, 500, precision=UtilityPrecision.DOUBLE)
    assert abs(u7 - (-1.02)) <= 1e-9
    report("worked-example consistency: U(7) = -1.02 within 1e-9")


def test_trace_round_trip_and_self_audit(golden_trace_text):
    """emit(parse(golden)) is byte-identical; engine traces self-audit at 1e-6."""
    start = time.perf_counter()
    assert emit_text(parse_text(golden_trace_text)) == golden_trace_text
    outcomes, traces = run_batch([BASE_INSTANCE], runs_per_set=2, trials_per_run=16, master_seed=1)
    for log in traces.values():
        assert audit_utility_updates(log, tol=1e-6) == []
        assert audit_utility_updates(parse_text(emit_text(log)), tol=1e-6) == []
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(f"trace round-trip: byte-identity and recurrence self-audit in {elapsed:.3f}s")


def test_softmax_properties():
    """Chi-square uniformity within 3 sigma over 1e5 draws; shift invariance and
    argmax dominance at 1e-12."""
    rules = [Production(f"P{i}") for i in range(3)]
    config = EngineConfig(noise_s=1.0)
    rng = np.random.default_rng(2024)
    n = 100_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[rules.index(select(rules, config, rng))] += 1
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) <= 3 * sigma), counts

    rng = np.random.default_rng(7)
    for _ in range(300):
        utilities = rng.uniform(-40, 40, rng.integers(2, 8))
        t = rng.uniform(0.05, 5.0)
        probs = softmax_probabilities(utilities, t)
        assert np.all(probs >= 0) and abs(probs.sum() - 1) <= 1e-12
        shifted = softmax_probabilities(utilities + rng.uniform(-30, 30), t)
        assert np.max(np.abs(probs - shifted)) <= 1e-12
        if np.ptp(utilities) > 1e-9:
            best = int(np.argmax(utilities))
            assert probs[best] > np.delete(probs, best).max()
    report("softmax: chi-square within 3 sigma, shift invariance and argmax dominance at 1e-12")


def test_td_contraction():
    """|U - R_eff| contracts by exactly (1 - alpha) per update over 100 steps."""
    # R_eff = 0 (reward exactly cancels the 50 ms decay), U starts at 1:
    # with alpha = 0.5 every distance is a power of two, so the factor is bitwise
    reward = 0.05
    p = Production("X", initial_utility=1.0)
    engine = Engine([p], EngineConfig(alpha=0.5, utility_precision=UtilityPrecision.DOUBLE))
    prev = abs(p.utility)
    for _ in range(100):
        engine.fire(p)
        engine.apply_reward(reward)
        current = abs(p.utility)
        assert current == 0.5 * prev  # exact in binary
        prev = current
    assert prev == 2.0 ** -100

    # default alpha = 0.2: the factor holds to double-rounding precision each step
    p = Production("Y", initial_utility=1.0)
    engine = Engine([p], EngineConfig(alpha=0.2, utility_precision=UtilityPrecision.DOUBLE))
    prev = abs(p.utility)
    for _ in range(100):
        engine.fire(p)
        engine.apply_reward(reward)
        current = abs(p.utility)
        assert current == pytest.approx(0.8 * prev, rel=1e-12)
        prev = current
    report("TD contraction: factor (1-alpha) per step, bitwise at alpha=0.5, rel 1e-12 at alpha=0.2")


def test_learning_progression():
    """Default batch: positive OLS and ordered-logit slopes, late expert share
    above early share, strictly increasing thresholds, under 30 s."""
    start = time.perf_counter()
    instances = generate_problem_sets(0, 32)
    outcomes, _ = run_batch(instances, runs_per_set=4, trials_per_run=16, master_seed=0)
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    assert 1900 <= len(outcomes) <= 2048  # the approximately-2012 regime

    stats = progression_stats(outcomes)
    assert stats.ols_slope > 0
    ordered = stats.ordered_logit
    assert ordered is not None and ordered.slope > 0
    assert all(b > a for a, b in zip(ordered.thresholds, ordered.thresholds[1:]))

    strategies = np.array([o.strategy for o in outcomes])
    trials = np.array([o.trial_index for o in outcomes])
    early = np.mean(strategies[trials <= 2] == STRATEGY_EXPERT)
    late = np.mean(strategies[trials >= 12] == STRATEGY_EXPERT)
    assert late > early
    report(
        f"learning progression: {len(outcomes)} outcomes, OLS {stats.ols_slope:+.3f}, "
        f"ordered-logit {ordered.slope:+.3f}, expert share {early:.2f} -> {late:.2f} in {elapsed:.1f}s"
    )


def test_chance_baseline_values():
    """Chance rows: ln 2 within 1e-4 for binary, ln 6 within 1e-4 for 6-class."""
    nll2, acc2 = chance_baseline([0, 1, 0], 2)
    assert abs(nll2 - 0.6931) <= 1e-4
    assert acc2 == 0.5
    nll6, acc6 = chance_baseline([0, 5, 3], 6)
    assert abs(nll6 - math.log(6)) <= 1e-4
    assert acc6 == pytest.approx(1 / 6)
    report("chance baseline: 0.6931 (binary) and ln 6 (6-class) within 1e-4")


def test_probe_sanity():
    """Separable synthetic: accuracy >= 0.95, NLL <= 0.2; gradient matches
    central differences within 1e-4 relative."""
    rng = np.random.default_rng(0)
    half = 100
    x = np.concatenate([rng.normal(-3, 1.0, half), rng.normal(3, 1.0, half)])[:, None]
    y = np.array([0] * half + [1] * half)
    perm = rng.permutation(2 * half)
    x, y = x[perm], y[perm]
    _, probe_report = fit_probe(x, y, classes=2, l2_lambda=1.0, folds=10, seed=0)
    row = probe_report.rows[0]
    assert row.accuracy >= 0.95
    assert row.nll <= 0.2

    worst = 0.0
    for trial_seed in range(3):
        trial_rng = np.random.default_rng(trial_seed)
        n, d, k = 30, 3, 3
        x1 = np.hstack([trial_rng.standard_normal((n, d)), np.ones((n, 1))])
        targets = trial_rng.integers(0, k, n)
        w = trial_rng.standard_normal((d + 1) * k) * 0.4
        _, grad = probe_loss_grad(w, x1, targets, k, 0.9)
        h = 1e-5
        for i in range(len(w)):
            bumped = w.copy()
            bumped[i] += h
            up, _ = probe_loss_grad(bumped, x1, targets, k, 0.9)
            bumped[i] -= 2 * h
            down, _ = probe_loss_grad(bumped, x1, targets, k, 0.9)
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - grad[i]) / max(1.0, abs(fd)))
    assert worst <= 1e-4
    report(f"probe sanity: acc {row.accuracy:.3f}, NLL {row.nll:.3f}, grad-vs-FD {worst:.2e}")


def test_pca_and_component_rule():
    """Eigen results match a brute-force covariance oracle on random 20x8
    matrices within 1e-8; the 70% rule picks 2 of [4,3,2,1]; full-rank
    reconstruction error below 1e-8."""
    rng = np.random.default_rng(99)
    for _ in range(5):
        x = rng.standard_normal((20, 8)) * rng.uniform(0.5, 3.0, 8)
        mean = x.mean(axis=0)
        cov = np.zeros((8, 8))
        for row in x:
            d = row - mean
            cov += np.outer(d, d)
        cov /= len(x) - 1
        oracle = np.sort(np.linalg.eigvalsh(cov))[::-1]
        assert np.allclose(pca_spectrum(x), oracle, atol=1e-8)
        reduced = pca_reduce(x, 8)
        assert np.allclose(reduced.spectrum_ratio, oracle / oracle.sum(), atol=1e-8)
        assert np.max(np.abs(reduced.reconstruct() - x)) < 1e-8
    assert sree_component_count([4.0, 3.0, 2.0, 1.0], 0.70) == 2
    report("PCA/component rule: oracle agreement at 1e-8, SREE([4,3,2,1],0.70)=2, exact reconstruction")


def test_prompt_fidelity(data_dir):
    """Rendered base-instance prompts match the transcribed fixtures byte-for-byte."""
    single = (data_dir / "prompt_single_base.txt").read_bytes()
    multi = (data_dir / "prompt_multi_base.txt").read_bytes()
    assert render_prompt(BASE_INSTANCE, "single").encode() == single
    assert render_prompt(BASE_INSTANCE, "multi").encode() == multi
    report("prompt fidelity: single and multi templates byte-identical to fixtures")


def test_pipeline_determinism(tmp_path):
    """Two full simulate->distill->embed->reduce->build-dataset->eval runs with
    one master seed produce identical manifest checksums."""
    def run(out):
        for args in (
            ["simulate", "--seed", "33", "--out", str(out), "--sets", "3", "--runs", "2"],
            ["distill", "--out", str(out), "--mode", "multi"],
            ["embed", "--out", str(out), "--provider", "test", "--dim", "32"],
            ["reduce", "--out", str(out), "--threshold", "0.70"],
            ["build-dataset", "--out", str(out), "--mode", "multi", "--features", "prompt", "--dim", "32"],
            ["eval", "--out", str(out), "--mode", "multi", "--folds", "10"],
        ):
            assert main(args) == 0
        return {
            p.name: (read_manifest(p)["inputs"], read_manifest(p)["outputs"])
            for p in sorted(out.glob("manifest-*.json"))
        }

    first = run(tmp_path / "a")
    second = run(tmp_path / "b")
    assert first == second
    assert len(first) == 6
    report("pipeline determinism: identical manifest checksums across both runs")
