"""Metric, trial-runner, and report tests."""

import csv
import json

import numpy as np
import pytest

from swarmipp.baselines import lawnmower_plan
from swarmipp.channel import ChannelParams
from swarmipp.env import Environment, EpisodeConfig, UavPose
from swarmipp.evalkit import (
    AdaptiveGainDriver,
    EpisodeTrace,
    LawnmowerDriver,
    LearnedDriver,
    RandomDriver,
    budget_checkpoints,
    f1_score,
    info_gain,
    make_baseline_driver,
    make_report,
    run_episode,
    run_trials,
    write_method_results,
    write_traces_jsonl,
)
from swarmipp.grid import BeliefGrid, GroundTruthGrid
from swarmipp.nets import make_policy_nets


def checker_truth(width=20, height=20):
    cells = np.indices((height, width)).sum(axis=0) % 2
    return GroundTruthGrid(cells=cells)


# ---------------------------------------------------------------------------
# f1_score
# ---------------------------------------------------------------------------


def test_f1_perfect_belief():
    truth = checker_truth()
    belief = BeliefGrid.from_probs(truth.cells.astype(float))
    assert f1_score(belief, truth) == 1.0


def test_f1_complement_is_zero():
    truth = checker_truth()
    belief = BeliefGrid.from_probs(1.0 - truth.cells.astype(float))
    assert f1_score(belief, truth) == 0.0


def test_f1_confusion_matrix_arithmetic():
    # TP=3, FP=1, FN=1 -> 2*3 / (2*3 + 1 + 1) = 0.75.
    cells = np.zeros((2, 3), dtype=np.int8)
    cells[0, :] = 1
    cells[1, 0] = 1  # 4 valuable cells
    truth = GroundTruthGrid(cells=cells)
    probs = np.zeros((2, 3))
    probs[0, :] = 0.9  # 3 true positives
    probs[1, 1] = 0.9  # 1 false positive; cell (1,0) missed -> 1 FN
    belief = BeliefGrid.from_probs(probs)
    assert f1_score(belief, truth) == pytest.approx(0.75, abs=1e-12)


def test_f1_threshold_is_strict():
    cells = np.ones((2, 2), dtype=np.int8)
    truth = GroundTruthGrid(cells=cells)
    belief = BeliefGrid.uniform(2, 2)  # exactly 0.5 everywhere
    assert f1_score(belief, truth, threshold=0.5) == 0.0


def test_f1_invariant_to_values_within_threshold_side():
    truth = checker_truth()
    rng = np.random.default_rng(0)
    high = np.where(truth.cells == 1, 0.7, 0.2)
    higher = np.where(truth.cells == 1, rng.uniform(0.51, 0.99, truth.shape),
                      rng.uniform(0.01, 0.49, truth.shape))
    a = f1_score(BeliefGrid.from_probs(high), truth)
    b = f1_score(BeliefGrid.from_probs(higher), truth)
    assert a == b == 1.0


# ---------------------------------------------------------------------------
# info_gain
# ---------------------------------------------------------------------------


def test_info_gain_constant_trace_zero():
    trace = EpisodeTrace(entropies=[0.7, 0.7, 0.7])
    assert info_gain(trace) == 0.0


def test_info_gain_telescoping_sum():
    trace = EpisodeTrace(entropies=[1.0, 0.6, 0.2])
    assert info_gain(trace) == pytest.approx(0.8, abs=1e-12)


def test_info_gain_single_step():
    trace = EpisodeTrace(entropies=[1.0, 0.9])
    assert info_gain(trace) == pytest.approx(0.1, abs=1e-12)


def test_info_gain_rejects_empty():
    with pytest.raises(ValueError):
        info_gain(EpisodeTrace(entropies=[1.0]))


# ---------------------------------------------------------------------------
# checkpoints / trials
# ---------------------------------------------------------------------------


def test_budget_checkpoints_ceiling_rule():
    assert budget_checkpoints(15) == [5, 10, 15]
    assert budget_checkpoints(10) == [4, 7, 10]
    assert budget_checkpoints(1) == [1, 1, 1]


def small_config(**kwargs):
    defaults = dict(width=20, height=20, n_uavs=2, budget=6, seed=0,
                    start_poses=(UavPose(3, 3, 1), UavPose(16, 16, 1)))
    defaults.update(kwargs)
    return EpisodeConfig(**defaults)


def test_run_episode_records_full_trace():
    truth = checker_truth()
    config = small_config()
    env = Environment(truth, config)
    trace = run_episode(env, RandomDriver(), np.random.default_rng(0), truth)
    assert trace.steps == 6
    assert len(trace.entropies) == 7
    assert len(trace.f1s) == 6
    assert len(trace.trajectories) == 2
    assert all(len(t) == 7 for t in trace.trajectories)
    assert trace.final_belief is not None
    assert info_gain(trace) >= 0.0


def test_run_trials_single_trial_zero_std():
    truth = checker_truth()
    stats, traces = run_trials(RandomDriver(), truth, small_config(), 1, seed=5)
    assert len(traces) == 1
    np.testing.assert_array_equal(stats.f1_std, 0.0)
    np.testing.assert_array_equal(stats.h_std, 0.0)


def test_run_trials_deterministic_policy_noiseless_sensor_zero_std():
    truth = checker_truth()
    config = small_config(sensor_accuracy_override=1.0)
    driver, config = make_baseline_driver("nl", config)
    stats, _ = run_trials(driver, truth, config, 4, seed=6)
    np.testing.assert_array_equal(stats.f1_std, 0.0)
    np.testing.assert_array_equal(stats.h_std, 0.0)


def test_run_trials_stats_within_min_max():
    truth = checker_truth()
    stats, traces = run_trials(RandomDriver(), truth, small_config(), 5, seed=7)
    f1 = stats.f1_per_trial
    assert (stats.f1_mean >= f1.min(axis=0) - 1e-12).all()
    assert (stats.f1_mean <= f1.max(axis=0) + 1e-12).all()
    assert (stats.f1_std >= 0).all() and (stats.h_std >= 0).all()


def test_run_trials_reruns_identically():
    truth = checker_truth()
    a, _ = run_trials(RandomDriver(), truth, small_config(), 3, seed=8)
    b, _ = run_trials(RandomDriver(), truth, small_config(), 3, seed=8)
    np.testing.assert_array_equal(a.f1_per_trial, b.f1_per_trial)
    np.testing.assert_array_equal(a.h_per_trial, b.h_per_trial)


def test_adaptive_gain_beats_random_on_entropy():
    truth = checker_truth()
    config = small_config(budget=8)
    ag_stats, _ = run_trials(AdaptiveGainDriver(), truth, config, 4, seed=9)
    rnd_stats, _ = run_trials(RandomDriver(), truth, config, 4, seed=9)
    assert ag_stats.h_mean[-1] < rnd_stats.h_mean[-1]


def test_learned_driver_runs_untrained_naive():
    truth = checker_truth()
    actor, _ = make_policy_nets(seed=11)
    driver = LearnedDriver(
        actor, ChannelParams.from_level("none"), None, naive_fusion=True
    )
    stats, traces = run_trials(driver, truth, small_config(), 2, seed=12)
    assert len(traces) == 2
    assert np.isfinite(stats.f1_mean).all()


def test_learned_driver_greedy_deterministic_given_noiseless_channel():
    truth = checker_truth()
    actor, _ = make_policy_nets(seed=13)
    config = small_config(sensor_accuracy_override=1.0)
    driver = LearnedDriver(
        actor, ChannelParams.from_level("none"), None, naive_fusion=True
    )
    a, _ = run_trials(driver, truth, config, 3, seed=14)
    np.testing.assert_allclose(a.f1_std, 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# persistence / report
# ---------------------------------------------------------------------------


def test_write_traces_jsonl(tmp_path):
    truth = checker_truth()
    env = Environment(truth, small_config())
    trace = run_episode(env, RandomDriver(), np.random.default_rng(1), truth)
    path = tmp_path / "traces.jsonl"
    write_traces_jsonl([trace], path)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == trace.steps
    assert set(lines[0]) == {"trial", "step", "poses", "actions", "reward", "entropy"}
    assert len(lines[0]["poses"]) == 2


def test_report_pipeline(tmp_path):
    truth = checker_truth()
    config = small_config()
    for method in ("random", "ag"):
        driver, cfg = make_baseline_driver(method, config)
        stats, _ = run_trials(driver, truth, cfg, 2, seed=15)
        write_method_results(tmp_path / method, "testenv", method, stats)
    report = make_report([tmp_path / "random", tmp_path / "ag"], tmp_path / "report")
    with open(report, newline="") as fh:
        rows = list(csv.DictReader(fh))
    # 2 methods x 3 checkpoints
    assert len(rows) == 6
    for mark in ("2", "4", "6"):
        group = [r for r in rows if r["checkpoint"] == mark]
        assert sum(int(r["f1_best"]) for r in group) == 1
        assert sum(int(r["h_best"]) for r in group) == 1
    assert (tmp_path / "report" / "testenv_f1.png").exists()
    assert (tmp_path / "report" / "testenv_entropy.png").exists()


def test_report_single_method_three_rows(tmp_path):
    truth = checker_truth()
    driver, cfg = make_baseline_driver("random", small_config())
    stats, _ = run_trials(driver, truth, cfg, 2, seed=16)
    write_method_results(tmp_path / "random", "testenv", "random", stats)
    report = make_report([tmp_path / "random"], tmp_path / "report")
    with open(report, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert all(r["f1_best"] == "1" and r["h_best"] == "1" for r in rows)
