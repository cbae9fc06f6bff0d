"""Deployment metrics, multi-trial statistics, and report generation.

Evaluation treats the mission as per-cell binary classification: the global
belief thresholded at 0.5 against the ground truth gives F1, and the
normalized belief entropy tracks residual uncertainty.  Trials run seeded,
independent episodes; statistics are reported at the 33%/67%/100% budget
checkpoints and as per-step curves.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import LawnmowerPlan, adaptive_gain_step, lawnmower_plan, random_policy
from .channel import ChannelParams
from .env import Environment, EpisodeConfig, SensorReading, SwarmState
from .grid import BeliefGrid, GroundTruthGrid, entropy
from .nets import PolicyNet, actor_forward, build_actor_obs, dump_observation, select_action
from .sendfuse import FusionWeights, SenDFuseModel, fused_swarm_maps


def f1_score(
    belief: BeliefGrid, truth: GroundTruthGrid, threshold: float = 0.5
) -> float:
    """F1 of "valuable" predictions: cells with belief strictly above the
    threshold.  Returns 0 when there are no true positives."""
    if belief.shape != truth.shape:
        raise ValueError(f"belief {belief.shape} vs truth {truth.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    predicted = belief.probs > threshold
    actual = truth.cells == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass
class EpisodeTrace:
    """Everything recorded over one deployment episode."""

    entropies: list[float] = field(default_factory=list)  # H_0 .. H_B
    f1s: list[float] = field(default_factory=list)  # per step
    rewards: list[float] = field(default_factory=list)  # per step
    trajectories: list[list[tuple[int, int, int]]] = field(default_factory=list)
    actions: list[list[int]] = field(default_factory=list)  # per step, per UAV
    final_belief: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return len(self.actions)


def info_gain(trace: EpisodeTrace) -> float:
    """Total entropy reduction; telescoping sum checked against the endpoint
    difference as an internal-consistency guard."""
    h = np.asarray(trace.entropies, dtype=np.float64)
    if len(h) < 2:
        raise ValueError("trace must record at least one step")
    stepwise = float(np.sum(h[:-1] - h[1:]))
    endpoints = float(h[0] - h[-1])
    if abs(stepwise - endpoints) > 1e-9:
        raise RuntimeError(
            f"telescoping mismatch: stepwise {stepwise} vs endpoints {endpoints}"
        )
    return stepwise


# ---------------------------------------------------------------------------
# Policy drivers
# ---------------------------------------------------------------------------


class RandomDriver:
    """Every UAV picks a uniformly random valid move."""

    name = "random"

    def joint_action(self, env, state, last_readings, rng):
        return [
            random_policy(state, i, env.truth, env.config.z_max, rng)
            for i in range(state.n_uavs)
        ]


class LawnmowerDriver:
    """Open-loop boustrophedon sweep; requires the plan's start poses."""

    name = "nl"

    def __init__(self, plan: LawnmowerPlan):
        self.plan = plan

    def joint_action(self, env, state, last_readings, rng):
        t = state.step_index
        return [self.plan.actions[i][t] for i in range(state.n_uavs)]


class AdaptiveGainDriver:
    """Per-UAV greedy expected-information-gain planner on its own belief."""

    name = "ag"

    def joint_action(self, env, state, last_readings, rng):
        return [
            adaptive_gain_step(state, i, env.truth, env.config)
            for i in range(state.n_uavs)
        ]


class LearnedDriver:
    """Trained actor with the communication/fusion front end."""

    name = "ours"

    def __init__(
        self,
        actor: PolicyNet,
        channel_params: ChannelParams,
        fusion_model: SenDFuseModel | None,
        fusion_weights: FusionWeights = FusionWeights(),
        naive_fusion: bool = False,
        mode: str = "greedy",
        obs_sink=None,
    ):
        self.actor = actor
        self.channel_params = channel_params
        self.fusion_model = fusion_model
        self.fusion_weights = fusion_weights
        self.naive_fusion = naive_fusion
        self.mode = mode
        self.obs_sink = obs_sink

    def joint_action(self, env, state, last_readings, rng):
        cfg = env.config
        fused = fused_swarm_maps(
            last_readings,
            state.poses,
            (cfg.height, cfg.width),
            self.channel_params,
            rng,
            self.fusion_model,
            self.fusion_weights,
            naive=self.naive_fusion,
        )
        actions = []
        for i in range(state.n_uavs):
            reading = None if last_readings is None else last_readings[i]
            obs = build_actor_obs(
                state, i, fused[i], cfg.budget, cfg.z_max, last_reading=reading
            )
            if self.obs_sink is not None:
                self.obs_sink(state.step_index, i, obs)
            dist = actor_forward(self.actor, obs, env.valid_actions(i))
            actions.append(select_action(dist, self.mode, rng))
        return actions


def make_baseline_driver(kind: str, config: EpisodeConfig):
    """Driver plus the episode config it needs (the lawnmower overrides
    start poses with its lane heads)."""
    if kind == "random":
        return RandomDriver(), config
    if kind == "ag":
        return AdaptiveGainDriver(), config
    if kind == "nl":
        plan = lawnmower_plan(config.width, config.height, config.n_uavs, config.budget)
        return LawnmowerDriver(plan), replace(config, start_poses=plan.start_poses)
    raise ValueError(f"unknown baseline {kind!r}")


# ---------------------------------------------------------------------------
# Episodes and trials
# ---------------------------------------------------------------------------


def run_episode(
    env: Environment,
    driver,
    rng: np.random.Generator,
    truth: GroundTruthGrid,
) -> EpisodeTrace:
    """Roll one full-budget episode and record the step-wise trace."""
    state = env.reset()
    trace = EpisodeTrace()
    trace.entropies.append(entropy(state.global_belief))
    trace.trajectories = [[(p.x, p.y, p.z)] for p in state.poses]
    last_readings: list[SensorReading] | None = None
    while state.budget_remaining > 0:
        actions = driver.joint_action(env, state, last_readings, rng)
        state, reward, readings = env.step(actions)
        last_readings = readings
        trace.entropies.append(entropy(state.global_belief))
        trace.f1s.append(f1_score(state.global_belief, truth))
        trace.rewards.append(reward)
        trace.actions.append([int(a) for a in actions])
        for i, p in enumerate(state.poses):
            trace.trajectories[i].append((p.x, p.y, p.z))
    trace.final_belief = state.global_belief.probs
    return trace


def budget_checkpoints(budget: int) -> list[int]:
    """Step indices at 33%, 67%, and 100% of the budget (ceiling rule)."""
    return [-(-budget // 3), -(-2 * budget // 3), budget]


@dataclass
class TrialStats:
    """Mean/std of F1 and entropy at the budget checkpoints, plus step curves."""

    checkpoints: list[int]
    f1_mean: np.ndarray
    f1_std: np.ndarray
    h_mean: np.ndarray
    h_std: np.ndarray
    f1_per_trial: np.ndarray  # (n_trials, 3)
    h_per_trial: np.ndarray  # (n_trials, 3)
    f1_curve_mean: np.ndarray  # (budget,)
    f1_curve_std: np.ndarray
    h_curve_mean: np.ndarray  # (budget + 1,)
    h_curve_std: np.ndarray


def run_trials(
    driver,
    truth: GroundTruthGrid,
    config: EpisodeConfig,
    n_trials: int,
    seed: int,
) -> tuple[TrialStats, list[EpisodeTrace]]:
    """Independent seeded episodes; per-checkpoint statistics over trials."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    marks = budget_checkpoints(config.budget)
    traces = []
    for trial, child in enumerate(np.random.SeedSequence(seed).spawn(n_trials)):
        env_seed, driver_seed = child.spawn(2)
        env = Environment(
            truth, replace(config, seed=int(env_seed.generate_state(1)[0] % 2**31))
        )
        rng = np.random.default_rng(driver_seed)
        traces.append(run_episode(env, driver, rng, truth))

    f1_rows = np.array([[tr.f1s[m - 1] for m in marks] for tr in traces])
    h_rows = np.array([[tr.entropies[m] for m in marks] for tr in traces])
    f1_curves = np.array([tr.f1s for tr in traces])
    h_curves = np.array([tr.entropies for tr in traces])
    stats = TrialStats(
        checkpoints=marks,
        f1_mean=f1_rows.mean(axis=0),
        f1_std=f1_rows.std(axis=0),
        h_mean=h_rows.mean(axis=0),
        h_std=h_rows.std(axis=0),
        f1_per_trial=f1_rows,
        h_per_trial=h_rows,
        f1_curve_mean=f1_curves.mean(axis=0),
        f1_curve_std=f1_curves.std(axis=0),
        h_curve_mean=h_curves.mean(axis=0),
        h_curve_std=h_curves.std(axis=0),
    )
    return stats, traces


# ---------------------------------------------------------------------------
# Persistence and reporting
# ---------------------------------------------------------------------------


def write_traces_jsonl(traces: list[EpisodeTrace], path) -> None:
    """One JSON line per step: poses, actions, reward, entropy."""
    with open(path, "w", encoding="utf-8") as fh:
        for trial, trace in enumerate(traces):
            for t in range(trace.steps):
                fh.write(
                    json.dumps(
                        {
                            "trial": trial,
                            "step": t,
                            "poses": [traj[t + 1] for traj in trace.trajectories],
                            "actions": trace.actions[t],
                            "reward": trace.rewards[t],
                            "entropy": trace.entropies[t + 1],
                        }
                    )
                    + "\n"
                )


def write_method_results(
    out_dir, env_label: str, method: str, stats: TrialStats
) -> None:
    """stats.csv (checkpoint rows) and curves.csv (per-step series)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["env", "method", "checkpoint", "f1_mean", "f1_std", "h_mean", "h_std"]
        )
        for j, mark in enumerate(stats.checkpoints):
            writer.writerow(
                [
                    env_label,
                    method,
                    mark,
                    repr(float(stats.f1_mean[j])),
                    repr(float(stats.f1_std[j])),
                    repr(float(stats.h_mean[j])),
                    repr(float(stats.h_std[j])),
                ]
            )
    with open(out_dir / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["env", "method", "step", "f1_mean", "f1_std", "h_mean", "h_std"]
        )
        budget = len(stats.f1_curve_mean)
        for t in range(budget + 1):
            writer.writerow(
                [
                    env_label,
                    method,
                    t,
                    "" if t == 0 else repr(float(stats.f1_curve_mean[t - 1])),
                    "" if t == 0 else repr(float(stats.f1_curve_std[t - 1])),
                    repr(float(stats.h_curve_mean[t])),
                    repr(float(stats.h_curve_std[t])),
                ]
            )


def load_method_results(result_dir) -> tuple[list[dict], list[dict]]:
    result_dir = Path(result_dir)
    with open(result_dir / "stats.csv", newline="", encoding="utf-8") as fh:
        stats_rows = list(csv.DictReader(fh))
    with open(result_dir / "curves.csv", newline="", encoding="utf-8") as fh:
        curve_rows = list(csv.DictReader(fh))
    return stats_rows, curve_rows


def make_report(result_dirs: list, out_dir) -> Path:
    """Merge per-method results into one table and per-env curve plots.

    The table flags the best F1 (highest) and entropy (lowest) per
    (env, checkpoint) column; ties go to the first method listed.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats_rows: list[dict] = []
    curve_rows: list[dict] = []
    for rd in result_dirs:
        s, c = load_method_results(rd)
        stats_rows.extend(s)
        curve_rows.extend(c)

    best: dict[tuple[str, str], tuple[str, str]] = {}
    for env_label, mark in {(r["env"], r["checkpoint"]) for r in stats_rows}:
        group = [r for r in stats_rows if r["env"] == env_label and r["checkpoint"] == mark]
        best_f1 = max(group, key=lambda r: float(r["f1_mean"]))["method"]
        best_h = min(group, key=lambda r: float(r["h_mean"]))["method"]
        best[(env_label, mark)] = (best_f1, best_h)

    report_path = out_dir / "report.csv"
    with open(report_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "env",
                "method",
                "checkpoint",
                "f1_mean",
                "f1_std",
                "h_mean",
                "h_std",
                "f1_best",
                "h_best",
            ]
        )
        for r in stats_rows:
            best_f1, best_h = best[(r["env"], r["checkpoint"])]
            writer.writerow(
                [
                    r["env"],
                    r["method"],
                    r["checkpoint"],
                    r["f1_mean"],
                    r["f1_std"],
                    r["h_mean"],
                    r["h_std"],
                    int(r["method"] == best_f1),
                    int(r["method"] == best_h),
                ]
            )

    for env_label in sorted({r["env"] for r in curve_rows}):
        for metric, col_mean, col_std, fname in (
            ("F1-score", "f1_mean", "f1_std", "f1"),
            ("Normalized entropy", "h_mean", "h_std", "entropy"),
        ):
            fig, ax = plt.subplots(figsize=(6, 4))
            for method in sorted(
                {r["method"] for r in curve_rows if r["env"] == env_label}
            ):
                rows = [
                    r
                    for r in curve_rows
                    if r["env"] == env_label
                    and r["method"] == method
                    and r[col_mean] != ""
                ]
                rows.sort(key=lambda r: int(r["step"]))
                steps = [int(r["step"]) for r in rows]
                mean = np.array([float(r[col_mean]) for r in rows])
                std = np.array([float(r[col_std]) for r in rows])
                ax.plot(steps, mean, label=method)
                ax.fill_between(steps, mean - std, mean + std, alpha=0.2)
            ax.set_xlabel("step")
            ax.set_ylabel(metric)
            ax.set_title(f"{env_label}: {metric} vs. steps")
            ax.legend()
            fig.tight_layout()
            fig.savefig(out_dir / f"{env_label}_{fname}.png", dpi=120)
            plt.close(fig)
    return report_path
