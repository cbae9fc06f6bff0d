"""Discretized 3-D multi-UAV grid world.

UAVs occupy integer cells ``(x, y)`` at an altitude level ``z`` in
``[1, z_max]``.  Each step every UAV moves one cell along a coordinate axis,
senses the square footprint under its camera, and the belief maps are updated
with the readings.  Sensing accuracy decays linearly with altitude while the
footprint grows, so altitude trades coverage against per-cell quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .grid import (
    BeliefGrid,
    ConfigurationError,
    GroundTruthGrid,
    binary_entropy,
    entropy,
    evidence_log_odds,
)


class EpisodeOver(RuntimeError):
    """Raised when step() is called after the budget is exhausted."""


class Action(IntEnum):
    """Six axis-aligned moves with a stable 0-5 integer encoding."""

    X_POS = 0
    X_NEG = 1
    Y_POS = 2
    Y_NEG = 3
    Z_POS = 4
    Z_NEG = 5


N_ACTIONS = len(Action)

ACTION_DELTAS: dict[Action, tuple[int, int, int]] = {
    Action.X_POS: (1, 0, 0),
    Action.X_NEG: (-1, 0, 0),
    Action.Y_POS: (0, 1, 0),
    Action.Y_NEG: (0, -1, 0),
    Action.Z_POS: (0, 0, 1),
    Action.Z_NEG: (0, 0, -1),
}


@dataclass(frozen=True)
class UavPose:
    """Integer cell coordinates plus altitude level in [1, z_max]."""

    x: int
    y: int
    z: int

    def moved(self, action: Action) -> "UavPose":
        dx, dy, dz = ACTION_DELTAS[Action(action)]
        return UavPose(self.x + dx, self.y + dy, self.z + dz)


@dataclass
class SensorReading:
    """One camera sample: in-bounds footprint cells and their observed classes.

    ``xs``/``ys``/``values`` are parallel arrays; ``values`` holds the observed
    class per cell.  Cells of the (2z+1)^2 camera window that fall outside the
    grid are not part of the reading (they carry no belief cell); they are
    defined to sample as class 0 and appear as zeros in the patch produced by
    :func:`reading_patch`.
    """

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    accuracy: float
    origin: UavPose


@dataclass
class EpisodeConfig:
    """Episode-level parameters for one multi-UAV mission."""

    width: int = 30
    height: int = 30
    z_max: int = 3
    n_uavs: int = 4
    budget: int = 15
    reward_alpha: float = 10.0
    reward_beta: float = -0.17
    seed: int = 0
    start_poses: tuple[UavPose, ...] | None = None
    # Sensor model: accuracy(z) = accuracy_base - accuracy_decay * (z - 1).
    accuracy_base: float = 0.95
    accuracy_decay: float = 0.1
    # Test hook: force a constant accuracy at every altitude (e.g. 1.0 for a
    # noiseless sensor).  None means the altitude model applies.
    sensor_accuracy_override: float | None = None

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigurationError("budget must be >= 1")
        if self.n_uavs < 1:
            raise ConfigurationError("n_uavs must be >= 1")
        if self.z_max < 1:
            raise ConfigurationError("z_max must be >= 1")
        lowest = self.accuracy_at(self.z_max)
        if not 0.5 < lowest <= 1.0:
            raise ConfigurationError(
                f"sensor accuracy at z_max would be {lowest}; must stay in (0.5, 1]"
            )

    def accuracy_at(self, z: int) -> float:
        if self.sensor_accuracy_override is not None:
            return self.sensor_accuracy_override
        return self.accuracy_base - self.accuracy_decay * (z - 1)

    def resolved_start_poses(self) -> tuple[UavPose, ...]:
        if self.start_poses is not None:
            return tuple(self.start_poses)
        return default_start_poses(self.n_uavs, self.width, self.height)


def default_start_poses(n: int, width: int, height: int) -> tuple[UavPose, ...]:
    """Corner starts at the lowest altitude, then edge midpoints, then center."""
    anchors = [
        (0, 0),
        (width - 1, 0),
        (0, height - 1),
        (width - 1, height - 1),
        (width // 2, 0),
        (width // 2, height - 1),
        (0, height // 2),
        (width - 1, height // 2),
        (width // 2, height // 2),
    ]
    poses = []
    for i in range(n):
        x, y = anchors[i % len(anchors)]
        poses.append(UavPose(x, y, 1))
    return tuple(poses)


@dataclass
class SwarmState:
    """Global snapshot: beliefs, poses, visited cells, and remaining budget."""

    global_belief: BeliefGrid
    local_beliefs: list[BeliefGrid]
    poses: list[UavPose]
    footprints: list[set[tuple[int, int]]]
    budget_remaining: int
    step_index: int = 0

    @property
    def n_uavs(self) -> int:
        return len(self.poses)


def footprint(pose: UavPose, width: int, height: int) -> list[tuple[int, int]]:
    """Cells of the square camera window of side 2z+1, clipped to the grid."""
    x0 = max(pose.x - pose.z, 0)
    x1 = min(pose.x + pose.z, width - 1)
    y0 = max(pose.y - pose.z, 0)
    y1 = min(pose.y + pose.z, height - 1)
    return [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)]


def sense(
    truth: GroundTruthGrid,
    pose: UavPose,
    rng: np.random.Generator,
    accuracy: float,
) -> SensorReading:
    """Sample the footprint: each cell reports its true class with the given
    probability, otherwise flipped.  Masked building cells sample as valueless.
    """
    cells = footprint(pose, truth.width, truth.height)
    xs = np.array([c[0] for c in cells], dtype=np.int64)
    ys = np.array([c[1] for c in cells], dtype=np.int64)
    true_vals = truth.cells[ys, xs]
    flips = rng.random(len(cells)) > accuracy
    observed = np.where(flips, 1 - true_vals, true_vals).astype(np.int8)
    return SensorReading(xs=xs, ys=ys, values=observed, accuracy=accuracy, origin=pose)


def reading_patch(reading: SensorReading) -> tuple[np.ndarray, tuple[int, int]]:
    """Render a reading as a (2z+1)^2 patch in window coordinates.

    Returns the patch and its anchor (grid coordinates of the patch's [0, 0]
    corner, possibly negative near edges).  Window cells beyond the grid edge
    hold 0: sampling outside the ROI is defined to report the valueless class.
    """
    z = reading.origin.z
    side = 2 * z + 1
    anchor = (reading.origin.x - z, reading.origin.y - z)
    patch = np.zeros((side, side), dtype=np.float64)
    patch[reading.ys - anchor[1], reading.xs - anchor[0]] = reading.values
    return patch, anchor


def update_belief(belief: BeliefGrid, reading: SensorReading) -> BeliefGrid:
    """Independent per-cell Bayes update in log-odds form.

    Posterior odds = prior odds * (a / (1-a))^(+1 for observed class 1,
    -1 for class 0).  Cells outside the reading are untouched.
    """
    delta = evidence_log_odds(reading.accuracy)
    out = belief.log_odds.copy()
    signs = np.where(reading.values == 1, 1.0, -1.0)
    out[reading.ys, reading.xs] += signs * delta
    return BeliefGrid(log_odds=out)


def reward(h_before: float, h_after: float, alpha: float, beta: float) -> float:
    """Relative entropy reduction, scaled, plus a per-step cost.

    ``alpha * (h_before - h_after) / h_before + beta`` so that reducing
    uncertainty earns positive reward; a fully resolved map yields ``beta``.
    """
    if h_before <= 0.0:
        return beta
    return alpha * (h_before - h_after) / h_before + beta


def valid_actions(
    state: SwarmState, agent: int, truth: GroundTruthGrid, z_max: int
) -> np.ndarray:
    """Boolean mask over the 6 actions: in-bounds, altitude in [1, z_max],
    and never onto a no-fly cell."""
    pose = state.poses[agent]
    mask = np.zeros(N_ACTIONS, dtype=bool)
    for action in Action:
        nxt = pose.moved(action)
        if not truth.in_bounds(nxt.x, nxt.y):
            continue
        if not 1 <= nxt.z <= z_max:
            continue
        if truth.mask[nxt.y, nxt.x]:
            continue
        mask[action] = True
    return mask


class Environment:
    """Owns the ground truth, episode config, and the sensing RNG stream.

    Instances are independent; run several in parallel with distinct seeds if
    you need concurrent rollouts.  All stochasticity flows through the single
    generator seeded at construction, so a fixed seed reproduces an entire
    episode sequence bitwise.
    """

    def __init__(self, truth: GroundTruthGrid, config: EpisodeConfig):
        if (config.height, config.width) != truth.shape:
            raise ConfigurationError(
                f"config grid {config.height}x{config.width} does not match "
                f"ground truth {truth.shape[0]}x{truth.shape[1]}"
            )
        self.truth = truth
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.state: SwarmState | None = None
        for pose in config.resolved_start_poses():
            self._check_pose(pose)

    def _check_pose(self, pose: UavPose) -> None:
        if not self.truth.in_bounds(pose.x, pose.y):
            raise ConfigurationError(f"start pose {pose} outside the grid")
        if not 1 <= pose.z <= self.config.z_max:
            raise ConfigurationError(f"start pose {pose} violates altitude bounds")
        if self.truth.mask[pose.y, pose.x]:
            raise ConfigurationError(f"start pose {pose} sits on a no-fly cell")

    def reset(self) -> SwarmState:
        """Fresh episode: uniform beliefs, start poses, full budget."""
        cfg = self.config
        poses = list(cfg.resolved_start_poses())
        if len(poses) != cfg.n_uavs:
            raise ConfigurationError(
                f"{len(poses)} start poses supplied for {cfg.n_uavs} UAVs"
            )
        self.state = SwarmState(
            global_belief=BeliefGrid.uniform(cfg.height, cfg.width),
            local_beliefs=[
                BeliefGrid.uniform(cfg.height, cfg.width) for _ in range(cfg.n_uavs)
            ],
            poses=poses,
            footprints=[{(p.x, p.y)} for p in poses],
            budget_remaining=cfg.budget,
            step_index=0,
        )
        return self.state

    def valid_actions(self, agent: int) -> np.ndarray:
        assert self.state is not None, "call reset() first"
        return valid_actions(self.state, agent, self.truth, self.config.z_max)

    def step(
        self, joint_action: list[Action] | list[int]
    ) -> tuple[SwarmState, float, list[SensorReading]]:
        """Move all UAVs simultaneously, sense, and fold readings into beliefs.

        The global belief absorbs every UAV's clean reading (duplicates from
        co-located UAVs included); each local belief absorbs only its own.
        Returns the new state, the global reward, and the per-UAV readings.
        """
        state = self.state
        assert state is not None, "call reset() first"
        if state.budget_remaining <= 0:
            raise EpisodeOver("budget exhausted; reset() to start a new episode")
        if len(joint_action) != state.n_uavs:
            raise ValueError(
                f"joint action has {len(joint_action)} entries for {state.n_uavs} UAVs"
            )
        cfg = self.config

        new_poses = []
        for i, action in enumerate(joint_action):
            mask = valid_actions(state, i, self.truth, cfg.z_max)
            if not mask[int(action)]:
                raise ValueError(f"action {Action(int(action)).name} invalid for UAV {i}")
            new_poses.append(state.poses[i].moved(Action(int(action))))

        readings = [
            sense(self.truth, pose, self.rng, cfg.accuracy_at(pose.z))
            for pose in new_poses
        ]

        h_before = entropy(state.global_belief)
        global_belief = state.global_belief
        for r in readings:
            global_belief = update_belief(global_belief, r)
        h_after = entropy(global_belief)

        local_beliefs = [
            update_belief(state.local_beliefs[i], readings[i])
            for i in range(state.n_uavs)
        ]
        footprints = [
            state.footprints[i] | {(new_poses[i].x, new_poses[i].y)}
            for i in range(state.n_uavs)
        ]

        self.state = SwarmState(
            global_belief=global_belief,
            local_beliefs=local_beliefs,
            poses=new_poses,
            footprints=footprints,
            budget_remaining=state.budget_remaining - 1,
            step_index=state.step_index + 1,
        )
        r = reward(h_before, h_after, cfg.reward_alpha, cfg.reward_beta)
        return self.state, r, readings
