"""Non-learned comparison planners: random, lawnmower, and adaptive gain.

The lawnmower planner is open-loop: lanes are assigned at equal column
spacing and swept boustrophedon at the lowest altitude.  The adaptive-gain
planner is a one-step greedy over the six candidate moves, scoring each by
the expected information gain of sensing at the post-move pose under that
altitude's accuracy.  Neither uses inter-UAV communication.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .env import (
    Action,
    EpisodeConfig,
    N_ACTIONS,
    SwarmState,
    UavPose,
    footprint,
    valid_actions,
)
from .grid import BeliefGrid, GroundTruthGrid, binary_entropy


class PlannerKind(Enum):
    RANDOM = "random"
    LAWNMOWER = "lawnmower"
    ADAPTIVE_GAIN = "adaptive_gain"


def random_policy(
    state: SwarmState,
    agent: int,
    truth: GroundTruthGrid,
    z_max: int,
    rng: np.random.Generator,
) -> Action:
    """Uniform draw over the currently valid actions."""
    mask = valid_actions(state, agent, truth, z_max)
    choices = np.flatnonzero(mask)
    return Action(int(rng.choice(choices)))


@dataclass
class LawnmowerPlan:
    """Open-loop sweep: per-UAV start poses and action sequences."""

    start_poses: tuple[UavPose, ...]
    actions: list[list[Action]]


def lawnmower_plan(
    width: int, height: int, n_uavs: int, budget: int
) -> LawnmowerPlan:
    """Assign lanes at equal column spacing and sweep them boustrophedon.

    UAV k starts at the center column of its width/n stripe, altitude 1, and
    scans along y; when a column is exhausted it shifts one column over and
    scans back.  Sequences are truncated at the budget.  If the budget
    outlasts the stripe the UAV bounces along its last column.
    """
    if n_uavs < 1:
        raise ValueError("n_uavs must be >= 1")
    stripe = max(width // n_uavs, 1)
    plans: list[list[Action]] = []
    starts: list[UavPose] = []
    for k in range(n_uavs):
        col = min(k * stripe + (stripe - 1) // 2, width - 1)
        stripe_end = min((k + 1) * stripe - 1, width - 1)
        starts.append(UavPose(col, 0, 1))
        moves: list[Action] = []
        x, y, going_down = col, 0, True
        while len(moves) < budget:
            target = height - 1 if going_down else 0
            while y != target and len(moves) < budget:
                moves.append(Action.Y_POS if going_down else Action.Y_NEG)
                y += 1 if going_down else -1
            if len(moves) >= budget:
                break
            if x < stripe_end:
                moves.append(Action.X_POS)
                x += 1
            going_down = not going_down
        plans.append(moves[:budget])
    return LawnmowerPlan(start_poses=tuple(starts), actions=plans)


def expected_information_gain(
    belief: BeliefGrid, pose: UavPose, accuracy: float
) -> float:
    """Expected entropy reduction of one sensor sample at the given pose.

    Per footprint cell: current binary entropy minus the expectation, over
    the two observation outcomes weighted by their marginal likelihoods, of
    the posterior entropy.  Cells already certain, or an uninformative
    sensor, contribute zero.
    """
    if not 0.5 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in [0.5, 1], got {accuracy}")
    height, width = belief.shape
    cells = footprint(pose, width, height)
    xs = np.array([c[0] for c in cells])
    ys = np.array([c[1] for c in cells])
    p = belief.probs[ys, xs]

    a = accuracy
    p_obs1 = p * a + (1.0 - p) * (1.0 - a)
    p_obs0 = 1.0 - p_obs1
    with np.errstate(divide="ignore", invalid="ignore"):
        post1 = np.where(p_obs1 > 0, p * a / p_obs1, 0.0)
        post0 = np.where(p_obs0 > 0, p * (1.0 - a) / p_obs0, 0.0)
    expected_posterior = p_obs1 * binary_entropy(post1) + p_obs0 * binary_entropy(post0)
    return float((binary_entropy(p) - expected_posterior).sum())


def adaptive_gain_step(
    state: SwarmState,
    agent: int,
    truth: GroundTruthGrid,
    config: EpisodeConfig,
) -> Action:
    """Greedy one-step planner: the valid move whose post-move sample has the
    highest expected information gain on the agent's own belief.  Ties break
    toward the lowest action index."""
    mask = valid_actions(state, agent, truth, config.z_max)
    belief = state.local_beliefs[agent]
    best_action, best_gain = None, -np.inf
    for action in range(N_ACTIONS):
        if not mask[action]:
            continue
        nxt = state.poses[agent].moved(Action(action))
        gain = expected_information_gain(belief, nxt, config.accuracy_at(nxt.z))
        if gain > best_gain:
            best_action, best_gain = action, gain
    return Action(best_action)
