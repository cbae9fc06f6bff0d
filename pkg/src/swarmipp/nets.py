"""Observation assembly and the attention-augmented actor/critic networks.

Each UAV sees an egocentric 11x11 window around its own cell.  The actor gets
8 channels of local information (budget, identity, altitudes, footprint,
latest sensor sample, belief, belief entropy, fused communication map); the
critic sees those plus 4 global channels (global belief, its entropy, the
union footprint, and the joint-action map) for centralized training.  Both
networks share a convolutional trunk where every conv block is followed by a
channel-then-spatial attention module.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .env import N_ACTIONS, SensorReading, SwarmState
from .grid import ConfigurationError, binary_entropy

WINDOW = 11
RADIUS = WINDOW // 2

ACTOR_CHANNELS = 8
CRITIC_CHANNELS = 12

CHECKPOINT_MAGIC = "swarmipp.policy"
CHECKPOINT_VERSION = 1


def crop_window(grid_map: np.ndarray, cx: int, cy: int) -> np.ndarray:
    """11x11 window of a (H, W) map centered at (cx, cy), zero outside."""
    height, width = grid_map.shape
    out = np.zeros((WINDOW, WINDOW), dtype=np.float64)
    x0, x1 = max(cx - RADIUS, 0), min(cx + RADIUS, width - 1)
    y0, y1 = max(cy - RADIUS, 0), min(cy + RADIUS, height - 1)
    out[
        y0 - cy + RADIUS : y1 - cy + RADIUS + 1,
        x0 - cx + RADIUS : x1 - cx + RADIUS + 1,
    ] = grid_map[y0 : y1 + 1, x0 : x1 + 1]
    return out


def build_actor_obs(
    state: SwarmState,
    agent: int,
    fused_map: np.ndarray,
    budget: int,
    z_max: int,
    last_reading: SensorReading | None = None,
) -> np.ndarray:
    """8-channel egocentric observation stack for one UAV.

    The budget and identity channels are constant planes; the spatial
    channels are windows into grid-sized maps and are zero beyond the grid
    edge.
    """
    pose = state.poses[agent]
    n = state.n_uavs
    height, width = state.global_belief.shape
    obs = np.zeros((ACTOR_CHANNELS, WINDOW, WINDOW), dtype=np.float64)

    obs[0] = state.budget_remaining / budget
    obs[1] = (agent + 1) / n

    altitude = np.zeros((height, width), dtype=np.float64)
    for p in state.poses:
        altitude[p.y, p.x] = max(altitude[p.y, p.x], p.z / z_max)
    obs[2] = crop_window(altitude, pose.x, pose.y)

    visited = np.zeros((height, width), dtype=np.float64)
    for x, y in state.footprints[agent]:
        visited[y, x] = 1.0
    obs[3] = crop_window(visited, pose.x, pose.y)

    if last_reading is not None:
        sampled = np.zeros((height, width), dtype=np.float64)
        sampled[last_reading.ys, last_reading.xs] = last_reading.values
        obs[4] = crop_window(sampled, pose.x, pose.y)

    probs = state.local_beliefs[agent].probs
    obs[5] = crop_window(probs, pose.x, pose.y)
    obs[6] = crop_window(binary_entropy(probs), pose.x, pose.y)
    obs[7] = crop_window(fused_map, pose.x, pose.y)
    return obs


def build_critic_obs(
    actor_obs: np.ndarray,
    state: SwarmState,
    joint_action: list[int],
    agent: int,
) -> np.ndarray:
    """Actor channels plus 4 global channels, in the same egocentric window.

    The joint-action channel writes (action index + 1) / 6 at every UAV's
    cell, the agent's own action included; zero it with
    :func:`withhold_own_action` before counterfactual critic queries.
    """
    pose = state.poses[agent]
    height, width = state.global_belief.shape
    obs = np.zeros((CRITIC_CHANNELS, WINDOW, WINDOW), dtype=np.float64)
    obs[:ACTOR_CHANNELS] = actor_obs

    probs = state.global_belief.probs
    obs[8] = crop_window(probs, pose.x, pose.y)
    obs[9] = crop_window(binary_entropy(probs), pose.x, pose.y)

    visited = np.zeros((height, width), dtype=np.float64)
    for fp in state.footprints:
        for x, y in fp:
            visited[y, x] = 1.0
    obs[10] = crop_window(visited, pose.x, pose.y)

    actions = np.zeros((height, width), dtype=np.float64)
    for p, a in zip(state.poses, joint_action):
        actions[p.y, p.x] = max(actions[p.y, p.x], (int(a) + 1) / N_ACTIONS)
    obs[11] = crop_window(actions, pose.x, pose.y)
    return obs


def withhold_own_action(critic_obs: np.ndarray) -> np.ndarray:
    """Zero the agent's own action slot (the window center) for Q(s, (u_-i, .))."""
    out = critic_obs.copy()
    out[..., 11, RADIUS, RADIUS] = 0.0
    return out


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


class CbamBlock(nn.Module):
    """Channel attention (shared MLP over avg+max pooling) then spatial
    attention (conv over channelwise avg+max maps).  ``enabled=False`` turns
    the block into an identity, used for ablations."""

    def __init__(self, channels: int, reduction: int = 8, spatial_kernel: int = 7):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden, bias=False),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels, bias=False),
        )
        self.spatial = nn.Conv2d(2, 1, spatial_kernel, padding=spatial_kernel // 2)
        self.enabled = True

    def forward(self, x):
        if not self.enabled:
            return x
        avg = self.mlp(x.mean(dim=(2, 3)))
        peak = self.mlp(x.amax(dim=(2, 3)))
        x = x * torch.sigmoid(avg + peak)[:, :, None, None]
        pooled = torch.cat(
            [x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1
        )
        return x * torch.sigmoid(self.spatial(pooled))


class PolicyNet(nn.Module):
    """Shared trunk: 3 conv blocks with attention, flatten, 2-layer head."""

    def __init__(
        self,
        in_channels: int,
        widths: tuple[int, int, int] = (32, 64, 64),
        head_hidden: int = 128,
        cbam_reduction: int = 8,
        cbam_enabled: bool = True,
    ):
        super().__init__()
        w1, w2, w3 = widths
        self.conv1 = nn.Conv2d(in_channels, w1, 3, padding=1)
        self.cbam1 = CbamBlock(w1, cbam_reduction)
        self.conv2 = nn.Conv2d(w1, w2, 3, padding=1)
        self.cbam2 = CbamBlock(w2, cbam_reduction)
        self.conv3 = nn.Conv2d(w2, w3, 3, padding=1)
        self.cbam3 = CbamBlock(w3, cbam_reduction)
        self.fc1 = nn.Linear(w3 * WINDOW * WINDOW, head_hidden)
        self.fc2 = nn.Linear(head_hidden, N_ACTIONS)
        self.set_cbam_enabled(cbam_enabled)

    def set_cbam_enabled(self, enabled: bool) -> None:
        for block in (self.cbam1, self.cbam2, self.cbam3):
            block.enabled = enabled

    @property
    def cbam_enabled(self) -> bool:
        return self.cbam1.enabled

    def forward(self, obs):
        x = self.cbam1(F.relu(self.conv1(obs)))
        x = self.cbam2(F.relu(self.conv2(x)))
        x = self.cbam3(F.relu(self.conv3(x)))
        x = F.relu(self.fc1(x.flatten(1)))
        return self.fc2(x)


def make_policy_nets(
    seed: int,
    cbam_enabled: bool = True,
    dtype: torch.dtype = torch.float32,
) -> tuple[PolicyNet, PolicyNet]:
    """Deterministically initialized shared actor and critic networks."""
    torch.manual_seed(seed)
    actor = PolicyNet(ACTOR_CHANNELS, cbam_enabled=cbam_enabled).to(dtype)
    critic = PolicyNet(CRITIC_CHANNELS, cbam_enabled=cbam_enabled).to(dtype)
    return actor, critic


def masked_policy(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Probabilities over actions with masked entries exactly zero."""
    if not mask.any(dim=-1).all():
        raise ValueError("every row needs at least one valid action")
    return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)


def masked_log_policy(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not mask.any(dim=-1).all():
        raise ValueError("every row needs at least one valid action")
    return torch.log_softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)


def actor_forward(actor: PolicyNet, obs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Single-observation policy distribution as a numpy vector."""
    dtype = next(actor.parameters()).dtype
    with torch.no_grad():
        logits = actor(torch.as_tensor(obs, dtype=dtype).unsqueeze(0))
        probs = masked_policy(logits, torch.as_tensor(mask).unsqueeze(0))
    return probs[0].to(torch.float64).numpy()


def critic_forward(critic: PolicyNet, obs: np.ndarray) -> np.ndarray:
    """Q-values of all 6 candidate own-actions, one forward pass.

    ``obs`` must already have the agent's own action slot withheld so the
    output does not condition on the action being evaluated.
    """
    dtype = next(critic.parameters()).dtype
    with torch.no_grad():
        q = critic(torch.as_tensor(obs, dtype=dtype).unsqueeze(0))
    return q[0].to(torch.float64).numpy()


def select_action(dist: np.ndarray, mode: str, rng: np.random.Generator) -> int:
    """Draw from the distribution, or take the argmax with lowest-index ties."""
    dist = np.asarray(dist, dtype=np.float64)
    if mode == "greedy":
        return int(np.argmax(dist))
    if mode == "sample":
        return int(rng.choice(len(dist), p=dist / dist.sum()))
    raise ValueError(f"unknown selection mode {mode!r}")


# ---------------------------------------------------------------------------
# Checkpoints and debugging dumps
# ---------------------------------------------------------------------------


def save_policy_checkpoint(
    path,
    actor: PolicyNet,
    critic: PolicyNet,
    ablate_fusion: bool,
    meta: dict | None = None,
) -> None:
    torch.save(
        {
            "magic": CHECKPOINT_MAGIC,
            "version": CHECKPOINT_VERSION,
            "descriptor": {
                "actor_channels": ACTOR_CHANNELS,
                "critic_channels": CRITIC_CHANNELS,
                "cbam_enabled": actor.cbam_enabled,
                "ablate_fusion": ablate_fusion,
            },
            "actor": actor.state_dict(),
            "critic": critic.state_dict(),
            "meta": meta or {},
        },
        path,
    )


def load_policy_checkpoint(path) -> tuple[PolicyNet, PolicyNet, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("magic") != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path} is not a policy checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {blob.get('version')}")
    desc = blob["descriptor"]
    actor = PolicyNet(desc["actor_channels"], cbam_enabled=desc["cbam_enabled"])
    critic = PolicyNet(desc["critic_channels"], cbam_enabled=desc["cbam_enabled"])
    actor.load_state_dict(blob["actor"])
    critic.load_state_dict(blob["critic"])
    return actor, critic, desc


def dump_observation(path, obs: np.ndarray) -> None:
    """Write an observation stack to an .npy file for debugging."""
    np.save(path, np.asarray(obs))
