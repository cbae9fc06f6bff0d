"""Noisy broadcast of sensor patches between UAVs.

Transmission corrupts each pixel with multiplicative attenuation drawn
uniformly from a range plus additive Gaussian white noise; metadata (sender
id, pose, patch anchor) rides a separate reliable side channel.  Receivers
paste the patches they hold into grid-sized canvases, so that every source
lines up in the receiver's frame before fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import UavPose
from .grid import ConfigurationError

NOISE_LEVELS = {
    "none": (1.0, 1.0, 0.0),
    "moderate": (0.8, 1.0, 0.02),
    "loud": (0.6, 1.0, 0.06),
}

# Prior value for canvas cells no patch covers: maximum-uncertainty class.
CANVAS_FILL = 0.5


@dataclass(frozen=True)
class ChannelParams:
    """Attenuation range and Gaussian noise level of the broadcast channel."""

    alpha_low: float
    alpha_high: float
    sigma: float
    level: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.alpha_low <= self.alpha_high <= 1.0:
            raise ConfigurationError(
                f"attenuation bounds must satisfy 0 < low <= high <= 1, "
                f"got ({self.alpha_low}, {self.alpha_high})"
            )
        if self.sigma < 0.0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")

    @classmethod
    def from_level(cls, level: str) -> "ChannelParams":
        if level not in NOISE_LEVELS:
            raise ConfigurationError(
                f"unknown noise level {level!r}; choose from {sorted(NOISE_LEVELS)}"
            )
        low, high, sigma = NOISE_LEVELS[level]
        return cls(alpha_low=low, alpha_high=high, sigma=sigma, level=level)

    @property
    def is_identity(self) -> bool:
        return self.alpha_low == self.alpha_high == 1.0 and self.sigma == 0.0


@dataclass
class Message:
    """One transmitted patch plus its noise-free metadata."""

    sender_id: int
    pose: UavPose
    patch: np.ndarray
    anchor: tuple[int, int]


def corrupt(
    patch: np.ndarray,
    params: ChannelParams,
    rng: np.random.Generator,
    clamp: bool = True,
) -> np.ndarray:
    """Apply per-pixel attenuation and additive Gaussian noise.

    out = alpha * in + n with alpha ~ U(alpha_low, alpha_high) i.i.d. per
    pixel and n ~ N(0, sigma^2).  The result is clamped to [0, 1] unless
    ``clamp`` is disabled (statistics tests need the raw channel output).
    Identity parameters return the input unchanged, bitwise.
    """
    if params.is_identity:
        return patch.copy()
    alpha = rng.uniform(params.alpha_low, params.alpha_high, size=patch.shape)
    noise = rng.normal(0.0, params.sigma, size=patch.shape) if params.sigma > 0 else 0.0
    out = alpha * patch + noise
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def broadcast(
    patches: list[tuple[np.ndarray, tuple[int, int]]],
    poses: list[UavPose],
    params: ChannelParams,
    rng: np.random.Generator,
) -> list[list[Message]]:
    """Deliver every sender's patch to every receiver.

    Receiver ``i`` keeps its own patch clean at list position 0; the other
    N-1 patches are corrupted independently per receiver-sender pair (no
    common-mode noise).  Remaining senders follow in id order.
    """
    n = len(patches)
    if n < 1:
        raise ValueError("broadcast requires at least one sender")
    if len(poses) != n:
        raise ValueError("one pose per patch required")
    deliveries: list[list[Message]] = []
    for receiver in range(n):
        inbox = [
            Message(
                sender_id=receiver,
                pose=poses[receiver],
                patch=patches[receiver][0].copy(),
                anchor=patches[receiver][1],
            )
        ]
        for sender in range(n):
            if sender == receiver:
                continue
            inbox.append(
                Message(
                    sender_id=sender,
                    pose=poses[sender],
                    patch=corrupt(patches[sender][0], params, rng),
                    anchor=patches[sender][1],
                )
            )
        deliveries.append(inbox)
    return deliveries


def align(
    messages: list[Message],
    receiver_pose: UavPose,
    canvas_dims: tuple[int, int],
) -> np.ndarray:
    """Paste each message's patch into a canvas at its anchor.

    Returns an (n, H, W) stack, one canvas per message, filled with the 0.5
    unknown prior where no patch lands.  The receiver's own message (matched
    by pose) is moved to index 0 if it is not already there.
    """
    if not messages:
        raise ValueError("align requires at least the receiver's own message")
    height, width = canvas_dims
    ordered = list(messages)
    for k, msg in enumerate(ordered):
        if msg.pose == receiver_pose:
            ordered.insert(0, ordered.pop(k))
            break
    stack = np.full((len(ordered), height, width), CANVAS_FILL, dtype=np.float64)
    for idx, msg in enumerate(ordered):
        ax, ay = msg.anchor
        ph, pw = msg.patch.shape
        x0, y0 = max(ax, 0), max(ay, 0)
        x1, y1 = min(ax + pw, width), min(ay + ph, height)
        if x0 >= x1 or y0 >= y1:
            continue
        stack[idx, y0:y1, x0:x1] = msg.patch[y0 - ay : y1 - ay, x0 - ax : x1 - ax]
    return stack
