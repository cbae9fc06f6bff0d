"""Sensor denoising and fusion network.

A small convolutional encoder/decoder is pretrained offline as a denoising
autoencoder: inputs pass through the broadcast channel's corruption model,
targets are the clean patches.  At deployment the encoder runs on each of the
n aligned source canvases (source 0 = the receiver's own clean data), the
encodings are merged by a channel/spatial attention strategy that softmaxes
across sources, and the decoder emits one fused, denoised map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .channel import CANVAS_FILL, ChannelParams, Message, broadcast, corrupt, align
from .env import SensorReading, UavPose, reading_patch
from .grid import ConfigurationError

CHECKPOINT_MAGIC = "swarmipp.sendfuse"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass(frozen=True)
class FusionWeights:
    """Convex mix of the channel- and spatial-attention fusion paths."""

    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("fusion weights must be non-negative")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ConfigurationError("fusion weights must sum to 1")


@dataclass(frozen=True)
class FusionLossWeights:
    """Weights of the pixel-level (MSE, MAE) and structural (SSIM) loss terms."""

    w_mse: float = 1.0
    w_mae: float = 1.0
    w_ssim: float = 1.0

    def __post_init__(self):
        if min(self.w_mse, self.w_mae, self.w_ssim) < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.w_mse == self.w_mae == self.w_ssim == 0:
            raise ConfigurationError("at least one loss weight must be positive")


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------


def _gaussian_window(size: int, sigma: float, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - size // 2
    g = torch.exp(-0.5 * (coords / sigma) ** 2)
    g = g / g.sum()
    return torch.outer(g, g).reshape(1, 1, size, size)


def ssim(
    x: torch.Tensor,
    y: torch.Tensor,
    window_size: int = 11,
    sigma: float = 1.5,
    data_range: float = 1.0,
) -> torch.Tensor:
    """Mean structural similarity between image batches of shape (B, 1, H, W).

    Gaussian-weighted local statistics over an 11x11 window, stabilizing
    constants C1 = (0.01 L)^2 and C2 = (0.03 L)^2, population covariances.
    Statistics are only taken where the window fits entirely inside the image,
    so images must be at least window_size on each side.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[-2:]) < window_size:
        raise ValueError(f"images must be at least {window_size} pixels per side")
    kernel = _gaussian_window(window_size, sigma, x.dtype, x.device)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    mu_x = F.conv2d(x, kernel)
    mu_y = F.conv2d(y, kernel)
    var_x = F.conv2d(x * x, kernel) - mu_x * mu_x
    var_y = F.conv2d(y * y, kernel) - mu_y * mu_y
    cov_xy = F.conv2d(x * y, kernel) - mu_x * mu_y

    s = ((2 * mu_x * mu_y + c1) * (2 * cov_xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return s.mean()


def loss_components(
    x: torch.Tensor, y: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(MSE, MAE, 1 - SSIM) between reconstruction x and clean target y."""
    mse = F.mse_loss(x, y)
    mae = F.l1_loss(x, y)
    dssim = 1.0 - ssim(x, y)
    return mse, mae, dssim


def sendfuse_loss(
    x: torch.Tensor, y: torch.Tensor, weights: FusionLossWeights
) -> torch.Tensor:
    """Weighted sum of pixel-level and structural reconstruction losses."""
    mse, mae, dssim = loss_components(x, y)
    return weights.w_mse * mse + weights.w_mae * mae + weights.w_ssim * dssim


# ---------------------------------------------------------------------------
# Attention fusion over n sources
# ---------------------------------------------------------------------------


def channel_attention(stack: torch.Tensor) -> torch.Tensor:
    """Scale each source's channels by a per-channel softmax across sources.

    Input (n, C, H, W): for every channel c, the weight of source s is
    softmax over sources of the globally average-pooled activation of that
    source's channel c.  Weights over sources sum to 1 per channel.
    """
    if stack.ndim != 4:
        raise ValueError("expected a stack of shape (n, C, H, W)")
    pooled = stack.mean(dim=(2, 3))
    w = torch.softmax(pooled, dim=0)
    return stack * w[:, :, None, None]


def spatial_attention(stack: torch.Tensor) -> torch.Tensor:
    """Scale each source at every position by a per-position softmax.

    The logit of source s at position (h, w) is the L1 norm of its channel
    vector there; the resulting weight multiplies all channels at that
    position.  Weights over sources sum to 1 per position.
    """
    if stack.ndim != 4:
        raise ValueError("expected a stack of shape (n, C, H, W)")
    l1 = stack.abs().sum(dim=1)
    w = torch.softmax(l1, dim=0)
    return stack * w[:, None, :, :]


def fuse(stack: torch.Tensor, weights: FusionWeights) -> torch.Tensor:
    """Combine the two attention paths and reduce the source axis by summing.

    Returns a single (C, H, W) feature map.  For identical sources both paths
    assign uniform 1/n weights, so the fused map equals the common encoding.
    """
    mixed = weights.alpha * channel_attention(stack) + weights.beta * spatial_attention(
        stack
    )
    return mixed.sum(dim=0)


# ---------------------------------------------------------------------------
# Encoder / decoder
# ---------------------------------------------------------------------------


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class _Encoder(nn.Module):
    """Two downsampling stages: (1, H, W) -> (2w, H/4, W/4)."""

    def __init__(self, base_width: int):
        super().__init__()
        w = base_width
        self.stem = nn.Conv2d(1, w, 3, padding=1)
        self.block1 = _ResidualBlock(w)
        self.widen = nn.Conv2d(w, 2 * w, 3, padding=1)
        self.block2 = _ResidualBlock(2 * w)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        x = F.relu(self.stem(x))
        x = self.pool(self.block1(x))
        x = F.relu(self.widen(x))
        x = self.pool(self.block2(x))
        return x


class _Decoder(nn.Module):
    """Mirror of the encoder; sigmoid output keeps pixels in [0, 1]."""

    def __init__(self, base_width: int):
        super().__init__()
        w = base_width
        self.block1 = _ResidualBlock(2 * w)
        self.narrow = nn.Conv2d(2 * w, w, 3, padding=1)
        self.block2 = _ResidualBlock(w)
        self.refine = nn.Conv2d(w, w, 3, padding=1)
        self.out = nn.Conv2d(w, 1, 3, padding=1)

    def forward(self, x):
        x = self.block1(x)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu(self.narrow(x))
        x = self.block2(x)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.relu(self.refine(x))
        return torch.sigmoid(self.out(x))


class SenDFuseModel:
    """Encoder/decoder pair plus the fusion strategy and training metadata."""

    def __init__(
        self,
        encoder: _Encoder,
        decoder: _Decoder,
        descriptor: dict,
        meta: dict | None = None,
        trained: bool = False,
    ):
        self.encoder = encoder
        self.decoder = decoder
        self.descriptor = descriptor
        self.meta = meta or {}
        self.trained = trained

    @classmethod
    def create(
        cls,
        input_size: int = 32,
        base_width: int = 16,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ) -> "SenDFuseModel":
        if input_size % 4 != 0:
            raise ConfigurationError("input_size must be divisible by 4")
        torch.manual_seed(seed)
        encoder = _Encoder(base_width).to(dtype)
        decoder = _Decoder(base_width).to(dtype)
        descriptor = {
            "input_size": input_size,
            "base_width": base_width,
            "feature_channels": 2 * base_width,
        }
        return cls(encoder, decoder, descriptor)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.encoder.parameters()).dtype

    @property
    def input_size(self) -> int:
        return self.descriptor["input_size"]

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.decoder.parameters()

    def _check_images(self, images: torch.Tensor) -> None:
        size = self.input_size
        if images.ndim != 4 or images.shape[1] != 1 or images.shape[-2:] != (size, size):
            raise ValueError(
                f"expected images of shape (n, 1, {size}, {size}), "
                f"got {tuple(images.shape)}"
            )

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Deterministic feature maps of shape (n, 2w, H/4, W/4)."""
        self._check_images(images)
        return self.encoder(images)

    def decode(self, features: torch.Tensor) -> torch.Tensor:
        """Map features back to single-channel images in [0, 1]."""
        size = self.input_size
        expected = (self.descriptor["feature_channels"], size // 4, size // 4)
        if features.ndim != 4 or tuple(features.shape[1:]) != expected:
            raise ValueError(
                f"expected features of shape (n, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {tuple(features.shape)}"
            )
        return self.decoder(features)

    def reconstruct(self, images: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(images))

    def run(self, aligned_stack: np.ndarray, weights: FusionWeights) -> np.ndarray:
        """Fuse n aligned canvases into one denoised map of the same size.

        Canvases are resampled to the model's input resolution, encoded,
        fused across sources with the attention strategy, decoded, and
        resampled back.  Pure function of (model, inputs).
        """
        if not self.trained:
            warnings.warn("running an untrained denoise-fusion model", stacklevel=2)
        stack = np.asarray(aligned_stack, dtype=np.float64)
        if stack.ndim != 3:
            raise ValueError("expected an aligned stack of shape (n, H, W)")
        n, height, width = stack.shape
        size = self.input_size
        with torch.no_grad():
            x = torch.as_tensor(stack, dtype=self.dtype).unsqueeze(1)
            if (height, width) != (size, size):
                x = F.interpolate(
                    x, size=(size, size), mode="bilinear", align_corners=False
                )
            fused = fuse(self.encode(x), weights)
            out = self.decode(fused.unsqueeze(0))
            if (height, width) != (size, size):
                out = F.interpolate(
                    out, size=(height, width), mode="bilinear", align_corners=False
                )
        return out[0, 0].to(torch.float64).numpy()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: SenDFuseModel, path) -> None:
    torch.save(
        {
            "magic": CHECKPOINT_MAGIC,
            "version": CHECKPOINT_VERSION,
            "descriptor": model.descriptor,
            "encoder": model.encoder.state_dict(),
            "decoder": model.decoder.state_dict(),
            "meta": model.meta,
            "trained": model.trained,
        },
        path,
    )


def load_checkpoint(path) -> SenDFuseModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("magic") != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path} is not a denoise-fusion checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"unsupported checkpoint version {blob.get('version')}"
        )
    desc = blob["descriptor"]
    model = SenDFuseModel.create(
        input_size=desc["input_size"], base_width=desc["base_width"]
    )
    model.encoder.load_state_dict(blob["encoder"])
    model.decoder.load_state_dict(blob["decoder"])
    model.meta = blob.get("meta", {})
    model.trained = bool(blob.get("trained", False))
    return model


# ---------------------------------------------------------------------------
# Pretraining (denoising autoencoder phase, fusion disabled)
# ---------------------------------------------------------------------------


def pretrain(
    dataset: np.ndarray,
    channel_params: ChannelParams,
    epochs: int,
    weights: FusionLossWeights,
    rng: np.random.Generator,
    batch_size: int = 64,
    lr: float = 1e-3,
    base_width: int = 16,
) -> tuple[SenDFuseModel, list[dict]]:
    """Train the encoder/decoder as a one-to-one denoising autoencoder.

    Every minibatch pairs channel-corrupted inputs with their clean originals.
    Returns the model and a per-epoch loss trace (mse, mae, ssim, total).
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 3 or dataset.shape[0] == 0:
        raise ValueError("dataset must be a non-empty array of shape (n, H, W)")
    model = SenDFuseModel.create(
        input_size=dataset.shape[-1],
        base_width=base_width,
        seed=int(rng.integers(2**31 - 1)),
    )
    trace: list[dict] = []
    if epochs == 0:
        return model, trace

    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    n = dataset.shape[0]
    for epoch in range(epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n, batch_size):
            clean = dataset[order[start : start + batch_size]]
            noisy = corrupt(clean, channel_params, rng)
            x = torch.as_tensor(noisy, dtype=model.dtype).unsqueeze(1)
            y = torch.as_tensor(clean, dtype=model.dtype).unsqueeze(1)
            out = model.reconstruct(x)
            mse, mae, dssim = loss_components(out, y)
            loss = weights.w_mse * mse + weights.w_mae * mae + weights.w_ssim * dssim
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {batches}: "
                    f"mse={mse.item()}, mae={mae.item()}, dssim={dssim.item()}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            sums += [mse.item(), mae.item(), dssim.item(), loss.item()]
            batches += 1
        trace.append(
            {
                "epoch": epoch,
                "mse": float(sums[0] / batches),
                "mae": float(sums[1] / batches),
                "ssim": float(1.0 - sums[2] / batches),
                "total": float(sums[3] / batches),
            }
        )
    model.trained = True
    model.meta.update(
        {
            "epochs": epochs,
            "noise_level": channel_params.level,
            "loss_weights": [weights.w_mse, weights.w_mae, weights.w_ssim],
            "final_loss": trace[-1]["total"],
        }
    )
    return model, trace


def evaluate_denoising(
    model: SenDFuseModel,
    clean_images: np.ndarray,
    channel_params: ChannelParams,
    rng: np.random.Generator,
) -> dict:
    """Held-out check: SSIM of reconstructions vs. SSIM of the raw noisy inputs."""
    clean = torch.as_tensor(
        np.asarray(clean_images, dtype=np.float64), dtype=model.dtype
    ).unsqueeze(1)
    noisy_np = corrupt(np.asarray(clean_images, dtype=np.float64), channel_params, rng)
    noisy = torch.as_tensor(noisy_np, dtype=model.dtype).unsqueeze(1)
    with torch.no_grad():
        out = model.reconstruct(noisy)
        ssim_out = float(ssim(out, clean))
        ssim_noisy = float(ssim(noisy, clean))
    return {"ssim_output": ssim_out, "ssim_noisy": ssim_noisy}


# ---------------------------------------------------------------------------
# Swarm communication: broadcast, align, fuse for every receiver
# ---------------------------------------------------------------------------


def fused_swarm_maps(
    last_readings: list[SensorReading] | None,
    poses: list[UavPose],
    canvas_dims: tuple[int, int],
    channel_params: ChannelParams,
    rng: np.random.Generator,
    model: SenDFuseModel | None,
    weights: FusionWeights,
    naive: bool = False,
) -> list[np.ndarray]:
    """One fused communication map per UAV for the current decision step.

    Each UAV broadcasts its latest sensor patch; every receiver aligns the n
    patches it holds (own first, clean) and runs the fusion model.  With
    ``naive`` the model is bypassed and the aligned canvases are averaged
    pixelwise, which is the no-denoising reference path.  Before the first
    sensing step there is nothing to share and every canvas is the unknown
    prior.
    """
    n = len(poses)
    height, width = canvas_dims
    if last_readings is None:
        blank = np.full((n, height, width), CANVAS_FILL, dtype=np.float64)
        if naive or model is None:
            return [blank.mean(axis=0) for _ in range(n)]
        return [model.run(blank, weights) for _ in range(n)]
    if len(last_readings) != n:
        raise ValueError("one reading per UAV required")
    patches = [reading_patch(r) for r in last_readings]
    origins = [r.origin for r in last_readings]
    deliveries = broadcast(patches, origins, channel_params, rng)
    maps = []
    for i in range(n):
        stack = align(deliveries[i], origins[i], canvas_dims)
        if naive or model is None:
            maps.append(stack.mean(axis=0))
        else:
            maps.append(model.run(stack, weights))
    return maps


# ---------------------------------------------------------------------------
# Synthetic training patches
# ---------------------------------------------------------------------------


def synthetic_patches(
    n: int, size: int, rng: np.random.Generator, footprint_fraction: float = 0.5
) -> np.ndarray:
    """Clean training canvases matching the deployment input distribution.

    A mix of full binary blob fields and single sensor-style patches pasted on
    the 0.5 unknown-prior background, mirroring what the aligned canvases look
    like in the field.
    """
    from .envgen import render_star_field

    out = np.empty((n, size, size), dtype=np.float64)
    for i in range(n):
        terrain = render_star_field(size, size, int(rng.integers(1, 4)), rng)
        if rng.random() < footprint_fraction:
            canvas = np.full((size, size), CANVAS_FILL, dtype=np.float64)
            z = int(rng.integers(1, 4))
            side = 2 * z + 1
            x0 = int(rng.integers(0, size - side + 1))
            y0 = int(rng.integers(0, size - side + 1))
            canvas[y0 : y0 + side, x0 : x0 + side] = terrain[
                y0 : y0 + side, x0 : x0 + side
            ]
            out[i] = canvas
        else:
            out[i] = terrain
    return out
