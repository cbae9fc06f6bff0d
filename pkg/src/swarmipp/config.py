"""Run configuration: one human-diffable INI file covering every subsystem.

Each section maps onto one dataclass of primitives.  Floats are written with
repr() so a file round-trips bit-exactly; builder functions turn sections
into the domain objects (episode config, channel params, fusion weights).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace

from .channel import ChannelParams, NOISE_LEVELS
from .coma import RewardParams, TrainConfig
from .env import EpisodeConfig, UavPose
from .envgen import SyntheticEnvSpec
from .grid import ConfigurationError
from .sendfuse import FusionLossWeights, FusionWeights


@dataclass
class RunSection:
    seed: int = 0
    out_root: str = ""


@dataclass
class EnvSection:
    kind: str = "synthetic"  # synthetic | image
    width: int = 30
    height: int = 30
    n_shapes: int = 3
    env_seed: int = 7
    image_path: str = ""
    threshold: int = 128
    invert: bool = False
    mask_path: str = ""
    downsample: int = 1


@dataclass
class EpisodeSection:
    n_uavs: int = 4
    budget: int = 15
    z_max: int = 3
    accuracy_base: float = 0.95
    accuracy_decay: float = 0.1
    start_poses: str = "corners"  # "corners" or "x,y,z;x,y,z;..."
    sensor_accuracy_override: str = ""  # empty = altitude model


@dataclass
class RewardSection:
    alpha: float = 10.0
    beta: float = -0.17


@dataclass
class TrainSection:
    episodes: int = 1200
    batch_size: int = 512
    lr_actor: float = 1e-5
    lr_critic: float = 1e-4
    gamma: float = 0.99
    lam: float = 0.8
    return_mode: str = "mc"
    grad_clip: float = 10.0
    checkpoint_every: int = 100
    ablate: str = "none"  # none | cbam | fusion | both
    epsilon_start: float = 0.0
    epsilon_end: float = 0.0


@dataclass
class ChannelSection:
    level: str = "moderate"
    alpha_low: float = 0.8
    alpha_high: float = 1.0
    sigma: float = 0.02


@dataclass
class FusionSection:
    alpha: float = 0.5
    beta: float = 0.5


@dataclass
class LossSection:
    w_mse: float = 1.0
    w_mae: float = 1.0
    w_ssim: float = 1.0


@dataclass
class SendfuseSection:
    epochs: int = 12
    batch_size: int = 64
    lr: float = 1e-3
    n_patches: int = 5000
    patch_size: int = 32
    base_width: int = 16


@dataclass
class EvalSection:
    trials: int = 10


@dataclass
class RunConfig:
    run: RunSection
    env: EnvSection
    episode: EpisodeSection
    reward: RewardSection
    train: TrainSection
    channel: ChannelSection
    fusion: FusionSection
    loss: LossSection
    sendfuse: SendfuseSection
    eval: EvalSection


_SECTIONS = [
    ("run", "run", RunSection),
    ("env", "env", EnvSection),
    ("episode", "episode", EpisodeSection),
    ("reward", "reward", RewardSection),
    ("train", "train", TrainSection),
    ("channel", "channel", ChannelSection),
    ("fusion", "fusion", FusionSection),
    ("loss", "loss", LossSection),
    ("sendfuse", "sendfuse", SendfuseSection),
    ("eval", "eval", EvalSection),
]


def default_run_config() -> RunConfig:
    return RunConfig(
        run=RunSection(),
        env=EnvSection(),
        episode=EpisodeSection(),
        reward=RewardSection(),
        train=TrainSection(),
        channel=ChannelSection(),
        fusion=FusionSection(),
        loss=LossSection(),
        sendfuse=SendfuseSection(),
        eval=EvalSection(),
    )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, target_type: type):
    if target_type is bool:
        lowered = text.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"cannot parse boolean from {text!r}")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


def dump_config(config: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for section_name, attr, _cls in _SECTIONS:
        obj = getattr(config, attr)
        parser[section_name] = {
            f.name: _format_value(getattr(obj, f.name)) for f in fields(obj)
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    kwargs = {}
    for section_name, attr, cls in _SECTIONS:
        section_kwargs = {}
        if parser.has_section(section_name):
            known = {f.name for f in fields(cls)}
            for key, raw in parser[section_name].items():
                if key not in known:
                    raise ConfigurationError(
                        f"unknown key {key!r} in section [{section_name}]"
                    )
                section_kwargs[key] = _parse_value(raw, _field_type(cls, key))
        kwargs[attr] = cls(**section_kwargs)
    return RunConfig(**kwargs)


def _field_type(cls, name: str) -> type:
    annotation = {f.name: f.type for f in fields(cls)}[name]
    return {"int": int, "float": float, "bool": bool, "str": str}[annotation]


def save_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(config))


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except (OSError, configparser.Error) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Builders: sections -> domain objects
# ---------------------------------------------------------------------------


def parse_start_poses(text: str) -> tuple[UavPose, ...] | None:
    if text.strip() in ("", "corners"):
        return None
    poses = []
    for chunk in text.split(";"):
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 3:
            raise ConfigurationError(f"bad pose {chunk!r}; expected x,y,z")
        poses.append(UavPose(int(parts[0]), int(parts[1]), int(parts[2])))
    return tuple(poses)


def format_start_poses(poses: tuple[UavPose, ...] | None) -> str:
    if poses is None:
        return "corners"
    return ";".join(f"{p.x},{p.y},{p.z}" for p in poses)


def build_episode_config(
    rc: RunConfig,
    grid_shape: tuple[int, int] | None = None,
    seed: int | None = None,
) -> EpisodeConfig:
    """Episode config for the given ground-truth shape (height, width).

    Synthetic environments default to the configured dims; image environments
    must pass the loaded grid's shape.
    """
    ep = rc.episode
    if grid_shape is None:
        if rc.env.kind != "synthetic":
            raise ConfigurationError("grid_shape required for image environments")
        grid_shape = (rc.env.height, rc.env.width)
    override = (
        float(ep.sensor_accuracy_override) if ep.sensor_accuracy_override else None
    )
    return EpisodeConfig(
        width=grid_shape[1],
        height=grid_shape[0],
        z_max=ep.z_max,
        n_uavs=ep.n_uavs,
        budget=ep.budget,
        reward_alpha=rc.reward.alpha,
        reward_beta=rc.reward.beta,
        seed=rc.run.seed if seed is None else seed,
        start_poses=parse_start_poses(ep.start_poses),
        accuracy_base=ep.accuracy_base,
        accuracy_decay=ep.accuracy_decay,
        sensor_accuracy_override=override,
    )


def build_truth(rc: RunConfig):
    from .envgen import gen_env, load_env

    if rc.env.kind == "synthetic":
        spec = SyntheticEnvSpec(
            width=rc.env.width,
            height=rc.env.height,
            n_shapes=rc.env.n_shapes,
            seed=rc.env.env_seed,
        )
        return gen_env(spec)
    if rc.env.kind == "image":
        if not rc.env.image_path:
            raise ConfigurationError("env kind 'image' requires image_path")
        return load_env(
            rc.env.image_path,
            threshold=rc.env.threshold,
            mask_path=rc.env.mask_path or None,
            invert=rc.env.invert,
            downsample=rc.env.downsample,
        )
    raise ConfigurationError(f"unknown env kind {rc.env.kind!r}")


def build_channel_params(rc: RunConfig) -> ChannelParams:
    ch = rc.channel
    if ch.level in NOISE_LEVELS:
        low, high, sigma = NOISE_LEVELS[ch.level]
        if (ch.alpha_low, ch.alpha_high, ch.sigma) == (low, high, sigma):
            return ChannelParams.from_level(ch.level)
    return ChannelParams(
        alpha_low=ch.alpha_low, alpha_high=ch.alpha_high, sigma=ch.sigma
    )


def set_noise_level(rc: RunConfig, level: str) -> None:
    """Point the channel section at a named noise level."""
    if level not in NOISE_LEVELS:
        raise ConfigurationError(
            f"unknown noise level {level!r}; choose from {sorted(NOISE_LEVELS)}"
        )
    low, high, sigma = NOISE_LEVELS[level]
    rc.channel = ChannelSection(
        level=level, alpha_low=low, alpha_high=high, sigma=sigma
    )


def build_train_config(rc: RunConfig) -> TrainConfig:
    tr = rc.train
    if tr.ablate not in ("none", "cbam", "fusion", "both"):
        raise ConfigurationError(f"unknown ablation {tr.ablate!r}")
    return TrainConfig(
        episodes=tr.episodes,
        batch_size=tr.batch_size,
        lr_actor=tr.lr_actor,
        lr_critic=tr.lr_critic,
        gamma=tr.gamma,
        lam=tr.lam,
        n_uavs=rc.episode.n_uavs,
        budget=rc.episode.budget,
        seed=rc.run.seed,
        return_mode=tr.return_mode,
        grad_clip=tr.grad_clip,
        ablate_cbam=tr.ablate in ("cbam", "both"),
        ablate_fusion=tr.ablate in ("fusion", "both"),
        checkpoint_every=tr.checkpoint_every,
        epsilon_start=tr.epsilon_start,
        epsilon_end=tr.epsilon_end,
    )


def build_reward_params(rc: RunConfig) -> RewardParams:
    return RewardParams(alpha=rc.reward.alpha, beta=rc.reward.beta)


def build_fusion_weights(rc: RunConfig) -> FusionWeights:
    return FusionWeights(alpha=rc.fusion.alpha, beta=rc.fusion.beta)


def build_loss_weights(rc: RunConfig) -> FusionLossWeights:
    return FusionLossWeights(
        w_mse=rc.loss.w_mse, w_mae=rc.loss.w_mae, w_ssim=rc.loss.w_ssim
    )
