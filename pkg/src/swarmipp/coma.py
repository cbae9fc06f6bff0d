"""Counterfactual multi-agent policy-gradient training.

Centralized training, decentralized execution: a shared critic scores the
joint action from global observations while each agent's advantage subtracts
a counterfactual baseline, the policy-weighted average of the critic's values
over that agent's alternative actions with everyone else's actions held
fixed.  Rollouts buffer one transition per environment step; once the buffer
reaches the batch size the critic regresses onto discounted returns, then the
actor takes a policy-gradient step, and the buffer is cleared.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .channel import ChannelParams
from .env import Environment, N_ACTIONS
from .grid import ConfigurationError
from .nets import (
    PolicyNet,
    build_actor_obs,
    build_critic_obs,
    masked_log_policy,
    masked_policy,
    select_action,
    withhold_own_action,
)
from .sendfuse import FusionWeights, SenDFuseModel, TrainingDiverged, fused_swarm_maps


@dataclass(frozen=True)
class RewardParams:
    """Scale and per-step offset of the entropy-reduction reward."""

    alpha: float = 10.0
    beta: float = -0.17

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError("reward alpha must be positive")


@dataclass
class TrainConfig:
    """Hyperparameters of the centralized training loop."""

    episodes: int = 1200
    batch_size: int = 512
    lr_actor: float = 1e-5
    lr_critic: float = 1e-4
    gamma: float = 0.99
    lam: float = 0.8
    n_uavs: int = 4
    budget: int = 15
    seed: int = 0
    # "mc": plain discounted return recursion; "td_lambda": lambda-returns
    # bootstrapped with the critic's policy-weighted values.
    return_mode: str = "mc"
    grad_clip: float = 10.0
    ablate_cbam: bool = False
    ablate_fusion: bool = False
    checkpoint_every: int = 100
    # Exploration floor for rollout sampling only: behavior policy is
    # (1 - eps) * pi + eps * uniform-over-valid, eps annealed linearly from
    # start to end over the run.  Zero keeps rollouts on-policy.
    epsilon_start: float = 0.0
    epsilon_end: float = 0.0

    def __post_init__(self):
        if self.episodes < 0:
            raise ConfigurationError("episodes must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ConfigurationError("learning rates must be positive")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("gamma and lambda must lie in [0, 1]")
        if self.return_mode not in ("mc", "td_lambda"):
            raise ConfigurationError(f"unknown return mode {self.return_mode!r}")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ConfigurationError(
                "exploration floor must satisfy 0 <= epsilon_end <= epsilon_start <= 1"
            )


@dataclass
class Transition:
    """One environment step as seen by every agent."""

    actor_obs: np.ndarray  # (N, 8, 11, 11)
    critic_obs: np.ndarray  # (N, 12, 11, 11), full joint action encoded
    masks: np.ndarray  # (N, 6) valid-action masks
    actions: np.ndarray  # (N,) taken action indices
    reward: float
    episode: int
    step: int


def returns(rewards: np.ndarray, episode_ids: np.ndarray, gamma: float) -> np.ndarray:
    """Discounted returns by backward recursion G_t = r_t + gamma * G_{t+1}.

    The recursion restarts (G = 0) at every episode boundary; the last
    buffered transition of a truncated episode is treated the same way.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    episode_ids = np.asarray(episode_ids)
    if rewards.shape != episode_ids.shape:
        raise ValueError("rewards and episode_ids must have identical shapes")
    out = np.empty_like(rewards)
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if t + 1 < len(rewards) and episode_ids[t] != episode_ids[t + 1]:
            g = 0.0
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def lambda_returns(
    rewards: np.ndarray,
    episode_ids: np.ndarray,
    state_values: np.ndarray,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Backward-view lambda-returns bootstrapped with critic state values.

    G_t = r_t + gamma * ((1 - lam) * V(s_{t+1}) + lam * G_{t+1}), where
    ``state_values[t]`` estimates V(s_t) and both V and G are 0 past episode
    boundaries (and at buffer truncation points).  ``state_values`` may carry
    trailing axes, e.g. one value per agent.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    state_values = np.asarray(state_values, dtype=np.float64)
    n = len(rewards)
    out = np.empty_like(state_values)
    g = np.zeros(state_values.shape[1:], dtype=np.float64)
    for t in range(n - 1, -1, -1):
        if t == n - 1 or episode_ids[t] != episode_ids[t + 1]:
            g = rewards[t] + np.zeros_like(g)
        else:
            g = rewards[t] + gamma * ((1.0 - lam) * state_values[t + 1] + lam * g)
        out[t] = g
    return out


def critic_loss(q_taken: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the taken-action values and the returns."""
    return ((q_taken - targets) ** 2).mean()


def counterfactual_advantage(
    q_vec: np.ndarray, pi_vec: np.ndarray, taken: int
) -> float:
    """Advantage of the taken action over the policy-weighted baseline."""
    q_vec = np.asarray(q_vec, dtype=np.float64)
    pi_vec = np.asarray(pi_vec, dtype=np.float64)
    return float(q_vec[taken] - pi_vec @ q_vec)


def actor_loss(log_pi_taken: torch.Tensor, advantage: torch.Tensor) -> torch.Tensor:
    """Policy-gradient objective -log pi(u|obs) * A, averaged over the batch.

    The advantage is detached: no gradient flows through the critic here.
    """
    return -(log_pi_taken * advantage.detach()).mean()


@dataclass
class TrainResult:
    reward_trace: list[float] = field(default_factory=list)
    entropy_trace: list[float] = field(default_factory=list)
    f1_trace: list[float] = field(default_factory=list)
    critic_losses: list[float] = field(default_factory=list)
    actor_losses: list[float] = field(default_factory=list)


class ComaTrainer:
    """Runs the full training loop against one environment instance."""

    def __init__(
        self,
        env_factory,
        actor: PolicyNet,
        critic: PolicyNet,
        config: TrainConfig,
        channel_params: ChannelParams,
        fusion_weights: FusionWeights = FusionWeights(),
        fusion_model: SenDFuseModel | None = None,
    ):
        if not config.ablate_fusion and fusion_model is None:
            raise ConfigurationError(
                "a pretrained denoise-fusion checkpoint is required unless the "
                "fusion path is ablated"
            )
        self.config = config
        self.actor = actor
        self.critic = critic
        self.channel_params = channel_params
        self.fusion_weights = fusion_weights
        self.fusion_model = fusion_model
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        self.env: Environment = env_factory(
            int(seeds[0].generate_state(1)[0] % 2**31)
        )
        self.channel_rng = np.random.default_rng(seeds[1])
        self.action_rng = np.random.default_rng(seeds[2])
        self.opt_actor = torch.optim.Adam(actor.parameters(), lr=config.lr_actor)
        self.opt_critic = torch.optim.Adam(critic.parameters(), lr=config.lr_critic)
        self.buffer: list[Transition] = []
        self._dtype = next(actor.parameters()).dtype

    # -- rollout ------------------------------------------------------------

    def _agent_inputs(self, state, last_readings):
        """Fused maps, observations, and masks for every agent at this step."""
        cfg = self.env.config
        fused = fused_swarm_maps(
            last_readings,
            state.poses,
            (cfg.height, cfg.width),
            self.channel_params,
            self.channel_rng,
            self.fusion_model,
            self.fusion_weights,
            naive=self.config.ablate_fusion,
        )
        obs, masks = [], []
        for i in range(state.n_uavs):
            reading = None if last_readings is None else last_readings[i]
            obs.append(
                build_actor_obs(
                    state, i, fused[i], cfg.budget, cfg.z_max, last_reading=reading
                )
            )
            masks.append(self.env.valid_actions(i))
        return np.stack(obs), np.stack(masks)

    def _sample_actions(
        self, actor_obs: np.ndarray, masks: np.ndarray, epsilon: float
    ) -> np.ndarray:
        with torch.no_grad():
            logits = self.actor(torch.as_tensor(actor_obs, dtype=self._dtype))
            probs = masked_policy(logits, torch.as_tensor(masks))
        probs = probs.to(torch.float64).numpy()
        if epsilon > 0.0:
            uniform = masks / masks.sum(axis=1, keepdims=True)
            probs = (1.0 - epsilon) * probs + epsilon * uniform
        return np.array(
            [select_action(p, "sample", self.action_rng) for p in probs],
            dtype=np.int64,
        )

    # -- updates ------------------------------------------------------------

    def _flat_batch(self):
        """Stack the buffer into flat (T*N, ...) tensors, agent-major per step."""
        t_count = len(self.buffer)
        n = self.buffer[0].actor_obs.shape[0]
        actor_obs = np.concatenate([tr.actor_obs for tr in self.buffer])
        critic_obs = np.concatenate(
            [withhold_own_action(tr.critic_obs) for tr in self.buffer]
        )
        masks = np.concatenate([tr.masks for tr in self.buffer])
        actions = np.concatenate([tr.actions for tr in self.buffer])
        rewards = np.array([tr.reward for tr in self.buffer])
        episodes = np.array([tr.episode for tr in self.buffer])
        return t_count, n, actor_obs, critic_obs, masks, actions, rewards, episodes

    def _update(self, result: TrainResult) -> None:
        cfg = self.config
        t_count, n, actor_obs, critic_obs, masks, actions, rewards, episodes = (
            self._flat_batch()
        )
        obs_c = torch.as_tensor(critic_obs, dtype=self._dtype)
        obs_a = torch.as_tensor(actor_obs, dtype=self._dtype)
        mask_t = torch.as_tensor(masks)
        taken = torch.as_tensor(actions)

        if cfg.return_mode == "mc":
            g = returns(rewards, episodes, cfg.gamma)
            targets = torch.as_tensor(np.repeat(g, n), dtype=self._dtype)
        else:
            with torch.no_grad():
                q_now = self.critic(obs_c)
                pi_now = masked_policy(self.actor(obs_a), mask_t)
                values = (
                    (pi_now * q_now).sum(dim=1).reshape(t_count, n).numpy()
                )
            g = lambda_returns(rewards, episodes, values, cfg.gamma, cfg.lam)
            targets = torch.as_tensor(g.reshape(-1), dtype=self._dtype)

        q_all = self.critic(obs_c)
        q_taken = q_all.gather(1, taken.unsqueeze(1)).squeeze(1)
        loss_c = critic_loss(q_taken, targets)
        if not torch.isfinite(loss_c):
            raise TrainingDiverged(
                f"critic loss became non-finite after {len(result.reward_trace)} "
                f"episodes (targets range {targets.min()}..{targets.max()})"
            )
        self.opt_critic.zero_grad()
        loss_c.backward()
        torch.nn.utils.clip_grad_norm_(self.critic.parameters(), cfg.grad_clip)
        self.opt_critic.step()

        with torch.no_grad():
            q_updated = self.critic(obs_c)
        log_pi = masked_log_policy(self.actor(obs_a), mask_t)
        pi = log_pi.exp()
        baseline = (pi.detach() * q_updated).sum(dim=1)
        advantage = q_updated.gather(1, taken.unsqueeze(1)).squeeze(1) - baseline
        log_pi_taken = log_pi.gather(1, taken.unsqueeze(1)).squeeze(1)
        loss_a = actor_loss(log_pi_taken, advantage)
        if not torch.isfinite(loss_a):
            raise TrainingDiverged(
                f"actor loss became non-finite after {len(result.reward_trace)} "
                f"episodes (advantage range {advantage.min()}..{advantage.max()})"
            )
        self.opt_actor.zero_grad()
        loss_a.backward()
        torch.nn.utils.clip_grad_norm_(self.actor.parameters(), cfg.grad_clip)
        self.opt_actor.step()

        result.critic_losses.append(loss_c.detach().item())
        result.actor_losses.append(loss_a.detach().item())
        self.buffer.clear()

    # -- main loop ------------------------------------------------------------

    def train(self, callback=None) -> TrainResult:
        """Run the configured number of episodes and return the traces.

        ``callback(episode_index, trainer, result)`` fires after every
        episode, e.g. for periodic checkpointing.
        """
        from .evalkit import f1_score

        cfg = self.config
        result = TrainResult()
        for episode in range(cfg.episodes):
            frac = episode / max(cfg.episodes - 1, 1)
            epsilon = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
            state = self.env.reset()
            last_readings = None
            ep_reward = 0.0
            for _ in range(cfg.budget):
                actor_obs, masks = self._agent_inputs(state, last_readings)
                actions = self._sample_actions(actor_obs, masks, epsilon)
                critic_obs = np.stack(
                    [
                        build_critic_obs(actor_obs[i], state, actions, i)
                        for i in range(state.n_uavs)
                    ]
                )
                state, reward, readings = self.env.step(list(actions))
                self.buffer.append(
                    Transition(
                        actor_obs=actor_obs.astype(np.float32),
                        critic_obs=critic_obs.astype(np.float32),
                        masks=masks,
                        actions=actions,
                        reward=reward,
                        episode=episode,
                        step=state.step_index - 1,
                    )
                )
                ep_reward += reward
                last_readings = readings
                if len(self.buffer) >= cfg.batch_size:
                    self._update(result)
            result.reward_trace.append(ep_reward)
            from .grid import entropy

            result.entropy_trace.append(entropy(state.global_belief))
            result.f1_trace.append(
                f1_score(state.global_belief, self.env.truth)
            )
            if callback is not None:
                callback(episode, self, result)
        return result
