"""Training-loop math and behavior tests."""

from dataclasses import replace

import numpy as np
import pytest
import torch

from swarmipp.channel import ChannelParams
from swarmipp.coma import (
    ComaTrainer,
    RewardParams,
    TrainConfig,
    actor_loss,
    counterfactual_advantage,
    critic_loss,
    lambda_returns,
    returns,
)
from swarmipp.env import Environment, EpisodeConfig
from swarmipp.grid import ConfigurationError, GroundTruthGrid
from swarmipp.nets import make_policy_nets
from swarmipp.sendfuse import FusionLossWeights, FusionWeights, pretrain, synthetic_patches


def checker_truth(width=20, height=20):
    cells = np.indices((height, width)).sum(axis=0) % 2
    return GroundTruthGrid(cells=cells)


# ---------------------------------------------------------------------------
# returns
# ---------------------------------------------------------------------------


def test_returns_two_step_recursion():
    g = returns(np.array([1.0, 1.0]), np.array([0, 0]), 0.99)
    np.testing.assert_allclose(g, [1.99, 1.0], rtol=0, atol=0)


def test_returns_gamma_zero_is_rewards():
    r = np.array([0.3, -0.2, 0.9])
    np.testing.assert_array_equal(returns(r, np.zeros(3), 0.0), r)


def test_returns_single_transition():
    np.testing.assert_array_equal(returns(np.array([0.7]), np.array([0]), 0.99), [0.7])


def test_returns_restart_at_episode_boundary():
    r = np.array([1.0, 2.0, 3.0, 4.0])
    eps = np.array([0, 0, 1, 1])
    g = returns(r, eps, 0.5)
    np.testing.assert_allclose(g, [2.0, 2.0, 5.0, 4.0], rtol=0, atol=0)


def test_returns_bellman_identity_exact():
    rng = np.random.default_rng(0)
    r = rng.normal(size=200)
    eps = np.repeat(np.arange(10), 20)
    gamma = 0.99
    g = returns(r, eps, gamma)
    for t in range(199):
        nxt = 0.0 if eps[t] != eps[t + 1] else g[t + 1]
        assert g[t] == r[t] + gamma * nxt  # bitwise: same expression as impl


def test_lambda_returns_reduce_to_mc_at_lambda_one():
    rng = np.random.default_rng(1)
    r = rng.normal(size=40)
    eps = np.repeat(np.arange(4), 10)
    values = rng.normal(size=40)
    g_mc = returns(r, eps, 0.9)
    g_lam = lambda_returns(r, eps, values, 0.9, 1.0)
    np.testing.assert_allclose(g_lam, g_mc, atol=1e-12)


def test_lambda_returns_zero_is_one_step_bootstrap():
    r = np.array([1.0, 2.0])
    eps = np.array([0, 0])
    values = np.array([10.0, 20.0])
    g = lambda_returns(r, eps, values, 0.5, 0.0)
    # Last transition of the episode: no bootstrap. First: r + gamma*V_next.
    np.testing.assert_allclose(g, [1.0 + 0.5 * 20.0, 2.0], atol=1e-12)


# ---------------------------------------------------------------------------
# losses and advantage
# ---------------------------------------------------------------------------


def test_critic_loss_zero_when_exact():
    q = torch.tensor([1.0, 2.0, 3.0])
    assert float(critic_loss(q, q)) == 0.0


def test_critic_loss_constant_residual():
    q = torch.tensor([1.0, 2.0, 3.0])
    assert float(critic_loss(q + 1.0, q)) == pytest.approx(1.0, abs=1e-12)


def test_critic_loss_mean_of_squares():
    q = torch.tensor([1.0, -1.0, 0.0, 0.0])
    g = torch.zeros(4)
    assert float(critic_loss(q, g)) == pytest.approx(0.5, abs=1e-12)


def test_advantage_constant_q_is_zero():
    q = np.full(6, 3.7)
    pi = np.array([0.1, 0.2, 0.3, 0.1, 0.2, 0.1])
    for taken in range(6):
        assert counterfactual_advantage(q, pi, taken) == pytest.approx(0.0, abs=1e-12)


def test_advantage_one_hot_policy_is_zero():
    q = np.array([1.0, -2.0, 0.5, 3.0, 0.0, 1.5])
    pi = np.zeros(6)
    pi[3] = 1.0
    assert counterfactual_advantage(q, pi, 3) == pytest.approx(0.0, abs=1e-12)


def test_advantage_worked_example():
    pi = np.array([0.5, 0.5, 0, 0, 0, 0.0])
    q = np.array([2.0, 0, 0, 0, 0, 0.0])
    assert counterfactual_advantage(q, pi, 0) == pytest.approx(1.0, abs=1e-12)


def test_advantage_zero_expectation_property():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        q = rng.normal(size=6)
        logits = rng.normal(size=6)
        pi = np.exp(logits) / np.exp(logits).sum()
        expectation = sum(
            pi[a] * counterfactual_advantage(q, pi, a) for a in range(6)
        )
        assert abs(expectation) <= 1e-6


def test_advantage_invariant_to_constant_q_shift():
    rng = np.random.default_rng(3)
    q = rng.normal(size=6)
    logits = rng.normal(size=6)
    pi = np.exp(logits) / np.exp(logits).sum()
    base = counterfactual_advantage(q, pi, 2)
    shifted = counterfactual_advantage(q + 123.456, pi, 2)
    assert abs(base - shifted) <= 1e-9


def test_actor_loss_values():
    assert float(actor_loss(torch.tensor([-1.0]), torch.tensor([0.0]))) == 0.0
    assert float(actor_loss(torch.tensor([0.0]), torch.tensor([5.0]))) == 0.0
    loss = actor_loss(torch.tensor([-1.0]), torch.tensor([2.0]))
    assert float(loss) == pytest.approx(2.0, abs=1e-12)


def test_actor_loss_detaches_advantage():
    log_pi = torch.tensor([-0.5], requires_grad=True)
    adv = torch.tensor([1.5], requires_grad=True)
    loss = actor_loss(log_pi, adv)
    loss.backward()
    assert adv.grad is None
    assert log_pi.grad is not None


# ---------------------------------------------------------------------------
# TrainConfig validation
# ---------------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(episodes=-1)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(lr_actor=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ConfigurationError):
        TrainConfig(return_mode="gae")
    with pytest.raises(ConfigurationError):
        RewardParams(alpha=-1.0)


# ---------------------------------------------------------------------------
# Trainer behavior (small runs)
# ---------------------------------------------------------------------------


def tiny_fusion_model(seed=0):
    rng = np.random.default_rng(seed)
    model, _ = pretrain(
        synthetic_patches(16, 16, rng),
        ChannelParams.from_level("moderate"),
        1,
        FusionLossWeights(),
        rng,
        batch_size=8,
        base_width=4,
    )
    return model


def make_trainer(episodes=2, seed=5, batch_size=20, return_mode="mc", **kwargs):
    truth = checker_truth()
    ep_cfg = EpisodeConfig(width=20, height=20, n_uavs=2, budget=5, seed=0)
    cfg = TrainConfig(
        episodes=episodes,
        batch_size=batch_size,
        lr_actor=1e-3,
        lr_critic=1e-3,
        n_uavs=2,
        budget=5,
        seed=seed,
        return_mode=return_mode,
        **kwargs,
    )
    actor, critic = make_policy_nets(seed=seed)
    return ComaTrainer(
        lambda s: Environment(truth, replace(ep_cfg, seed=s)),
        actor,
        critic,
        cfg,
        ChannelParams.from_level("moderate"),
        FusionWeights(),
        tiny_fusion_model(seed),
    )


def test_trainer_requires_fusion_model_unless_ablated():
    truth = checker_truth()
    cfg = TrainConfig(episodes=1, n_uavs=2, budget=5)
    actor, critic = make_policy_nets(seed=0)
    with pytest.raises(ConfigurationError):
        ComaTrainer(
            lambda s: Environment(truth, EpisodeConfig(width=20, height=20, n_uavs=2, budget=5, seed=s)),
            actor,
            critic,
            cfg,
            ChannelParams.from_level("none"),
        )


def test_trainer_zero_episodes_untouched_params():
    trainer = make_trainer(episodes=0)
    before = [p.detach().clone() for p in trainer.actor.parameters()]
    result = trainer.train()
    assert result.reward_trace == []
    for p, b in zip(trainer.actor.parameters(), before):
        torch.testing.assert_close(p, b)


def test_trainer_buffer_cleared_after_update():
    trainer = make_trainer(episodes=3, batch_size=8)
    result = trainer.train()
    # 3 episodes x 5 steps = 15 transitions; updates at 8 -> one update,
    # 7 left over in the buffer afterwards.
    assert len(result.critic_losses) == 1
    assert len(trainer.buffer) == 15 - 8
    assert len(result.reward_trace) == 3


def test_trainer_buffer_never_exceeds_bound():
    trainer = make_trainer(episodes=4, batch_size=6)
    max_seen = 0
    original = trainer._update

    def spy(result):
        nonlocal max_seen
        max_seen = max(max_seen, len(trainer.buffer))
        original(result)

    trainer._update = spy
    trainer.train()
    assert max_seen <= 6 + 2 * 5  # batch_size + N * budget


def test_trainer_deterministic_reward_trace():
    a = make_trainer(episodes=2, seed=9).train()
    b = make_trainer(episodes=2, seed=9).train()
    assert a.reward_trace == b.reward_trace
    assert a.critic_losses == b.critic_losses
    np.testing.assert_array_equal(a.f1_trace, b.f1_trace)


def test_trainer_td_lambda_mode_runs():
    result = make_trainer(episodes=2, batch_size=6, return_mode="td_lambda").train()
    assert len(result.reward_trace) == 2
    assert all(np.isfinite(result.critic_losses))


def test_trainer_updates_change_parameters():
    trainer = make_trainer(episodes=2, batch_size=5)
    before = [p.detach().clone() for p in trainer.actor.parameters()]
    trainer.train()
    changed = any(
        not torch.equal(p, b) for p, b in zip(trainer.actor.parameters(), before)
    )
    assert changed


def test_trainer_ablation_variants_run():
    for ablate_cbam, ablate_fusion in ((True, False), (False, True), (True, True)):
        truth = checker_truth()
        ep_cfg = EpisodeConfig(width=20, height=20, n_uavs=2, budget=5, seed=0)
        cfg = TrainConfig(
            episodes=1,
            batch_size=6,
            n_uavs=2,
            budget=5,
            seed=3,
            ablate_cbam=ablate_cbam,
            ablate_fusion=ablate_fusion,
        )
        actor, critic = make_policy_nets(seed=3, cbam_enabled=not ablate_cbam)
        fusion = None if ablate_fusion else tiny_fusion_model(3)
        trainer = ComaTrainer(
            lambda s: Environment(truth, replace(ep_cfg, seed=s)),
            actor,
            critic,
            cfg,
            ChannelParams.from_level("moderate"),
            FusionWeights(),
            fusion,
        )
        result = trainer.train()
        assert len(result.reward_trace) == 1
