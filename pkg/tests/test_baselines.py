import itertools

import numpy as np

from lica import autodiff as ad
from lica.autodiff import Tape, Tensor
from lica.baselines import (ComaCriticParams, coma_critic_forward, coma_inputs, coma_policy_loss,
                            counterfactual_advantage, table_advantages)
from lica.config import TrainConfig, preset
from lica.envs import TrafficJunction, payoff_table
from lica.nets import MixingCriticParams, PolicyParams, mixing_critic_forward, policy_forward_all, zero_
from lica.optim import Adam, apply_gradients
from lica.studies import junction_probs
from lica.training import train_loop

OBS = TrafficJunction(1).observations()  # (1, 2, 3)


def test_exact_table_uniform_policies_zero_expected_advantage():
    adv = table_advantages(payoff_table(), [np.array([0.5, 0.5])] * 2)
    assert adv.shape == (2, 2, 2)
    # averaged over the four equally likely joint actions, and over the partner given one's own action
    assert np.all(adv.mean(axis=(0, 1)) == 0.0)
    assert np.all(adv[:, :, 0].mean(axis=1) == 0.0)
    assert np.all(adv[:, :, 1].mean(axis=0) == 0.0)


def test_exact_table_individual_advantages_are_half():
    adv = table_advantages(payoff_table(), [np.array([0.5, 0.5])] * 2)
    assert np.all(np.abs(adv) == 0.5)
    assert adv[0, 1].tolist() == [0.5, 0.5]  # (pass, wait) is optimal for both


def test_constant_in_own_action_gives_zero_advantage():
    assert counterfactual_advantage([3.7, 3.7, 3.7], np.array([0.2, 0.5, 0.3]), 1) == 0.0


def test_hand_built_advantage():
    assert counterfactual_advantage([1.0, 0.0], np.array([0.5, 0.5]), 0) == 0.5


def _enumerated_batch():
    """All four joint actions with the exact counterfactual Q rows for each agent."""
    q = payoff_table()
    joints = np.array(list(itertools.product([0, 1], repeat=2)))
    rows = np.zeros((4, 2, 2))
    for i, (u1, u2) in enumerate(joints):
        rows[i, 0] = q[:, u2]
        rows[i, 1] = q[u1, :]
    return joints, rows


def test_expected_coma_gradient_is_exactly_zero_at_uniform():
    policy = PolicyParams.init(np.random.default_rng(0), 2, 3, 2)
    zero_(policy.tensors)
    cfg = TrainConfig(entropy_mode="vanilla", entropy_coef=0.0)
    joints, q_rows = _enumerated_batch()
    with Tape():
        probs, _ = policy_forward_all(policy, np.repeat(OBS, 4, axis=0))
        loss, mean_adv, _ = coma_policy_loss(probs, q_rows, joints, cfg)  # uniform weights = joint probs
    ad.backward(loss)
    assert mean_adv == 0.0
    for t in policy.tensors.values():
        assert np.all(t.grad == 0.0)


def test_lica_expected_gradient_nonzero_at_uniform_with_trained_critic():
    rng = np.random.default_rng(1)
    critic = MixingCriticParams.init(rng, 1, 4, 16, 16)
    opt = Adam(critic.tensors, 0.01)
    joints = np.array(list(itertools.product([0, 1], repeat=2)))
    onehot = np.eye(2)[joints].reshape(4, 4)
    target = payoff_table()[joints[:, 0], joints[:, 1]]
    for _ in range(500):
        with Tape() as tape:
            q = mixing_critic_forward(critic, Tensor(np.ones((4, 1))), Tensor(onehot))
            loss = ad.mean(ad.square(ad.sub(q, Tensor(target))))
        tape.backward(loss)
        apply_gradients(opt, 10.0)
    assert loss.item() < 1e-2
    policy = PolicyParams.init(rng, 2, 3, 2)
    zero_(policy.tensors)
    with Tape():
        probs, _ = policy_forward_all(policy, OBS)
        q = ad.sum(mixing_critic_forward(critic, Tensor(np.ones((1, 1))), ad.reshape(probs, (1, 4)),
                                         {k: Tensor(v.data) for k, v in critic.tensors.items()}))
    ad.backward(q)
    assert max(np.abs(t.grad).max() for t in policy.tensors.values()) > 1e-6


def test_zero_advantage_batch_zero_gradient():
    policy = PolicyParams.init(np.random.default_rng(2), 2, 3, 2)
    cfg = TrainConfig(entropy_mode="vanilla", entropy_coef=0.0)
    with Tape():
        probs, _ = policy_forward_all(policy, np.repeat(OBS, 5, axis=0))
        q = np.full((5, 2, 2), 0.7)
        loss, _, _ = coma_policy_loss(probs, q, np.zeros((5, 2), dtype=int), cfg)
    ad.backward(loss)
    for t in policy.tensors.values():
        assert np.all(t.grad == 0.0)


def test_positive_advantage_raises_chosen_probability():
    policy = PolicyParams.init(np.random.default_rng(3), 2, 3, 2)
    cfg = TrainConfig(entropy_mode="vanilla", entropy_coef=0.0)
    before = junction_probs(policy)
    opt = Adam(policy.tensors, 1e-3)
    q = np.array([[[1.0, 0.0], [1.0, 0.0]]])  # action 0 better for both agents
    with Tape() as tape:
        probs, _ = policy_forward_all(policy, OBS)
        loss, _, _ = coma_policy_loss(probs, q, np.zeros((1, 2), dtype=int), cfg)
    tape.backward(loss)
    apply_gradients(opt, 10.0)
    after = junction_probs(policy)
    assert np.all(after[:, 0] > before[:, 0])


def test_coma_inputs_hide_own_action():
    state = np.array([[0.5]])
    x = coma_inputs(state, np.array([[1, 0]]), 2)
    assert x.shape == (1, 2, 1 + 4 + 2)
    assert x[0, 0].tolist() == [0.5, 0, 0, 1, 0, 1, 0]
    assert x[0, 1].tolist() == [0.5, 0, 1, 0, 0, 0, 1]


def test_coma_critic_output_width():
    c = ComaCriticParams.init(np.random.default_rng(0), 4, 3, 5, hidden=8)
    x = coma_inputs(np.ones((6, 4)), np.zeros((6, 3), dtype=int), 5)
    assert coma_critic_forward(c, Tensor(x)).shape == (6, 3, 5)


def test_coma_golden_run():
    res = train_loop(preset("traffic_junction_coma", max_updates=3, log_interval=1))
    losses = [m["critic_loss"] for m in res.metrics]
    np.testing.assert_allclose(losses, [0.4084150519473402, 0.43855691074805936, 0.275777568042242], atol=1e-12)
    np.testing.assert_allclose(junction_probs(res.learner.policy)[:, 0], [0.44943098901380524, 0.3801995623163222],
                               atol=1e-12)
