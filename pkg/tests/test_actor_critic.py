import numpy as np
import pytest

from actor_critic import (ActorCriticException, GaeConfig, PpoConfig, StudentBundle, Trajectory,
                          _entropy_and_grad, categorical_kl, clone_update, compute_gae,
                          policy_entropy, ppo_loss_and_grad, ppo_policy_loss, student_update,
                          value_loss)
from maze import N_ACTIONS, OBS_DIM


def _gae_double_loop(rewards, values, gamma, lam):
    T = len(rewards)
    nxt = np.append(values[1:], 0.0)
    deltas = rewards + gamma * nxt - values
    adv = np.zeros(T)
    for t in range(T):
        for k in range(T - t):
            adv[t] += (gamma * lam) ** k * deltas[t + k]
    return adv


def _random_trajectory(rng, T, obs_dim=OBS_DIM):
    return Trajectory(observations=rng.normal(size=(T, obs_dim)),
                      actions=rng.integers(N_ACTIONS, size=T),
                      log_probs=-rng.uniform(0.5, 3.0, size=T),
                      rewards=rng.integers(2, size=T).astype(float),
                      values1=rng.normal(size=T),
                      values2=rng.normal(size=T))


def test_gae_all_zero():
    adv, targets = compute_gae(np.zeros(5), np.zeros(5), 0.0, GaeConfig())
    assert np.all(adv == 0) and np.all(targets == 0)


def test_gae_single_step():
    adv, targets = compute_gae([1.0], [0.5], 0.0, GaeConfig())
    assert adv[0] == 0.5
    assert targets[0] == 1.0


def test_gae_matches_definitional_sum(rng):
    for _ in range(1000):
        T = int(rng.integers(1, 21))
        gamma, lam = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        r, v = rng.normal(size=T), rng.normal(size=T)
        adv, targets = compute_gae(r, v, 0.0, GaeConfig(gamma, lam))
        assert np.max(np.abs(adv - _gae_double_loop(r, v, gamma, lam))) < 1e-10
        assert np.allclose(targets, adv + v, atol=1e-12)


def test_gae_lambda_one_gives_monte_carlo_returns(rng):
    r, v = rng.normal(size=10), rng.normal(size=10)
    gamma = 0.97
    _, targets = compute_gae(r, v, 0.0, GaeConfig(gamma, 1.0))
    returns = [sum(gamma ** k * r[t + k] for k in range(10 - t)) for t in range(10)]
    assert np.allclose(targets, returns, atol=1e-12)


def test_gae_lambda_zero_gives_one_step_td(rng):
    r, v = rng.normal(size=10), rng.normal(size=10)
    gamma = 0.9
    adv, _ = compute_gae(r, v, 0.0, GaeConfig(gamma, 0.0))
    assert np.allclose(adv, r + gamma * np.append(v[1:], 0.0) - v, atol=1e-12)


def test_gae_length_mismatch():
    with pytest.raises(ActorCriticException):
        compute_gae(np.zeros(3), np.zeros(4), 0.0, GaeConfig())


@pytest.mark.parametrize('gamma, lam', [(0.0, 0.5), (1.1, 0.5), (0.9, -0.1), (0.9, 1.5)])
def test_gae_config_ranges(gamma, lam):
    with pytest.raises(ActorCriticException):
        GaeConfig(gamma, lam)


def test_ppo_config_validation():
    with pytest.raises(ActorCriticException):
        PpoConfig(clip_epsilon=0.0)
    with pytest.raises(ActorCriticException):
        PpoConfig(entropy_coef=-0.1)


def test_ppo_loss_at_ratio_one_is_minus_mean_advantage():
    adv = np.array([1.0, -2.0, 0.5])
    logp = np.log([0.2, 0.5, 0.1])
    assert np.isclose(ppo_policy_loss(logp, logp, adv, PpoConfig()), -np.mean(adv))


def test_ppo_loss_clips_ratio():
    old = np.log(np.array([0.2, 0.2]))
    new = old + np.log(1.5)
    # positive advantage: clipped at 1.2; negative advantage: unclipped 1.5 is the minimum
    loss = ppo_policy_loss(new, old, np.array([1.0, -1.0]), PpoConfig(clip_epsilon=0.2))
    assert np.isclose(loss, -np.mean([1.2, -1.5]))


def test_ppo_loss_rejects_non_finite():
    with pytest.raises(ActorCriticException):
        ppo_policy_loss(np.array([np.nan]), np.array([-1.0]), np.array([1.0]), PpoConfig())
    with pytest.raises(ActorCriticException):
        ppo_policy_loss(np.zeros(2), np.zeros(3), np.zeros(2), PpoConfig())


def test_ppo_gradient_matches_finite_differences(rng):
    old = -rng.uniform(0.5, 2.0, size=8)
    new = old + rng.uniform(-0.5, 0.5, size=8)
    adv = rng.normal(size=8)
    # stay clear of the kinks at 1 +- epsilon
    ratio = np.exp(new - old)
    new = np.where(np.abs(np.abs(ratio - 1.0) - 0.2) < 0.02, old, new)
    _, grad = ppo_loss_and_grad(new, old, adv, 0.2)
    h = 1e-6
    for i in range(8):
        up, down = new.copy(), new.copy()
        up[i] += h
        down[i] -= h
        numeric = (ppo_loss_and_grad(up, old, adv, 0.2)[0]
                   - ppo_loss_and_grad(down, old, adv, 0.2)[0]) / (2 * h)
        assert abs(numeric - grad[i]) < 1e-6


def test_value_loss_sums_ensemble():
    targets = np.array([1.0, 2.0])
    assert value_loss([np.array([1.0, 2.0]), np.array([2.0, 2.0])], targets) == 0.5
    with pytest.raises(ActorCriticException):
        value_loss([np.zeros(3)], targets)


def test_entropy_of_uniform_policy():
    assert np.isclose(policy_entropy(np.zeros((4, N_ACTIONS))), np.log(N_ACTIONS))


def test_entropy_gradient_matches_finite_differences(rng):
    logits = rng.normal(size=(3, 5))
    _, grad = _entropy_and_grad(logits)
    h = 1e-6
    for i in range(3):
        for j in range(5):
            up, down = logits.copy(), logits.copy()
            up[i, j] += h
            down[i, j] -= h
            numeric = (_entropy_and_grad(up)[0] - _entropy_and_grad(down)[0]) / (2 * h)
            assert abs(numeric - grad[i, j]) < 1e-6


def test_categorical_kl(rng):
    logits = rng.normal(size=(4, 6))
    assert np.allclose(categorical_kl(logits, logits), 0.0, atol=1e-12)
    kl = categorical_kl(logits, rng.normal(size=(4, 6)))
    assert kl.shape == (4,) and np.all(kl > 0)
    p = np.exp(logits[0]) / np.exp(logits[0]).sum()
    q = np.full(6, 1.0 / 6.0)
    assert np.isclose(categorical_kl(logits[:1], np.zeros((1, 6)))[0], np.sum(p * np.log(p / q)))


def test_trajectory_validation(rng):
    tr = _random_trajectory(rng, 5)
    assert tr.episode_length == 5
    assert np.array_equal(tr.values, tr.values1)
    with pytest.raises(ActorCriticException):
        Trajectory(tr.observations, tr.actions, tr.log_probs, tr.rewards[:4], tr.values1, tr.values2)
    with pytest.raises(ActorCriticException):
        Trajectory(tr.observations, tr.actions, np.full(5, 0.1), tr.rewards, tr.values1, tr.values2)
    with pytest.raises(ActorCriticException):
        Trajectory(tr.observations, tr.actions, np.full(5, -np.inf), tr.rewards, tr.values1,
                   tr.values2)


def test_with_rewards_keeps_everything_else(rng):
    tr = _random_trajectory(rng, 6)
    other = tr.with_rewards(np.ones(6))
    assert other.total_reward == 6.0
    assert np.array_equal(other.values2, tr.values2)
    assert np.array_equal(other.actions, tr.actions)


def test_bundle_networks_are_independent():
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8, 8], rng=0)
    nets = bundle.networks()
    assert set(nets) == {'pi1', 'v1', 'v2', 'pi2'}
    assert nets['v1'].layer_dims == nets['v2'].layer_dims
    assert not np.array_equal(nets['v1'].weights[0], nets['v2'].weights[0])
    assert not np.array_equal(nets['pi1'].weights[0], nets['pi2'].weights[0])


def test_bundle_act(rng):
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=1)
    obs = rng.uniform(size=(5, OBS_DIM))
    actions, logp, v1, v2 = bundle.act(obs, rng)
    assert actions.shape == logp.shape == v1.shape == v2.shape == (5,)
    assert np.all((actions >= 0) & (actions < N_ACTIONS))
    assert np.all(logp <= 0)
    greedy = bundle.act_greedy(None, None, obs)
    assert np.array_equal(greedy, np.argmax(bundle.policy.forward(obs), axis=1))


def test_clone_update_moves_clone_towards_policy(rng):
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=2, clone_learning_rate=1e-2)
    bundle.policy.weights[-1] *= 100.0
    obs = rng.uniform(size=(32, OBS_DIM))
    policy_before = [p.copy() for p in bundle.policy.params()]
    first = clone_update(bundle, obs)
    for _ in range(100):
        last = clone_update(bundle, obs)
    assert last < 0.5 * first
    assert bundle.clone_opt.step_count == 101
    assert all(np.array_equal(p, q) for p, q in zip(policy_before, bundle.policy.params()))


def test_student_update_steps_and_diagnostics(rng):
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=3)
    trajectories = [_random_trajectory(rng, 6) for _ in range(5)]
    cfg = PpoConfig(epochs=3, minibatch=2)
    out = student_update(bundle, trajectories, cfg, GaeConfig(0.9, 0.95), rng)
    assert set(out) == {'policy_loss', 'value_loss', 'entropy', 'clone_kl'}
    assert all(np.isfinite(v) for v in out.values())
    # 3 minibatches (2 + 2 + 1 episodes) per epoch
    assert bundle.policy_opt.step_count == 9
    assert bundle.value1_opt.step_count == bundle.value2_opt.step_count == 9
    assert bundle.clone_opt.step_count == 1
    assert all(tr.targets is not None for tr in trajectories)


def test_student_update_fits_values(rng):
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=4, learning_rate=1e-2)
    trajectories = [_random_trajectory(rng, 8) for _ in range(4)]
    cfg = PpoConfig(epochs=1, minibatch=4)
    gae = GaeConfig(0.9, 1.0)
    first = student_update(bundle, trajectories, cfg, gae, rng)['value_loss']
    for _ in range(300):
        # refresh the recorded predictions so targets stay the fixed returns
        for tr in trajectories:
            tr.values1, tr.values2 = bundle.values(tr.observations)
        last = student_update(bundle, trajectories, cfg, gae, rng)['value_loss']
    assert last < 0.5 * first


def test_student_update_needs_trajectories():
    with pytest.raises(ActorCriticException):
        student_update(StudentBundle(OBS_DIM, N_ACTIONS, [4]), [], PpoConfig(), GaeConfig())


def test_configs_are_read_only():
    gae = GaeConfig(0.9, 0.95)
    with pytest.raises(ActorCriticException):
        gae.gamma = 0.5
    ppo = PpoConfig(epochs=3)
    for field in ('clip_epsilon', 'entropy_coef', 'epochs', 'minibatch', 'value_coef',
                  'learning_rate', 'normalize_advantages'):
        with pytest.raises(ActorCriticException):
            setattr(ppo, field, 1)
    assert ppo.epochs == 3
    assert ppo == PpoConfig(epochs=3) and ppo != PpoConfig(epochs=2)


def test_categorical_kl_closed_form():
    kl = categorical_kl(np.log([[0.9, 0.1]]), np.log([[0.5, 0.5]]))[0]
    assert kl == pytest.approx(0.3681, abs=1e-4)


def _still_trajectory(rng, T=6):
    # zero rewards and zero recorded values: every advantage and target is 0
    tr = _random_trajectory(rng, T)
    return Trajectory(tr.observations, tr.actions, tr.log_probs, np.zeros(T), np.zeros(T),
                      np.zeros(T))


def test_student_update_without_advantage_only_follows_entropy(rng):
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=5)
    bundle.policy.weights[-1] *= 100.0
    trajectories = [_still_trajectory(rng) for _ in range(4)]
    before = [p.copy() for p in bundle.policy.params()]
    student_update(bundle, trajectories, PpoConfig(entropy_coef=0.0, minibatch=4),
                   GaeConfig(0.9, 0.95), rng)
    assert all(np.array_equal(p, q) for p, q in zip(before, bundle.policy.params()))
    assert all(np.all(tr.advantages == 0.0) for tr in trajectories)

    obs = np.concatenate([tr.observations for tr in trajectories])
    entropy = policy_entropy(bundle.policy.forward(obs))
    student_update(bundle, trajectories, PpoConfig(entropy_coef=0.05, minibatch=4),
                   GaeConfig(0.9, 0.95), rng)
    assert policy_entropy(bundle.policy.forward(obs)) > entropy


def _copy(tr):
    return Trajectory(tr.observations.copy(), tr.actions.copy(), tr.log_probs.copy(),
                      tr.rewards.copy(), tr.values1.copy(), tr.values2.copy())


def test_student_update_ignores_duplicated_episodes(rng):
    tr = _random_trajectory(rng, 7)
    once = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=6)
    twice = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=6)
    # one minibatch per epoch in both cases
    cfg = PpoConfig(epochs=3, minibatch=8)
    gae = GaeConfig(0.9, 0.95)
    student_update(once, [_copy(tr)], cfg, gae, np.random.default_rng(0))
    student_update(twice, [_copy(tr), _copy(tr)], cfg, gae, np.random.default_rng(0))
    for name, net in once.networks().items():
        for p, q in zip(net.params(), twice.networks()[name].params()):
            assert np.allclose(p, q, rtol=1e-9, atol=1e-12)
