'''
Student learner: categorical PPO with GAE targets, a two-member value
ensemble trained on one shared target, and a behaviourally cloned copy of the
policy.

Losses come with hand-derived gradients w.r.t. the network outputs; the
networks' own backward() takes it from there.
'''
import logging
from dataclasses import dataclass

import numpy as np

from tensor import Mlp, OptimizerState, log_softmax, optimizer_step, sample_categorical


logger = logging.getLogger(__name__)


class ActorCriticException(Exception):
    pass


class GaeConfig:
    '''Discount and GAE mixing for the student; read-only after construction.'''

    def __init__(self, gamma: float = 0.998, lam: float = 0.95) -> None:
        if not 0.0 < gamma <= 1.0:
            raise ActorCriticException("gamma must be in (0, 1], got {}".format(gamma))
        if not 0.0 <= lam <= 1.0:
            raise ActorCriticException("lambda must be in [0, 1], got {}".format(lam))
        self._gamma = float(gamma)
        self._lam = float(lam)

    @property
    def gamma(self):
        return self._gamma

    @gamma.setter
    def gamma(self, value):
        raise ActorCriticException('"gamma" can\'t be modified; build a new GaeConfig')

    @property
    def lam(self):
        return self._lam

    @lam.setter
    def lam(self, value):
        raise ActorCriticException('"lam" can\'t be modified; build a new GaeConfig')

    def __eq__(self, other) -> bool:
        if not isinstance(other, GaeConfig):
            return NotImplemented
        return (self._gamma, self._lam) == (other._gamma, other._lam)

    def __repr__(self) -> str:
        return 'GaeConfig(gamma={!r}, lam={!r})'.format(self._gamma, self._lam)


_PPO_FIELDS = ('clip_epsilon', 'entropy_coef', 'epochs', 'minibatch', 'value_coef',
               'learning_rate', 'normalize_advantages')


class PpoConfig:
    '''
    Clipped-surrogate settings shared by student and teacher updates.

    All fields are read-only properties; 'learning_rate' is informational,
    the optimizers keep their own.
    '''

    def __init__(self, clip_epsilon: float = 0.2, entropy_coef: float = 0.01, epochs: int = 4,
                 minibatch: int = 16, value_coef: float = 0.5, learning_rate: float = 3e-4,
                 normalize_advantages: bool = True) -> None:
        if not clip_epsilon > 0:
            raise ActorCriticException("clip_epsilon must be > 0, got {}".format(clip_epsilon))
        if not entropy_coef >= 0:
            raise ActorCriticException("entropy_coef must be >= 0, got {}".format(entropy_coef))
        if epochs < 1 or minibatch < 1:
            raise ActorCriticException(
                "epochs and minibatch must be >= 1, got {} / {}".format(epochs, minibatch))
        self._clip_epsilon = float(clip_epsilon)
        self._entropy_coef = float(entropy_coef)
        self._epochs = int(epochs)
        self._minibatch = int(minibatch)
        self._value_coef = float(value_coef)
        self._learning_rate = float(learning_rate)
        self._normalize_advantages = bool(normalize_advantages)

    @property
    def clip_epsilon(self):
        return self._clip_epsilon

    @clip_epsilon.setter
    def clip_epsilon(self, value):
        raise ActorCriticException('"clip_epsilon" can\'t be modified; build a new PpoConfig')

    @property
    def entropy_coef(self):
        return self._entropy_coef

    @entropy_coef.setter
    def entropy_coef(self, value):
        raise ActorCriticException('"entropy_coef" can\'t be modified; build a new PpoConfig')

    @property
    def epochs(self):
        return self._epochs

    @epochs.setter
    def epochs(self, value):
        raise ActorCriticException('"epochs" can\'t be modified; build a new PpoConfig')

    @property
    def minibatch(self):
        return self._minibatch

    @minibatch.setter
    def minibatch(self, value):
        raise ActorCriticException('"minibatch" can\'t be modified; build a new PpoConfig')

    @property
    def value_coef(self):
        return self._value_coef

    @value_coef.setter
    def value_coef(self, value):
        raise ActorCriticException('"value_coef" can\'t be modified; build a new PpoConfig')

    @property
    def learning_rate(self):
        return self._learning_rate

    @learning_rate.setter
    def learning_rate(self, value):
        raise ActorCriticException('"learning_rate" can\'t be modified; build a new PpoConfig')

    @property
    def normalize_advantages(self):
        return self._normalize_advantages

    @normalize_advantages.setter
    def normalize_advantages(self, value):
        raise ActorCriticException('"normalize_advantages" can\'t be modified; build a new PpoConfig')

    def _fields(self) -> tuple:
        return tuple(getattr(self, f) for f in _PPO_FIELDS)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PpoConfig):
            return NotImplemented
        return self._fields() == other._fields()

    def __repr__(self) -> str:
        return 'PpoConfig({})'.format(
            ', '.join('{}={!r}'.format(f, v) for f, v in zip(_PPO_FIELDS, self._fields())))


@dataclass
class Trajectory:
    '''
    One fixed-length student episode. 'targets' and 'advantages' are filled
    by compute_gae (from values1) once the episode is complete.
    '''
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values1: np.ndarray
    values2: np.ndarray
    targets: np.ndarray = None
    advantages: np.ndarray = None

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64)
        for name in ('log_probs', 'rewards', 'values1', 'values2'):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        T = len(self.rewards)
        lengths = {len(self.observations), len(self.actions), len(self.log_probs),
                   len(self.values1), len(self.values2), T}
        if len(lengths) != 1:
            raise ActorCriticException(
                "Per-timestep arrays must share one length, got {}".format(sorted(lengths)))
        if not (np.all(np.isfinite(self.log_probs)) and np.all(self.log_probs <= 0.0)):
            raise ActorCriticException('Behaviour log-probabilities must be finite and <= 0')

    @property
    def values(self) -> np.ndarray:
        return self.values1

    @property
    def episode_length(self) -> int:
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def with_rewards(self, rewards) -> 'Trajectory':
        return Trajectory(self.observations, self.actions, self.log_probs, rewards,
                          self.values1, self.values2, self.targets, self.advantages)


def compute_gae(rewards, values, bootstrap_value: float, cfg: GaeConfig) -> tuple:
    '''
    Generalized advantage estimation for one episode.

    Returns
    -------
    (advantages, value targets) where targets = advantages + values.
    '''
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.ndim != 1:
        raise ActorCriticException(
            "rewards {} and values {} must be equal-length vectors".format(
                rewards.shape, values.shape))

    T = len(rewards)
    adv = np.zeros(T)
    running = 0.0
    for t in reversed(range(T)):
        next_value = values[t + 1] if t + 1 < T else bootstrap_value
        delta = rewards[t] + cfg.gamma * next_value - values[t]
        running = delta + cfg.gamma * cfg.lam * running
        adv[t] = running
    return adv, adv + values


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ActorCriticException('Non-finite input')


def ppo_loss_and_grad(new_logp, old_logp, advantages, clip_epsilon: float) -> tuple:
    ratio = np.exp(new_logp - old_logp)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    loss = -np.mean(np.minimum(unclipped, clipped))
    # Only the unclipped branch depends on new_logp.
    grad = np.where(unclipped <= clipped, -unclipped, 0.0) / len(ratio)
    return float(loss), grad


def ppo_policy_loss(new_logp, old_logp, advantages, cfg: PpoConfig) -> float:
    new_logp, old_logp, advantages = (np.asarray(a, dtype=np.float64)
                                      for a in (new_logp, old_logp, advantages))
    if not new_logp.shape == old_logp.shape == advantages.shape:
        raise ActorCriticException(
            "Shapes differ: {} / {} / {}".format(new_logp.shape, old_logp.shape, advantages.shape))
    _check_finite(new_logp, old_logp, advantages)
    return ppo_loss_and_grad(new_logp, old_logp, advantages, cfg.clip_epsilon)[0]


def value_loss(predictions, targets) -> float:
    '''Sum over ensemble members of the mean squared error to the shared targets.'''
    targets = np.asarray(targets, dtype=np.float64)
    total = 0.0
    for pred in predictions:
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != targets.shape:
            raise ActorCriticException(
                "Prediction shape {} does not match targets {}".format(pred.shape, targets.shape))
        total += float(np.mean((pred - targets) ** 2))
    return total


def _entropy_and_grad(logits: np.ndarray) -> tuple:
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -np.sum(p * logp, axis=-1)
    grad = -p * (logp + h[:, None]) / logits.shape[0]
    return float(np.mean(h)), grad


def policy_entropy(action_logits) -> float:
    logits = np.atleast_2d(np.asarray(action_logits, dtype=np.float64))
    _check_finite(logits)
    return _entropy_and_grad(logits)[0]


def categorical_kl(logits_p, logits_q, floor: float = 0.0) -> np.ndarray:
    '''
    Row-wise KL(p || q) between two categorical distributions given by
    logits. With floor > 0, q is clamped from below at 'floor'.
    '''
    logp = log_softmax(np.atleast_2d(logits_p))
    logq = log_softmax(np.atleast_2d(logits_q))
    if floor > 0.0:
        logq = np.maximum(logq, np.log(floor))
    p = np.exp(logp)
    return np.sum(p * (logp - logq), axis=-1)


class StudentBundle:
    '''
    pi1 (trained policy), v1 / v2 (independently initialised value ensemble)
    and pi2 (behavioural clone of pi1), each with its own optimizer state.
    '''

    def __init__(self, obs_dim: int, n_actions: int, hidden: list, rng=None,
                 learning_rate: float = 3e-4, clone_learning_rate: float = 3e-4) -> None:
        rng = np.random.default_rng(rng)
        hidden = list(hidden)
        self.policy = Mlp([obs_dim] + hidden + [n_actions], rng, output_scale=0.01)
        self.value1 = Mlp([obs_dim] + hidden + [1], rng)
        self.value2 = Mlp([obs_dim] + hidden + [1], rng)
        self.clone = Mlp([obs_dim] + hidden + [n_actions], rng, output_scale=0.01)

        self.policy_opt = OptimizerState.for_params(self.policy.params(), learning_rate)
        self.value1_opt = OptimizerState.for_params(self.value1.params(), learning_rate)
        self.value2_opt = OptimizerState.for_params(self.value2.params(), learning_rate)
        self.clone_opt = OptimizerState.for_params(self.clone.params(), clone_learning_rate)

    def networks(self) -> dict:
        return {'pi1': self.policy, 'v1': self.value1, 'v2': self.value2, 'pi2': self.clone}

    def step_counts(self) -> dict:
        return {'pi1': self.policy_opt.step_count, 'v1': self.value1_opt.step_count,
                'v2': self.value2_opt.step_count, 'pi2': self.clone_opt.step_count}

    def values(self, obs) -> tuple:
        return self.value1.forward(obs)[..., 0], self.value2.forward(obs)[..., 0]

    def act(self, obs: np.ndarray, rng: np.random.Generator) -> tuple:
        '''
        Samples one action per row of 'obs'.

        Returns
        -------
        (actions, log_probs, v1, v2)
        '''
        logp = log_softmax(self.policy.forward(obs))
        actions = sample_categorical(rng, np.exp(logp))
        v1, v2 = self.values(obs)
        return actions, logp[np.arange(len(actions)), actions], v1, v2

    def act_greedy(self, tasks, states, obs: np.ndarray) -> np.ndarray:
        '''Mode of pi1; 'tasks' and 'states' are unused but keep the controller interface.'''
        return np.argmax(self.policy.forward(obs), axis=-1)


def clone_update(bundle: StudentBundle, observations) -> float:
    '''
    One gradient step on mean KL(pi1 || pi2) over 'observations', moving pi2
    only.

    Returns
    -------
    the KL before the step.
    '''
    obs = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    logits_p = bundle.policy.forward(obs)
    logits_q = bundle.clone.forward(obs)
    kl = float(np.mean(categorical_kl(logits_p, logits_q)))
    grad = (np.exp(log_softmax(logits_q)) - np.exp(log_softmax(logits_p))) / len(obs)
    optimizer_step(bundle.clone.params(), bundle.clone.backward(obs, grad), bundle.clone_opt)
    return kl


def student_update(bundle: StudentBundle, trajectories: list, cfg: PpoConfig,
                   gae_cfg: GaeConfig, rng=None) -> dict:
    '''
    GAE per trajectory, 'cfg.epochs' passes of PPO over minibatches of whole
    episodes, then one behavioural-cloning step for pi2.

    Returns
    -------
    dict with mean policy_loss, value_loss, entropy over all minibatches and
    the clone_kl measured before the cloning step.
    '''
    if not trajectories:
        raise ActorCriticException('student_update needs at least one trajectory')
    rng = np.random.default_rng(rng)

    for tr in trajectories:
        tr.advantages, tr.targets = compute_gae(tr.rewards, tr.values1, 0.0, gae_cfg)

    obs = np.concatenate([tr.observations for tr in trajectories])
    actions = np.concatenate([tr.actions for tr in trajectories])
    old_logp = np.concatenate([tr.log_probs for tr in trajectories])
    targets = np.concatenate([tr.targets for tr in trajectories])
    adv = np.concatenate([tr.advantages for tr in trajectories])
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    bounds = np.cumsum([0] + [tr.episode_length for tr in trajectories])
    episodes = [np.arange(bounds[i], bounds[i + 1]) for i in range(len(trajectories))]

    p_losses, v_losses, entropies = [], [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(episodes))
        for start in range(0, len(order), cfg.minibatch):
            idx = np.concatenate([episodes[e] for e in order[start:start + cfg.minibatch]])
            x = obs[idx]
            n = len(idx)

            logits = bundle.policy.forward(x)
            logp_all = log_softmax(logits)
            new_logp = logp_all[np.arange(n), actions[idx]]
            p_loss, g_logp = ppo_loss_and_grad(new_logp, old_logp[idx], adv[idx], cfg.clip_epsilon)
            ent, g_ent = _entropy_and_grad(logits)

            onehot = np.zeros_like(logits)
            onehot[np.arange(n), actions[idx]] = 1.0
            g_logits = g_logp[:, None] * (onehot - np.exp(logp_all)) - cfg.entropy_coef * g_ent
            optimizer_step(bundle.policy.params(), bundle.policy.backward(x, g_logits),
                           bundle.policy_opt)

            preds = []
            for net, opt in ((bundle.value1, bundle.value1_opt), (bundle.value2, bundle.value2_opt)):
                pred = net.forward(x)[:, 0]
                preds.append(pred)
                g = cfg.value_coef * 2.0 * (pred - targets[idx]) / n
                optimizer_step(net.params(), net.backward(x, g[:, None]), opt)

            p_losses.append(p_loss)
            v_losses.append(value_loss(preds, targets[idx]))
            entropies.append(ent)

    kl = clone_update(bundle, obs)

    diagnostics = {
        'policy_loss': float(np.mean(p_losses)),
        'value_loss': float(np.mean(v_losses)),
        'entropy': float(np.mean(entropies)),
        'clone_kl': kl,
    }
    logger.debug('student update: %s', diagnostics)
    return diagnostics
