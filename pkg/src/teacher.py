'''
The environment-designing policy and its rewards.

The teacher looks at the maze (and, in 'objects' mode, the uniformly spawned
agent) and places its objects with one categorical distribution per object
over all grid cells. Its episode is a single step; the reward is one of the
intrinsic signals computed from the student's trajectory in the sampled
environment.
'''
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from actor_critic import PpoConfig, StudentBundle, Trajectory, categorical_kl, ppo_loss_and_grad
from maze import MazeLayout, SpawnSpec, layout_occupancy
from tensor import Mlp, OptimizerState, log_softmax, optimizer_step, sample_categorical


logger = logging.getLogger(__name__)

OBJECTS = ('agent', 'box', 'ramp')
TEACHER_CHANNELS = 3


class TeacherException(Exception):
    pass


class TeacherRewardKind(Enum):
    VALUE_PREDICTION_ERROR = 'vpe'
    VALUE_DISAGREEMENT = 'vd'
    POLICY_DISAGREEMENT = 'pd'
    CONSTANT = 'constant'

    @classmethod
    def parse(cls, text: str) -> 'TeacherRewardKind':
        for kind in cls:
            if kind.value == str(text).strip().lower():
                return kind
        raise TeacherException(
            "Unknown teacher reward '{}'; expected one of {}".format(
                text, ', '.join(k.value for k in cls)))


class TeacherPolicy:
    '''
    Factorised placement policy p(X | Y) plus a separate value network V_T(Y).

    Parameters
    ----------
    height, width : int
        grid size of the mazes it will see
    hidden : list
        hidden layer widths for both networks (may be empty)
    objects : tuple
        the objects it places, in placement order; ('agent', 'box', 'ramp')
        or ('box', 'ramp') when the agent belongs to the stationary part
    '''

    def __init__(self, height: int, width: int, hidden: list, rng=None,
                 objects: tuple = OBJECTS, learning_rate: float = 3e-4) -> None:
        for o in objects:
            if o not in OBJECTS:
                raise TeacherException("Unknown object '{}'".format(o))
        rng = np.random.default_rng(rng)
        self.height = int(height)
        self.width = int(width)
        self.objects = tuple(objects)
        n_in = TEACHER_CHANNELS * self.n_cells
        self.network = Mlp([n_in] + list(hidden) + [len(self.objects) * self.n_cells], rng,
                           output_scale=0.01)
        self.value_net = Mlp([n_in] + list(hidden) + [1], rng)
        self.network_opt = OptimizerState.for_params(self.network.params(), learning_rate)
        self.value_opt = OptimizerState.for_params(self.value_net.params(), learning_rate)

    @property
    def n_cells(self) -> int:
        return self.height * self.width

    def networks(self) -> dict:
        return {'teacher': self.network, 'teacher_value': self.value_net}

    def step_counts(self) -> dict:
        return {'teacher': self.network_opt.step_count, 'teacher_value': self.value_opt.step_count}

    def full_mask(self) -> np.ndarray:
        return np.ones((len(self.objects), self.n_cells), dtype=bool)

    def logits(self, obs) -> np.ndarray:
        '''(batch, n_objects, n_cells) placement logits.'''
        x = np.atleast_2d(obs)
        return self.network.forward(x).reshape(len(x), len(self.objects), self.n_cells)

    def value(self, obs) -> np.ndarray:
        return self.value_net.forward(np.atleast_2d(obs))[:, 0]

    def log_prob(self, obs, proposal, mask=None) -> float:
        mask = self.full_mask() if mask is None else mask
        logp = log_softmax(self.logits(obs)[0], mask)
        return float(sum(logp[o, int(a)] for o, a in enumerate(proposal)))

    def entropy(self, obs, mask=None) -> float:
        '''Sum over objects of the entropy of each placement distribution, averaged over obs.'''
        x = np.atleast_2d(obs)
        mask = np.broadcast_to(self.full_mask() if mask is None else mask,
                               (len(x), len(self.objects), self.n_cells))
        logp = log_softmax(self.logits(x), mask)
        safe = np.where(mask, logp, 0.0)
        return float(np.mean(-np.sum(np.exp(logp) * safe, axis=(1, 2))))


def teacher_observation(layout: MazeLayout, agent_cell: tuple = None) -> np.ndarray:
    return layout_occupancy(layout, agent_cell).ravel()


@dataclass
class TeacherTransition:
    observation: np.ndarray
    spawn: SpawnSpec
    proposal: np.ndarray
    log_prob: float
    reward: float
    value: float
    mask: np.ndarray = None


def resolve_collision(proposed_cell: tuple, occupied_cells, layout: MazeLayout) -> tuple:
    '''
    Returns 'proposed_cell' if it is free, otherwise the free cell nearest in
    Chebyshev distance, ties going to the first in row-major order.
    '''
    proposed_cell = tuple(int(v) for v in proposed_cell)
    occupied = {tuple(c) for c in occupied_cells}
    if not layout.in_grid(proposed_cell):
        raise TeacherException("Cell {} is outside the grid".format(proposed_cell))
    if proposed_cell not in occupied:
        return proposed_cell
    free = [c for c in layout.cells() if c not in occupied]
    if not free:
        raise TeacherException('No free cell left to place an object')
    r, c = proposed_cell
    return min(free, key=lambda f: (max(abs(f[0] - r), abs(f[1] - c)), f))


def teacher_act(policy: TeacherPolicy, occupancy: np.ndarray, layout: MazeLayout,
                rng: np.random.Generator, mask: np.ndarray = None,
                agent_cell: tuple = None) -> tuple:
    '''
    Samples a placement for each object the teacher controls.

    Parameters
    ----------
    occupancy : array (3, H, W)
        teacher observation from maze.layout_occupancy
    mask : bool array (n_objects, n_cells), optional
        cells each object may be placed on; defaults to all cells
    agent_cell : tuple, optional
        the fixed agent cell when the teacher does not place the agent

    Returns
    -------
    (SpawnSpec, log_prob, proposal) where log_prob is the factorised
    log-probability of the proposed cells before collision resolution and
    proposal holds the proposed cell indices.
    '''
    mask = policy.full_mask() if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (len(policy.objects), policy.n_cells):
        raise TeacherException("Mask shape {} does not match ({}, {})".format(
            mask.shape, len(policy.objects), policy.n_cells))
    empty = [policy.objects[o] for o in range(len(policy.objects)) if not mask[o].any()]
    if empty:
        raise TeacherException("Mask leaves no cell for: {}".format(', '.join(empty)))
    if ('agent' in policy.objects) == (agent_cell is not None):
        raise TeacherException('agent_cell must be given exactly when the teacher does not place the agent')

    logp = log_softmax(policy.logits(np.ravel(occupancy))[0], mask)
    proposal = sample_categorical(rng, np.exp(logp))
    log_prob = float(sum(logp[o, a] for o, a in enumerate(proposal)))

    placed = {}
    occupied = []
    if agent_cell is not None:
        placed['agent'] = tuple(agent_cell)
        occupied.append(placed['agent'])
    for o, name in enumerate(policy.objects):
        cell = resolve_collision(layout.index_cell(proposal[o]), occupied, layout)
        placed[name] = cell
        occupied.append(cell)

    spawn = SpawnSpec(placed['agent'], placed['box'], placed['ramp'])
    return spawn, log_prob, np.asarray(proposal, dtype=np.int64)


# Teacher rewards: per-timestep signals summed over the student episode.

def population_std(values, axis: int = 0) -> np.ndarray:
    return np.std(np.asarray(values, dtype=np.float64), axis=axis, ddof=0)


def vpe_reward(traj: Trajectory) -> float:
    if traj.targets is None:
        raise TeacherException('Trajectory has no value targets; run compute_gae first')
    return float(np.sum(np.abs(traj.values1 - traj.targets)))


def vd_reward(traj: Trajectory) -> float:
    # std over an ensemble of two is half the absolute difference
    return float(np.sum(0.5 * np.abs(traj.values1 - traj.values2)))


def pd_reward(traj: Trajectory, pi1: Mlp, pi2: Mlp) -> float:
    kl = categorical_kl(pi1.forward(traj.observations), pi2.forward(traj.observations),
                        floor=1e-12)
    return float(np.sum(kl))


def teacher_reward(kind: TeacherRewardKind, traj: Trajectory, bundle: StudentBundle) -> float:
    if kind == TeacherRewardKind.VALUE_PREDICTION_ERROR:
        return vpe_reward(traj)
    if kind == TeacherRewardKind.VALUE_DISAGREEMENT:
        return vd_reward(traj)
    if kind == TeacherRewardKind.POLICY_DISAGREEMENT:
        return pd_reward(traj, bundle.policy, bundle.clone)
    return 1.0


def aggregate_teacher_reward(rewards, on_policy=None) -> float:
    '''Mean over the students rolled out with the current policy.'''
    rewards = np.asarray(rewards, dtype=np.float64)
    flags = np.ones(len(rewards), dtype=bool) if on_policy is None else np.asarray(on_policy, dtype=bool)
    if flags.shape != rewards.shape:
        raise TeacherException("Got {} rewards and {} flags".format(len(rewards), len(flags)))
    if not flags.any():
        raise TeacherException('No on-policy student to average over')
    return float(rewards[flags].mean())


class RunningMeanStd:
    '''Running mean and variance over batches (parallel Welford update).'''

    def __init__(self, eps: float = 1e-4) -> None:
        self.mean = 0.0
        self.var = 1.0
        self.count = eps

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        b_mean, b_var, b_count = float(x.mean()), float(x.var()), len(x)
        delta = b_mean - self.mean
        total = self.count + b_count
        self.mean += delta * b_count / total
        m2 = self.var * self.count + b_var * b_count + delta ** 2 * self.count * b_count / total
        self.var = m2 / total
        self.count = total

    def normalize(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) / np.sqrt(self.var + 1e-8)


def teacher_update(policy: TeacherPolicy, transitions: list, cfg: PpoConfig, rng=None,
                   normalizer: RunningMeanStd = None) -> dict:
    '''
    PPO on single-step teacher episodes: advantage = r - V_T(Y), clipped
    surrogate plus entropy bonus for the placement policy, squared error to r
    for the value network.
    '''
    if not transitions:
        raise TeacherException('teacher_update needs at least one transition')
    rewards = np.array([tr.reward for tr in transitions], dtype=np.float64)
    if not np.all(np.isfinite(rewards)):
        raise TeacherException('Non-finite teacher reward')
    rng = np.random.default_rng(rng)

    if normalizer is not None:
        normalizer.update(rewards)
        rewards = normalizer.normalize(rewards)

    obs = np.stack([tr.observation for tr in transitions])
    proposals = np.stack([tr.proposal for tr in transitions])
    old_logp = np.array([tr.log_prob for tr in transitions])
    values = np.array([tr.value for tr in transitions])
    masks = np.stack([policy.full_mask() if tr.mask is None else tr.mask for tr in transitions])

    adv = rewards - values
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n_obj = len(policy.objects)
    p_losses, v_losses, entropies = [], [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(transitions))
        for start in range(0, len(order), cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            n = len(idx)
            x = obs[idx]
            m = masks[idx]

            logp_all = log_softmax(policy.logits(x), m)
            p = np.exp(logp_all)
            safe = np.where(m, logp_all, 0.0)
            rows = np.arange(n)[:, None]
            objs = np.arange(n_obj)[None, :]
            new_logp = logp_all[rows, objs, proposals[idx]].sum(axis=1)

            p_loss, g_logp = ppo_loss_and_grad(new_logp, old_logp[idx], adv[idx], cfg.clip_epsilon)

            onehot = np.zeros_like(p)
            onehot[rows, objs, proposals[idx]] = 1.0
            h = -np.sum(p * safe, axis=2)
            g_ent = -p * (safe + h[:, :, None]) / n
            g_logits = g_logp[:, None, None] * (onehot - p) - cfg.entropy_coef * g_ent
            optimizer_step(policy.network.params(),
                           policy.network.backward(x, g_logits.reshape(n, -1)),
                           policy.network_opt)

            pred = policy.value_net.forward(x)[:, 0]
            g = cfg.value_coef * 2.0 * (pred - rewards[idx]) / n
            optimizer_step(policy.value_net.params(), policy.value_net.backward(x, g[:, None]),
                           policy.value_opt)

            p_losses.append(p_loss)
            v_losses.append(float(np.mean((pred - rewards[idx]) ** 2)))
            entropies.append(float(np.mean(h.sum(axis=1))))

    diagnostics = {
        'teacher_policy_loss': float(np.mean(p_losses)),
        'teacher_value_loss': float(np.mean(v_losses)),
        'teacher_entropy': float(np.mean(entropies)),
    }
    logger.debug('teacher update: %s', diagnostics)
    return diagnostics
