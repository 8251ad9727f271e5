'''
The curriculum training loop and the fixed-distribution evaluation.

Each iteration draws mazes from the layout generator, lets the teacher (or
uniform spawning) place the objects, rolls the student out in every sampled
environment, rewards the teacher with the chosen intrinsic signal and then
updates student and teacher in turn.
'''
import logging
import os
from collections import deque

import numpy as np

from actor_critic import StudentBundle, Trajectory, compute_gae, student_update
from config import Config
from experiment_log import ExperimentLog
from maze import (N_ACTIONS, OBS_DIM, Difficulty, MazeConfig, MazeTask, OptimalPlanner,
                  classify_difficulty, encode_instance, generate_layout, layout_occupancy,
                  uniform_spawn)
from replays import Replay
from teacher import (OBJECTS, RunningMeanStd, TeacherPolicy, TeacherRewardKind,
                     TeacherTransition, aggregate_teacher_reward, teacher_act,
                     teacher_observation, teacher_reward, teacher_update)
from tensor import load_checkpoint, save_checkpoint
from utils import StdReturn, seed_streams


logger = logging.getLogger(__name__)


class HarnessException(Exception):
    pass


# Order is part of the seeding contract: appending is fine, reordering is not.
STREAMS = ['init', 'layouts', 'teacher', 'rollout', 'updates']

MAX_HARD_DRAWS = 10 ** 6


def collect_trajectories(bundle: StudentBundle, tasks: list, rng: np.random.Generator) -> list:
    '''
    Rolls the student out once in each task, all episodes advancing in
    lockstep so every policy query is a single batched forward pass.
    '''
    if not tasks:
        raise HarnessException('No tasks to roll out')
    L = tasks[0].episode_length
    if any(t.episode_length != L for t in tasks):
        raise HarnessException('All tasks in a batch must share one episode length')

    n = len(tasks)
    states = [task.reset(rng) for task in tasks]
    obs = np.zeros((n, L, OBS_DIM))
    actions = np.zeros((n, L), dtype=np.int64)
    logps, rewards, v1s, v2s = (np.zeros((n, L)) for _ in range(4))

    for t in range(L):
        obs[:, t] = np.stack([task.observe(s) for task, s in zip(tasks, states)])
        a, lp, v1, v2 = bundle.act(obs[:, t], rng)
        actions[:, t], logps[:, t], v1s[:, t], v2s[:, t] = a, lp, v1, v2
        for i, task in enumerate(tasks):
            states[i], rewards[i, t] = task.step(states[i], a[i])

    return [Trajectory(obs[i], actions[i], logps[i], rewards[i], v1s[i], v2s[i])
            for i in range(n)]


def run_greedy(controller, tasks: list, rng: np.random.Generator) -> tuple:
    '''
    Runs 'controller' without exploration or learning.

    'controller' needs act_greedy(tasks, states, observations) returning one
    action per task; both StudentBundle and PlannerController qualify.

    Returns
    -------
    (returns, actions, reward_flags) with actions of shape (n, L)
    '''
    L = tasks[0].episode_length
    states = [task.reset(rng) for task in tasks]
    flags = np.array([s.reward_flag for s in states], dtype=np.int64)
    returns = np.zeros(len(tasks))
    actions = np.zeros((len(tasks), L), dtype=np.int64)
    for t in range(L):
        obs = np.stack([task.observe(s) for task, s in zip(tasks, states)])
        actions[:, t] = controller.act_greedy(tasks, states, obs)
        for i, task in enumerate(tasks):
            states[i], r = task.step(states[i], actions[i, t])
            returns[i] += r
    return returns, actions, flags


class PlannerController:
    '''
    Scripted controller that plays the exact optimum of each task, for
    checking evaluation numbers against a known answer.
    '''

    def __init__(self) -> None:
        self._planners = {}

    def planner(self, task: MazeTask) -> OptimalPlanner:
        key = (encode_instance(task.layout, task.spawn), task.episode_length)
        if key not in self._planners:
            self._planners[key] = OptimalPlanner(task)
        return self._planners[key]

    def act_greedy(self, tasks, states, obs) -> np.ndarray:
        return np.array([self.planner(task).act(s) for task, s in zip(tasks, states)],
                        dtype=np.int64)


def sample_hard_tasks(rng: np.random.Generator, n: int, maze_cfg: MazeConfig,
                      max_draws: int = MAX_HARD_DRAWS) -> list:
    '''Uniform layouts and spawns, rejecting everything not classified Hard.'''
    tasks = []
    draws = 0
    while len(tasks) < n:
        if draws >= max_draws:
            raise HarnessException(
                "Found only {} Hard instances in {} draws; check the maze preset".format(
                    len(tasks), max_draws))
        draws += 1
        layout = generate_layout(rng, maze_cfg.height, maze_cfg.width, maze_cfg.rooms)
        spawn = uniform_spawn(rng, layout)
        if classify_difficulty(layout, spawn) == Difficulty.HARD:
            tasks.append(MazeTask(layout, spawn, maze_cfg.episode_length, maze_cfg.stochastic))
    return tasks


def hard_evaluation(controller, seed, n_episodes: int, maze_cfg: MazeConfig) -> tuple:
    '''
    Same as evaluate_hard but returns the episodes too.

    Returns
    -------
    (tasks, returns, actions, reward_flags)
    '''
    if n_episodes < 1:
        raise HarnessException("n_episodes must be at least 1, got {}".format(n_episodes))
    rng = np.random.default_rng(seed)
    tasks = sample_hard_tasks(rng, n_episodes, maze_cfg)
    returns, actions, flags = run_greedy(controller, tasks, rng)
    return tasks, returns, actions, flags


def evaluate_hard(controller, seed, n_episodes: int, maze_cfg: MazeConfig) -> float:
    '''
    Mean greedy return over 'n_episodes' uniformly sampled Hard environments.

    The environments depend only on 'seed', never on training, so successive
    evaluations and different runs see the same distribution.
    '''
    _, returns, _, _ = hard_evaluation(controller, seed, n_episodes, maze_cfg)
    return float(returns.mean())


def sampling_probabilities(window) -> tuple:
    '''(P_easy, P_hard, P_impossible) over a window of (layout, spawn) pairs.'''
    window = list(window)
    if not window:
        raise HarnessException('Sampling probabilities need a non-empty window')
    counts = {d: 0 for d in Difficulty}
    for layout, spawn in window:
        counts[classify_difficulty(layout, spawn)] += 1
    n = len(window)
    return (counts[Difficulty.EASY] / n, counts[Difficulty.HARD] / n,
            counts[Difficulty.IMPOSSIBLE] / n)


class Experiment:
    '''
    All learner state of one run: the student bundle, the teacher (absent
    under uniform spawning), the seeded random streams and the window of
    recently sampled environments.
    '''

    def __init__(self, cfg: Config) -> None:
        self.cfg = cfg
        self.maze_cfg = cfg.maze()
        self.gae_cfg = cfg.gae()
        self.student_ppo = cfg.student_ppo()
        self.teacher_ppo = cfg.teacher_ppo()
        self.reward_kind = TeacherRewardKind.parse(cfg['teacher.reward'])
        self.rng = seed_streams(cfg['run.seed'], STREAMS)

        self.bundle = StudentBundle(OBS_DIM, N_ACTIONS, cfg['student.hidden'], self.rng['init'],
                                    learning_rate=cfg['student.learning_rate'],
                                    clone_learning_rate=cfg['student.clone_learning_rate'])

        self.teacher = None
        if cfg['teacher.spawn'] == 'teacher':
            objects = OBJECTS if cfg['teacher.controls'] == 'all' else ('box', 'ramp')
            self.teacher = TeacherPolicy(self.maze_cfg.height, self.maze_cfg.width,
                                         cfg['teacher.hidden'], self.rng['init'], objects=objects,
                                         learning_rate=cfg['teacher.learning_rate'])
        self.normalizer = RunningMeanStd() if cfg['teacher.normalize_rewards'] else None
        self.window = deque(maxlen=cfg['log.window'])

    def sample_environments(self, n: int) -> list:
        '''
        Draws n environments.

        Returns
        -------
        list of (layout, spawn, TeacherTransition or None); the transitions
        still carry a zero reward.
        '''
        H, W, rooms = self.maze_cfg.height, self.maze_cfg.width, self.maze_cfg.rooms
        out = []
        for _ in range(n):
            layout = generate_layout(self.rng['layouts'], H, W, rooms)
            if self.teacher is None:
                out.append((layout, uniform_spawn(self.rng['layouts'], layout), None))
                continue

            agent_cell = None
            if 'agent' not in self.teacher.objects:
                agent_cell = layout.index_cell(int(self.rng['layouts'].integers(layout.n_cells)))
            obs = teacher_observation(layout, agent_cell)
            value = float(self.teacher.value(obs)[0])
            spawn, log_prob, proposal = teacher_act(self.teacher, layout_occupancy(layout, agent_cell),
                                                    layout, self.rng['teacher'], agent_cell=agent_cell)
            out.append((layout, spawn, TeacherTransition(obs, spawn, proposal, log_prob, 0.0, value)))
        return out

    def run_iteration(self, iteration: int) -> dict:
        '''One round of sampling, rollout, student update and teacher update.'''
        k = self.cfg['student.rollouts_per_env']
        envs = self.sample_environments(self.cfg['student.batch_episodes'])
        tasks = [MazeTask(layout, spawn, self.maze_cfg.episode_length, self.maze_cfg.stochastic)
                 for layout, spawn, _ in envs for _ in range(k)]
        trajectories = collect_trajectories(self.bundle, tasks, self.rng['rollout'])

        # targets before any update, so value prediction error sees the
        # predictions the episode was played with
        for tr in trajectories:
            tr.advantages, tr.targets = compute_gae(tr.rewards, tr.values1, 0.0, self.gae_cfg)
        per_episode = [teacher_reward(self.reward_kind, tr, self.bundle) for tr in trajectories]
        env_rewards = [aggregate_teacher_reward(per_episode[i * k:(i + 1) * k])
                       for i in range(len(envs))]

        row = {'iteration': iteration}
        row.update(student_update(self.bundle, trajectories, self.student_ppo, self.gae_cfg,
                                  self.rng['updates']))

        if self.teacher is not None:
            transitions = []
            for (_, _, tr), r in zip(envs, env_rewards):
                tr.reward = r
                transitions.append(tr)
            row.update(teacher_update(self.teacher, transitions, self.teacher_ppo,
                                      self.rng['updates'], self.normalizer))

        for layout, spawn, _ in envs:
            self.window.append((layout, spawn))
        row['p_easy'], row['p_hard'], row['p_impossible'] = sampling_probabilities(self.window)
        row['mean_teacher_reward'] = float(np.mean(env_rewards))
        row['mean_student_return'] = float(np.mean([tr.total_reward for tr in trajectories]))
        return row

    def evaluate(self) -> tuple:
        '''
        Greedy evaluation of the current student on the fixed Hard set.

        Returns
        -------
        (mean return, Replay of the first episode)
        '''
        tasks, returns, actions, flags = hard_evaluation(
            self.bundle, self.cfg['eval.seed'], self.cfg['eval.episodes'], self.maze_cfg)
        first = tasks[0]
        replay = Replay(first.layout, first.spawn, first.episode_length, first.stochastic,
                        int(flags[0]), [int(a) for a in actions[0]])
        return float(returns.mean()), replay

    def networks(self) -> dict:
        nets = dict(self.bundle.networks())
        if self.teacher is not None:
            nets.update(self.teacher.networks())
        return nets

    def save_checkpoint(self, path: str) -> StdReturn:
        steps = dict(self.bundle.step_counts())
        if self.teacher is not None:
            steps.update(self.teacher.step_counts())
        r = StdReturn(message='Checkpoint saved', details=path)
        try:
            save_checkpoint(path, self.networks(), steps, self.cfg.lines())
        except OSError as e:
            r.success = False
            r.message = 'Checkpoint could not be saved'
            r.details = 'Method: Experiment.save_checkpoint; exception: {}'.format(e)
        return r


def _eval_due(iteration: int, cfg: Config) -> bool:
    return (iteration + 1) % cfg['eval.every'] == 0 or iteration == cfg['run.iterations'] - 1


def curriculum_loop(cfg: Config, out_dir: str = None) -> ExperimentLog:
    '''
    Runs 'run.iterations' training iterations and returns the log.

    With 'out_dir' set, writes there: config.cfg (the resolved config),
    checkpoint_init.txt, log.csv, and after the last iteration checkpoint.txt
    and replay.txt. The log is written even when an iteration fails.
    '''
    exp = Experiment(cfg)
    log = ExperimentLog()

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cfg.save(os.path.join(out_dir, 'config.cfg')).raise_for_failure(HarnessException)
        exp.save_checkpoint(os.path.join(out_dir, 'checkpoint_init.txt')).raise_for_failure(
            HarnessException)

    replay = None
    try:
        for it in range(cfg['run.iterations']):
            row = exp.run_iteration(it)
            if _eval_due(it, cfg):
                row['hard_eval_return'], replay = exp.evaluate()
            log.add(row)
            logger.info('iteration %d done', it, extra=row)
    finally:
        if out_dir is not None:
            r = log.save(os.path.join(out_dir, 'log.csv'))
            if not r.success:
                logger.error('%s: %s', r.message, r.details)

    if out_dir is not None and cfg['run.iterations'] > 0:
        exp.save_checkpoint(os.path.join(out_dir, 'checkpoint.txt')).raise_for_failure(
            HarnessException)
        if replay is not None:
            replay.save(os.path.join(out_dir, 'replay.txt')).raise_for_failure(HarnessException)
    return log


def load_student(path: str) -> tuple:
    '''
    Rebuilds the student from a training checkpoint.

    Returns
    -------
    (StudentBundle, Config) where the config is the one the run was made with.
    '''
    networks, steps, config_lines = load_checkpoint(path)
    cfg = Config.from_lines(config_lines)
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, cfg['student.hidden'])
    for name, net in bundle.networks().items():
        if name not in networks:
            raise HarnessException("Checkpoint '{}' has no network '{}'".format(path, name))
        net.load_from(networks[name])
    bundle.policy_opt.step_count = steps.get('pi1', 0)
    bundle.value1_opt.step_count = steps.get('v1', 0)
    bundle.value2_opt.step_count = steps.get('v2', 0)
    bundle.clone_opt.step_count = steps.get('pi2', 0)
    return bundle, cfg
