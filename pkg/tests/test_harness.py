import os

import numpy as np
import pandas as pd
import pytest

from actor_critic import StudentBundle
from experiment_log import ExperimentLog
from harness import (Experiment, HarnessException, PlannerController, collect_trajectories,
                     curriculum_loop, evaluate_hard, hard_evaluation, load_student, run_greedy,
                     sample_hard_tasks, sampling_probabilities)
from maze import (N_ACTIONS, OBS_DIM, Difficulty, MazeConfig, MazeTask, OptimalPlanner, SpawnSpec,
                  classify_difficulty)
from replays import Replay
from tensor import OptimizerState, optimizer_step, softmax

TINY_MAZE = MazeConfig(6, 6, 3, 24)


def _pair(two_rooms, difficulty):
    spawns = {
        Difficulty.EASY: SpawnSpec((0, 0), (1, 1), (0, 3)),
        Difficulty.HARD: SpawnSpec((0, 0), (0, 3), (1, 1)),
        Difficulty.IMPOSSIBLE: SpawnSpec((0, 0), (0, 3), (1, 2)),
    }
    return two_rooms, spawns[difficulty]


def test_sampling_probabilities(two_rooms):
    easy = _pair(two_rooms, Difficulty.EASY)
    hard = _pair(two_rooms, Difficulty.HARD)
    impossible = _pair(two_rooms, Difficulty.IMPOSSIBLE)
    assert sampling_probabilities([easy, easy]) == (1.0, 0.0, 0.0)
    assert sampling_probabilities([easy, hard, hard, impossible]) == (0.25, 0.5, 0.25)
    with pytest.raises(HarnessException):
        sampling_probabilities([])


def test_sampling_probabilities_match_recount(rng, two_rooms):
    window = []
    for _ in range(50):
        cells = rng.choice(two_rooms.n_cells, size=3, replace=False)
        window.append((two_rooms, SpawnSpec(*(two_rooms.index_cell(c) for c in cells))))
    p = sampling_probabilities(window)
    recount = [sum(classify_difficulty(layout, spawn) == d for layout, spawn in window) / 50
               for d in Difficulty]
    assert list(p) == recount
    assert sum(p) == pytest.approx(1.0, abs=1e-9)


def test_collect_trajectories(rng, two_rooms):
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=0)
    tasks = [MazeTask(two_rooms, SpawnSpec((0, 0), (1, 1), (0, 3)), 6),
             MazeTask(two_rooms, SpawnSpec((0, 0), (0, 3), (1, 1)), 6)]
    trajectories = collect_trajectories(bundle, tasks, rng)
    assert len(trajectories) == 2
    for task, tr in zip(tasks, trajectories):
        assert tr.episode_length == 6
        assert np.all(tr.log_probs <= 0)
        # replaying the recorded actions reproduces the recorded rewards
        s = task.reset()
        for t in range(6):
            assert np.allclose(task.observe(s), tr.observations[t])
            s, r = task.step(s, tr.actions[t])
            assert r == tr.rewards[t]
    assert trajectories[0].rewards[0] == 1.0
    with pytest.raises(HarnessException):
        collect_trajectories(bundle, [tasks[0], MazeTask(two_rooms, tasks[1].spawn, 5)], rng)


def test_sample_hard_tasks_are_hard(rng):
    tasks = sample_hard_tasks(rng, 20, TINY_MAZE)
    assert len(tasks) == 20
    assert all(t.difficulty == Difficulty.HARD for t in tasks)


def test_sample_hard_tasks_gives_up(rng):
    with pytest.raises(HarnessException):
        sample_hard_tasks(rng, 1, MazeConfig(4, 4, 1, 8), max_draws=50)


def test_planner_controller_scores_the_optimum():
    tasks, returns, _, _ = hard_evaluation(PlannerController(), 5, 20, TINY_MAZE)
    optimum = [OptimalPlanner(t).optimal_return() for t in tasks]
    assert list(returns) == optimum
    assert evaluate_hard(PlannerController(), 5, 20, TINY_MAZE) == pytest.approx(np.mean(optimum))


def test_student_imitating_the_planner_scores_the_optimum(two_rooms):
    # Hard: the box is behind the wall, the ramp next to the agent
    task = MazeTask(two_rooms, SpawnSpec((0, 1), (0, 3), (1, 1)), 6)
    _, actions, _ = run_greedy(PlannerController(), [task], np.random.default_rng(0))
    state = task.reset()
    observations = []
    for a in actions[0]:
        observations.append(task.observe(state))
        state, _ = task.step(state, a)
    obs = np.stack(observations)

    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [32], rng=3)
    opt = OptimizerState.for_params(bundle.policy.params(), 1e-2)
    onehot = np.eye(N_ACTIONS)[actions[0]]
    for _ in range(500):
        grad = (softmax(bundle.policy.forward(obs)) - onehot) / len(obs)
        optimizer_step(bundle.policy.params(), bundle.policy.backward(obs, grad), opt)

    returns, greedy, _ = run_greedy(bundle, [task], np.random.default_rng(0))
    assert np.array_equal(greedy[0], actions[0])
    assert returns[0] == OptimalPlanner(task).optimal_return() == 3.0


def test_evaluation_is_seeded_and_independent_of_training(rng):
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=1)
    a = evaluate_hard(bundle, 3, 5, TINY_MAZE)
    bundle.act(np.zeros((4, OBS_DIM)), rng)
    assert evaluate_hard(bundle, 3, 5, TINY_MAZE) == a


def test_no_controller_beats_the_planner():
    bundle = StudentBundle(OBS_DIM, N_ACTIONS, [8], rng=2)
    tasks = sample_hard_tasks(np.random.default_rng(0), 30, TINY_MAZE)
    returns, actions, _ = run_greedy(bundle, tasks, np.random.default_rng(0))
    assert actions.shape == (30, 24)
    for task, r in zip(tasks, returns):
        assert r <= OptimalPlanner(task).optimal_return()


def test_evaluation_needs_episodes():
    with pytest.raises(HarnessException):
        evaluate_hard(PlannerController(), 0, 0, TINY_MAZE)


def test_evaluation_does_not_touch_learner(tiny_config, tmp_path):
    exp = Experiment(tiny_config)
    exp.run_iteration(0)
    before, after = str(tmp_path / 'a.txt'), str(tmp_path / 'b.txt')
    assert exp.save_checkpoint(before).success
    exp.evaluate()
    exp.save_checkpoint(after)
    with open(before) as f1, open(after) as f2:
        assert f1.read() == f2.read()


def test_teacher_environments_share_the_layout_generator(tiny_config):
    exp = Experiment(tiny_config)
    for layout, spawn, transition in exp.sample_environments(10):
        assert layout.room_count == 3
        spawn.validate(layout)
        assert transition.log_prob <= 0
        assert transition.proposal.shape == (3,)


def test_objects_mode_spawns_agent_uniformly(tiny_config):
    tiny_config.set('teacher.controls', 'objects')
    exp = Experiment(tiny_config)
    assert exp.teacher.objects == ('box', 'ramp')
    for layout, spawn, transition in exp.sample_environments(5):
        assert transition.proposal.shape == (2,)
        assert transition.observation.reshape(3, 6, 6)[2][spawn.agent_cell] == 1.0


def test_uniform_mode_has_no_teacher(tiny_config):
    tiny_config.set('teacher.spawn', 'uniform')
    exp = Experiment(tiny_config)
    assert exp.teacher is None
    assert all(t is None for _, _, t in exp.sample_environments(3))
    row = exp.run_iteration(0)
    assert 'teacher_policy_loss' not in row
    assert set(exp.networks()) == {'pi1', 'v1', 'v2', 'pi2'}


def test_zero_budget(tiny_config, tmp_path):
    tiny_config.set('run.iterations', 0)
    out = str(tmp_path / 'run')
    log = curriculum_loop(tiny_config, out)
    assert len(log) == 0
    assert os.path.exists(os.path.join(out, 'checkpoint_init.txt'))
    assert os.path.exists(os.path.join(out, 'config.cfg'))
    assert not os.path.exists(os.path.join(out, 'checkpoint.txt'))
    assert len(pd.read_csv(os.path.join(out, 'log.csv'))) == 0


def test_curriculum_loop_writes_run(tiny_config, tmp_path):
    out = str(tmp_path / 'run')
    log = curriculum_loop(tiny_config, out)
    assert len(log) == 2
    df = log.df
    assert np.allclose(df['p_easy'] + df['p_hard'] + df['p_impossible'], 1.0, atol=1e-9)
    assert df['hard_eval_return'].notna().all()
    assert df['teacher_policy_loss'].notna().all()
    for name in ('config.cfg', 'checkpoint_init.txt', 'checkpoint.txt', 'log.csv', 'replay.txt'):
        assert os.path.exists(os.path.join(out, name))
    assert len(ExperimentLog.load(os.path.join(out, 'log.csv'))) == 2

    replay = Replay.load(os.path.join(out, 'replay.txt'))
    assert len(replay.frames()) == tiny_config['env.episode_length'] + 1
    assert classify_difficulty(replay.layout, replay.spawn) == Difficulty.HARD


def test_eval_cadence(tiny_config):
    tiny_config.set('run.iterations', 5)
    tiny_config.set('eval.every', 2)
    log = curriculum_loop(tiny_config)
    evaluated = log.df['hard_eval_return'].notna().tolist()
    assert evaluated == [False, True, False, True, True]


def test_identical_runs_write_identical_logs(tiny_config, tmp_path):
    a, b = str(tmp_path / 'a'), str(tmp_path / 'b')
    curriculum_loop(tiny_config, a)
    curriculum_loop(tiny_config, b)
    for name in ('log.csv', 'checkpoint.txt', 'replay.txt'):
        with open(os.path.join(a, name)) as fa, open(os.path.join(b, name)) as fb:
            assert fa.read() == fb.read()


def test_seed_changes_the_run(tiny_config):
    first = curriculum_loop(tiny_config).df
    tiny_config.set('run.seed', 8)
    second = curriculum_loop(tiny_config).df
    assert not first.equals(second)


@pytest.mark.parametrize('key, value', [('teacher.reward', 'vpe'), ('teacher.reward', 'pd'),
                                        ('teacher.reward', 'constant'),
                                        ('teacher.normalize_rewards', True),
                                        ('student.rollouts_per_env', 2),
                                        ('env.reward', 'stochastic')])
def test_variants_run(tiny_config, key, value):
    tiny_config.set(key, value)
    tiny_config.set('run.iterations', 1)
    log = curriculum_loop(tiny_config)
    assert len(log) == 1
    assert np.isfinite(log.last()['mean_teacher_reward'])


def test_failed_iteration_flushes_log(tiny_config, tmp_path, monkeypatch):
    original = Experiment.run_iteration

    def failing(self, iteration):
        if iteration == 1:
            raise RuntimeError('boom')
        return original(self, iteration)

    monkeypatch.setattr(Experiment, 'run_iteration', failing)
    out = str(tmp_path / 'run')
    with pytest.raises(RuntimeError):
        curriculum_loop(tiny_config, out)
    assert len(pd.read_csv(os.path.join(out, 'log.csv'))) == 1


def test_load_student(tiny_config, tmp_path):
    out = str(tmp_path / 'run')
    curriculum_loop(tiny_config, out)
    bundle, cfg = load_student(os.path.join(out, 'checkpoint.txt'))
    assert cfg.resolved() == tiny_config.resolved()
    assert bundle.policy_opt.step_count > 0
    again = evaluate_hard(bundle, cfg['eval.seed'], cfg['eval.episodes'], cfg.maze())
    assert again == pytest.approx(ExperimentLog.load(os.path.join(out, 'log.csv')).last_eval())
