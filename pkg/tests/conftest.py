import numpy as np
import pytest

from config import Config
from maze import MazeLayout


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_rooms():
    '''
    3x4 grid split by a vertical wall between columns 1 and 2:

        +-------+
        |. .|. .|
        |. .|. .|
        |. .|. .|
        +-------+
    '''
    v = np.zeros((3, 3), dtype=bool)
    v[:, 1] = True
    return MazeLayout(3, 4, v_walls=v)


@pytest.fixture
def tiny_config():
    return Config({
        'env.preset': 'tiny',
        'run.seed': 7,
        'run.iterations': 2,
        'student.hidden': '8',
        'teacher.hidden': '16',
        'student.batch_episodes': 4,
        'student.minibatch': 2,
        'student.epochs': 2,
        'teacher.minibatch': 4,
        'teacher.epochs': 2,
        'eval.every': 1,
        'eval.episodes': 3,
        'log.window': 8,
    })
