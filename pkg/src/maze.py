'''
Doorless grid mazes with a single movable ramp.

Walls live on edges between orthogonally adjacent cells. Rooms are the
connected components of the open edges, so every edge between two rooms is a
wall. The only way across a wall is to climb it while carrying the ramp; the
ramp stays behind on the cell the agent climbed from.
'''
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np


class MazeException(Exception):
    pass


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    PICK_UP = 4
    DROP = 5
    CLIMB_UP = 6
    CLIMB_DOWN = 7
    CLIMB_LEFT = 8
    CLIMB_RIGHT = 9
    STAY = 10


N_ACTIONS = len(Action)

# Direction index shared by moves, climbs and the observation wall bits.
_DIRS = [(-1, 0), (1, 0), (0, -1), (0, 1)]
_MOVE_DIR = {Action.UP: 0, Action.DOWN: 1, Action.LEFT: 2, Action.RIGHT: 3}
_CLIMB_DIR = {Action.CLIMB_UP: 0, Action.CLIMB_DOWN: 1,
              Action.CLIMB_LEFT: 2, Action.CLIMB_RIGHT: 3}


class Difficulty(Enum):
    EASY = 'easy'
    HARD = 'hard'
    IMPOSSIBLE = 'impossible'


# Occupancy channels
CH_WALL_BELOW = 0
CH_WALL_RIGHT = 1
CH_AGENT = 2
CH_BOX = 3
CH_RAMP = 4
N_CHANNELS = 5

OBS_DIM = 12


class MazeLayout:
    '''
    Stationary maze parameters: grid size and interior wall edges.

    h_walls[r, c] is the edge between (r, c) and (r + 1, c);
    v_walls[r, c] is the edge between (r, c) and (r, c + 1).
    The outer boundary is always closed and is not stored.
    '''

    def __init__(self, height: int, width: int, h_walls=None, v_walls=None) -> None:
        if height < 1 or width < 1:
            raise MazeException("Grid must be at least 1x1, got {}x{}".format(height, width))
        self._height = int(height)
        self._width = int(width)
        self._h_walls = (np.zeros((height - 1, width), dtype=bool) if h_walls is None
                         else np.array(h_walls, dtype=bool))
        self._v_walls = (np.zeros((height, width - 1), dtype=bool) if v_walls is None
                         else np.array(v_walls, dtype=bool))
        if self._h_walls.shape != (height - 1, width) or self._v_walls.shape != (height, width - 1):
            raise MazeException(
                "Wall arrays {} / {} don't fit a {}x{} grid".format(
                    self._h_walls.shape, self._v_walls.shape, height, width))
        self._h_walls.setflags(write=False)
        self._v_walls.setflags(write=False)
        self._room_id, self._room_count = self._label_rooms()

    @property
    def height(self):
        return self._height

    @property
    def width(self):
        return self._width

    @property
    def n_cells(self):
        return self._height * self._width

    @property
    def h_walls(self):
        return self._h_walls

    @property
    def v_walls(self):
        return self._v_walls

    @property
    def room_id(self):
        return self._room_id

    @room_id.setter
    def room_id(self, value):
        raise MazeException('"room_id" is derived from the walls and can\'t be set.')

    @property
    def room_count(self):
        return self._room_count

    def __eq__(self, other) -> bool:
        if not isinstance(other, MazeLayout):
            return NotImplemented
        return (self._height == other._height and self._width == other._width
                and np.array_equal(self._h_walls, other._h_walls)
                and np.array_equal(self._v_walls, other._v_walls))

    def __hash__(self) -> int:
        return hash((self._height, self._width,
                     self._h_walls.tobytes(), self._v_walls.tobytes()))

    def in_grid(self, cell: tuple) -> bool:
        return 0 <= cell[0] < self._height and 0 <= cell[1] < self._width

    def neighbor(self, cell: tuple, d: int) -> tuple:
        return (cell[0] + _DIRS[d][0], cell[1] + _DIRS[d][1])

    def has_wall(self, cell: tuple, d: int) -> bool:
        '''True if an interior wall edge lies on side 'd' of 'cell'.'''
        r, c = cell
        n = self.neighbor(cell, d)
        if not self.in_grid(n):
            return False
        if d == 0:
            return bool(self._h_walls[r - 1, c])
        if d == 1:
            return bool(self._h_walls[r, c])
        if d == 2:
            return bool(self._v_walls[r, c - 1])
        return bool(self._v_walls[r, c])

    def can_move(self, cell: tuple, d: int) -> bool:
        return self.in_grid(self.neighbor(cell, d)) and not self.has_wall(cell, d)

    def room_of(self, cell: tuple) -> int:
        return int(self._room_id[cell[0], cell[1]])

    def room_sizes(self) -> np.ndarray:
        return np.bincount(self._room_id.ravel(), minlength=self._room_count)

    def cells(self) -> list:
        return [(r, c) for r in range(self._height) for c in range(self._width)]

    def cell_index(self, cell: tuple) -> int:
        return cell[0] * self._width + cell[1]

    def index_cell(self, i: int) -> tuple:
        return (int(i) // self._width, int(i) % self._width)

    def _label_rooms(self) -> tuple:
        # Every cell starts with its own row-major index and takes the minimum
        # over open edges until nothing changes, leaving each room labelled by
        # its first cell. Ranking those labels numbers the rooms in row-major
        # order of their first cell, so equal wall sets get equal labels.
        labels = np.arange(self.n_cells, dtype=np.int64).reshape(self._height, self._width)
        open_down = ~self._h_walls
        open_right = ~self._v_walls
        while True:
            new = labels.copy()
            down = np.minimum(labels[:-1, :], labels[1:, :])
            new[:-1, :] = np.where(open_down, np.minimum(new[:-1, :], down), new[:-1, :])
            new[1:, :] = np.where(open_down, np.minimum(new[1:, :], down), new[1:, :])
            right = np.minimum(labels[:, :-1], labels[:, 1:])
            new[:, :-1] = np.where(open_right, np.minimum(new[:, :-1], right), new[:, :-1])
            new[:, 1:] = np.where(open_right, np.minimum(new[:, 1:], right), new[:, 1:])
            if np.array_equal(new, labels):
                break
            labels = new
        firsts, room_id = np.unique(labels.ravel(), return_inverse=True)
        room_id = room_id.reshape(self._height, self._width).astype(np.int64)
        room_id.setflags(write=False)
        return room_id, len(firsts)


@dataclass(frozen=True)
class SpawnSpec:
    agent_cell: tuple
    box_cell: tuple
    ramp_cell: tuple

    def __post_init__(self):
        cells = [tuple(int(v) for v in c) for c in (self.agent_cell, self.box_cell, self.ramp_cell)]
        object.__setattr__(self, 'agent_cell', cells[0])
        object.__setattr__(self, 'box_cell', cells[1])
        object.__setattr__(self, 'ramp_cell', cells[2])
        if len(set(cells)) != 3:
            raise MazeException("Spawn cells must be distinct, got {}".format(cells))

    def validate(self, layout: MazeLayout) -> None:
        for c in (self.agent_cell, self.box_cell, self.ramp_cell):
            if not layout.in_grid(c):
                raise MazeException(
                    "Cell {} is outside the {}x{} grid".format(c, layout.height, layout.width))


@dataclass(frozen=True)
class EnvState:
    agent_cell: tuple
    ramp_cell: tuple
    carrying_ramp: bool
    box_cell: tuple
    t: int = 0
    reward_flag: int = 1


def generate_layout(seed, height: int, width: int, target_rooms: int) -> MazeLayout:
    '''
    Recursive binary splitting into 'target_rooms' wall-separated rectangles.

    The rectangle to split is drawn with probability proportional to its area
    among rectangles larger than one cell; it is cut across its longer side
    (random side on ties) at an index drawn uniformly from the central half.
    '''
    if target_rooms < 1:
        raise MazeException("target_rooms must be at least 1, got {}".format(target_rooms))
    if height < 1 or width < 1 or height * width < 4 * target_rooms:
        raise MazeException(
            "A {}x{} grid can't hold {} rooms (needs at least 4 cells per room)".format(
                height, width, target_rooms))

    rng = np.random.default_rng(seed)
    h_walls = np.zeros((height - 1, width), dtype=bool)
    v_walls = np.zeros((height, width - 1), dtype=bool)
    rects = [(0, 0, height, width)]

    while len(rects) < target_rooms:
        areas = np.array([h * w if h * w > 1 else 0 for (_, _, h, w) in rects], dtype=np.float64)
        i = int(rng.choice(len(rects), p=areas / areas.sum()))
        r0, c0, h, w = rects[i]

        if h > w:
            axis = 0
        elif w > h:
            axis = 1
        else:
            axis = int(rng.integers(2))

        span = h if axis == 0 else w
        lo = max(1, span // 4)
        s = int(rng.integers(lo, span - lo + 1))

        if axis == 0:
            h_walls[r0 + s - 1, c0:c0 + w] = True
            rects[i] = (r0, c0, s, w)
            rects.append((r0 + s, c0, h - s, w))
        else:
            v_walls[r0:r0 + h, c0 + s - 1] = True
            rects[i] = (r0, c0, h, s)
            rects.append((r0, c0 + s, h, w - s))

    return MazeLayout(height, width, h_walls, v_walls)


def uniform_spawn(seed, layout: MazeLayout) -> SpawnSpec:
    if layout.n_cells < 3:
        raise MazeException('Spawning needs at least 3 cells')
    rng = np.random.default_rng(seed)
    idx = rng.choice(layout.n_cells, size=3, replace=False)
    return SpawnSpec(*(layout.index_cell(i) for i in idx))


def classify_difficulty(layout: MazeLayout, spawn: SpawnSpec) -> Difficulty:
    agent_room = layout.room_of(spawn.agent_cell)
    if agent_room == layout.room_of(spawn.box_cell):
        return Difficulty.EASY
    if agent_room == layout.room_of(spawn.ramp_cell):
        return Difficulty.HARD
    return Difficulty.IMPOSSIBLE


def proximity_reward(layout: MazeLayout, agent_cell: tuple, box_cell: tuple) -> float:
    '''1 if the agent is within Chebyshev distance 1 of the box and in its room.'''
    if layout.room_of(agent_cell) != layout.room_of(box_cell):
        return 0.0
    near = max(abs(agent_cell[0] - box_cell[0]), abs(agent_cell[1] - box_cell[1])) <= 1
    return 1.0 if near else 0.0


def stochastic_reward(raw_reward: float, b: int) -> float:
    return 2.0 * raw_reward if b == 1 else 0.0


def initial_state(spawn: SpawnSpec, reward_flag: int = 1) -> EnvState:
    return EnvState(agent_cell=spawn.agent_cell, ramp_cell=spawn.ramp_cell,
                    carrying_ramp=False, box_cell=spawn.box_cell, t=0,
                    reward_flag=int(reward_flag))


def step(state: EnvState, layout: MazeLayout, action: int,
         episode_length: int, stochastic: bool = False) -> tuple:
    '''
    Advances one time step.

    The reward belongs to the state the action is taken in, so an episode
    collects R(s_0) + ... + R(s_{L-1}).

    Returns
    -------
    (EnvState, reward)
    '''
    if state.t >= episode_length:
        raise MazeException(
            "Episode has ended (t={}, episode_length={})".format(state.t, episode_length))
    try:
        action = Action(int(action))
    except ValueError:
        raise MazeException("Unknown action {}".format(action))

    raw = proximity_reward(layout, state.agent_cell, state.box_cell)
    reward = stochastic_reward(raw, state.reward_flag) if stochastic else raw

    agent, ramp, carrying = state.agent_cell, state.ramp_cell, state.carrying_ramp

    if action in _MOVE_DIR:
        d = _MOVE_DIR[action]
        if layout.can_move(agent, d):
            agent = layout.neighbor(agent, d)
            if carrying:
                ramp = agent
    elif action == Action.PICK_UP:
        if agent == ramp:
            carrying = True
    elif action == Action.DROP:
        carrying = False
    elif action in _CLIMB_DIR:
        d = _CLIMB_DIR[action]
        if carrying and layout.has_wall(agent, d):
            ramp = agent
            agent = layout.neighbor(agent, d)
            carrying = False

    return replace(state, agent_cell=agent, ramp_cell=ramp, carrying_ramp=carrying,
                   t=state.t + 1), reward


def _norm(layout: MazeLayout, cell: tuple) -> list:
    return [cell[0] / (layout.height - 1) if layout.height > 1 else 0.0,
            cell[1] / (layout.width - 1) if layout.width > 1 else 0.0]


def observe(state: EnvState, layout: MazeLayout, episode_length: int) -> np.ndarray:
    '''
    Agent, box and ramp cells scaled to [0, 1], carrying flag, t / L, and one
    bit per side of the agent's cell (up, down, left, right) that is closed,
    whether by an interior wall or by the outer boundary. Only interior walls
    can be climbed; the position features tell the two apart.
    '''
    walls = [0.0 if layout.can_move(state.agent_cell, d) else 1.0 for d in range(4)]
    return np.array(
        _norm(layout, state.agent_cell) + _norm(layout, state.box_cell)
        + _norm(layout, state.ramp_cell)
        + [1.0 if state.carrying_ramp else 0.0, state.t / episode_length]
        + walls, dtype=np.float64)


def render_occupancy(layout: MazeLayout, spawn: SpawnSpec) -> np.ndarray:
    '''C x H x W one-hot map: wall below, wall right, agent, box, ramp.'''
    occ = np.zeros((N_CHANNELS, layout.height, layout.width), dtype=np.float64)
    occ[CH_WALL_BELOW, :-1, :] = layout.h_walls
    occ[CH_WALL_RIGHT, :, :-1] = layout.v_walls
    occ[(CH_AGENT,) + spawn.agent_cell] = 1.0
    occ[(CH_BOX,) + spawn.box_cell] = 1.0
    occ[(CH_RAMP,) + spawn.ramp_cell] = 1.0
    return occ


def layout_occupancy(layout: MazeLayout, agent_cell: tuple = None) -> np.ndarray:
    '''
    What the teacher sees before placing anything: the two wall channels and
    the agent channel, which stays empty unless the agent is already fixed.
    '''
    occ = np.zeros((3, layout.height, layout.width), dtype=np.float64)
    occ[CH_WALL_BELOW, :-1, :] = layout.h_walls
    occ[CH_WALL_RIGHT, :, :-1] = layout.v_walls
    if agent_cell is not None:
        occ[(CH_AGENT,) + tuple(agent_cell)] = 1.0
    return occ


def decode_occupancy(occ: np.ndarray) -> tuple:
    '''Inverse of render_occupancy.'''
    occ = np.asarray(occ)
    if occ.ndim != 3 or occ.shape[0] != N_CHANNELS:
        raise MazeException("Expected a {} x H x W map, got {}".format(N_CHANNELS, occ.shape))
    layout = MazeLayout(occ.shape[1], occ.shape[2],
                        occ[CH_WALL_BELOW, :-1, :] > 0.5, occ[CH_WALL_RIGHT, :, :-1] > 0.5)
    cells = []
    for ch in (CH_AGENT, CH_BOX, CH_RAMP):
        hits = np.argwhere(occ[ch] > 0.5)
        if len(hits) != 1:
            raise MazeException("Channel {} must mark exactly one cell".format(ch))
        cells.append(tuple(int(v) for v in hits[0]))
    return layout, SpawnSpec(*cells)


class MazeConfig:
    '''Maze size and episode settings of a run, read-only once built.'''

    def __init__(self, height: int = 12, width: int = 12, rooms: int = 6,
                 episode_length: int = 64, stochastic: bool = False) -> None:
        if episode_length < 1:
            raise MazeException("episode_length must be positive, got {}".format(episode_length))
        if height * width < 4 * rooms:
            raise MazeException("A {}x{} grid can't hold {} rooms".format(height, width, rooms))
        self._height = int(height)
        self._width = int(width)
        self._rooms = int(rooms)
        self._episode_length = int(episode_length)
        self._stochastic = bool(stochastic)

    @property
    def height(self):
        return self._height

    @height.setter
    def height(self, value):
        raise MazeException('"height" can\'t be modified; build a new MazeConfig')

    @property
    def width(self):
        return self._width

    @width.setter
    def width(self, value):
        raise MazeException('"width" can\'t be modified; build a new MazeConfig')

    @property
    def rooms(self):
        return self._rooms

    @rooms.setter
    def rooms(self, value):
        raise MazeException('"rooms" can\'t be modified; build a new MazeConfig')

    @property
    def episode_length(self):
        return self._episode_length

    @episode_length.setter
    def episode_length(self, value):
        raise MazeException('"episode_length" can\'t be modified; build a new MazeConfig')

    @property
    def stochastic(self):
        return self._stochastic

    @stochastic.setter
    def stochastic(self, value):
        raise MazeException('"stochastic" can\'t be modified; build a new MazeConfig')

    def _fields(self) -> tuple:
        return (self._height, self._width, self._rooms, self._episode_length, self._stochastic)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MazeConfig):
            return NotImplemented
        return self._fields() == other._fields()

    def __repr__(self) -> str:
        return 'MazeConfig(height={}, width={}, rooms={}, episode_length={}, stochastic={})'.format(
            *self._fields())


@dataclass
class MazeTask:
    '''One environment instance Z = (X, Y) with its episode settings.'''
    layout: MazeLayout
    spawn: SpawnSpec
    episode_length: int
    stochastic: bool = False

    def reset(self, rng: np.random.Generator = None) -> EnvState:
        flag = 1
        if self.stochastic:
            flag = int(np.random.default_rng(rng).random() < 0.5)
        return initial_state(self.spawn, flag)

    def step(self, state: EnvState, action: int) -> tuple:
        return step(state, self.layout, action, self.episode_length, self.stochastic)

    def observe(self, state: EnvState) -> np.ndarray:
        return observe(state, self.layout, self.episode_length)

    @property
    def difficulty(self) -> Difficulty:
        return classify_difficulty(self.layout, self.spawn)


# Text codec: one line per instance, e.g.
#   3x4;h=00010100;v=000000000;agent=0,0;box=2,3;ramp=1,1
# h bits are h_walls row-major ((H-1) x W), v bits are v_walls row-major
# (H x (W-1)). The spawn fields may be omitted for layout-only lines.

def _bits(a: np.ndarray) -> str:
    return ''.join('1' if v else '0' for v in a.ravel())


def encode_instance(layout: MazeLayout, spawn: SpawnSpec = None) -> str:
    parts = ['{}x{}'.format(layout.height, layout.width),
             'h=' + _bits(layout.h_walls), 'v=' + _bits(layout.v_walls)]
    if spawn is not None:
        for name, cell in (('agent', spawn.agent_cell), ('box', spawn.box_cell),
                           ('ramp', spawn.ramp_cell)):
            parts.append('{}={},{}'.format(name, cell[0], cell[1]))
    return ';'.join(parts)


def decode_instance(line: str) -> tuple:
    try:
        fields = line.strip().split(';')
        height, width = (int(v) for v in fields[0].split('x'))
        kv = dict(f.split('=', 1) for f in fields[1:])
        h_bits = np.array([c == '1' for c in kv['h']], dtype=bool)
        v_bits = np.array([c == '1' for c in kv['v']], dtype=bool)
        layout = MazeLayout(height, width, h_bits.reshape(height - 1, width),
                            v_bits.reshape(height, width - 1))
        spawn = None
        if 'agent' in kv:
            spawn = SpawnSpec(*(tuple(int(v) for v in kv[k].split(','))
                                for k in ('agent', 'box', 'ramp')))
            spawn.validate(layout)
    except (ValueError, KeyError) as e:
        raise MazeException("Malformed maze line '{}': {}".format(line.strip()[:60], e))
    return layout, spawn


def render_ascii(layout: MazeLayout, state: EnvState) -> str:
    '''Text frame: '|' and '-' are walls, A/a agent (a = carrying), B box, R ramp.'''
    def glyph(cell):
        if cell == state.agent_cell:
            return 'a' if state.carrying_ramp else 'A'
        if cell == state.box_cell:
            return 'B'
        if cell == state.ramp_cell:
            return 'R'
        return '.'

    border = '+' + '-' * (2 * layout.width - 1) + '+'
    lines = [border]
    for r in range(layout.height):
        row = '|'
        for c in range(layout.width):
            row += glyph((r, c))
            if c < layout.width - 1:
                row += '|' if layout.v_walls[r, c] else ' '
        lines.append(row + '|')
        if r < layout.height - 1:
            sep = '|'
            for c in range(layout.width):
                sep += '-' if layout.h_walls[r, c] else ' '
                if c < layout.width - 1:
                    sep += ' '
            lines.append(sep + '|')
    lines.append(border)
    return '\n'.join(lines)


# Exact solvers over the reachable state space. Used as oracles and as the
# scripted controller for evaluation checks.

def _key(state: EnvState) -> tuple:
    return (state.agent_cell, state.ramp_cell, state.carrying_ramp)


def reachable_states(task: MazeTask) -> list:
    '''All (agent, ramp, carrying) configurations reachable from the spawn.'''
    start = initial_state(task.spawn)
    seen = {_key(start)}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in Action:
            nxt, _ = step(replace(s, t=0), task.layout, a, 1)
            k = _key(nxt)
            if k not in seen:
                seen.add(k)
                queue.append(nxt)
    return sorted(seen)


class OptimalPlanner:
    '''
    Finite-horizon dynamic programming over the reachable states of a
    deterministic task. q[t][s, a] is the best return from step t.
    '''

    def __init__(self, task: MazeTask) -> None:
        self._task = task
        keys = reachable_states(task)
        self._index = {k: i for i, k in enumerate(keys)}
        n = len(keys)
        self._next = np.zeros((n, N_ACTIONS), dtype=np.int64)
        self._reward = np.zeros(n)
        for k, i in self._index.items():
            s = EnvState(agent_cell=k[0], ramp_cell=k[1], carrying_ramp=k[2],
                         box_cell=task.spawn.box_cell)
            self._reward[i] = proximity_reward(task.layout, s.agent_cell, s.box_cell)
            for a in Action:
                nxt, _ = step(s, task.layout, a, 1)
                self._next[i, a] = self._index[_key(nxt)]

        L = task.episode_length
        self._q = np.zeros((L, n, N_ACTIONS))
        v = np.zeros(n)
        for t in reversed(range(L)):
            self._q[t] = self._reward[:, None] + v[self._next]
            v = self._q[t].max(axis=1)
        self._v0 = v

    @property
    def n_states(self) -> int:
        return len(self._index)

    def max_reward_anywhere(self) -> float:
        return float(self._reward.max()) if len(self._reward) else 0.0

    def optimal_return(self) -> float:
        return float(self._v0[self._index[_key(initial_state(self._task.spawn))]])

    def act(self, state: EnvState) -> int:
        return int(np.argmax(self._q[state.t, self._index[_key(state)]]))


def steps_to_box(layout: MazeLayout, spawn: SpawnSpec) -> int:
    '''
    Fewest moves for the agent to get within Chebyshev distance 1 of the box
    without crossing walls; -1 if the box is in another room.
    '''
    start = spawn.agent_cell
    dist = {start: 0}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if proximity_reward(layout, cell, spawn.box_cell) > 0:
            return dist[cell]
        for d in range(4):
            if layout.can_move(cell, d):
                nb = layout.neighbor(cell, d)
                if nb not in dist:
                    dist[nb] = dist[cell] + 1
                    queue.append(nb)
    return -1
