'''
Replay files: one evaluation episode stored as its maze line plus the
actions taken, so it can be re-simulated and printed frame by frame.

    mazecurric-replay 1
    maze 6x6;h=...;v=...;agent=r,c;box=r,c;ramp=r,c
    episode_length 24
    stochastic 0
    reward_flag 1
    actions 3 3 1 10 ...
'''
from dataclasses import dataclass, field

from maze import (Action, MazeException, MazeLayout, MazeTask, SpawnSpec, decode_instance,
                  encode_instance, initial_state, render_ascii)
from utils import StdReturn


FORMAT_VERSION = 1
_MAGIC = 'mazecurric-replay'


class ReplayException(Exception):
    pass


@dataclass
class Replay:
    layout: MazeLayout
    spawn: SpawnSpec
    episode_length: int
    stochastic: bool = False
    reward_flag: int = 1
    actions: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.actions) > self.episode_length:
            raise ReplayException("{} actions don't fit an episode of length {}".format(
                len(self.actions), self.episode_length))

    def task(self) -> MazeTask:
        return MazeTask(self.layout, self.spawn, self.episode_length, self.stochastic)

    def frames(self) -> list:
        '''
        Re-simulates the episode; one text frame for the start and one after
        each action, each headed by the step, the action and the return so far.
        '''
        task = self.task()
        state = initial_state(self.spawn, self.reward_flag)
        total = 0.0
        out = ['t=0 start\n' + render_ascii(self.layout, state)]
        for a in self.actions:
            try:
                state, r = task.step(state, a)
            except MazeException as e:
                raise ReplayException("Replay does not re-simulate: {}".format(e))
            total += r
            out.append('t={} {} return={:g}\n'.format(state.t, Action(a).name, total)
                       + render_ascii(self.layout, state))
        return out

    def total_return(self) -> float:
        task = self.task()
        state = initial_state(self.spawn, self.reward_flag)
        total = 0.0
        for a in self.actions:
            state, r = task.step(state, a)
            total += r
        return total

    def save(self, path: str) -> StdReturn:
        r = StdReturn(message='Replay saved', details=path)
        lines = ['{} {}'.format(_MAGIC, FORMAT_VERSION),
                 'maze ' + encode_instance(self.layout, self.spawn),
                 'episode_length {}'.format(self.episode_length),
                 'stochastic {}'.format(1 if self.stochastic else 0),
                 'reward_flag {}'.format(self.reward_flag),
                 'actions ' + ' '.join(str(int(a)) for a in self.actions)]
        try:
            with open(path, 'w') as f:
                f.write('\n'.join(lines) + '\n')
        except OSError as e:
            r.success = False
            r.message = 'Replay could not be saved'
            r.details = 'Method: Replay.save; exception: {}'.format(e)
        return r

    @classmethod
    def load(cls, path: str) -> 'Replay':
        try:
            with open(path, 'r') as f:
                lines = [ln.rstrip('\n') for ln in f if ln.strip() != '']
        except OSError as e:
            raise ReplayException("Can't read replay '{}': {}".format(path, e))

        if not lines or lines[0].split() != [_MAGIC, str(FORMAT_VERSION)]:
            raise ReplayException("'{}' is not a version {} replay".format(path, FORMAT_VERSION))
        fields = {}
        for ln in lines[1:]:
            key, _, value = ln.partition(' ')
            fields[key] = value.strip()
        try:
            layout, spawn = decode_instance(fields['maze'])
            if spawn is None:
                raise ReplayException("Replay '{}' has no spawn".format(path))
            actions = [int(a) for a in fields.get('actions', '').split()]
            for a in actions:
                Action(a)
            return cls(layout, spawn, int(fields['episode_length']),
                       fields.get('stochastic', '0') == '1', int(fields.get('reward_flag', '1')),
                       actions)
        except (KeyError, ValueError, MazeException) as e:
            raise ReplayException("Malformed replay '{}': {}".format(path, e))
