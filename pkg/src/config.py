from actor_critic import GaeConfig, PpoConfig
from maze import MazeConfig
from utils import StdReturn


class ConfigException(Exception):
    pass


_BOOL = 'bool'
_INTS = 'ints'

# key: (type or tuple of allowed strings, default)
_SCHEMA = {
    'run.seed': (int, 0),
    'run.iterations': (int, 300),

    'env.preset': (('tiny', 'desk', 'large'), 'desk'),
    'env.height': (int, 12),
    'env.width': (int, 12),
    'env.rooms': (int, 6),
    'env.episode_length': (int, 64),
    'env.reward': (('deterministic', 'stochastic'), 'deterministic'),

    'teacher.reward': (('vpe', 'vd', 'pd', 'constant'), 'vd'),
    'teacher.spawn': (('teacher', 'uniform'), 'teacher'),
    'teacher.controls': (('all', 'objects'), 'all'),
    'teacher.hidden': (_INTS, [256, 256]),
    'teacher.learning_rate': (float, 3e-4),
    'teacher.clip_epsilon': (float, 0.2),
    'teacher.entropy_coef': (float, 0.01),
    'teacher.epochs': (int, 4),
    'teacher.minibatch': (int, 64),
    'teacher.value_coef': (float, 0.5),
    'teacher.normalize_advantages': (_BOOL, False),
    'teacher.normalize_rewards': (_BOOL, False),

    'student.hidden': (_INTS, [64, 64]),
    'student.learning_rate': (float, 3e-4),
    'student.clone_learning_rate': (float, 3e-4),
    'student.clip_epsilon': (float, 0.2),
    'student.entropy_coef': (float, 0.01),
    'student.epochs': (int, 4),
    'student.minibatch': (int, 16),
    'student.value_coef': (float, 0.5),
    'student.normalize_advantages': (_BOOL, True),
    'student.gamma': (float, 0.99),
    'student.lambda': (float, 0.95),
    'student.batch_episodes': (int, 64),
    'student.rollouts_per_env': (int, 1),

    'eval.every': (int, 25),
    'eval.episodes': (int, 100),
    'eval.seed': (int, 1000003),

    'log.window': (int, 64),
    'log.level': (('DEBUG', 'INFO', 'WARNING', 'ERROR'), 'INFO'),
}

# Size presets. Keys written explicitly in a config file win over these.
PRESETS = {
    # a few CPU minutes per run; the behavioural tests train at this size
    'tiny': {
        'env.height': 6, 'env.width': 6, 'env.rooms': 3, 'env.episode_length': 24,
        'student.gamma': 0.97, 'student.hidden': [32, 32], 'teacher.hidden': [64],
        'student.learning_rate': 1e-3, 'student.clone_learning_rate': 1e-3,
        'teacher.learning_rate': 1e-3,
        'student.batch_episodes': 32, 'student.minibatch': 8, 'teacher.minibatch': 32,
        'eval.episodes': 20, 'log.window': 32,
    },
    'desk': {
        'env.height': 12, 'env.width': 12, 'env.rooms': 6, 'env.episode_length': 64,
        'student.gamma': 0.99, 'student.hidden': [64, 64], 'teacher.hidden': [256, 256],
        'student.batch_episodes': 64, 'student.minibatch': 16, 'teacher.minibatch': 64,
        'eval.episodes': 100, 'log.window': 64,
    },
    'large': {
        'env.height': 30, 'env.width': 30, 'env.rooms': 20, 'env.episode_length': 160,
        'student.gamma': 0.998, 'student.hidden': [256, 256], 'teacher.hidden': [256, 256],
        'student.batch_episodes': 64, 'student.minibatch': 16, 'teacher.minibatch': 64,
        'eval.episodes': 100, 'log.window': 64,
    },
}


def _parse(key: str, value):
    kind = _SCHEMA[key][0]
    try:
        if isinstance(kind, tuple):
            text = str(value).strip()
            match = [k for k in kind if k.lower() == text.lower()]
            if not match:
                raise ValueError("expected one of {}".format(', '.join(kind)))
            return match[0]
        if kind == _BOOL:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text not in ('true', 'false'):
                raise ValueError('expected true or false')
            return text == 'true'
        if kind == _INTS:
            if isinstance(value, str):
                return [int(v) for v in value.split(',') if v.strip() != '']
            return [int(v) for v in value]
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError('expected an integer')
            return int(value)
        return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigException("Invalid value '{}' for config key '{}': {}".format(value, key, e))


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, list):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Config:
    '''
    Run settings keyed 'section.key'.

    A value comes from, in order: an explicit setting, the selected size
    preset, the schema default.
    '''

    def __init__(self, values: dict = None) -> None:
        self._app_name = 'mazecurric'
        self._explicit = {}
        for k, v in (values or {}).items():
            self.set(k, v)

    @classmethod
    def from_lines(cls, lines) -> 'Config':
        cfg = cls()
        for n, raw in enumerate(lines, start=1):
            line = raw.split('#', 1)[0].strip()
            if line == '':
                continue
            key, sep, value = line.partition('=')
            if sep == '':
                raise ConfigException("Line {} is not 'section.key = value': '{}'".format(n, raw.strip()))
            cfg.set(key.strip(), value.strip())
        return cfg

    @classmethod
    def from_file(cls, path: str) -> 'Config':
        with open(path, 'r') as f:
            return cls.from_lines(f.readlines())

    @property
    def app_name(self):
        return self._app_name

    @app_name.setter
    def app_name(self, value):
        raise ConfigException('"app_name" can\'t be modified')

    @staticmethod
    def defaults() -> dict:
        '''Schema defaults, before any preset is applied.'''
        return {k: v[1] for k, v in _SCHEMA.items()}

    def set(self, key: str, value) -> None:
        if key not in _SCHEMA:
            raise ConfigException("Unknown config key '{}'".format(key))
        self._explicit[key] = _parse(key, value)

    def get(self, key: str):
        if key not in _SCHEMA:
            raise ConfigException("Unknown config key '{}'".format(key))
        if key in self._explicit:
            return self._explicit[key]
        preset = PRESETS[self._explicit.get('env.preset', _SCHEMA['env.preset'][1])]
        if key in preset:
            return preset[key]
        return _SCHEMA[key][1]

    def __getitem__(self, key: str):
        return self.get(key)

    def resolved(self) -> dict:
        return {k: self.get(k) for k in _SCHEMA}

    def lines(self) -> list:
        return ['{} = {}'.format(k, _format(v)) for k, v in self.resolved().items()]

    def save(self, path: str) -> StdReturn:
        r = StdReturn(message='Configuration saved', details=path)
        try:
            with open(path, 'w') as f:
                f.write('\n'.join(self.lines()) + '\n')
        except OSError as e:
            r.success = False
            r.message = 'Configuration could not be saved'
            r.details = 'Method: Config.save; exception: {}'.format(e)
        return r

    def maze(self) -> MazeConfig:
        return MazeConfig(height=self['env.height'], width=self['env.width'],
                          rooms=self['env.rooms'], episode_length=self['env.episode_length'],
                          stochastic=self['env.reward'] == 'stochastic')

    def gae(self) -> GaeConfig:
        return GaeConfig(gamma=self['student.gamma'], lam=self['student.lambda'])

    def _ppo(self, section: str) -> PpoConfig:
        return PpoConfig(clip_epsilon=self[section + '.clip_epsilon'],
                         entropy_coef=self[section + '.entropy_coef'],
                         epochs=self[section + '.epochs'],
                         minibatch=self[section + '.minibatch'],
                         value_coef=self[section + '.value_coef'],
                         learning_rate=self[section + '.learning_rate'],
                         normalize_advantages=self[section + '.normalize_advantages'])

    def student_ppo(self) -> PpoConfig:
        return self._ppo('student')

    def teacher_ppo(self) -> PpoConfig:
        return self._ppo('teacher')
