import logging
from datetime import datetime

import numpy as np
from pythonjsonlogger import jsonlogger


class UtilsException(Exception):
    pass


class StdReturn:
    '''
    Structure to keep the results of file and run operations consistent
    '''

    def __init__(self, success: bool = True, message: str = None, details: str = None) -> None:
        self.success = success
        self.message = message
        self.details = details

    @property
    def success(self):
        return self._success

    @success.setter
    def success(self, value):
        if value is True or value is False:
            self._success = value
        else:
            raise UtilsException('"success" accepts only "True" or "False"')

    def __str__(self) -> str:
        return (
            "Success: {}\n"
            "Message: {}\n"
            "Details: {}").format(self.success, self.message, self.details)

    def raise_for_failure(self, exception: type = UtilsException) -> 'StdReturn':
        '''Raises 'exception' with message and details when the operation failed.'''
        if not self.success:
            raise exception('{} ({})'.format(self.message, self.details))
        return self


def datetime_for_filename() -> str:
    return datetime.now().strftime(('%Y-%m-%d_%H-%M-%S'))


def setup_logging(level: str = 'INFO', json_path: str = None) -> None:
    '''
    Configures the root logger once: console output and, optionally, a
    JSON-lines file where each record carries its 'extra' fields.
    '''
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)

    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise UtilsException("Unknown log level '{}'".format(level))
    root.setLevel(numeric)

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(
        '%(asctime)s %(levelname)s %(name)s: %(message)s'))
    root.addHandler(console)

    if json_path is not None:
        fh = logging.FileHandler(json_path, mode='w')
        fh.setFormatter(jsonlogger.JsonFormatter(
            '%(asctime)s %(levelname)s %(name)s %(message)s'))
        root.addHandler(fh)


def seed_streams(seed: int, names: list) -> dict:
    '''
    Independent numpy generators, one per name, all derived from one seed.

    The mapping of name to stream depends only on the position of the name in
    'names', so callers must keep the list order fixed across versions.
    '''
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}
