import math

import pandas as pd

from utils import StdReturn


class ExperimentLogException(Exception):
    pass


SCHEMA_VERSION = 1


class ExperimentLog:
    '''
    Per-iteration training records backed by a pandas DataFrame.

    The CSV written by save() has a header row and one row per iteration,
    with the columns of 'headers()' in that order. Columns that don't apply
    to an iteration (evaluation between cadence points, teacher losses under
    uniform spawning) are left empty.
    '''

    def __init__(self, df: pd.DataFrame = None) -> None:
        if df is None:
            self._df = pd.DataFrame(columns=ExperimentLog.headers())
        else:
            if df.columns.values.tolist() != ExperimentLog.headers():
                raise ExperimentLogException(
                    "Exception: experiment log is corrupted. \n"
                    "\n"
                    "  Expected headers:\n"
                    "  {}\n"
                    "\n"
                    "  Existing headers:\n"
                    "  {}\n"
                    "\n".format(ExperimentLog.headers(), df.columns.values.tolist()))
            self._df = df.reset_index(drop=True)

    @staticmethod
    def headers() -> list:
        '''Column schema, version SCHEMA_VERSION'''
        return ['iteration',
                'p_easy',
                'p_hard',
                'p_impossible',
                'mean_teacher_reward',
                'mean_student_return',
                'policy_loss',
                'value_loss',
                'entropy',
                'clone_kl',
                'teacher_policy_loss',
                'teacher_value_loss',
                'teacher_entropy',
                'hard_eval_return'
                ]

    @property
    def df(self):
        return self._df.copy()

    @df.setter
    def df(self, value):
        raise ExperimentLogException('The log DataFrame can\'t be directly modified.')

    def __len__(self) -> int:
        return len(self._df)

    def add(self, row: dict) -> None:
        '''
        Appends one iteration record. Missing optional columns are stored as
        NaN; the difficulty probabilities must form a distribution.
        '''
        unknown = set(row) - set(ExperimentLog.headers())
        if unknown:
            raise ExperimentLogException("Unknown log columns: {}".format(sorted(unknown)))
        for required in ('iteration', 'p_easy', 'p_hard', 'p_impossible'):
            if required not in row:
                raise ExperimentLogException("Log row is missing '{}'".format(required))
        total = row['p_easy'] + row['p_hard'] + row['p_impossible']
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ExperimentLogException(
                "Difficulty probabilities sum to {}, not 1".format(total))

        record = {h: row.get(h, float('nan')) for h in ExperimentLog.headers()}
        new = pd.DataFrame([record], columns=ExperimentLog.headers())
        self._df = new if self._df.empty else pd.concat([self._df, new], ignore_index=True)

    def last(self) -> dict:
        if self._df.empty:
            raise ExperimentLogException('The log is empty')
        return self._df.iloc[-1].to_dict()

    def last_eval(self) -> float:
        '''Most recent hard-environment evaluation return, NaN if none yet.'''
        col = self._df['hard_eval_return'].dropna()
        return float(col.iloc[-1]) if len(col) else float('nan')

    def search(self, start: int = None, end: int = None, columns: list = None) -> pd.DataFrame:
        '''
        Rows with start <= iteration < end (either bound may be omitted),
        optionally restricted to 'columns'.
        '''
        df = self._df
        if start is not None:
            df = df[df['iteration'] >= start]
        if end is not None:
            df = df[df['iteration'] < end]
        return df[columns].copy() if columns else df.copy()

    def mean_over_fraction(self, column: str, first: float = None, last: float = None) -> float:
        '''
        Mean of 'column' over the first or the last fraction of the rows, e.g.
        last=1/3 for the final third of training.
        '''
        n = len(self._df)
        if n == 0:
            raise ExperimentLogException('The log is empty')
        if first is not None:
            rows = self._df.iloc[:max(1, int(round(n * first)))]
        elif last is not None:
            rows = self._df.iloc[n - max(1, int(round(n * last))):]
        else:
            rows = self._df
        return float(rows[column].astype(float).mean())

    def save(self, path: str) -> StdReturn:

        r = StdReturn(message='Experiment log successfully saved')
        r.details = path

        try:
            self._df.to_csv(path, index=False, float_format='%.10g')
        except Exception as e:
            r.success = False
            r.message = 'Experiment log could not be saved.'
            r.details = 'Method: ExperimentLog.save; exception: {}'.format(e)

        return r

    @classmethod
    def load(cls, path: str) -> 'ExperimentLog':
        try:
            df = pd.read_csv(path)
        except FileNotFoundError:
            raise ExperimentLogException("No experiment log at '{}'".format(path))
        return cls(df)
