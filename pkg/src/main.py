import glob
import os
import sys

import click
import pandas as pd

from config import Config, ConfigException
from experiment_log import ExperimentLogException
from harness import (HarnessException, PlannerController, curriculum_loop, evaluate_hard,
                     load_student)
from replays import Replay, ReplayException
from tensor import TensorException
from utils import datetime_for_filename, setup_logging


def _load_config(path: str, seed: int = None) -> Config:
    try:
        cfg = Config.from_file(path)
        if seed is not None:
            cfg.set('run.seed', seed)
    except ConfigException as e:
        raise click.ClickException("{}: {}".format(path, e))
    return cfg


def _train(cfg: Config, out: str) -> dict:
    try:
        log = curriculum_loop(cfg, out)
    except (HarnessException, ExperimentLogException) as e:
        raise click.ClickException(str(e))
    return log.last() if len(log) else {}


@click.group()
def cli():
    '''Teacher-driven curricula for doorless maze students.'''


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Config file with section.key = value lines.')
@click.option('--seed', type=int, default=None, help='Overrides run.seed.')
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help='Output directory (default: runs/<config>_<time>).')
@click.option('--log-json', is_flag=True, help='Also write log.jsonl to the output directory.')
def train(config_path, seed, out, log_json):
    '''Train a student under a teacher and write log, checkpoints and a replay.'''
    cfg = _load_config(config_path, seed)
    if out is None:
        stem = os.path.splitext(os.path.basename(config_path))[0]
        out = os.path.join('runs', '{}_{}'.format(stem, datetime_for_filename()))
    os.makedirs(out, exist_ok=True)
    setup_logging(cfg['log.level'], os.path.join(out, 'log.jsonl') if log_json else None)

    last = _train(cfg, out)
    click.echo('Run written to {}'.format(out))
    if last:
        click.echo('Final P(easy/hard/impossible): {:.3f} / {:.3f} / {:.3f}'.format(
            last['p_easy'], last['p_hard'], last['p_impossible']))
        click.echo('Final hard-environment return: {:.4f}'.format(last['hard_eval_return']))


@cli.command(name='eval')
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--episodes', required=True, type=click.IntRange(min=1))
@click.option('--seed', type=int, default=None, help='Evaluation seed (default: eval.seed of the run).')
@click.option('--oracle', is_flag=True, help='Play the exact optimum instead of the student.')
def evaluate(checkpoint, episodes, seed, oracle):
    '''Mean greedy return on uniformly sampled Hard environments.'''
    try:
        bundle, cfg = load_student(checkpoint)
    except (TensorException, ConfigException, HarnessException) as e:
        raise click.ClickException(str(e))
    controller = PlannerController() if oracle else bundle
    seed = cfg['eval.seed'] if seed is None else seed
    try:
        mean = evaluate_hard(controller, seed, episodes, cfg.maze())
    except HarnessException as e:
        raise click.ClickException(str(e))
    click.echo('Mean hard-environment return: {:.4f}'.format(mean))


@cli.command()
@click.option('--configs', 'configs_dir', required=True, type=click.Path(exists=True, file_okay=False))
@click.option('--seeds', default='0,1,2', help='Comma separated run seeds.')
@click.option('--out', type=click.Path(file_okay=False), default=None)
def sweep(configs_dir, seeds, out):
    '''Every *.cfg in a directory, once per seed, one after the other.'''
    try:
        seed_list = [int(s) for s in seeds.split(',') if s.strip() != '']
    except ValueError:
        raise click.BadParameter("'{}' is not a comma separated list of integers".format(seeds),
                                 param_hint='--seeds')
    paths = sorted(glob.glob(os.path.join(configs_dir, '*.cfg')))
    if not paths:
        raise click.ClickException("No *.cfg files in '{}'".format(configs_dir))
    out = out or os.path.join('runs', 'sweep_{}'.format(datetime_for_filename()))
    os.makedirs(out, exist_ok=True)
    setup_logging('WARNING')

    rows = []
    for path in paths:
        stem = os.path.splitext(os.path.basename(path))[0]
        for s in seed_list:
            cfg = _load_config(path, s)
            run_dir = os.path.join(out, stem, 'seed{}'.format(s))
            click.echo('{} seed {} -> {}'.format(stem, s, run_dir))
            last = _train(cfg, run_dir)
            rows.append({'config': stem, 'seed': s,
                         'p_easy': last.get('p_easy'), 'p_hard': last.get('p_hard'),
                         'p_impossible': last.get('p_impossible'),
                         'hard_eval_return': last.get('hard_eval_return')})

    summary = pd.DataFrame(rows, columns=['config', 'seed', 'p_easy', 'p_hard', 'p_impossible',
                                          'hard_eval_return'])
    summary.to_csv(os.path.join(out, 'summary.csv'), index=False, float_format='%.10g')
    click.echo(summary.to_string(index=False))


@cli.command()
@click.option('--replay', 'replay_path', required=True, type=click.Path(exists=True, dir_okay=False))
def inspect(replay_path):
    '''Print a replay as ASCII frames.'''
    try:
        frames = Replay.load(replay_path).frames()
    except ReplayException as e:
        raise click.ClickException(str(e))
    for frame in frames:
        click.echo(frame)
        click.echo('')


def run_cli(argv=None) -> int:
    '''Runs the command line and returns its exit code instead of exiting.'''
    try:
        rv = cli.main(args=argv, prog_name='mazecurric', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        click.echo('Aborted!', err=True)
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(run_cli())
