"""
Command-line interface for dymgnn
"""

import os
import sys
import time
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Tuple

import click
import pandas as pd
from tabulate import tabulate

from dymgnn.checkpoint import load_checkpoint, save_checkpoint
from dymgnn.config import DYMConfig, RunConfig, resolve_run_config, setup_logging
from dymgnn.dataprep import (
    WindowDataset,
    behavioural_columns,
    build_windows,
    ingest_panel,
    prepare_panel,
    read_window_dataset,
    training_fit_end,
    write_window_dataset,
)
from dymgnn.evaluation import evaluate_scores
from dymgnn.exceptions import (
    CheckpointException,
    ConfigException,
    DataException,
    DimensionException,
    LockTimeoutException,
    NumericException,
)
from dymgnn.explain import attention_profile, dependency_export, shapley_attribution
from dymgnn.ledger import RunLedger
from dymgnn.lock_manager import RunLockManager
from dymgnn.manifest import MANIFEST_NAME, RunManifest
from dymgnn.model import ModelConfig, TrainingHyper, bind_config, predict_window, train
from dymgnn.synth import SynthSpec, synth_generate
from dymgnn.utils import atomic_write_text, ensure_directory, format_seconds, safe_json_loads

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_LOCKED = 5

RESOLVED_CONFIG = 'resolved_config.ini'
PANEL_FILE = 'panel.csv'
CHECKPOINT_FILE = 'checkpoint.dymgnn'


def exit_code(error: BaseException) -> int:
    if isinstance(error, ConfigException):
        return EXIT_CONFIG
    if isinstance(error, (DataException, DimensionException, CheckpointException)):
        return EXIT_DATA
    if isinstance(error, NumericException):
        return EXIT_NUMERIC
    if isinstance(error, LockTimeoutException):
        return EXIT_LOCKED
    return EXIT_FAILURE


def resolve_output(path: str) -> str:
    """Relative output paths live under the configured output root."""
    if os.path.isabs(path):
        return path
    return os.path.join(DYMConfig.OUTPUT_ROOT, path)


def resolve_input(path: str) -> str:
    """Relative inputs are tried against the working directory, then the output root."""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    candidate = os.path.join(DYMConfig.OUTPUT_ROOT, path)
    return candidate if os.path.exists(candidate) else path


def write_csv(frame: pd.DataFrame, path: str, manifest: RunManifest):
    atomic_write_text(path, frame.to_csv(index=False))
    manifest.add_output(path)


def run_command(ctx, command: str, overrides: Dict[str, object],
                body: Callable[[RunConfig, str, RunManifest], str]):
    """
    Resolve settings, lock the output directory, run body and write the manifest.

    body returns the success message. Failures exit with the code mapped from
    the exception.
    """
    try:
        run = resolve_run_config(command, ctx.obj['config'], overrides)
        output = resolve_output(run.require('output'))
        ensure_directory(output)
    except ConfigException as e:
        click.secho(f"✗ Configuration error: {e}", fg='red')
        sys.exit(EXIT_CONFIG)

    manifest = RunManifest(command=command, config=dict(run.values))
    failure: Optional[BaseException] = None
    message = ''
    locked = False
    try:
        with RunLockManager(output).acquire_lock(command):
            locked = True
            resolved = os.path.join(output, RESOLVED_CONFIG)
            run.write(resolved)
            manifest.add_output(resolved)
            message = body(run, output, manifest)
    except Exception as e:
        failure = e
    finally:
        manifest.finish(failure)
        if locked or not isinstance(failure, LockTimeoutException):
            manifest.write(output)

    if failure is not None:
        click.secho(f"✗ {command} failed: {failure}", fg='red')
        sys.exit(exit_code(failure))
    click.secho(f"✓ {message}", fg='green')


@click.group()
@click.option('--config', 'config_file', envvar='DYMGNN_CONFIG', help='INI configuration file')
@click.option('--log-level', help='Logging level (DEBUG, INFO, WARNING ...)')
@click.option('--log-format', help="Logging format string, or 'json'")
@click.pass_context
def cli(ctx, config_file, log_level, log_format):
    """dymgnn: dynamic multilayer graph networks for loan default prediction"""
    ctx.ensure_object(dict)
    try:
        DYMConfig.load_config(config_file, force=True)
        setup_logging(log_level, log_format)
    except ConfigException as e:
        click.secho(f"✗ Configuration error: {e}", fg='red')
        sys.exit(EXIT_CONFIG)
    ctx.obj['config'] = config_file


@cli.command()
@click.option('--output', help='Output directory')
@click.option('--n-loans', type=int, help='Number of loans')
@click.option('--months', type=int, help='Observed months')
@click.option('--start-period', help='First month (YYYY-MM)')
@click.option('--n-areas', type=int, help='Number of two-digit zip areas')
@click.option('--n-companies', type=int, help='Number of lending companies')
@click.option('--base-rate', type=float, help='Target share of defaulting loan-months')
@click.option('--contagion', type=float, help='Weight of delinquent neighbours')
@click.option('--horizon', type=int, help='Default label horizon in months')
@click.option('--seed', type=int, help='Random seed')
@click.option('--signal', type=click.Choice(['full', 'delinquency']), help='Default hazard drivers')
@click.pass_context
def synth(ctx, **options):
    """Generate a synthetic loan panel CSV"""
    def body(run: RunConfig, output: str, manifest: RunManifest) -> str:
        spec = SynthSpec(
            n_loans=run.get_int('n_loans'), months=run.get_int('months'),
            start_period=run.get('start_period'), n_areas=run.get_int('n_areas'),
            n_companies=run.get_int('n_companies'), base_rate=run.get_float('base_rate'),
            contagion=run.get_float('contagion'), horizon=run.get_int('horizon'),
            seed=run.get_int('seed'), signal=run.get('signal'),
        )
        started = time.monotonic()
        frame = synth_generate(spec)
        manifest.time('generate', time.monotonic() - started)
        write_csv(frame, os.path.join(output, PANEL_FILE), manifest)
        return (f"Generated {len(frame)} loan-months for {spec.n_loans} loans "
                f"in {os.path.join(output, PANEL_FILE)}")

    run_command(ctx, 'synth', options, body)


@cli.command()
@click.option('--input', 'input_', help='Panel CSV')
@click.option('--output', help='Window dataset directory')
@click.option('--layers', type=click.Choice(['area', 'company', 'both']), help='Connector layers')
@click.option('--isolate-fraction', type=float, help='Share of nodes isolated per window')
@click.option('--window-len', type=int, help='Snapshots per window')
@click.option('--stride', type=int, help='Months between window starts')
@click.option('--horizon', type=int, help='Label horizon when deriving from default_month')
@click.option('--fit-start', help='First period of the scaling fit range')
@click.option('--fit-end', help='Last period of the scaling fit range')
@click.option('--held-out', type=int,
              help='Trailing windows kept out of the scaling fit when fit_end is blank')
@click.option('--start', help='First period used for windows')
@click.option('--end', help='Last period used for windows')
@click.option('--seed', type=int, help='Isolation seed')
@click.pass_context
def build(ctx, input_, **options):
    """Clean, scale and cut a panel into rolling windows"""
    options['input'] = input_

    def body(run: RunConfig, output: str, manifest: RunManifest) -> str:
        source = resolve_input(run.require('input'))
        manifest.add_input(source)
        started = time.monotonic()
        panel = ingest_panel(source, horizon=run.get_int('horizon'))
        if panel.rejects:
            write_csv(panel.rejects_frame(), os.path.join(output, 'rejects.csv'), manifest)
            click.secho(f"{len(panel.rejects)} rows rejected (see rejects.csv)", fg='yellow')

        fit_end = run.get('fit_end') or training_fit_end(
            panel, run.get_int('held_out'), run.get_int('stride'), run.get('end') or None)
        scaled, spec = prepare_panel(panel, run.get('fit_start') or None, fit_end)
        dataset = build_windows(
            scaled, window_len=run.get_int('window_len'), stride=run.get_int('stride'),
            layers=run.get('layers'), isolate_fraction=run.get_float('isolate_fraction'),
            seed=run.get_int('seed'), start=run.get('start') or None,
            end=run.get('end') or None,
        )
        dataset.spec = spec
        dataset.settings['horizon'] = run.get('horizon')
        write_window_dataset(dataset, output)
        manifest.add_output(output)
        manifest.time('build', time.monotonic() - started)

        rows = dataset.summary_rows()
        if rows:
            click.echo(tabulate([list(r.values()) for r in rows], headers=list(rows[0]),
                                tablefmt='grid'))
        return f"Built {len(dataset)} windows in {output}"

    run_command(ctx, 'build', options, body)


def split_training(run: RunConfig) -> Tuple[WindowDataset, list, object]:
    """
    Training windows and the validation window.

    Without validation_data, the validation window is taken out of the
    training dataset.
    """
    data = read_window_dataset(resolve_input(run.require('train_data')))
    position = run.get_int('validation_window')
    if run.get('validation_data'):
        validation = read_window_dataset(resolve_input(run.get('validation_data')))
        return data, list(data.windows), validation.window(position)

    held_out = data.window(position)
    windows = [w for w in data.windows if w is not held_out]
    if not windows:
        raise DataException("No training windows remain after holding out the validation window")
    return data, windows, held_out


@cli.command('train')
@click.option('--train-data', help='Window dataset directory')
@click.option('--validation-data', help='Window dataset holding the validation window')
@click.option('--validation-window', type=int, help='Validation window position (negative from end)')
@click.option('--output', help='Model directory')
@click.option('--model', help='gat-lstm-att, gcn-gru, static-gat, logreg, mlp ...')
@click.option('--embedding-size', type=int, help='Embedding width')
@click.option('--gnn-depth', type=int, help='Graph layers per snapshot')
@click.option('--gat-heads', type=int, help='Attention heads per GAT layer')
@click.option('--dropout', type=float, help='Decoder dropout')
@click.option('--epochs', type=int, help='Maximum epochs')
@click.option('--early-stop', type=int, help='Epochs without improvement before stopping')
@click.option('--learning-rate', type=float, help='Adam step size')
@click.option('--isolate-per-epoch/--no-isolate-per-epoch', default=None,
              help='Redraw node isolation every epoch')
@click.option('--penalty', type=click.Choice(['l1', 'l2']), help='Baseline weight penalty')
@click.option('--penalty-strength', type=float, help='Baseline penalty multiplier')
@click.option('--seed', type=int, help='Initialization and dropout seed')
@click.pass_context
def train_command(ctx, **options):
    """Train a model and write its checkpoint"""
    def body(run: RunConfig, output: str, manifest: RunManifest) -> str:
        data, windows, validation = split_training(run)
        manifest.add_input(resolve_input(run.get('train_data')))
        config = ModelConfig.from_name(
            run.get('model'), embedding_size=run.get_int('embedding_size'),
            gnn_depth=run.get_int('gnn_depth'), gat_heads=run.get_int('gat_heads'),
            dropout=run.get_float('dropout'), seed=run.get_int('seed'),
            penalty=run.get('penalty'), penalty_strength=run.get_float('penalty_strength'),
        )
        config = bind_config(config, windows + [validation], behavioural_columns())
        hyper = TrainingHyper(
            epochs=run.get_int('epochs'), early_stop=run.get_int('early_stop'),
            learning_rate=run.get_float('learning_rate'),
            isolate_per_epoch=run.get_bool('isolate_per_epoch'),
            isolate_fraction=float(data.settings.get('isolate_fraction', '0.5')),
        )

        checkpoint, history = train(config, windows, validation, hyper,
                                    on_epoch=lambda epoch: manifest.sample_resources())
        if data.spec is not None:
            checkpoint = replace(checkpoint, scaling=data.spec.to_flat())
        manifest.time('train', history.seconds)

        path = os.path.join(output, CHECKPOINT_FILE)
        save_checkpoint(checkpoint, path)
        manifest.add_output(path)
        write_csv(pd.DataFrame(history.rows(), columns=['epoch', 'train_loss', 'validation_loss',
                                                        'validation_auc']),
                  os.path.join(output, 'training_log.csv'), manifest)

        ensure_directory(DYMConfig.OUTPUT_ROOT)
        ledger = RunLedger(DYMConfig.LEDGER_URL)
        try:
            best_loss = history.validation_loss[history.best_epoch - 1] \
                if history.best_epoch else None
            ledger.record_run(config.name, config.attention, output, history.epochs_run,
                              history.best_epoch, history.stop_reason, history.seconds,
                              best_loss, config.seed)
            table = ledger.runtime_table(config.attention)
        finally:
            ledger.close()
        runtime = pd.DataFrame(table, columns=['model', 'train_seconds', 'normalized'])
        write_csv(runtime, os.path.join(output, 'runtime.csv'), manifest)

        return (f"Trained {config.name}: {history.epochs_run} epochs ({history.stop_reason}), "
                f"best epoch {history.best_epoch}, {format_seconds(history.seconds)}")

    run_command(ctx, 'train', options, body)


def checkpoint_path(path: str) -> str:
    path = resolve_input(path)
    return os.path.join(path, CHECKPOINT_FILE) if os.path.isdir(path) else path


def recorded_train_seconds(path: str) -> Optional[float]:
    """Training time from the manifest next to a checkpoint, if any."""
    manifest_path = os.path.join(os.path.dirname(path), MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        return None
    with open(manifest_path, encoding='utf-8') as f:
        data = safe_json_loads(f.read(), default={}) or {}
    return data.get('timings', {}).get('train')


@cli.command('eval')
@click.option('--checkpoints', help='Comma-separated checkpoint files or model directories')
@click.option('--data', help='Window dataset directory')
@click.option('--window', type=int, help='Test window position (negative from end)')
@click.option('--output', help='Report directory')
@click.option('--threshold', type=float, help='Classification threshold for F1')
@click.option('--resamples', type=int, help='Bootstrap resamples')
@click.option('--seed', type=int, help='Bootstrap seed shared by all checkpoints')
@click.pass_context
def eval_command(ctx, **options):
    """Score checkpoints on a window with bootstrap confidence intervals"""
    def body(run: RunConfig, output: str, manifest: RunManifest) -> str:
        paths = [checkpoint_path(p) for p in run.get_list('checkpoints')]
        if not paths:
            raise ConfigException("Setting 'checkpoints' is required for 'eval'")
        data_dir = resolve_input(run.require('data'))
        window = read_window_dataset(data_dir).window(run.get_int('window'))
        manifest.add_input(data_dir)

        rows: List[Dict[str, object]] = []
        for path in paths:
            manifest.add_input(path)
            checkpoint = load_checkpoint(path)
            started = time.monotonic()
            scores, _ = predict_window(checkpoint.config, checkpoint.params, window)
            score_seconds = time.monotonic() - started
            report = evaluate_scores(checkpoint.config.name, scores, window.labels,
                                     threshold=run.get_float('threshold'),
                                     resamples=run.get_int('resamples'),
                                     seed=run.get_int('seed'), n_jobs=DYMConfig.N_JOBS)
            report.checkpoint = path
            report.train_seconds = recorded_train_seconds(path)
            report.score_seconds = score_seconds
            rows.append(report.row())

        metrics = pd.DataFrame(rows)
        write_csv(metrics, os.path.join(output, 'metrics.csv'), manifest)
        shown = metrics[['model', 'auc', 'auc_lower', 'auc_upper', 'f1', 'f1_lower', 'f1_upper']]
        summary = tabulate(shown.values.tolist(), headers=list(shown.columns), tablefmt='grid',
                           floatfmt='.4f')
        atomic_write_text(os.path.join(output, 'summary.txt'), summary + '\n')
        manifest.add_output(os.path.join(output, 'summary.txt'))
        click.echo(summary)
        return f"Evaluated {len(rows)} checkpoints on {window.n} nodes"

    run_command(ctx, 'eval', options, body)


@cli.command()
@click.option('--checkpoint', help='Checkpoint file or model directory')
@click.option('--data', help='Window dataset directory')
@click.option('--window', type=int, help='Window position (negative from end)')
@click.option('--output', help='Report directory')
@click.option('--samples', type=int, help='Shapley permutations')
@click.option('--exact/--no-exact', default=None, help='Enumerate every feature coalition')
@click.option('--top-k', type=int, help='Features exported as dependency tables')
@click.option('--seed', type=int, help='Permutation seed')
@click.pass_context
def explain(ctx, **options):
    """Export Shapley attributions, attention profile and dependency tables"""
    def body(run: RunConfig, output: str, manifest: RunManifest) -> str:
        path = checkpoint_path(run.require('checkpoint'))
        data_dir = resolve_input(run.require('data'))
        manifest.add_input(path)
        manifest.add_input(data_dir)
        checkpoint = load_checkpoint(path)
        data = read_window_dataset(data_dir)
        window = data.window(run.get_int('window'))

        baseline = None
        if not checkpoint.scaling and data.spec is not None:
            baseline = data.spec.baseline()
        started = time.monotonic()
        table = shapley_attribution(checkpoint, window, samples=run.get_int('samples'),
                                    seed=run.get_int('seed'), exact=run.get_bool('exact'),
                                    n_jobs=DYMConfig.N_JOBS, baseline=baseline,
                                    feature_names=data.feature_names)
        manifest.time('shapley', time.monotonic() - started)

        importance = table.importance()
        write_csv(importance, os.path.join(output, 'importance.csv'), manifest)
        write_csv(table.node_table(), os.path.join(output, 'attributions.csv'), manifest)
        write_csv(dependency_export(table, top_k=run.get_int('top_k')),
                  os.path.join(output, 'dependency.csv'), manifest)

        config = checkpoint.config
        if config.attention and not config.is_baseline and not config.is_static:
            profile = attention_profile(checkpoint, data.windows)
            write_csv(pd.DataFrame(profile.rows(), columns=['snapshot', 'score']),
                      os.path.join(output, 'attention.csv'), manifest)
        else:
            click.secho(f"{config.name} has no temporal attention; attention export skipped",
                        fg='yellow')

        click.echo(tabulate(importance.values.tolist(), headers=list(importance.columns),
                            tablefmt='grid', floatfmt='.5f'))
        return f"Explained {config.name} on {window.n} nodes"

    run_command(ctx, 'explain', options, body)


@cli.command()
@click.option('--format', 'output_format', type=click.Choice(['table', 'csv']), default='table')
def runtimes(output_format):
    """Training runtimes from the run ledger, normalized by the fastest"""
    try:
        ensure_directory(DYMConfig.OUTPUT_ROOT)
        ledger = RunLedger(DYMConfig.LEDGER_URL)
        try:
            tables = [(title, ledger.runtime_table(attention))
                      for title, attention in (('Without attention', False),
                                               ('With attention', True))]
        finally:
            ledger.close()
    except Exception as e:
        click.secho(f"Error: {e}", fg='red')
        sys.exit(EXIT_FAILURE)

    for title, rows in tables:
        if output_format == 'csv':
            frame = pd.DataFrame(rows, columns=['model', 'train_seconds', 'normalized'])
            frame.insert(0, 'attention', title == 'With attention')
            click.echo(frame.to_csv(index=False), nl=False)
            continue
        click.echo(title)
        if rows:
            click.echo(tabulate([[r['model'], r['train_seconds'], r['normalized']] for r in rows],
                                headers=['Model', 'Seconds', 'Normalized'], tablefmt='grid',
                                floatfmt='.2f'))
        else:
            click.echo("No runs recorded")


if __name__ == '__main__':
    cli()
