"""
Command line interface to the DM-MIMO experiments
"""

from pathlib import Path

import click

from dmmimo._version import VERSION
from dmmimo.exceptions import CommandLineError

CONTEXT_SETTINGS = dict(help_option_names=["-h", "--help"])


class ExperimentCommand(click.Command):
    """Report a CommandLineError as one JSON line on stderr and exit with 1."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except CommandLineError as e:
            click.echo(e.machine_readable(), err=True)
            ctx.exit(1)


def parse_snr_list(ctx, param, value):
    """Parse --snr "0,5,10" (inf allowed) into a list of floats."""
    if value is None:
        return None
    try:
        grid = [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter(f'"{value}" is not a comma-separated list of numbers.')
    if not grid:
        raise click.BadParameter("The SNR list must not be empty.")
    return grid


def parse_snr_range(ctx, param, value):
    """Parse --snr-range "0,20" into a (low, high) pair."""
    grid = parse_snr_list(ctx, param, value)
    if grid is None:
        return None
    if len(grid) != 2:
        raise click.BadParameter(f'"{value}" is not a LOW,HIGH pair.')
    return tuple(grid)


def option_group(*options):
    """Apply several click options in the order they are listed."""

    def decorator(command):
        for option in reversed(options):
            command = option(command)
        return command

    return decorator


PREDICTOR_OPTION = click.option(
    "--predictor",
    default=None,
    help='"oracle" or the path of a trained predictor checkpoint.',
)

# Flags shared by every subcommand; each mirrors a config key.
common_options = option_group(
    click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        default=None,
        help="YAML file with a common: section and one section per experiment.",
    ),
    click.option("--seed", type=int, default=None, help="Master seed of all random streams."),
    click.option(
        "--out",
        type=click.Path(dir_okay=False, path_type=Path),
        default=None,
        help="Output file.",
    ),
)

# Flags of the experiments that sweep an SNR grid with Monte Carlo trials.
sweep_options = option_group(
    click.option("--trials", type=click.IntRange(min=1), default=None, help="Monte Carlo trials per SNR."),
    click.option(
        "--snr",
        "snr_db",
        callback=parse_snr_list,
        default=None,
        help='Comma-separated SNR grid in dB, e.g. "0,10,20" or "inf".',
    ),
    PREDICTOR_OPTION,
)


def _config(kind, config, **overrides):
    from dmmimo.experiments.utils import config_hash, load_experiment_config
    from dmmimo.log import LOGGER

    cfg = load_experiment_config(config, kind, overrides)
    LOGGER.info(f"Running {kind} with config {config_hash(cfg)} and seed {cfg.seed}")
    return cfg


@click.version_option(version=VERSION, prog_name="dmmimo")
@click.group(context_settings=CONTEXT_SETTINGS)
def cli():
    """Link-level simulation of diffusion-model denoising over MIMO channels"""


@common_options
@click.option("--samples", type=click.IntRange(min=1), default=None, help="Channel draws.")
@cli.command(
    cls=ExperimentCommand,
    context_settings=CONTEXT_SETTINGS,
    short_help="Singular value statistics of Rayleigh channels.",
)
def svd_stats(config, seed, out, samples):
    """Estimate E[lambda_i^2], E[10 log10 lambda_i^2] and the density of the
    sorted singular values of an M x M Rayleigh channel.

    Writes a JSON report and, next to it, a histogram CSV.
    """
    from dmmimo.experiments import run_svd_stats

    cfg = _config("svd-stats", config, seed=seed, out=out, svd_samples=samples)
    run_svd_stats(cfg)
    click.echo(str(cfg.output_path))


@common_options
@sweep_options
@click.option(
    "--signal",
    type=click.Choice(["unit-gaussian", "codec"]),
    default=None,
    help="Encoded signals: unit complex Gaussian, or the stage 1 codec on the source.",
)
@click.option("--sampler", type=click.Choice(["joint", "common"]), default=None)
@click.option(
    "--trace",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Dump the sampler trace of the first chunk to this CSV file.",
)
@cli.command(
    cls=ExperimentCommand,
    context_settings=CONTEXT_SETTINGS,
    short_help="Per-sub-channel MSE before and after denoising.",
)
def mse_sweep(config, seed, out, trials, snr_db, predictor, signal, sampler, trace):
    """For each SNR, compare the equalized, denoised and Wiener-filtered
    signal with the encoded signal Z, per sub-channel, and write a CSV.
    """
    from dmmimo.experiments import run_mse_sweep

    cfg = _config(
        "mse-sweep",
        config,
        seed=seed,
        out=out,
        trials=trials,
        snr_db=snr_db,
        predictor=predictor,
        signal=signal,
        sampler=sampler,
        trace=trace,
    )
    run_mse_sweep(cfg)
    click.echo(str(cfg.output_path))


@common_options
@sweep_options
@click.option(
    "--matched-snr/--no-matched-snr",
    default=None,
    help="Also train and evaluate a stage 1 codec at each test SNR.",
)
@click.option("--sampler", type=click.Choice(["joint", "common"]), default=None)
@cli.command(
    cls=ExperimentCommand,
    context_settings=CONTEXT_SETTINGS,
    short_help="Source reconstruction MSE of the trained pipeline.",
)
def e2e_eval(config, seed, out, trials, snr_db, predictor, matched_snr, sampler):
    """Evaluate the stage 1 codec with and without denoising and the stage 3
    decoder with denoising on held-out sources. Needs codec_stage1.ckpt and
    codec_stage3.ckpt in the checkpoint directory.
    """
    from dmmimo.experiments import run_e2e

    cfg = _config(
        "e2e-eval",
        config,
        seed=seed,
        out=out,
        trials=trials,
        snr_db=snr_db,
        predictor=predictor,
        matched_snr=matched_snr,
        sampler=sampler,
    )
    run_e2e(cfg)
    click.echo(str(cfg.output_path))


@common_options
@PREDICTOR_OPTION
@click.option("--stage", required=True, help="Training stage: 1, 2 or 3.")
@click.option(
    "--checkpoint-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Where checkpoints are read and written.",
)
@click.option(
    "--snr-range",
    "snr_range_db",
    callback=parse_snr_range,
    default=None,
    help='Training SNRs are drawn uniformly from LOW,HIGH dB, e.g. "0,20".',
)
@click.option("--preset", type=click.Choice(["desk", "full"]), default=None)
@click.option(
    "--signal",
    type=click.Choice(["unit-gaussian", "codec"]),
    default=None,
    help="Stage 2 training signals (default: the stage 1 codec).",
)
@cli.command(
    cls=ExperimentCommand,
    context_settings=CONTEXT_SETTINGS,
    short_help="Run one stage of the three-stage training.",
)
def train(config, seed, out, predictor, stage, checkpoint_dir, snr_range_db, preset, signal):
    """Stage 1 trains the codec over the channel, stage 2 the noise
    predictor on the encoded signals, stage 3 retrains the decoder behind
    the stage 2 predictor (or the one given with --predictor).

    \b
    Sample usage:
        dmmimo train --stage 1
        dmmimo train --stage 2
        dmmimo train --stage 3
        dmmimo train --stage 3 --predictor oracle
    """
    from dmmimo.experiments import run_training

    cfg = _config(
        "train",
        config,
        seed=seed,
        out=out,
        predictor=predictor,
        checkpoint_dir=checkpoint_dir,
        snr_range_db=snr_range_db,
        preset=preset,
        signal=signal,
    )
    checkpoint, _ = run_training(cfg, stage)
    click.echo(str(checkpoint))


@common_options
@cli.command(
    cls=ExperimentCommand,
    context_settings=CONTEXT_SETTINGS,
    short_help="Check predictor gradients against finite differences.",
)
def gradient_check(config, seed, out):
    """Compare autograd parameter gradients of a small predictor network
    with central finite differences and report the largest relative error.
    """
    from dmmimo.experiments import run_gradient_check

    cfg = _config("gradient-check", config, seed=seed, out=out)
    report = run_gradient_check(cfg)
    click.echo(f"max relative error: {report['max_relative_error']:.3e}")
