"""
Command utility functions
"""

from pathlib import Path

import click

from bnrectify.core import const


def load_model(path: str):
    """
    Read a model given its basename or either of its files

    :rtype: :class:`bnrectify.core.model.ModelGraph`
    """
    from bnrectify.core import serialization

    return serialization.load(path)


def load_dataset(data: str, labels: str | None = None):
    """
    Read an RSET1 images file and its labels

    :param labels: Defaults to the ``.rlbl`` file next to ``data``.

    :rtype: :class:`bnrectify.core.dataset.RawDataset`
    """
    from bnrectify.core.dataset import read_dataset

    return read_dataset(data, labels)


def load_severity_table(path: str | None):
    """The severity table at ``path``, or the shipped one."""
    from bnrectify.core.corruptions import SeverityTable

    return SeverityTable.default() if path is None else SeverityTable.from_file(path)


def manifest_path_for(output: str | Path) -> Path:
    """``results/abl.csv`` -> ``results/abl.run.manifest``"""
    output = Path(output)
    return output.with_name(output.name.split(".", 1)[0] + ".run.manifest")


def record_run(output: str | Path, directory: bool = False) -> Path:
    """
    Write the run manifest of the current command

    The manifest echoes the fully resolved parameters, so passing it to
    ``--config`` repeats the run.

    :param output: The command's output file, or its output directory.
    :param directory: Whether ``output`` is a directory.

    :return: The manifest path.
    :rtype: :class:`pathlib.Path`
    """
    from bnrectify.core import util

    ctx = click.get_current_context()
    target = Path(output) if directory else manifest_path_for(output)
    return util.write_run_manifest(target, ctx.command_path.split(" ", 1)[-1], ctx.params)


def ensure_parent(path: str | Path) -> Path:
    """Create the directory that will hold ``path``."""
    from bnrectify.core import util

    path = Path(path)
    util.make_output_dir(path.parent)
    return path


def seed_option(function):
    return click.option(
        "--seed", type=int, default=0, show_default=True, help="Seed for every random draw"
    )(function)


def severity_table_option(function):
    return click.option(
        "--severity-table",
        type=click.Path(exists=True, dir_okay=False),
        help="INI file overriding the shipped severity table",
    )(function)


def policy_options(function):
    """``--n``, ``--stats`` and ``--layers``."""
    function = click.option(
        "--layers",
        default="all",
        show_default=True,
        help="BN layers to rectify: all, front, middle, end or a comma-separated list of names",
    )(function)
    function = click.option(
        "--stats",
        type=click.Choice(["both", "mean", "var"]),
        default="both",
        show_default=True,
        help="Population statistics to rectify",
    )(function)
    return click.option(
        "--n",
        "n",
        type=click.IntRange(min=1),
        default=const.DEFAULT_SAMPLE_COUNT,
        show_default=True,
        help="Number of representation samples",
    )(function)


def make_policy(n: int, stats: str, layers: str):
    from bnrectify.core.adaptation import AdaptationPolicy

    return AdaptationPolicy.parse(stats, layers, n)


def register_commands(cli):
    """
    Register all commands with the top-level Click group

    :param cli: The top-level Click group to hold the commands.
    :type cli: :class:`click.Group`
    """
    from .ablate import ablate
    from .adapt import adapt
    from .corrupt import corrupt
    from .diagnose import diagnose
    from .evaluate import evaluate
    from .make_dataset import make_dataset
    from .train import train

    cli.add_command(make_dataset)
    cli.add_command(train)
    cli.add_command(corrupt)
    cli.add_command(adapt)
    cli.add_command(evaluate)
    cli.add_command(ablate)
    cli.add_command(diagnose)
