import click

from .util import record_run, seed_option


@click.command("make-dataset")
@click.option(
    "--out-dir",
    type=click.Path(file_okay=False),
    required=True,
    help="Directory to hold train.rset/.rlbl and test.rset/.rlbl",
)
@click.option("--train-count", type=click.IntRange(min=1), default=5000, show_default=True)
@click.option("--test-count", type=click.IntRange(min=1), default=1000, show_default=True)
@seed_option
def make_dataset(out_dir: str, train_count: int, test_count: int, seed: int):
    """Synthesize the built-in 10-class shapes and textures dataset"""
    from bnrectify.core import dataset, util

    util.make_output_dir(out_dir)
    paths = dataset.make_builtin(out_dir, seed, train_count, test_count)
    record_run(out_dir, directory=True)
    for split, path in paths.items():
        click.echo(f"{split}: {path}")
