from functools import partial

from click.testing import CliRunner
from pytest import fixture

from bnrectify.cli.cli import cli


def run(runner, *args):
    """Invoke the CLI with string arguments and fail loudly on errors."""
    result = runner.invoke(cli, [str(arg) for arg in args])
    assert result.exit_code == 0, result.output
    return result


@fixture
def runner():
    return CliRunner()


@fixture
def invoke(runner):
    """Like ``run`` with the per-test runner."""
    return partial(run, runner)


@fixture(scope="module")
def workspace(tmp_path_factory):
    """A built-in dataset, a briefly trained model and four corrupted sets."""
    root = tmp_path_factory.mktemp("workspace")
    runner = CliRunner()
    run(runner, "make-dataset", "--out-dir", root / "data", "--train-count", 64,
        "--test-count", 20, "--seed", 1)
    run(runner, "train", "--data", root / "data" / "train.rset", "--epochs", 1, "--batch", 16,
        "--out", root / "models" / "tiny")
    run(runner, "corrupt", "--data", root / "data" / "test.rset",
        "--kinds", "gaussian_noise,contrast", "--severities", "1,3", "--out-dir", root / "c")
    return root
