import logging

import click

from bnrectify.cli.commands import register_commands


class RectifyGroup(click.Group):
    """
    Command group that turns library errors into one-line diagnostics

    The line reads ``error[<code>] <ExceptionName>: <message>`` and the
    process exits with ``<code>``.
    """

    def invoke(self, ctx):
        from bnrectify.core import const
        from bnrectify.core.errors import RectifyError

        try:
            return super().invoke(ctx)
        except RectifyError as exc:
            error, code = exc, exc.exit_code
        except OSError as exc:
            error, code = exc, const.EXIT_FORMAT
        click.echo(f"error[{code}] {type(error).__name__}: {error}", err=True)
        ctx.exit(code)


def _config_defaults(path: str) -> dict:
    from bnrectify.core import util

    command, params = util.read_run_manifest(path)
    defaults = params
    for name in reversed(command.split()):
        defaults = {name: defaults}
    return defaults


@click.group(cls=RectifyGroup)
@click.version_option(
    prog_name="bnrectify",
    message="%(prog)s v%(version)s",
)
@click.option("-v", "--verbose", count=True, help="Log progress (-v) or details (-vv)")
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    help="Take option defaults from a run manifest written by an earlier run",
)
@click.pass_context
def cli(ctx, verbose: int, config: str | None):
    """bnrectify: Test-time BN statistics rectification for corruption robustness"""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("bnrectify").setLevel(level)
    if config:
        ctx.default_map = _config_defaults(config)


register_commands(cli)
