"""
Application utility functions.
"""

import logging
from pathlib import Path

from bnrectify.core import const
from bnrectify.core.errors import FormatError, SemanticError


logger = logging.getLogger(__name__)


def make_output_dir(path: str | Path) -> Path:
    """
    Ensure that an output directory exists

    Attempt to create it, and any missing parents, if it does not.

    :param path: The directory.
    :type path: str or :class:`pathlib.Path`

    :raises FormatError: When the directory cannot be created.

    :return: The directory.
    :rtype: :class:`pathlib.Path`
    """
    directory = Path(path)
    if directory.is_dir():
        return directory
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create output directory {directory}: {exc.strerror}") from exc
    directory.chmod(0o755)  # drwxr-xr-x
    return directory


def _manifest_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(_manifest_value(v) for v in value)
    if isinstance(value, bool):
        return str(value).lower()
    if value is None:
        return ""
    return str(getattr(value, "value", value))


def render_run_manifest(command: str, params: dict) -> str:
    """
    Render the resolved parameters of a command

    One ``key=value`` line per parameter, sorted by key, after a
    ``command=`` line. No timestamps, so equal runs give equal files.

    :param command: The command name.
    :type command: str
    :param params: The resolved parameters.
    :type params: dict

    :return: The manifest text.
    :rtype: str
    """
    lines = [f"command={command}"]
    lines += [
        f"{key}={_manifest_value(params[key])}"
        for key in sorted(params)
        if params[key] is not None
    ]
    return "\n".join(lines) + "\n"


def write_run_manifest(path: str | Path, command: str, params: dict) -> Path:
    """
    Write a run manifest

    :param path: A directory, in which ``run.manifest`` is created, or
        a file path.
    :type path: str or :class:`pathlib.Path`

    :return: The file written.
    :rtype: :class:`pathlib.Path`
    """
    path = Path(path)
    if path.is_dir():
        path = path / const.RUN_MANIFEST
    try:
        path.write_text(render_run_manifest(command, params), encoding="utf-8", newline="\n")
    except OSError as exc:
        raise FormatError(f"cannot write run manifest {path}: {exc.strerror}") from exc
    logger.info("wrote run manifest %s", path)
    return path


def read_run_manifest(path: str | Path) -> tuple[str, dict[str, str]]:
    """
    Read a run manifest written by :func:`write_run_manifest`

    :return: ``(command, params)`` with every value still a string.
    :rtype: tuple
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read run manifest {path}: {exc.strerror}") from exc
    params = {}
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        params[key.strip()] = value.strip()
    if "command" not in params:
        raise FormatError(f"{path}: missing command line")
    return params.pop("command"), params


def parse_int_list(text: str, what: str = "value") -> tuple[int, ...]:
    """
    Parse a comma-separated list of integers, e.g. ``"1,2,4"``

    :raises SemanticError: On anything that is not an integer.

    :rtype: tuple[int]
    """
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise SemanticError(f"malformed {what} list {text!r}") from exc


def format_percent(fraction: float | None) -> str:
    """
    Format a fraction as a percentage with one decimal

    :return: e.g. ``"73.9%"``, or ``"n/a"`` for ``None``.
    :rtype: str
    """
    return "n/a" if fraction is None else f"{100 * fraction:.1f}%"
