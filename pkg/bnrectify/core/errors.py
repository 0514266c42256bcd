"""
Exception hierarchy shared by the library and the CLI
"""

from bnrectify.core import const


class RectifyError(Exception):
    """
    Base class of every error raised on purpose by bnrectify.

    Each subclass carries the process exit code the CLI uses when the
    error escapes a command.
    """

    exit_code = 1


class FormatError(RectifyError):
    """
    A file could not be read, or its contents do not follow the expected
    binary or text format.
    """

    exit_code = const.EXIT_FORMAT


class ShapeError(RectifyError, ValueError):
    """
    Tensor, model or dataset extents do not compose.
    """

    exit_code = const.EXIT_SEMANTIC


class SemanticError(RectifyError, ValueError):
    """
    Inputs are well formed but meaningless for the requested operation.
    """

    exit_code = const.EXIT_SEMANTIC


def shape_mismatch(what: str, left: tuple, right: tuple) -> ShapeError:
    """
    Build a :class:`ShapeError` naming both offending shapes

    :param what: Short description of the operation that failed.
    :type what: str
    :param left: The first shape.
    :type left: tuple
    :param right: The second shape.
    :type right: tuple

    :return: The error, ready to be raised.
    :rtype: :class:`ShapeError`
    """
    return ShapeError(f"{what}: shape {tuple(left)} does not match {tuple(right)}")
