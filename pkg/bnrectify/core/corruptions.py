"""
Common corruptions at five severities

Ten generators (noise, blur, digital) operate on float images in
``[0, 1]``. Every random draw comes from a stream derived from the seed,
the kind, the severity and the image index, so a corrupted dataset is a
pure function of the clean dataset, the :class:`CorruptionSpec` and the
severity table.
"""

import configparser
import functools
import logging
import re
import shutil
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from bnrectify.core import const
from bnrectify.core.dataset import (
    RawDataset,
    read_dataset,
    to_pixels_u8,
    write_images,
    write_labels,
)
from bnrectify.core.errors import FormatError, SemanticError, ShapeError
from bnrectify.core.rng import RngStream


logger = logging.getLogger(__name__)

KINDS = const.CORRUPTION_KINDS

# (index of the strength parameter, +1 if strength grows with it, -1 if
# it shrinks)
STRENGTH = {
    "gaussian_noise": (0, 1),
    "shot_noise": (0, -1),
    "impulse_noise": (0, 1),
    "defocus_blur": (0, 1),
    "glass_blur": (0, 1),
    "motion_blur": (0, 1),
    "zoom_blur": (0, 1),
    "contrast": (0, -1),
    "brightness": (0, 1),
    "pixelate": (0, -1),
}


@dataclass(frozen=True)
class CorruptionSpec:
    """
    A corruption kind at one severity, with the seed of its noise.
    """

    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SemanticError(
                f"unknown corruption {self.kind!r}; choose from {', '.join(KINDS)}"
            )
        if self.severity not in const.SEVERITIES:
            raise SemanticError(f"severity must be in 1..5, got {self.severity}")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "CorruptionSpec":
        """Parse ``kind:severity``, e.g. ``gaussian_noise:3``."""
        kind, _, severity = text.partition(":")
        try:
            return cls(kind.strip(), int(severity), seed)
        except ValueError as exc:
            if isinstance(exc, SemanticError):
                raise
            raise SemanticError(f"expected kind:severity, got {text!r}") from exc

    @property
    def label(self) -> str:
        return f"{self.kind}-{self.severity}"


@dataclass(frozen=True)
class SeverityTable:
    """
    Five parameter tuples per corruption kind.
    """

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for kind, rows in self.entries.items():
            if len(rows) != len(const.SEVERITIES):
                raise SemanticError(f"{kind}: expected 5 severities, got {len(rows)}")

    def params(self, kind: str, severity: int) -> tuple[float, ...]:
        try:
            return self.entries[kind][severity - 1]
        except KeyError as exc:
            raise SemanticError(f"severity table has no entry for {kind!r}") from exc

    def with_entry(self, kind: str, severity: int, params) -> "SeverityTable":
        """Copy of the table with one ``(kind, severity)`` entry replaced."""
        entries = {k: list(v) for k, v in self.entries.items()}
        entries.setdefault(kind, [()] * 5)[severity - 1] = tuple(float(p) for p in params)
        return SeverityTable({k: tuple(v) for k, v in entries.items()})

    def is_monotone(self, kind: str) -> bool:
        """Whether the strength parameter of ``kind`` strictly grows in strength."""
        index, direction = STRENGTH[kind]
        values = [row[index] * direction for row in self.entries[kind]]
        return all(b > a for a, b in zip(values, values[1:]))

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "SeverityTable":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise FormatError(f"cannot parse severity table {source}: {exc}") from exc
        entries = {}
        for kind in parser.sections():
            if kind not in KINDS:
                raise FormatError(f"{source}: unknown corruption section [{kind}]")
            try:
                entries[kind] = tuple(
                    tuple(float(v) for v in parser[kind][str(s)].split(","))
                    for s in const.SEVERITIES
                )
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{source}: bad entry in [{kind}]: {exc}") from exc
        return cls(entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "SeverityTable":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot read severity table {path}: {exc.strerror}") from exc
        return cls.from_text(text, str(path))

    @classmethod
    def default(cls) -> "SeverityTable":
        """The table shipped as ``bnrectify/core/severity.cfg``."""
        text = resources.files("bnrectify.core").joinpath("severity.cfg").read_text("utf-8")
        return cls.from_text(text, "severity.cfg")


def _gaussian_noise(x, params, rng):
    return x + rng.normal(0.0, params[0], x.shape)


def _shot_noise(x, params, rng):
    scale = params[0]
    return rng.poisson(x * scale) / scale


def _impulse_noise(x, params, rng):
    flip = rng.random(x.shape) < params[0]
    salt = (rng.random(x.shape) < 0.5).astype(x.dtype)
    return np.where(flip, salt, x)


def _disk(radius: float, alias_sigma: float) -> np.ndarray:
    half = int(np.ceil(radius)) + 1
    grid = np.arange(-half, half + 1)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    kernel = (yy**2 + xx**2 <= radius**2).astype(np.float64)
    kernel = ndimage.gaussian_filter(kernel / kernel.sum(), alias_sigma, mode="constant")
    return kernel / kernel.sum()


def _convolve_channels(x, kernel):
    return np.stack([ndimage.convolve(channel, kernel, mode="reflect") for channel in x])


def _defocus_blur(x, params, rng):
    return _convolve_channels(x, _disk(params[0], params[1]))


def _motion_kernel(sigma: float, radius: int, angle: float) -> np.ndarray:
    size = 2 * radius + 1
    offsets = np.arange(size) - radius
    kernel = np.zeros((size, size))
    kernel[radius] = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel = ndimage.rotate(kernel, angle, reshape=False, order=1)
    return kernel / kernel.sum()


def _motion_blur(x, params, rng):
    angle = rng.uniform(-45.0, 45.0)
    return _convolve_channels(x, _motion_kernel(params[0], int(params[1]), angle))


def _clipped_zoom(x, factor):
    _, h, w = x.shape
    ch, cw = int(np.ceil(h / factor)), int(np.ceil(w / factor))
    top, left = (h - ch) // 2, (w - cw) // 2
    zoomed = ndimage.zoom(x[:, top : top + ch, left : left + cw], (1, factor, factor), order=1)
    trim_top = (zoomed.shape[1] - h) // 2
    trim_left = (zoomed.shape[2] - w) // 2
    return zoomed[:, trim_top : trim_top + h, trim_left : trim_left + w]


def _zoom_blur(x, params, rng):
    factors = np.arange(1.0, params[0] + 1e-9, 0.02)
    return sum(_clipped_zoom(x, f) for f in factors) / len(factors)


def _glass_blur(x, params, rng):
    sigma, iterations = params[0], int(params[1])
    c, h, w = x.shape
    rows, cols = np.mgrid[0:h, 0:w]
    pixels = list(x.reshape(c, h * w).T)
    for _ in range(iterations):
        dy, dx = np.rint(rng.normal(0.0, sigma, (2, h, w))).astype(np.int64)
        targets = (np.clip(rows + dy, 0, h - 1) * w + np.clip(cols + dx, 0, w - 1)).ravel()
        # Swap in reverse raster order, as the reference glass blur does.
        for source in range(h * w - 1, -1, -1):
            target = targets[source]
            pixels[source], pixels[target] = pixels[target], pixels[source]
    return np.array(pixels).T.reshape(c, h, w)


def _contrast(x, params, rng):
    means = x.mean(axis=(1, 2), keepdims=True)
    return (x - means) * params[0] + means


def _brightness(x, params, rng):
    # Shift the HSV value channel; hue and saturation are kept.
    value = x.max(axis=0, keepdims=True)
    shifted = np.clip(value + params[0], 0.0, 1.0)
    scale = np.divide(shifted, value, out=np.zeros_like(value), where=value > 0)
    return np.where(value > 0, x * scale, shifted)


def _box_matrix(size: int, target: int) -> np.ndarray:
    edges = np.arange(target + 1) * (size / target)
    low = np.arange(size)
    overlap = np.minimum(low[None] + 1, edges[1:, None]) - np.maximum(low[None], edges[:-1, None])
    return np.clip(overlap, 0.0, None) / (size / target)


def _pixelate(x, params, rng):
    _, h, w = x.shape
    th, tw = max(1, int(h * params[0])), max(1, int(w * params[0]))
    small = _box_matrix(h, th) @ x @ _box_matrix(w, tw).T
    rows = (np.arange(h) * th) // h
    cols = (np.arange(w) * tw) // w
    return small[:, rows][:, :, cols]


GENERATORS = {
    "gaussian_noise": _gaussian_noise,
    "shot_noise": _shot_noise,
    "impulse_noise": _impulse_noise,
    "defocus_blur": _defocus_blur,
    "glass_blur": _glass_blur,
    "motion_blur": _motion_blur,
    "zoom_blur": _zoom_blur,
    "contrast": _contrast,
    "brightness": _brightness,
    "pixelate": _pixelate,
}


def stream_for(spec: CorruptionSpec, index: int) -> RngStream:
    """Random stream of image ``index`` under ``spec``."""
    return RngStream(spec.seed).child(spec.kind, spec.severity, index)


def perturb(
    image: np.ndarray, spec: CorruptionSpec, index: int = 0, table: SeverityTable | None = None
) -> np.ndarray:
    """
    Corrupt one image without clipping the result

    :param image: Array of shape ``(1, C, H, W)`` in ``[0, 1]``.
    :param spec: What to apply.
    :type spec: :class:`CorruptionSpec`
    :param index: Image index, selects the random stream.
    :type index: int
    :param table: Severity parameters; the shipped table by default.
    :type table: :class:`SeverityTable`

    :return: Float64 array of the input's shape.
    :rtype: :class:`numpy.ndarray`
    """
    if image.ndim != 4 or image.shape[0] != 1:
        raise ShapeError(f"expected one image of shape (1, C, H, W), got {image.shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise SemanticError("image pixels must lie in [0, 1]")
    table = table or _default_table()
    params = table.params(spec.kind, spec.severity)
    rng = stream_for(spec, index).generator()
    out = GENERATORS[spec.kind](image[0].astype(np.float64), params, rng)
    return out[None]


def apply(
    image: np.ndarray, spec: CorruptionSpec, index: int = 0, table: SeverityTable | None = None
) -> np.ndarray:
    """
    Corrupt one image

    Same arguments as :func:`perturb`.

    :return: Float32 array of the input's shape, clipped to ``[0, 1]``.
    :rtype: :class:`numpy.ndarray`
    """
    return np.clip(perturb(image, spec, index, table), 0.0, 1.0).astype(np.float32)


def corrupt_images(
    images: np.ndarray,
    spec: CorruptionSpec,
    table: SeverityTable | None = None,
    indices=None,
) -> np.ndarray:
    """
    Corrupt a float batch ``(N, C, H, W)``; image ``i`` uses stream
    ``indices[i]`` (its position by default).
    """
    indices = range(len(images)) if indices is None else indices
    out = np.empty(images.shape, dtype=np.float32)
    for position, index in enumerate(indices):
        out[position] = apply(images[position : position + 1], spec, int(index), table)[0]
    return out


@dataclass(frozen=True)
class CorruptedSet:
    """A dataset corrupted by one ``(kind, severity)``."""

    kind: str
    severity: int
    dataset: RawDataset

    @property
    def label(self) -> str:
        return f"{self.kind}-{self.severity}"


def corrupt_dataset(
    dataset: RawDataset,
    specs,
    out_dir: str | Path,
    table: SeverityTable | None = None,
    labels_source: str | Path | None = None,
) -> list[Path]:
    """
    Write one corrupted copy of ``dataset`` per corruption in ``specs``

    Files are ``<out_dir>/<kind>-<severity>.rset`` with a sibling
    ``.rlbl``; labels are copied unchanged (byte for byte from
    ``labels_source`` when given).

    :return: The images paths written, in the order of ``specs``.
    :rtype: list[pathlib.Path]
    """
    out_dir = Path(out_dir)
    pixels = dataset.pixels()
    written = []
    for spec in specs:
        corrupted = to_pixels_u8(corrupt_images(pixels, spec, table))
        images_path = out_dir / f"{spec.label}{const.DATASET_SUFFIX}"
        labels_path = out_dir / f"{spec.label}{const.LABELS_SUFFIX}"
        write_images(images_path, corrupted)
        if labels_source is not None:
            try:
                shutil.copyfile(labels_source, labels_path)
            except OSError as exc:
                raise FormatError(f"cannot copy labels to {labels_path}: {exc.strerror}") from exc
        else:
            write_labels(labels_path, dataset.labels)
        logger.info("wrote %s (%d images)", images_path, len(dataset))
        written.append(images_path)
    return written


_SET_NAME = re.compile(r"^(?P<kind>[a-z_]+)-(?P<severity>[1-5])$")


def load_corrupted_dir(
    directory: str | Path, kinds=None, severities=None
) -> list[CorruptedSet]:
    """
    Read every ``<kind>-<severity>.rset`` in ``directory``

    :param kinds: Restrict to these kinds.
    :param severities: Restrict to these severities.

    :return: Sets ordered by kind (in :data:`KINDS` order) then severity.
    :rtype: list[CorruptedSet]
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"corrupted dataset directory {directory} does not exist")
    found = []
    for path in directory.glob(f"*{const.DATASET_SUFFIX}"):
        match = _SET_NAME.match(path.stem)
        if not match or match["kind"] not in KINDS:
            continue
        kind, severity = match["kind"], int(match["severity"])
        if (kinds and kind not in kinds) or (severities and severity not in severities):
            continue
        found.append(CorruptedSet(kind, severity, read_dataset(path)))
    if not found:
        raise FormatError(f"no corrupted datasets found in {directory}")
    return sorted(found, key=lambda s: (KINDS.index(s.kind), s.severity))


@functools.cache
def _default_table() -> SeverityTable:
    return SeverityTable.default()
