"""
RSET1 / RLBL1 datasets and the built-in procedural dataset

Images file: ``b"RSET1"``, then little-endian u32 count, C, H, W, then
``count * C * H * W`` u8 pixels in NCHW order. Labels file: ``b"RLBL1"``,
u32 count, then ``count`` little-endian u16 labels.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bnrectify.core import const
from bnrectify.core.errors import FormatError, SemanticError, ShapeError
from bnrectify.core.rng import RngStream
from bnrectify.core.tensor import as_tensor


logger = logging.getLogger(__name__)

_IMAGES_HEADER = struct.Struct("<5sIIII")
_LABELS_HEADER = struct.Struct("<5sI")
_LABEL_DTYPE = np.dtype("<u2")

NUM_CLASSES = 10
CLASS_NAMES = (
    "disk",
    "square",
    "triangle",
    "cross",
    "ring",
    "horizontal_stripes",
    "vertical_stripes",
    "diagonal_stripes",
    "checkerboard",
    "dots",
)


@dataclass(frozen=True)
class RawDataset:
    """
    Images and labels as stored on disk.

    :ivar images: ``uint8`` array of shape ``(N, C, H, W)``.
    :ivar labels: ``uint16`` array of shape ``(N,)``.
    """

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be NCHW, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeError(
                f"{self.images.shape[0]} images but labels of shape {self.labels.shape}"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def pixels(self, indices=None) -> np.ndarray:
        """Images as float32 in ``[0, 1]``."""
        images = self.images if indices is None else self.images[indices]
        return as_tensor(images.astype(np.float32) / np.float32(const.PIXEL_SCALE))

    def subset(self, indices) -> "RawDataset":
        return RawDataset(self.images[indices], self.labels[indices])

    def check_labels(self, num_classes: int) -> None:
        if len(self) and int(self.labels.max()) >= num_classes:
            raise SemanticError(
                f"label {int(self.labels.max())} out of range for {num_classes} classes"
            )


def to_pixels_u8(images: np.ndarray) -> np.ndarray:
    """Quantize float images in ``[0, 1]`` to u8, rounding to nearest."""
    return np.rint(np.clip(images, 0.0, 1.0) * const.PIXEL_SCALE).astype(np.uint8)


def labels_path_for(images_path: str | Path) -> Path:
    """Default labels file sitting next to an images file."""
    return Path(images_path).with_suffix(const.LABELS_SUFFIX)


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc


def read_images(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = _read(path)
    if len(data) < _IMAGES_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, count, c, h, w = _IMAGES_HEADER.unpack_from(data)
    if magic != const.DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {const.DATASET_MAGIC!r}")
    expected = count * c * h * w
    body = data[_IMAGES_HEADER.size :]
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, c, h, w).copy()


def read_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = _read(path)
    if len(data) < _LABELS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, count = _LABELS_HEADER.unpack_from(data)
    if magic != const.LABELS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {const.LABELS_MAGIC!r}")
    body = data[_LABELS_HEADER.size :]
    if len(body) != count * _LABEL_DTYPE.itemsize:
        raise FormatError(f"{path}: expected {count} labels, found {len(body) // 2}")
    return np.frombuffer(body, dtype=_LABEL_DTYPE).astype(np.uint16)


def read_dataset(images_path: str | Path, labels_path: str | Path | None = None) -> RawDataset:
    """
    Read an images file and its labels file

    :param labels_path: Defaults to the images path with the ``.rlbl``
        suffix.

    :rtype: :class:`RawDataset`
    """
    labels_path = labels_path or labels_path_for(images_path)
    images = read_images(images_path)
    labels = read_labels(labels_path)
    if len(labels) != len(images):
        raise FormatError(
            f"{images_path} holds {len(images)} images but {labels_path} "
            f"holds {len(labels)} labels"
        )
    return RawDataset(images, labels)


def _write(path: Path, payload: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


def write_images(path: str | Path, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    header = _IMAGES_HEADER.pack(const.DATASET_MAGIC, *images.shape)
    _write(Path(path), header + images.tobytes())


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=_LABEL_DTYPE)
    _write(Path(path), _LABELS_HEADER.pack(const.LABELS_MAGIC, len(labels)) + labels.tobytes())


def write_dataset(images_path: str | Path, dataset: RawDataset) -> tuple[Path, Path]:
    """
    Write ``dataset`` to ``images_path`` and its sibling ``.rlbl`` file

    :return: ``(images_path, labels_path)``.
    :rtype: tuple
    """
    images_path = Path(images_path)
    labels_path = labels_path_for(images_path)
    write_images(images_path, dataset.images)
    write_labels(labels_path, dataset.labels)
    logger.info("wrote %d images to %s", len(dataset), images_path)
    return images_path, labels_path


def _pick_colors(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # Redraw until foreground and background differ clearly in luminance.
    luma = np.array([0.299, 0.587, 0.114])
    while True:
        fg, bg = rng.uniform(0.0, 1.0, (2, 3))
        if abs(float(luma @ fg) - float(luma @ bg)) >= 0.3:
            return fg, bg


def _class_mask(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.35, 0.65, 2) * size
    radius = rng.uniform(0.2, 0.32) * size
    period = rng.uniform(0.16, 0.26) * size
    phase = rng.uniform(0.0, period)
    dy, dx = yy - cy, xx - cx
    name = CLASS_NAMES[label]
    if name == "disk":
        return dy**2 + dx**2 <= radius**2
    if name == "square":
        return (np.abs(dy) <= radius * 0.85) & (np.abs(dx) <= radius * 0.85)
    if name == "triangle":
        return (dy <= radius * 0.8) & (dy >= 2 * np.abs(dx) - radius)
    if name == "cross":
        arm = radius * 0.3
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | (
            (np.abs(dx) <= arm) & (np.abs(dy) <= radius)
        )
    if name == "ring":
        distance = np.sqrt(dy**2 + dx**2)
        return (distance <= radius) & (distance >= radius * 0.55)
    if name == "horizontal_stripes":
        return ((yy + phase) % period) < period / 2
    if name == "vertical_stripes":
        return ((xx + phase) % period) < period / 2
    if name == "diagonal_stripes":
        return ((xx + yy + phase) % (period * 1.4)) < period * 0.7
    if name == "checkerboard":
        cell = period / 2
        return ((np.floor((yy + phase) / cell) + np.floor((xx + phase) / cell)) % 2) == 0
    spacing = period * 1.2
    ry = (yy + phase) % spacing - spacing / 2
    rx = (xx + phase) % spacing - spacing / 2
    return ry**2 + rx**2 <= (spacing * 0.28) ** 2


def synthesize(count: int, seed: int, size: int = 32, stream_offset: int = 0) -> RawDataset:
    """
    Generate a balanced set of procedural shape/texture images

    Ten classes of shapes and textures with random position, scale,
    period, colors and mild pixel noise. Image ``i`` draws from stream
    ``stream_offset + i`` of ``seed``.

    :param count: Number of images.
    :type count: int
    :param seed: Generation seed.
    :type seed: int
    :param size: Height and width in pixels.
    :type size: int

    :rtype: :class:`RawDataset`
    """
    images = np.empty((count, 3, size, size), dtype=np.float64)
    labels = np.arange(count, dtype=np.uint16) % NUM_CLASSES
    for index in range(count):
        rng = RngStream(seed, stream_offset + index).generator()
        mask = _class_mask(int(labels[index]), size, rng)
        fg, bg = _pick_colors(rng)
        image = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        image += rng.normal(0.0, 0.03, image.shape)
        images[index] = image
    order = RngStream(seed, stream_offset + count).generator().permutation(count)
    return RawDataset(to_pixels_u8(images[order]), labels[order])


def make_builtin(
    out_dir: str | Path, seed: int = 0, train_count: int = 5000, test_count: int = 1000
) -> dict[str, Path]:
    """
    Write the built-in dataset: ``train.rset/.rlbl`` and ``test.rset/.rlbl``

    :return: Paths of the two images files keyed ``train`` and ``test``.
    :rtype: dict
    """
    out_dir = Path(out_dir)
    paths = {}
    train = synthesize(train_count, seed)
    # Test images use streams past the training range.
    test = synthesize(test_count, seed, stream_offset=train_count + 1)
    for split, dataset in (("train", train), ("test", test)):
        paths[split], _ = write_dataset(out_dir / f"{split}{const.DATASET_SUFFIX}", dataset)
    return paths
