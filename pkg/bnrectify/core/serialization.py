"""
Model files: a text manifest and a raw blob

``<base>.manifest`` is UTF-8, line oriented::

    bnrectify-model 1
    [model]
    flavor=bn
    input_shape=3,32,32
    num_classes=10
    [metadata]
    epsilon=1e-05
    ...
    [layer conv1]
    kind=conv
    in_channels=3
    ...
    params=weight:16x3x3x3,bias:16

``<base>.blob`` holds every parameter as little-endian float32,
concatenated in the order the ``params`` lines list them.
"""

import logging
from pathlib import Path

import numpy as np

from bnrectify.core import const
from bnrectify.core.errors import FormatError
from bnrectify.core.model import LayerKind, LayerSpec, ModelGraph


logger = logging.getLogger(__name__)

BLOB_DTYPE = np.dtype("<f4")


def model_paths(path: str | Path) -> tuple[Path, Path]:
    """
    Resolve a model basename into its two files

    :param path: Basename, or either of the two file names.
    :type path: str or :class:`pathlib.Path`

    :return: ``(manifest_path, blob_path)``.
    :rtype: tuple
    """
    path = Path(path)
    if path.suffix in (const.MANIFEST_SUFFIX, const.BLOB_SUFFIX):
        path = path.with_suffix("")
    return (
        path.with_name(path.name + const.MANIFEST_SUFFIX),
        path.with_name(path.name + const.BLOB_SUFFIX),
    )


def _format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("boolean hyperparameters are not supported")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _parse_value(text: str) -> int | float:
    try:
        return int(text)
    except ValueError:
        return float(text)


def render_manifest(model: ModelGraph) -> str:
    """
    Text of the manifest for ``model``; deterministic for a given graph

    :rtype: str
    """
    lines = [f"{const.MODEL_MAGIC} {const.MODEL_VERSION}", "[model]"]
    lines.append(f"flavor={model.flavor}")
    lines.append("input_shape=" + ",".join(str(d) for d in model.input_shape))
    lines.append(f"num_classes={model.num_classes}")
    lines.append("[metadata]")
    for key in sorted(model.metadata):
        lines.append(f"{key}={model.metadata[key]}")
    for layer in model.layers:
        lines.append(f"[layer {layer.name}]")
        lines.append(f"kind={layer.kind.value}")
        for key in sorted(layer.hyper):
            lines.append(f"{key}={_format_value(layer.hyper[key])}")
        shapes = layer.parameter_shapes()
        if shapes:
            entries = [
                f"{p}:" + "x".join(str(d) for d in shapes[p])
                for p in (k.rsplit(".", 1)[1] for k in layer.parameter_keys())
            ]
            lines.append("params=" + ",".join(entries))
    return "\n".join(lines) + "\n"


def save(model: ModelGraph, path: str | Path) -> tuple[Path, Path]:
    """
    Write ``<path>.manifest`` and ``<path>.blob``

    :return: The two paths written.
    :rtype: tuple
    """
    manifest_path, blob_path = model_paths(path)
    blob = b"".join(
        np.ascontiguousarray(model.params[key], dtype=BLOB_DTYPE).tobytes()
        for key in model.parameter_keys()
    )
    try:
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text(render_manifest(model), encoding="utf-8", newline="\n")
        blob_path.write_bytes(blob)
    except OSError as exc:
        raise FormatError(f"cannot write model {manifest_path}: {exc}") from exc
    logger.info("saved model %s (%d bytes of parameters)", manifest_path, len(blob))
    return manifest_path, blob_path


def _parse_manifest(text: str, source: Path):
    lines = text.splitlines()
    expected = f"{const.MODEL_MAGIC} {const.MODEL_VERSION}"
    if not lines or lines[0].strip() != expected:
        found = lines[0].strip() if lines else "<empty>"
        raise FormatError(
            f"magic/version mismatch in {source}: expected {expected!r}, found {found!r}"
        )
    sections: list[tuple[str, dict[str, str]]] = []
    for number, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1], {}))
            continue
        if "=" not in line or not sections:
            raise FormatError(f"{source}:{number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        sections[-1][1][key.strip()] = value.strip()
    return sections


def load(path: str | Path) -> ModelGraph:
    """
    Read a model written by :func:`save`

    :raises FormatError: On a magic/version mismatch, a blob length
        mismatch, a non-finite parameter or an unreadable file.

    :rtype: :class:`ModelGraph`
    """
    manifest_path, blob_path = model_paths(path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read model {exc.filename}: {exc.strerror}") from exc

    header: dict[str, str] = {}
    metadata: dict[str, str] = {}
    layers = []
    order: list[tuple[str, tuple[int, ...]]] = []
    for title, entries in _parse_manifest(text, manifest_path):
        if title == "model":
            header = entries
        elif title == "metadata":
            metadata = entries
        elif title.startswith("layer "):
            name = title.split(" ", 1)[1]
            entries = dict(entries)
            try:
                kind = LayerKind(entries.pop("kind"))
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{manifest_path}: bad kind for layer {name!r}") from exc
            params = entries.pop("params", "")
            layers.append(LayerSpec(name, kind, {k: _parse_value(v) for k, v in entries.items()}))
            for entry in filter(None, params.split(",")):
                parameter, dims = entry.split(":")
                order.append((f"{name}.{parameter}", tuple(int(d) for d in dims.split("x"))))
        else:
            raise FormatError(f"{manifest_path}: unknown section [{title}]")

    expected_bytes = sum(int(np.prod(shape)) for _, shape in order) * BLOB_DTYPE.itemsize
    if len(blob) != expected_bytes:
        raise FormatError(
            f"blob length mismatch in {blob_path}: expected {expected_bytes} bytes, "
            f"found {len(blob)}"
        )
    values = np.frombuffer(blob, dtype=BLOB_DTYPE)
    params = {}
    offset = 0
    for key, shape in order:
        size = int(np.prod(shape))
        array = values[offset : offset + size].astype(np.float32).reshape(shape)
        if not np.all(np.isfinite(array)):
            raise FormatError(f"non-finite parameter {key!r} in {blob_path}")
        params[key] = array
        offset += size

    try:
        input_shape = tuple(int(d) for d in header["input_shape"].split(","))
        return ModelGraph(
            tuple(layers), input_shape, int(header["num_classes"]), header["flavor"],
            params, metadata,
        )
    except KeyError as exc:
        raise FormatError(f"{manifest_path}: missing model field {exc}") from exc
