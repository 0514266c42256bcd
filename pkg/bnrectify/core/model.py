"""
Sequential CNN graphs

A :class:`ModelGraph` is an immutable value: an ordered list of
:class:`LayerSpec` plus a flat parameter store keyed ``"<layer>.<name>"``.
Forward passes that change anything (train and adapt modes) hand back a
new graph; eval-mode passes never touch the graph.
"""

import enum
import hashlib
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from bnrectify.core import const, tensor
from bnrectify.core.errors import SemanticError, ShapeError, shape_mismatch
from bnrectify.core.normalization import (
    BNState,
    bn_forward_eval,
    bn_forward_train,
    compute_batch_stats,
    gn_forward,
    in_forward,
)
from bnrectify.core.rng import ALGORITHM, RngStream


if TYPE_CHECKING:
    from bnrectify.core.adaptation import AdaptationPolicy


logger = logging.getLogger(__name__)


class LayerKind(str, enum.Enum):
    CONV = "conv"
    BN = "bn"
    GN = "gn"
    IN = "in"
    RELU = "relu"
    AVGPOOL = "avgpool"
    GAP = "gap"
    DENSE = "dense"


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"
    ADAPT = "adapt"


PARAMETERS = {
    LayerKind.CONV: ("weight", "bias"),
    LayerKind.BN: ("gamma", "beta", "pop_mean", "pop_var"),
    LayerKind.GN: ("gamma", "beta"),
    LayerKind.IN: ("gamma", "beta"),
    LayerKind.DENSE: ("weight", "bias"),
}
STATISTICS = ("pop_mean", "pop_var")

PRESETS = ("tiny-cnn-bn", "tiny-cnn-gn", "tiny-cnn-in", "ref-baseline")


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of a sequential graph.

    :ivar name: Unique name within the graph.
    :ivar kind: What the layer computes.
    :ivar hyper: Kind-specific hyperparameters (channel counts, kernel
        size, stride, padding, groups, epsilon, momentum, pool size).
    """

    name: str
    kind: LayerKind
    hyper: Mapping[str, int | float] = field(default_factory=dict)

    def key(self, parameter: str) -> str:
        return f"{self.name}.{parameter}"

    def parameter_keys(self) -> tuple[str, ...]:
        return tuple(self.key(p) for p in PARAMETERS.get(self.kind, ()))

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.hyper
        if self.kind is LayerKind.CONV:
            kernel = int(h["kernel"])
            weight = (int(h["out_channels"]), int(h["in_channels"]), kernel, kernel)
            return {"weight": weight, "bias": (weight[0],)}
        if self.kind is LayerKind.DENSE:
            weight = (int(h["out_features"]), int(h["in_features"]))
            return {"weight": weight, "bias": (weight[0],)}
        if self.kind in PARAMETERS:
            return {p: (int(h["channels"]),) for p in PARAMETERS[self.kind]}
        return {}

    def output_shape(self, shape: tuple[int, int, int]) -> tuple[int, ...]:
        """
        Shape of one sample after this layer

        :param shape: Per-sample input shape ``(C, H, W)``.
        :type shape: tuple

        :return: Per-sample output shape; ``(K,)`` after a dense layer.
        :rtype: tuple
        """
        h = self.hyper
        if self.kind is LayerKind.DENSE:
            if int(np.prod(shape)) != int(h["in_features"]):
                raise shape_mismatch(f"layer {self.name}", shape, (h["in_features"],))
            return (int(h["out_features"]),)
        if len(shape) != 3:
            raise ShapeError(f"layer {self.name} needs a (C, H, W) input, got {shape}")
        c, height, width = shape
        if self.kind is LayerKind.CONV:
            if c != h["in_channels"]:
                raise shape_mismatch(f"layer {self.name}", shape, (h["in_channels"],))
            k, s, p = int(h["kernel"]), int(h["stride"]), int(h["padding"])
            if k > height + 2 * p or k > width + 2 * p:
                raise ShapeError(f"layer {self.name}: kernel {k} exceeds input {shape}")
            return (
                int(h["out_channels"]),
                (height + 2 * p - k) // s + 1,
                (width + 2 * p - k) // s + 1,
            )
        if self.kind in (LayerKind.BN, LayerKind.GN, LayerKind.IN):
            if c != h["channels"]:
                raise shape_mismatch(f"layer {self.name}", shape, (h["channels"],))
            return shape
        if self.kind is LayerKind.AVGPOOL:
            k = int(h["k"])
            if height // k == 0 or width // k == 0:
                raise ShapeError(f"layer {self.name}: pool {k} exceeds input {shape}")
            return (c, height // k, width // k)
        if self.kind is LayerKind.GAP:
            return (c, 1, 1)
        return shape


@dataclass(frozen=True)
class FeatureTap:
    """An activation captured at the output of a named layer."""

    layer: str
    activation: np.ndarray


@dataclass(frozen=True)
class ForwardResult:
    """
    :ivar logits: ``(N, K)`` class scores.
    :ivar taps: Captured activations in depth order.
    :ivar model: The graph after the pass (the input graph in eval mode).
    :ivar inputs: Per-layer inputs, filled only on request.
    """

    logits: np.ndarray
    taps: tuple[FeatureTap, ...]
    model: "ModelGraph"
    inputs: Mapping[str, np.ndarray] = field(default_factory=dict)

    def tap(self, layer: str) -> np.ndarray:
        for captured in self.taps:
            if captured.layer == layer:
                return captured.activation
        raise SemanticError(f"layer {layer!r} was not tapped")


@dataclass(frozen=True)
class ModelGraph:
    """
    An ordered layer list with its parameters and manifest metadata.

    :ivar layers: Layers in depth order.
    :ivar input_shape: Per-sample input ``(C, H, W)``.
    :ivar num_classes: Width ``K`` of the logits.
    :ivar flavor: Normalization flavor: ``bn``, ``gn``, ``in`` or ``none``.
    :ivar params: Parameter arrays keyed ``"<layer>.<name>"``.
    :ivar metadata: Free-form string metadata echoed in the manifest.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    num_classes: int
    flavor: str
    params: Mapping[str, np.ndarray]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise SemanticError(f"layer names must be unique: {names}")
        shape = tuple(self.input_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
            for parameter, expected in layer.parameter_shapes().items():
                key = layer.key(parameter)
                if key not in self.params:
                    raise SemanticError(f"missing parameter {key!r}")
                if self.params[key].shape != expected:
                    raise shape_mismatch(key, self.params[key].shape, expected)
        if shape != (self.num_classes,):
            raise shape_mismatch("model output", shape, (self.num_classes,))
        if self.flavor == "bn" and not self.bn_layers():
            raise SemanticError("a model of flavor 'bn' needs at least one BN layer")
        for array in self.params.values():
            array.flags.writeable = False

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise SemanticError(f"unknown layer {name!r}")

    def bn_layers(self) -> tuple[str, ...]:
        """Names of the batch normalization layers in depth order."""
        return tuple(layer.name for layer in self.layers if layer.kind is LayerKind.BN)

    def parameter_keys(self, include_statistics: bool = True) -> tuple[str, ...]:
        """
        Parameter keys in manifest order

        :param include_statistics: Whether to list BN population
            statistics, which are state rather than learnable weights.
        :type include_statistics: bool

        :rtype: tuple[str, ...]
        """
        keys = []
        for layer in self.layers:
            for key in layer.parameter_keys():
                if include_statistics or key.rsplit(".", 1)[1] not in STATISTICS:
                    keys.append(key)
        return tuple(keys)

    def bn_state(self, name: str) -> BNState:
        layer = self.layer(name)
        if layer.kind is not LayerKind.BN:
            raise SemanticError(f"layer {name!r} is a {layer.kind.value} layer, not bn")
        p = self.params
        return BNState(
            gamma=p[layer.key("gamma")],
            beta=p[layer.key("beta")],
            pop_mean=p[layer.key("pop_mean")],
            pop_var=p[layer.key("pop_var")],
            epsilon=float(layer.hyper["epsilon"]),
            momentum=float(layer.hyper["momentum"]),
        )

    def with_params(self, updates: Mapping[str, np.ndarray]) -> "ModelGraph":
        """Return a copy of the graph with some parameter arrays replaced."""
        unknown = set(updates) - set(self.params)
        if unknown:
            raise SemanticError(f"unknown parameters {sorted(unknown)}")
        params = dict(self.params)
        params.update(updates)
        return ModelGraph(
            self.layers, self.input_shape, self.num_classes, self.flavor, params,
            self.metadata,
        )

    def with_bn_states(self, states: Mapping[str, BNState]) -> "ModelGraph":
        updates = {}
        for name, state in states.items():
            layer = self.layer(name)
            updates[layer.key("pop_mean")] = state.pop_mean
            updates[layer.key("pop_var")] = state.pop_var
        return self.with_params(updates)

    def astype(self, dtype) -> "ModelGraph":
        """Copy of the graph with every parameter cast to ``dtype``."""
        params = {k: np.array(v, dtype=dtype) for k, v in self.params.items()}
        return ModelGraph(
            self.layers, self.input_shape, self.num_classes, self.flavor, params,
            self.metadata,
        )

    @property
    def identifier(self) -> str:
        return self.metadata.get("model_id", self.metadata.get("preset", "model"))


def forward(
    model: ModelGraph,
    x: np.ndarray,
    mode: Mode | str = Mode.EVAL,
    taps: Iterable[str] = (),
    policy: "AdaptationPolicy | None" = None,
    record_inputs: bool = False,
) -> ForwardResult:
    """
    Run a batch through the graph

    * ``train``: BN layers normalize with batch statistics and update
      their moving averages.
    * ``eval``: BN layers normalize with population statistics; the
      graph is returned unchanged.
    * ``adapt``: BN layers selected by ``policy`` overwrite their
      population statistics with the statistics of the incoming batch
      (restricted to the policy's stats scope) and normalize with the
      statistics they now hold; other BN layers behave as in eval mode.

    :param model: The graph.
    :type model: :class:`ModelGraph`
    :param x: Input of shape ``(N, C, H, W)`` matching the graph.
    :param mode: One of :class:`Mode`.
    :param taps: Names of layers whose outputs are captured.
    :param policy: Required in adapt mode.
    :type policy: :class:`bnrectify.core.adaptation.AdaptationPolicy`
    :param record_inputs: Keep every layer's input, for backward passes.
    :type record_inputs: bool

    :rtype: :class:`ForwardResult`
    """
    mode = Mode(mode)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(model.input_shape):
        raise shape_mismatch("model input", x.shape[1:], model.input_shape)
    wanted = set(taps)
    unknown = wanted - {layer.name for layer in model.layers}
    if unknown:
        raise SemanticError(f"unknown tap layers {sorted(unknown)}")

    adapt_layers: frozenset = frozenset()
    if mode is Mode.ADAPT:
        if policy is None:
            raise SemanticError("adapt mode requires an adaptation policy")
        adapt_layers = frozenset(policy.resolve_layers(model))

    p = model.params
    new_states: dict[str, BNState] = {}
    captured = []
    inputs = {}
    for layer in model.layers:
        if record_inputs:
            inputs[layer.name] = x
        h = layer.hyper
        if layer.kind is LayerKind.CONV:
            x = tensor.conv2d(
                x, p[layer.key("weight")], p[layer.key("bias")],
                int(h["stride"]), int(h["padding"]),
            )
        elif layer.kind is LayerKind.BN:
            state = model.bn_state(layer.name)
            if mode is Mode.TRAIN:
                x, new_states[layer.name] = bn_forward_train(x, state)
            elif layer.name in adapt_layers:
                state = state.rectified(compute_batch_stats(x), policy.stats_scope)
                new_states[layer.name] = state
                logger.debug(
                    "rectified %s: mean %.4g var %.4g",
                    layer.name, float(state.pop_mean.mean()), float(state.pop_var.mean()),
                )
                x = bn_forward_eval(x, state)
            else:
                x = bn_forward_eval(x, state)
        elif layer.kind is LayerKind.GN:
            x = gn_forward(
                x, int(h["groups"]), p[layer.key("gamma")], p[layer.key("beta")],
                float(h["epsilon"]),
            )
        elif layer.kind is LayerKind.IN:
            x = in_forward(x, p[layer.key("gamma")], p[layer.key("beta")],
                           float(h["epsilon"]))
        elif layer.kind is LayerKind.RELU:
            x = tensor.relu(x)
        elif layer.kind is LayerKind.AVGPOOL:
            x = tensor.avgpool2d(x, int(h["k"]))
        elif layer.kind is LayerKind.GAP:
            x = tensor.global_avg_pool(x)
        elif layer.kind is LayerKind.DENSE:
            x = tensor.dense(x, p[layer.key("weight")], p[layer.key("bias")])
        if layer.name in wanted:
            captured.append(FeatureTap(layer.name, x))

    updated = model.with_bn_states(new_states) if new_states else model
    return ForwardResult(x, tuple(captured), updated, inputs)


def predict(model: ModelGraph, images: np.ndarray, chunk: int = const.EVAL_CHUNK) -> np.ndarray:
    """
    Eval-mode class predictions, computed ``chunk`` images at a time

    :return: Predicted class index per image.
    :rtype: :class:`numpy.ndarray`
    """
    predictions = [
        forward(model, images[start : start + chunk]).logits.argmax(axis=1)
        for start in range(0, len(images), chunk)
    ]
    if not predictions:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(predictions)


def layer_input(model: ModelGraph, x: np.ndarray, name: str) -> np.ndarray:
    """Eval-mode activations entering layer ``name``."""
    model.layer(name)
    return forward(model, x, record_inputs=True).inputs[name]


def model_digest(model: ModelGraph, include_statistics: bool = True) -> str:
    """
    SHA-256 over parameter names and bytes in manifest order

    :rtype: str
    """
    digest = hashlib.sha256()
    for key in model.parameter_keys(include_statistics):
        digest.update(key.encode("utf-8"))
        digest.update(np.ascontiguousarray(model.params[key]).tobytes())
    return digest.hexdigest()


def _block_layers(index, in_channels, out_channels, norm, epsilon, momentum, groups):
    conv = LayerSpec(
        f"conv{index}",
        LayerKind.CONV,
        {"in_channels": in_channels, "out_channels": out_channels, "kernel": 3,
         "stride": 1, "padding": 1},
    )
    if norm == "bn":
        norm_layer = LayerSpec(f"bn{index}", LayerKind.BN,
                               {"channels": out_channels, "epsilon": epsilon,
                                "momentum": momentum})
    elif norm == "gn":
        norm_layer = LayerSpec(f"gn{index}", LayerKind.GN,
                               {"channels": out_channels, "groups": groups,
                                "epsilon": epsilon})
    else:
        norm_layer = LayerSpec(f"in{index}", LayerKind.IN,
                               {"channels": out_channels, "epsilon": epsilon})
    return [
        conv,
        norm_layer,
        LayerSpec(f"relu{index}", LayerKind.RELU),
        LayerSpec(f"pool{index}", LayerKind.AVGPOOL, {"k": 2}),
    ]


def initialize(
    layers: Iterable[LayerSpec], seed: int, dtype=np.float32
) -> dict[str, np.ndarray]:
    """
    He-style fan-in initialization from the fixed RNG

    Convolution weights are drawn from ``N(0, 2 / fan_in)``, the
    classifier from ``N(0, 1 / fan_in)``; biases, shifts and means start
    at zero, scales and variances at one. Layer ``i`` draws from stream
    ``i`` of ``seed``.

    :rtype: dict[str, numpy.ndarray]
    """
    params = {}
    for index, layer in enumerate(layers):
        rng = RngStream(seed, index).generator()
        for parameter, shape in layer.parameter_shapes().items():
            key = layer.key(parameter)
            if parameter == "weight":
                fan_in = int(np.prod(shape[1:]))
                gain = 2.0 if layer.kind is LayerKind.CONV else 1.0
                params[key] = rng.normal(0.0, np.sqrt(gain / fan_in), shape).astype(dtype)
            elif parameter in ("gamma", "pop_var"):
                params[key] = np.ones(shape, dtype=dtype)
            else:
                params[key] = np.zeros(shape, dtype=dtype)
    return params


def build_preset(
    name: str,
    input_shape: tuple[int, int, int] = (3, 32, 32),
    num_classes: int = 10,
    seed: int = 0,
    epsilon: float = const.BN_EPSILON,
    momentum: float = const.BN_MOMENTUM,
    groups: int = const.DEFAULT_GN_GROUPS,
) -> ModelGraph:
    """
    Build one of the shipped architectures

    ``tiny-cnn-{bn,gn,in}`` stack three ``conv -> norm -> relu -> pool``
    blocks of 16, 32 and 64 channels, then global average pooling and a
    dense classifier. ``ref-baseline`` has two BN blocks of 8 and 16
    channels; it is the fixed denominator of the corruption error.

    :param name: One of :data:`PRESETS`.
    :type name: str

    :rtype: :class:`ModelGraph`
    """
    if name not in PRESETS:
        raise SemanticError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if name == "ref-baseline":
        widths, norm = (8, 16), "bn"
    else:
        widths, norm = (16, 32, 64), name.rsplit("-", 1)[1]

    layers = []
    channels = input_shape[0]
    for index, width in enumerate(widths, start=1):
        layers += _block_layers(index, channels, width, norm, epsilon, momentum, groups)
        channels = width
    layers.append(LayerSpec("gap", LayerKind.GAP))
    layers.append(
        LayerSpec("fc", LayerKind.DENSE, {"in_features": channels, "out_features": num_classes})
    )
    metadata = {
        "preset": name,
        "model_id": name,
        "seed": str(seed),
        "rng": ALGORITHM,
        "init": "he-normal-fan-in",
        "epsilon": repr(float(epsilon)),
        "momentum": repr(float(momentum)),
    }
    return ModelGraph(
        tuple(layers), tuple(input_shape), num_classes, norm, initialize(layers, seed),
        metadata,
    )
