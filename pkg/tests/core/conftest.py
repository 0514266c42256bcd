import numpy as np
from builders import bn, conv, with_random_statistics
from pytest import fixture

from bnrectify.core.dataset import synthesize
from bnrectify.core.model import LayerKind, LayerSpec, ModelGraph, initialize
from bnrectify.core.rng import generator


@fixture
def rng():
    return generator(1234)


@fixture
def toy_model():
    """Three conv/BN/ReLU blocks on 2x6x6 inputs, with non-trivial statistics."""
    layers = [
        conv("conv1", 2, 4), bn("bn1", 4), LayerSpec("relu1", LayerKind.RELU),
        conv("conv2", 4, 4), bn("bn2", 4), LayerSpec("relu2", LayerKind.RELU),
        conv("conv3", 4, 3), bn("bn3", 3), LayerSpec("relu3", LayerKind.RELU),
        LayerSpec("gap", LayerKind.GAP),
        LayerSpec("fc", LayerKind.DENSE, {"in_features": 3, "out_features": 3}),
    ]
    model = ModelGraph(tuple(layers), (2, 6, 6), 3, "bn", initialize(layers, 11),
                       {"model_id": "toy"})
    return with_random_statistics(model)


@fixture
def toy_batch(rng):
    return rng.normal(0.5, 0.3, (8, 2, 6, 6)).astype(np.float32)


@fixture
def small_dataset():
    """40 built-in images of 3x8x8."""
    return synthesize(40, seed=3, size=8)
