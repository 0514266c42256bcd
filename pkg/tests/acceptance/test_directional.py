"""
Directional robustness checks on the built-in dataset

Each test trains or evaluates desk-scale models for minutes; run with
``pytest -m slow``.
"""

import numpy as np
import pytest
from training import fit

from bnrectify.core import adaptation, diagnostics
from bnrectify.core.adaptation import AdaptationPolicy
from bnrectify.core.corruptions import CorruptedSet, CorruptionSpec, corrupt_images
from bnrectify.core.dataset import RawDataset, to_pixels_u8
from bnrectify.core.errors import SemanticError
from bnrectify.core.metrics import evaluate, top1_error
from bnrectify.core.normalization import StatsScope
from bnrectify.core.trainer import accuracy


pytestmark = pytest.mark.slow

POLICY = AdaptationPolicy(StatsScope.BOTH, "all", 32)


def _corrupted(dataset, kind, severity=3, seed=0):
    spec = CorruptionSpec(kind, severity, seed)
    images = to_pixels_u8(corrupt_images(dataset.pixels(), spec))
    return CorruptedSet(kind, severity, RawDataset(images, dataset.labels))


def _gain(model, corrupted):
    before = 1.0 - top1_error(model, corrupted.dataset)
    after = adaptation.evaluate_adapted(model, [corrupted], POLICY, seed=0).accuracy
    return before, after


def test_clean_accuracy(trained, test_set):
    assert accuracy(trained, test_set) >= 0.90


def test_rectification_helps_on_gaussian_noise(trained, test_set):
    before, after = _gain(trained, _corrupted(test_set, "gaussian_noise"))
    assert after - before >= 0.05


@pytest.mark.parametrize("kind", ["gaussian_noise", "shot_noise", "impulse_noise"])
def test_noise_family_gains(trained, test_set, kind):
    before, after = _gain(trained, _corrupted(test_set, kind))
    assert after - before >= 0.03


def test_brightness_stays_close(trained, test_set):
    before, after = _gain(trained, _corrupted(test_set, "brightness"))
    assert abs(after - before) <= 0.10


def test_sample_count_trend(trained, test_set):
    sets = [_corrupted(test_set, "gaussian_noise")]
    rows = {r.count: r.accuracy for r in adaptation.ablate_sample_count(
        trained, sets, [1, 2, 4, 8, 16, 32, 64], seed=0
    )}
    assert rows[32] >= rows[2]
    assert rows[32] >= rows[8] - 0.01


@pytest.mark.parametrize("scope", [StatsScope.MEAN_ONLY, StatsScope.VARIANCE_ONLY])
def test_single_statistic_policies_keep_clean_accuracy(trained, test_set, scope):
    indices = adaptation.draw_representation(test_set, 32, seed=0)
    adapted = adaptation.rectify(
        trained, test_set.pixels(indices), AdaptationPolicy(scope, "all", 32)
    )
    assert abs(accuracy(adapted, test_set) - accuracy(trained, test_set)) <= 0.15


def test_statistic_distance_separates_styles(trained, test_set):
    noisy = _corrupted(test_set, "gaussian_noise").dataset
    study = diagnostics.style_distance_study(trained, test_set, noisy, "bn1", repeats=100)
    clean = study["clean_vs_clean"]
    shifted = study["clean_vs_corrupted_same_content"]
    assert shifted[0] + shifted[1] > clean[0] + clean[1]


def test_similarity_curve(trained, test_set):
    indices = adaptation.draw_representation(test_set, 32, seed=1)
    clean = test_set.pixels(indices)
    corrupted = {
        s: corrupt_images(clean, CorruptionSpec("gaussian_noise", s), indices=indices)
        for s in (1, 5)
    }
    points = {p.severity: p for p in diagnostics.severity_similarity_curve(
        trained, clean, corrupted, "bn3"
    )}
    assert points[5].unadapted < points[1].unadapted
    assert points[5].adapted >= points[5].unadapted


def test_augmented_training_is_an_upper_bound(trained, train_set, test_set):
    noisy = _corrupted(test_set, "gaussian_noise")
    upper = fit("tiny-cnn-bn", train_set, CorruptionSpec("gaussian_noise", 3))
    before, after = _gain(trained, noisy)
    assert 1.0 - top1_error(upper, noisy.dataset) > after > before


@pytest.mark.parametrize("preset", ["tiny-cnn-gn", "tiny-cnn-in"])
def test_batch_independent_normalization(train_set, test_set, preset):
    model = fit(preset, train_set)
    assert accuracy(model, test_set) >= 0.85
    table, _ = evaluate(model, [_corrupted(test_set, "gaussian_noise")])
    assert len(table.cells) == 1
    with pytest.raises(SemanticError, match="no batch normalization layers"):
        adaptation.rectify(model, test_set.pixels(np.arange(32)), POLICY)
