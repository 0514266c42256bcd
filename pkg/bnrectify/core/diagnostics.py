"""
Feature similarity and BN statistic distance measurements
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from bnrectify.core.adaptation import AdaptationPolicy, rectify
from bnrectify.core.dataset import RawDataset
from bnrectify.core.errors import FormatError, SemanticError, shape_mismatch
from bnrectify.core.model import FeatureTap, LayerKind, ModelGraph, forward, layer_input
from bnrectify.core.normalization import compute_batch_stats
from bnrectify.core.rng import RngStream


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CosineResult:
    """
    :ivar similarity: Mean cosine similarity over the counted samples;
        NaN when every sample was skipped.
    :ivar counted: Samples that entered the mean.
    :ivar skipped: Samples with a zero-norm feature vector.
    """

    layer: str
    similarity: float
    counted: int
    skipped: int


def cosine_feature_similarity(
    taps_a: list[FeatureTap], taps_b: list[FeatureTap]
) -> dict[str, CosineResult]:
    """
    Per-layer cosine similarity of two sets of feature taps

    Each sample's feature map is flattened to a vector; the cosine of the
    two vectors is averaged over the batch. Samples where either vector
    has zero norm are skipped and counted.

    :rtype: dict[str, CosineResult]
    """
    by_layer = {tap.layer: tap.activation for tap in taps_b}
    if [t.layer for t in taps_a] != list(by_layer):
        raise SemanticError(
            f"tap layers differ: {[t.layer for t in taps_a]} vs {list(by_layer)}"
        )
    results = {}
    for tap in taps_a:
        a = np.asarray(tap.activation, dtype=np.float64)
        b = np.asarray(by_layer[tap.layer], dtype=np.float64)
        if a.shape != b.shape:
            raise shape_mismatch(f"taps of {tap.layer}", a.shape, b.shape)
        a = a.reshape(a.shape[0], -1)
        b = b.reshape(b.shape[0], -1)
        norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        valid = norms > 0
        skipped = int(np.count_nonzero(~valid))
        if skipped:
            logger.warning("%s: skipped %d zero-norm samples", tap.layer, skipped)
        if valid.any():
            cosines = np.einsum("ij,ij->i", a[valid], b[valid]) / norms[valid]
            similarity = float(np.clip(cosines, -1.0, 1.0).mean())
        else:
            similarity = float("nan")
        results[tap.layer] = CosineResult(tap.layer, similarity, int(valid.sum()), skipped)
    return results


def features(model: ModelGraph, x: np.ndarray, layer: str) -> list[FeatureTap]:
    """Eval-mode output of ``layer`` as a single-element tap list."""
    return list(forward(model, x, taps=[layer]).taps)


def _check_bn(model: ModelGraph, layer: str) -> None:
    if model.layer(layer).kind is not LayerKind.BN:
        raise SemanticError(f"layer {layer!r} is not a batch normalization layer")


def stat_distance(
    model: ModelGraph, batch_a: np.ndarray, batch_b: np.ndarray, layer: str
) -> tuple[float, float]:
    """
    Distance between the batch statistics two batches induce at a BN layer

    Activations reach ``layer`` by eval-mode propagation.

    :return: Channel-averaged ``|mean_a - mean_b|`` and
        ``|var_a - var_b|``.
    :rtype: tuple[float, float]
    """
    _check_bn(model, layer)
    stats_a = compute_batch_stats(layer_input(model, batch_a, layer))
    stats_b = compute_batch_stats(layer_input(model, batch_b, layer))
    mean = np.abs(stats_a.mean.astype(np.float64) - stats_b.mean).mean()
    variance = np.abs(stats_a.variance.astype(np.float64) - stats_b.variance).mean()
    return float(mean), float(variance)


def repeated_stat_distance(
    model: ModelGraph, pairs, layer: str
) -> tuple[float, float]:
    """Average of :func:`stat_distance` over ``(batch_a, batch_b)`` pairs."""
    distances = [stat_distance(model, a, b, layer) for a, b in pairs]
    if not distances:
        raise SemanticError("no batch pairs to measure")
    mean, variance = np.mean(np.asarray(distances), axis=0)
    return float(mean), float(variance)


STUDY_COMPARISONS = (
    "clean_vs_clean",
    "corrupted_vs_corrupted",
    "clean_vs_corrupted_same_content",
    "clean_vs_corrupted_different_content",
)


def _check_paired(clean: RawDataset, corrupted: RawDataset) -> None:
    if clean.images.shape != corrupted.images.shape:
        raise SemanticError(
            f"unpaired datasets: clean images {clean.images.shape} vs corrupted "
            f"{corrupted.images.shape}"
        )


def style_distance_study(
    model: ModelGraph,
    clean: RawDataset,
    corrupted: RawDataset,
    layer: str,
    batch_size: int = 32,
    repeats: int = 100,
    seed: int = 0,
) -> dict[str, tuple[float, float]]:
    """
    Statistic distances for four kinds of batch pairs, averaged over
    ``repeats`` draws

    ``corrupted`` must be the corrupted copy of ``clean``, image by image.
    Different-content pairs use disjoint index sets; same-content pairs
    use the same indices in both sets.

    :return: ``(mean distance, variance distance)`` keyed by the names
        in :data:`STUDY_COMPARISONS`.
    :rtype: dict
    """
    _check_bn(model, layer)
    _check_paired(clean, corrupted)
    if 2 * batch_size > len(clean):
        raise SemanticError(
            f"need at least {2 * batch_size} images for batches of {batch_size}, "
            f"got {len(clean)}"
        )
    rng = RngStream(seed).child("style-distance", layer).generator()
    pairs = {name: [] for name in STUDY_COMPARISONS}
    for _ in range(repeats):
        order = rng.permutation(len(clean))
        first, second = order[:batch_size], order[batch_size : 2 * batch_size]
        pairs["clean_vs_clean"].append((clean.pixels(first), clean.pixels(second)))
        pairs["corrupted_vs_corrupted"].append(
            (corrupted.pixels(first), corrupted.pixels(second))
        )
        pairs["clean_vs_corrupted_same_content"].append(
            (clean.pixels(first), corrupted.pixels(first))
        )
        pairs["clean_vs_corrupted_different_content"].append(
            (clean.pixels(first), corrupted.pixels(second))
        )
    study = {name: repeated_stat_distance(model, pairs[name], layer) for name in STUDY_COMPARISONS}
    for name, (mean, variance) in study.items():
        logger.info("%s at %s: |dmean| %.4g |dvar| %.4g", name, layer, mean, variance)
    return study


def write_distance_table(path: str | Path, study: Mapping[str, tuple[float, float]]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["comparison", "mean_distance", "variance_distance"])
            for name, (mean, variance) in study.items():
                writer.writerow([name, f"{mean:.6g}", f"{variance:.6g}"])
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


@dataclass(frozen=True)
class SimilarityPoint:
    severity: int
    unadapted: float
    adapted: float


def severity_similarity_curve(
    model: ModelGraph,
    clean: np.ndarray,
    corrupted: Mapping[int, np.ndarray],
    layer: str,
    adapted: ModelGraph | Mapping[int, ModelGraph] | None = None,
    policy: AdaptationPolicy | None = None,
) -> list[SimilarityPoint]:
    """
    Feature similarity to the clean features as severity grows

    For each severity, the unadapted value compares the clean batch's
    features with the corrupted batch's features, both on ``model``; the
    adapted value compares the same clean features with the corrupted
    batch's features on a rectified model. Severity 0 is the clean batch
    itself on the source model, so both values are 1 there.

    :param clean: Clean float images ``(N, C, H, W)``.
    :param corrupted: Corrupted copies of ``clean`` keyed by severity.
    :param adapted: One rectified model for every severity, or one per
        severity. When omitted, ``model`` is rectified on each corrupted
        batch with ``policy`` (both statistics, all layers, by default).

    :rtype: list[SimilarityPoint]
    """
    batches = {0: clean, **dict(corrupted)}
    for severity, batch in batches.items():
        if batch.shape != clean.shape:
            raise SemanticError(
                f"unpaired batches: severity {severity} has shape {batch.shape}, "
                f"clean has {clean.shape}"
            )
    reference = features(model, clean, layer)
    points = []
    for severity in sorted(batches):
        batch = batches[severity]
        if severity == 0:
            rectified = model
        elif isinstance(adapted, ModelGraph):
            rectified = adapted
        elif adapted is not None:
            rectified = adapted[severity]
        else:
            scope = policy or AdaptationPolicy()
            rectified = rectify(
                model,
                batch,
                AdaptationPolicy(scope.stats_scope, scope.layer_scope, len(batch)),
            )
        point = SimilarityPoint(
            severity,
            cosine_feature_similarity(reference, features(model, batch, layer))[layer].similarity,
            cosine_feature_similarity(reference, features(rectified, batch, layer))[
                layer
            ].similarity,
        )
        logger.info(
            "severity %d: unadapted %.4f adapted %.4f",
            severity, point.unadapted, point.adapted,
        )
        points.append(point)
    return points


def write_similarity_curve(path: str | Path, points: list[SimilarityPoint]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["severity", "unadapted", "adapted"])
            for point in points:
                writer.writerow(
                    [point.severity, f"{point.unadapted:.6f}", f"{point.adapted:.6f}"]
                )
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc
