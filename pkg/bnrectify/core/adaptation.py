"""
Test-time rectification of batch normalization statistics

A small batch of unlabeled representation samples from the target
distribution replaces the population statistics of selected BN layers;
no weight is trained.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bnrectify.core import const
from bnrectify.core.corruptions import CorruptedSet
from bnrectify.core.dataset import RawDataset
from bnrectify.core.errors import FormatError, SemanticError, ShapeError
from bnrectify.core.metrics import (
    CellResult,
    ErrorTable,
    corruption_error,
    evaluate,
    top1_error,
)
from bnrectify.core.model import ModelGraph, Mode, forward
from bnrectify.core.normalization import StatsScope
from bnrectify.core.rng import RngStream, derive_seed


logger = logging.getLogger(__name__)

LAYER_SCOPES = ("all", "front_third", "middle_third", "end_third")

# Short forms accepted on the command line.
STATS_ALIASES = {"both": "both", "mean": "mean_only", "var": "variance_only"}
LAYER_ALIASES = {
    "all": "all",
    "front": "front_third",
    "middle": "middle_third",
    "end": "end_third",
}


@dataclass(frozen=True)
class AdaptationPolicy:
    """
    Which statistics of which BN layers get rectified, from how many
    samples.

    :ivar stats_scope: :class:`StatsScope` member.
    :ivar layer_scope: One of :data:`LAYER_SCOPES` or a tuple of BN layer
        names.
    :ivar sample_count: Number of representation samples.
    """

    stats_scope: StatsScope = StatsScope.BOTH
    layer_scope: str | tuple[str, ...] = "all"
    sample_count: int = const.DEFAULT_SAMPLE_COUNT

    def __post_init__(self):
        object.__setattr__(self, "stats_scope", StatsScope(self.stats_scope))
        if isinstance(self.layer_scope, str):
            if self.layer_scope not in LAYER_SCOPES:
                raise SemanticError(
                    f"unknown layer scope {self.layer_scope!r}, expected one of "
                    f"{', '.join(LAYER_SCOPES)} or a list of BN layer names"
                )
        else:
            object.__setattr__(self, "layer_scope", tuple(self.layer_scope))
            if not self.layer_scope:
                raise SemanticError("an explicit layer scope needs at least one layer")
        if self.sample_count < 1:
            raise SemanticError(f"sample count must be at least 1, got {self.sample_count}")

    @classmethod
    def parse(cls, stats: str = "both", layers: str = "all",
              sample_count: int = const.DEFAULT_SAMPLE_COUNT) -> "AdaptationPolicy":
        """
        Build a policy from command-line words

        :param stats: ``both``, ``mean`` or ``var`` (long names work too).
        :param layers: ``all``, ``front``, ``middle``, ``end`` or a
            comma-separated list of BN layer names.

        :rtype: :class:`AdaptationPolicy`
        """
        scope = STATS_ALIASES.get(stats, stats)
        try:
            scope = StatsScope(scope)
        except ValueError as exc:
            raise SemanticError(f"unknown statistics scope {stats!r}") from exc
        if layers in LAYER_ALIASES or layers in LAYER_SCOPES:
            layer_scope = LAYER_ALIASES.get(layers, layers)
        else:
            layer_scope = tuple(name.strip() for name in layers.split(",") if name.strip())
        return cls(scope, layer_scope, sample_count)

    @property
    def label(self) -> str:
        layers = self.layer_scope
        if not isinstance(layers, str):
            layers = "+".join(layers)
        return f"{self.stats_scope.value}/{layers}/n{self.sample_count}"

    def resolve_layers(self, model: ModelGraph) -> tuple[str, ...]:
        """
        Names of the BN layers this policy rectifies on ``model``

        :raises SemanticError: When the model has no BN layers or an
            explicit name is missing or not a BN layer.

        :rtype: tuple[str]
        """
        bn_layers = model.bn_layers()
        if not bn_layers:
            raise SemanticError(
                f"model {model.identifier} (flavor {model.flavor}) has no batch normalization "
                "layers to rectify; evaluate it without adaptation"
            )
        if self.layer_scope == "all":
            return bn_layers
        if isinstance(self.layer_scope, str):
            front, middle, end = partition_bn_layers(model)
            return {"front_third": front, "middle_third": middle, "end_third": end}[
                self.layer_scope
            ]
        names = {layer.name for layer in model.layers}
        for name in self.layer_scope:
            if name not in names:
                raise SemanticError(f"policy names unknown layer {name!r}")
            if name not in bn_layers:
                raise SemanticError(
                    f"policy names {name!r}, a {model.layer(name).kind.value} layer, "
                    "not a batch normalization layer"
                )
        # Depth order, whatever order the names were given in.
        return tuple(name for name in bn_layers if name in self.layer_scope)


def partition_bn_layers(model: ModelGraph) -> tuple[tuple[str, ...], ...]:
    """
    Split the BN layers into front, middle and end thirds

    Cuts fall at ``floor(L / 3)`` and ``floor(2 L / 3)`` for ``L`` BN
    layers, so the end third takes the remainder.

    :rtype: tuple
    """
    layers = model.bn_layers()
    first, second = len(layers) // 3, (2 * len(layers)) // 3
    return layers[:first], layers[first:second], layers[second:]


def rectify(model: ModelGraph, batch: np.ndarray, policy: AdaptationPolicy) -> ModelGraph:
    """
    Rectify BN population statistics from one batch of representation
    samples

    Runs a single adapt-mode forward pass: every in-scope BN layer takes
    the statistics of its incoming activations (restricted to the
    policy's stats scope) and normalizes with them; other layers keep
    their population statistics.

    :param model: Source model; never modified.
    :type model: :class:`ModelGraph`
    :param batch: Float images ``(N, C, H, W)`` with ``N`` equal to the
        policy's sample count.
    :param policy: The adaptation policy.
    :type policy: :class:`AdaptationPolicy`

    :return: A new model sharing every weight with ``model``.
    :rtype: :class:`ModelGraph`
    """
    layers = policy.resolve_layers(model)
    if batch.ndim != 4 or batch.shape[0] != policy.sample_count:
        raise ShapeError(
            f"representation batch of shape {batch.shape} does not hold "
            f"{policy.sample_count} samples"
        )
    if policy.sample_count < 2:
        logger.warning(
            "rectifying from %d sample; variance estimates may be degenerate",
            policy.sample_count,
        )
    logger.debug("rectifying %s with policy %s", ", ".join(layers), policy.label)
    return forward(model, batch, Mode.ADAPT, policy=policy).model


def draw_representation(dataset: RawDataset, count: int, seed: int, label: str = "") -> np.ndarray:
    """
    Indices of ``count`` representation samples, drawn uniformly without
    replacement

    The draw depends only on ``seed``, ``label`` and ``count``.

    :rtype: :class:`numpy.ndarray`
    """
    if count > len(dataset):
        raise SemanticError(
            f"cannot draw {count} representation samples from {len(dataset)} images"
        )
    rng = RngStream(derive_seed(seed, "representation", label, count)).generator()
    return rng.choice(len(dataset), size=count, replace=False)


def adapt_to_dataset(
    model: ModelGraph, dataset: RawDataset, policy: AdaptationPolicy, seed: int, label: str = ""
) -> tuple[ModelGraph, np.ndarray]:
    """
    Draw representation samples from ``dataset`` and rectify on them

    :return: ``(adapted_model, sample_indices)``.
    :rtype: tuple
    """
    indices = draw_representation(dataset, policy.sample_count, seed, label)
    return rectify(model, dataset.pixels(indices), policy), indices


def evaluate_adapted(
    model: ModelGraph,
    corrupted_sets: list[CorruptedSet],
    policy: AdaptationPolicy,
    seed: int,
    exclude_representation: bool = False,
) -> ErrorTable:
    """
    Rectify a fresh copy of ``model`` for every corrupted set, then
    evaluate it on that set

    :param exclude_representation: Leave the representation samples out
        of the evaluated images.
    :type exclude_representation: bool

    :rtype: :class:`ErrorTable`
    """
    policy.resolve_layers(model)
    cells = []
    for corrupted in corrupted_sets:
        corrupted.dataset.check_labels(model.num_classes)
        adapted, drawn = adapt_to_dataset(model, corrupted.dataset, policy, seed, corrupted.label)
        indices = None
        if exclude_representation:
            indices = np.setdiff1d(np.arange(len(corrupted.dataset)), drawn)
            if not len(indices):
                raise SemanticError(
                    f"{corrupted.label}: no images left after excluding representation samples"
                )
        error = top1_error(adapted, corrupted.dataset, indices)
        n_samples = len(corrupted.dataset) if indices is None else len(indices)
        logger.info("%s adapted (%s): error %.4f", corrupted.label, policy.label, error)
        cells.append(CellResult(corrupted.kind, corrupted.severity, error, n_samples))
    return ErrorTable(model.identifier, True, policy.label, tuple(cells))


@dataclass(frozen=True)
class SampleCountRow:
    """
    :ivar count: Number of representation samples; 0 for the unadapted
        model.
    :ivar accuracy: Accuracy averaged over the evaluated sets.
    :ivar ce: Corruption error against the baseline, if one was given.
    """

    count: int
    accuracy: float
    ce: float | None = None


def ablate_sample_count(
    model: ModelGraph,
    corrupted_sets: list[CorruptedSet],
    counts,
    seed: int,
    baseline: ErrorTable | None = None,
) -> list[SampleCountRow]:
    """
    Accuracy as a function of the number of representation samples

    For every count the model is rectified (both statistics, all layers)
    separately per set from a fresh seeded draw. The first row, count 0,
    is the unadapted model.

    :param baseline: Errors of the CE baseline on the same cells.
    :type baseline: :class:`ErrorTable`

    :rtype: list[SampleCountRow]
    """
    if not corrupted_sets:
        raise SemanticError("sample-count ablation needs at least one corrupted set")
    smallest = min(len(s.dataset) for s in corrupted_sets)
    for count in counts:
        if not 1 <= count <= smallest:
            raise SemanticError(f"sample count {count} outside [1, {smallest}]")

    def row(count: int, table: ErrorTable) -> SampleCountRow:
        ce = None
        if baseline is not None:
            ce = corruption_error(
                [c.error for c in table.cells],
                [baseline.cell(c.kind, c.severity).error for c in table.cells],
            )
        return SampleCountRow(count, table.accuracy, ce)

    rows = [row(0, evaluate(model, corrupted_sets)[0])]
    for count in counts:
        policy = AdaptationPolicy(StatsScope.BOTH, "all", int(count))
        rows.append(row(int(count), evaluate_adapted(model, corrupted_sets, policy, seed)))
        logger.info("n=%d: accuracy %.4f", count, rows[-1].accuracy)
    return rows


def write_sample_count_table(path: str | Path, rows: list[SampleCountRow]) -> None:
    """Write the ablation as CSV: ``n``, ``Acc`` and ``CE`` in percent."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["n", "Acc", "CE"])
            for r in rows:
                ce = "" if r.ce is None else f"{r.ce:.1f}"
                writer.writerow([r.count, f"{100 * r.accuracy:.1f}", ce])
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


def stats_policies(sample_count: int = const.DEFAULT_SAMPLE_COUNT) -> dict[str, AdaptationPolicy]:
    """Both statistics, mean only and variance only, on every layer."""
    return {
        "Acc*": AdaptationPolicy(StatsScope.BOTH, "all", sample_count),
        "Acc*_mean": AdaptationPolicy(StatsScope.MEAN_ONLY, "all", sample_count),
        "Acc*_var": AdaptationPolicy(StatsScope.VARIANCE_ONLY, "all", sample_count),
    }


def location_policies(
    sample_count: int = const.DEFAULT_SAMPLE_COUNT,
) -> dict[str, AdaptationPolicy]:
    """Both statistics on each third of the BN layers, and on all of them."""
    return {
        scope: AdaptationPolicy(StatsScope.BOTH, scope, sample_count)
        for scope in ("front_third", "middle_third", "end_third", "all")
    }


def ablate_policies(
    model: ModelGraph,
    corrupted_sets: list[CorruptedSet],
    policies: dict[str, AdaptationPolicy],
    seed: int,
) -> dict[str, ErrorTable]:
    """
    Evaluate each named policy, plus the unadapted model under ``Acc``

    :rtype: dict[str, ErrorTable]
    """
    tables = {"Acc": evaluate(model, corrupted_sets)[0]}
    for name, policy in policies.items():
        tables[name] = evaluate_adapted(model, corrupted_sets, policy, seed)
        logger.info("%s: accuracy %.4f", name, tables[name].accuracy)
    return tables
