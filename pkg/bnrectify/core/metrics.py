"""
Top-1 error grids, corruption error and report files
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bnrectify.core import const
from bnrectify.core.corruptions import KINDS, CorruptedSet
from bnrectify.core.dataset import RawDataset
from bnrectify.core.errors import FormatError, SemanticError
from bnrectify.core.model import ModelGraph, predict


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CellResult:
    """Top-1 error of one ``(corruption, severity)`` cell."""

    kind: str
    severity: int
    error: float
    n_samples: int

    def __post_init__(self):
        if not 0.0 <= self.error <= 1.0:
            raise SemanticError(
                f"error of {self.kind}-{self.severity} out of [0, 1]: {self.error}"
            )


@dataclass(frozen=True)
class ErrorTable:
    """
    Errors of one model over a grid of corruption cells.

    :ivar model: Identifier of the evaluated model.
    :ivar adapted: Whether the errors were measured after rectification.
    :ivar policy: Label of the adaptation policy, empty when unadapted.
    :ivar cells: One result per cell, ordered by kind then severity.
    """

    model: str
    adapted: bool = False
    policy: str = ""
    cells: tuple[CellResult, ...] = ()

    def __post_init__(self):
        seen = set()
        for cell in self.cells:
            if (cell.kind, cell.severity) in seen:
                raise SemanticError(f"duplicate cell {cell.kind}-{cell.severity}")
            seen.add((cell.kind, cell.severity))

    @property
    def kinds(self) -> tuple[str, ...]:
        present = {cell.kind for cell in self.cells}
        return tuple(kind for kind in KINDS if kind in present)

    def cell(self, kind: str, severity: int) -> CellResult:
        for cell in self.cells:
            if cell.kind == kind and cell.severity == severity:
                return cell
        raise SemanticError(f"no result for {kind}-{severity} in table of {self.model}")

    def errors(self, kind: str) -> dict[int, float]:
        """Errors of ``kind`` keyed by severity."""
        return {c.severity: c.error for c in self.cells if c.kind == kind}

    @property
    def mean_error(self) -> float:
        if not self.cells:
            raise SemanticError(f"error table of {self.model} is empty")
        return float(np.mean([cell.error for cell in self.cells]))

    @property
    def accuracy(self) -> float:
        return 1.0 - self.mean_error

    def kind_accuracy(self, kind: str) -> float:
        errors = list(self.errors(kind).values())
        if not errors:
            raise SemanticError(f"no results for {kind} in table of {self.model}")
        return 1.0 - float(np.mean(errors))


def top1_error(model: ModelGraph, dataset: RawDataset, indices=None) -> float:
    """
    Eval-mode top-1 error on ``dataset`` (restricted to ``indices``)

    :rtype: float
    """
    labels = dataset.labels if indices is None else dataset.labels[indices]
    if not len(labels):
        raise SemanticError("cannot evaluate on an empty dataset")
    predictions = predict(model, dataset.pixels(indices))
    return float(np.mean(predictions != labels))


def _check_sets(model: ModelGraph, datasets) -> None:
    for dataset in datasets:
        dataset.check_labels(model.num_classes)
        if dataset.image_shape != tuple(model.input_shape):
            raise SemanticError(
                f"dataset images {dataset.image_shape} do not fit model input "
                f"{tuple(model.input_shape)}"
            )


def evaluate(
    model: ModelGraph, corrupted_sets: list[CorruptedSet], clean: RawDataset | None = None
) -> tuple[ErrorTable, float | None]:
    """
    Evaluate ``model`` without adaptation on every corrupted set

    :param clean: Optional clean test set.

    :return: ``(table, clean_accuracy)``; ``clean_accuracy`` is ``None``
        when no clean set is given.
    :rtype: tuple
    """
    datasets = [s.dataset for s in corrupted_sets]
    _check_sets(model, datasets + ([clean] if clean is not None else []))
    cells = []
    for corrupted in corrupted_sets:
        error = top1_error(model, corrupted.dataset)
        logger.info("%s: error %.4f", corrupted.label, error)
        cells.append(
            CellResult(corrupted.kind, corrupted.severity, error, len(corrupted.dataset))
        )
    clean_accuracy = None if clean is None else 1.0 - top1_error(model, clean)
    return ErrorTable(model.identifier, False, "", tuple(cells)), clean_accuracy


def corruption_error(model_errors, baseline_errors) -> float:
    """
    Summed model error over summed baseline error, in percent

    :param model_errors: Per-severity errors of the evaluated model.
    :param baseline_errors: Per-severity errors of the baseline, same
        severities in the same order.

    :raises SemanticError: When the lengths differ or the baseline
        makes no mistakes at all.

    :rtype: float
    """
    model_errors = np.asarray(model_errors, dtype=np.float64)
    baseline_errors = np.asarray(baseline_errors, dtype=np.float64)
    if model_errors.shape != baseline_errors.shape or model_errors.ndim != 1:
        raise SemanticError(
            f"model errors of shape {model_errors.shape} do not pair with baseline "
            f"errors of shape {baseline_errors.shape}"
        )
    denominator = float(baseline_errors.sum())
    if denominator == 0.0:
        raise SemanticError("baseline solves corruption perfectly")
    return 100.0 * float(model_errors.sum()) / denominator


def corruption_errors(table: ErrorTable, baseline: ErrorTable) -> dict[str, float]:
    """CE per corruption kind of ``table`` against ``baseline``."""
    result = {}
    for kind in table.kinds:
        severities = sorted(table.errors(kind))
        model_errors = [table.cell(kind, s).error for s in severities]
        baseline_errors = [baseline.cell(kind, s).error for s in severities]
        result[kind] = corruption_error(model_errors, baseline_errors)
    return result


@dataclass
class EvalReport:
    """
    Summary of one evaluation, with optional adapted counterpart.

    Starred fields describe the adapted table.
    """

    table: ErrorTable
    baseline: str | None = None
    clean_accuracy: float | None = None
    ce: dict[str, float] = field(default_factory=dict)
    mce: float | None = None
    adapted: ErrorTable | None = None
    ce_adapted: dict[str, float] = field(default_factory=dict)
    mce_adapted: float | None = None

    @property
    def accuracy(self) -> float:
        return self.table.accuracy

    @property
    def accuracy_adapted(self) -> float | None:
        return None if self.adapted is None else self.adapted.accuracy


def build_report(
    table: ErrorTable,
    baseline: ErrorTable | None = None,
    adapted: ErrorTable | None = None,
    clean_accuracy: float | None = None,
) -> EvalReport:
    """
    Assemble CE, mCE and accuracy for ``table`` and its adapted version

    Without a baseline only accuracies are reported.

    :rtype: :class:`EvalReport`
    """
    report = EvalReport(
        table, None if baseline is None else baseline.model, clean_accuracy, adapted=adapted
    )
    if baseline is not None:
        report.ce = corruption_errors(table, baseline)
        report.mce = float(np.mean(list(report.ce.values())))
        if adapted is not None:
            report.ce_adapted = corruption_errors(adapted, baseline)
            report.mce_adapted = float(np.mean(list(report.ce_adapted.values())))
    return report


def _percent(value: float | None) -> float | None:
    return None if value is None else round(100.0 * value, 1)


def _rounded(values: dict[str, float]) -> dict[str, float]:
    return {kind: round(value, 1) for kind, value in values.items()}


def report_summary(report: EvalReport) -> dict:
    """The JSON summary of ``report``; percentages with one decimal."""
    return {
        "model": report.table.model,
        "baseline": report.baseline,
        "clean_accuracy": _percent(report.clean_accuracy),
        "Acc": _percent(report.accuracy),
        "Acc*": _percent(report.accuracy_adapted),
        "mCE": None if report.mce is None else round(report.mce, 1),
        "mCE*": None if report.mce_adapted is None else round(report.mce_adapted, 1),
        "CE": _rounded(report.ce),
        "CE*": _rounded(report.ce_adapted),
    }


def write_report(report: EvalReport, csv_path: str | Path, json_path: str | Path) -> None:
    """Write the error grid (CSV) and the summary (JSON)."""
    tables = [report.table] + ([report.adapted] if report.adapted is not None else [])
    write_error_tables(csv_path, tables)
    try:
        Path(json_path).write_text(
            json.dumps(report_summary(report), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise FormatError(f"cannot write {json_path}: {exc.strerror}") from exc


def write_error_tables(path: str | Path, tables: list[ErrorTable]) -> None:
    """
    Write error grids as CSV; errors are fractions with six decimals
    """
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(const.REPORT_COLUMNS)
            for table in tables:
                for cell in table.cells:
                    writer.writerow([
                        cell.kind, cell.severity, f"{cell.error:.6f}", cell.n_samples,
                        str(table.adapted).lower(), table.policy,
                    ])
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


def _report_model(csv_path: Path) -> str:
    """``model`` from the JSON summary written next to a report CSV."""
    json_path = csv_path.with_suffix(".json")
    try:
        summary = json.loads(json_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        logger.warning("%s has no summary next to it; naming the model %r", csv_path,
                       csv_path.stem)
        return csv_path.stem
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read {json_path}: {exc}") from exc
    model = summary.get("model") if isinstance(summary, dict) else None
    if not isinstance(model, str) or not model:
        raise FormatError(f"{json_path}: no model identifier")
    return model


def read_error_table(path: str | Path, adapted: bool = False) -> ErrorTable:
    """
    Read the unadapted (or adapted) grid back from a report CSV

    Used to load baseline errors. The model identifier comes from the
    ``<stem>.json`` summary :func:`write_report` puts next to the CSV;
    without one it falls back to the file stem.

    :rtype: :class:`ErrorTable`
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != const.REPORT_COLUMNS:
                raise FormatError(f"{path}: expected columns {','.join(const.REPORT_COLUMNS)}")
            rows = list(reader)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    cells = []
    try:
        for row in rows:
            if (row["adapted"] == "true") != adapted:
                continue
            cells.append(CellResult(
                row["corruption"], int(row["severity"]), float(row["error"]),
                int(row["n_samples"]),
            ))
    except ValueError as exc:
        raise FormatError(f"{path}: malformed row: {exc}") from exc
    if not cells:
        raise FormatError(f"{path}: no {'adapted' if adapted else 'unadapted'} rows")
    cells.sort(key=lambda c: (KINDS.index(c.kind) if c.kind in KINDS else len(KINDS), c.severity))
    return ErrorTable(_report_model(path), adapted, "", tuple(cells))


def write_accuracy_table(path: str | Path, tables: dict[str, ErrorTable]) -> None:
    """
    One row per corruption kind, one accuracy column (percent) per table,
    and a final ``mean`` row.
    """
    names = list(tables)
    kinds = next(iter(tables.values())).kinds if tables else ()
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["corruption", *names])
            for kind in kinds:
                writer.writerow(
                    [kind, *(f"{100 * tables[n].kind_accuracy(kind):.1f}" for n in names)]
                )
            writer.writerow(["mean", *(f"{100 * tables[n].accuracy:.1f}" for n in names)])
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc
