"""Metrics, multi-seed aggregation, table formatting, and the ablation matrix."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import ToolkitError
from .pipeline import OBJ_ADAPET, OBJ_HEAD, StageConfig, validate_plan

POSITIVE = "relevant"


@dataclass(frozen=True)
class RunMetrics:
    seed: int
    accuracy: float
    f1: float
    predictions: dict[str, str]


@dataclass(frozen=True)
class AggregateCell:
    min: float
    mean: float
    std: float
    max: float

    def __post_init__(self):
        if not (self.min <= self.mean + 1e-12 and self.mean <= self.max + 1e-12):
            raise ToolkitError("aggregate cell violates min <= mean <= max")
        if self.std < 0:
            raise ToolkitError("std must be >= 0")

    def scaled(self, factor: float) -> "AggregateCell":
        return AggregateCell(self.min * factor, self.mean * factor, self.std * factor, self.max * factor)


def accuracy(predictions: dict[str, str], golds: dict[str, str]) -> float:
    _check_aligned(predictions, golds)
    return sum(1 for i, p in predictions.items() if p == golds[i]) / len(golds)


def _check_aligned(predictions: dict[str, str], golds: dict[str, str]) -> None:
    if set(predictions) != set(golds):
        missing = set(golds) - set(predictions)
        extra = set(predictions) - set(golds)
        raise ToolkitError(f"prediction/gold id mismatch (missing {len(missing)}, extra {len(extra)})")
    if not golds:
        raise ToolkitError("empty evaluation set")


def binary_f1(predictions: dict[str, str], golds: dict[str, str]) -> float:
    """F1 of the positive ("relevant") class; 0 when precision+recall is 0."""
    _check_aligned(predictions, golds)
    tp = sum(1 for i in golds if predictions[i] == POSITIVE and golds[i] == POSITIVE)
    fp = sum(1 for i in golds if predictions[i] == POSITIVE and golds[i] != POSITIVE)
    fn = sum(1 for i in golds if predictions[i] != POSITIVE and golds[i] == POSITIVE)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def population_std(values: Sequence[float]) -> float:
    if max(values) == min(values):
        return 0.0  # exact, untouched by float summation error
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


def aggregate_values(values: Sequence[float]) -> AggregateCell:
    if len(values) < 2:
        raise ToolkitError("aggregation needs at least two runs")
    return AggregateCell(
        min=min(values),
        mean=sum(values) / len(values),
        std=population_std(values),
        max=max(values),
    )


def aggregate_runs(runs: Sequence[RunMetrics]) -> dict[str, AggregateCell]:
    """min/mean/std/max per metric over the seeds; std is population std."""
    if len(runs) < 2:
        raise ToolkitError("aggregation needs at least two runs")
    return {
        "accuracy": aggregate_values([r.accuracy for r in runs]),
        "f1": aggregate_values([r.f1 for r in runs]),
    }


def format_cell(cell: AggregateCell) -> str:
    """Render as "MIN/ MEAN(STD) /MAX" with two decimals."""
    return f"{cell.min:.2f}/ {cell.mean:.2f}({cell.std:.2f}) /{cell.max:.2f}"


_CELL_RE = re.compile(
    r"^\s*(-?\d+(?:\.\d+)?)/ (-?\d+(?:\.\d+)?)\((-?\d+(?:\.\d+)?)\) /(-?\d+(?:\.\d+)?)\s*$"
)


def parse_cell(text: str) -> AggregateCell:
    match = _CELL_RE.match(text)
    if not match:
        raise ToolkitError(f"unparseable cell {text!r}")
    lo, mean, std, hi = (float(g) for g in match.groups())
    return AggregateCell(min=lo, mean=mean, std=std, max=hi)


# ---------------------------------------------------------------------------
# Ablation matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    name: str
    stages: tuple[StageConfig, ...]
    use_augmentation: bool


def ablation_matrix(full_plan: Sequence[StageConfig], has_augmentation: bool = True) -> list[Experiment]:
    """The four arms: full pipeline, without augmentation, without the
    middle fine-tuning levels, and with a plain head instead of the
    few-shot objective."""
    stages = validate_plan(full_plan)

    def head_variant(stage: StageConfig) -> StageConfig:
        if stage.level >= 2 and stage.objective == OBJ_ADAPET:
            return replace(stage, objective=OBJ_HEAD)
        return stage

    no_multilevel = tuple(s for s in stages if s.level in (0, 3))
    if len(no_multilevel) != 2:
        raise ToolkitError("full plan must contain level 0 and level 3 stages")
    experiments = [
        Experiment("full", stages, use_augmentation=has_augmentation),
        Experiment("wo_augmentation", stages, use_augmentation=False),
        Experiment("wo_multilevel", no_multilevel, use_augmentation=has_augmentation),
        Experiment("wo_adapet", tuple(head_variant(s) for s in stages), use_augmentation=has_augmentation),
    ]
    for exp in experiments:
        validate_plan(exp.stages)
        if exp.name == "wo_adapet":
            for s in exp.stages:
                if s.objective == OBJ_ADAPET:
                    raise ToolkitError("wo_adapet arm still carries an adapet stage")
    return experiments


def render_table(rows: list[tuple[str, dict[str, AggregateCell]]], metrics: tuple[str, ...] = ("accuracy", "f1")) -> str:
    """Human-readable results table (values already in percent)."""
    header = ["Name"] + [m.capitalize() for m in metrics]
    body = [[name] + [format_cell(cells[m]) for m in metrics] for name, cells in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
