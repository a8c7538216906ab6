"""RDTE dataset loading and the quantitative evaluation surface: binarized
precision/recall/F-beta, raw inter-annotator agreement, and Krippendorff's
alpha over ordinal ratings.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .core import (
    Decomposition,
    Hypothesis,
    HypothesisKind,
    Provenance,
    Question,
    QuestionOption,
    RdteJudgment,
    binarize_sufficiency,
    ensure_ordinal,
)

__all__ = [
    "Split",
    "RdteItem",
    "RdteSchemaError",
    "DegenerateDataError",
    "load_rdte_dataset",
    "split_counts",
    "positive_rate",
    "paired_sufficiency",
    "f_beta",
    "precision_recall",
    "raw_agreement",
    "krippendorff_alpha",
    "EvalReport",
    "evaluate_predictions",
]


class Split(str, Enum):
    ARC = "arc"
    HOTPOT = "hotpot"


class RdteSchemaError(Exception):
    """A dataset line violating the item schema; names line and field."""


class DegenerateDataError(Exception):
    """Raised when agreement is undefined (zero expected disagreement)."""


@dataclass(frozen=True)
class RdteItem:
    question: Question
    hypothesis: Hypothesis
    decomposition: Decomposition
    judgments: tuple[RdteJudgment, ...]
    reconciled_sufficiency: Optional[int]
    split: Split

    def __post_init__(self) -> None:
        if not 1 <= len(self.judgments) <= 2:
            raise ValueError("an item carries one or two annotator judgments")
        n = len(self.decomposition.premises)
        for j in self.judgments:
            if j.premise_count != n:
                raise ValueError("judgment facet lists must match the premise count")
            if self.split is Split.HOTPOT and j.factuality is not None:
                raise ValueError("hotpot items carry no factuality lists")
            if self.split is Split.ARC and j.factuality is None:
                raise ValueError("arc items carry factuality lists")
        if self.reconciled_sufficiency is not None:
            ensure_ordinal(self.reconciled_sufficiency, "reconciled_sufficiency")


def _parse_question(data: Mapping) -> Question:
    options = tuple(QuestionOption(o["label"], o["text"]) for o in data.get("options", ()))
    return Question(
        id=str(data.get("id", "")),
        text=data["text"],
        options=options,
        gold_label=data.get("gold_label"),
    )


def _judgment_from_wire(data: Mapping, split: Split, line_no: int) -> RdteJudgment:
    def facet(name: str, required: bool) -> Optional[tuple[int, ...]]:
        value = data.get(name)
        if value is None:
            if required:
                raise RdteSchemaError(f"line {line_no}: field '{name}': required for this split")
            return None
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise RdteSchemaError(f"line {line_no}: field '{name}': expected a list of integers")
        return tuple(value)

    factuality = facet("factuality", required=split is Split.ARC)
    if split is Split.HOTPOT and factuality is not None:
        raise RdteSchemaError(f"line {line_no}: field 'factuality': hotpot items carry no factuality")
    try:
        return RdteJudgment(
            relevance=facet("relevance", required=True) or (),
            redundancy=facet("redundancy", required=True) or (),
            sufficiency=data["sufficiency"],
            factuality=factuality,
            explanation=data.get("explanation", ""),
        )
    except KeyError as exc:
        raise RdteSchemaError(f"line {line_no}: field {exc.args[0]!r}: missing") from None
    except ValueError as exc:
        raise RdteSchemaError(f"line {line_no}: {exc}") from None


def load_rdte_dataset(path: str | Path) -> list[RdteItem]:
    """Load a JSONL dataset, one judged decomposition per line.

    Each line reads ``{"question": {...}, "hypothesis": str, "kind": str,
    "premises": [str], "factuality": [int]|null, "relevance": [int],
    "redundancy": [int], "sufficiency": int, "split": "arc"|"hotpot"}``.
    A two-annotator form replaces the flat facet fields with an
    ``"annotations"`` array plus an optional ``"reconciled_sufficiency"``.
    Schema violations raise :class:`RdteSchemaError` naming line and field.
    """
    items: list[RdteItem] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise RdteSchemaError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            items.append(_parse_item(data, line_no))
    return items


def _parse_item(data: Mapping, line_no: int) -> RdteItem:
    def require(field: str):
        if field not in data:
            raise RdteSchemaError(f"line {line_no}: field {field!r}: missing")
        return data[field]

    split_raw = require("split")
    try:
        split = Split(split_raw)
    except ValueError:
        raise RdteSchemaError(f"line {line_no}: field 'split': unknown split {split_raw!r}") from None
    try:
        question = _parse_question(require("question"))
    except (KeyError, TypeError, ValueError) as exc:
        raise RdteSchemaError(f"line {line_no}: field 'question': {exc}") from None

    kind_raw = data.get("kind", HypothesisKind.TOP_LEVEL_CORRECT.value)
    try:
        kind = HypothesisKind(kind_raw)
    except ValueError:
        raise RdteSchemaError(f"line {line_no}: field 'kind': unknown kind {kind_raw!r}") from None
    depth = data.get("depth", 0 if kind.is_top_level else 1)

    premises = require("premises")
    if not isinstance(premises, list) or len(premises) < 2:
        raise RdteSchemaError(f"line {line_no}: field 'premises': need a list of at least two premises")
    try:
        from .core import Statement

        hypothesis = Hypothesis(Statement(require("hypothesis")), question.id, depth, kind)
        decomposition = Decomposition(
            hypothesis.statement, tuple(Statement(p) for p in premises), Provenance.EXTERNAL
        )
    except ValueError as exc:
        raise RdteSchemaError(f"line {line_no}: {exc}") from None

    if "annotations" in data:
        judgments = tuple(
            _judgment_from_wire(a, split, line_no) for a in data["annotations"]
        )
        reconciled = data.get("reconciled_sufficiency")
    else:
        judgments = (_judgment_from_wire(data, split, line_no),)
        reconciled = data.get("reconciled_sufficiency", data["sufficiency"])

    try:
        return RdteItem(question, hypothesis, decomposition, judgments, reconciled, split)
    except ValueError as exc:
        raise RdteSchemaError(f"line {line_no}: {exc}") from None


def split_counts(items: Sequence[RdteItem]) -> dict[str, int]:
    counts = Counter(item.split.value for item in items)
    return dict(counts)


def positive_rate(items: Sequence[RdteItem], threshold: int = 4) -> float:
    """Fraction of items whose reconciled sufficiency reaches the threshold."""
    if not items:
        raise ValueError("no items")
    positives = sum(
        1
        for item in items
        if item.reconciled_sufficiency is not None
        and binarize_sufficiency(item.reconciled_sufficiency, threshold)
    )
    return positives / len(items)


def paired_sufficiency(items: Sequence[RdteItem]) -> tuple[list[int], list[int]]:
    """Sufficiency scores of the two annotators over doubly-annotated items."""
    first, second = [], []
    for item in items:
        if len(item.judgments) == 2:
            first.append(item.judgments[0].sufficiency)
            second.append(item.judgments[1].sufficiency)
    return first, second


# --- metrics -----------------------------------------------------------------


def f_beta(precision: float, recall: float, beta: float = 0.5) -> float:
    """F-score weighting precision ``1/beta**2`` times as heavily as recall.

    beta = 0.5 puts double precedence on precision.  Returns 0 when both
    numerator and denominator vanish (precision = recall = 0).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    b2 = beta * beta
    denominator = b2 * precision + recall
    if denominator == 0.0:
        return 0.0
    return (1.0 + b2) * precision * recall / denominator


def precision_recall(predictions: Sequence[bool], golds: Sequence[bool]) -> tuple[float, float]:
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds must have equal length")
    if not predictions:
        raise ValueError("empty inputs")
    tp = sum(1 for p, g in zip(predictions, golds) if p and g)
    fp = sum(1 for p, g in zip(predictions, golds) if p and not g)
    fn = sum(1 for p, g in zip(predictions, golds) if not p and g)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def raw_agreement(
    annotator_a: Sequence[int],
    annotator_b: Sequence[int],
    threshold: int = 4,
    binarized: bool = True,
) -> float:
    """Fraction of items on which the two annotators agree, by default after
    binarizing both ordinal scores at the threshold.  With ``binarized=False``
    the raw 1-5 scores must match exactly."""
    if len(annotator_a) != len(annotator_b):
        raise ValueError("annotator lists must have equal length")
    if not annotator_a:
        raise ValueError("empty inputs")
    if binarized:
        matches = sum(
            1
            for a, b in zip(annotator_a, annotator_b)
            if binarize_sufficiency(a, threshold) == binarize_sufficiency(b, threshold)
        )
    else:
        matches = sum(
            1
            for a, b in zip(annotator_a, annotator_b)
            if ensure_ordinal(a) == ensure_ordinal(b)
        )
    return matches / len(annotator_a)


def _is_missing(value) -> bool:
    if value is None:
        return True
    try:
        return math.isnan(value)
    except TypeError:
        return False


def krippendorff_alpha(
    ratings: Sequence[Sequence],
    metric: str = "ordinal",
) -> float:
    """Krippendorff's alpha over an annotators-by-items matrix with missing
    cells (None or NaN), via the coincidence-matrix formulation.

    alpha = 1 - D_observed / D_expected.  Observed disagreement averages the
    squared distance over all within-item rating pairs (each item weighted by
    1/(m_u - 1)); expected disagreement averages it over all pairable values.
    The ordinal distance is the squared difference of cumulative rank
    positions; nominal is 0/1; interval is the squared value difference.

    Raises :class:`DegenerateDataError` when every pairable value is
    identical (expected disagreement zero) rather than returning 1.0 or NaN.
    """
    if metric not in ("ordinal", "nominal", "interval"):
        raise ValueError(f"unknown metric {metric!r}")
    if not ratings:
        raise ValueError("empty ratings matrix")
    n_items = max(len(row) for row in ratings)
    units: list[list] = []
    for j in range(n_items):
        values = [row[j] for row in ratings if j < len(row) and not _is_missing(row[j])]
        if len(values) >= 2:
            units.append(values)
    if len(units) < 2:
        raise ValueError("need at least 2 items with 2 or more ratings each")

    freq: Counter = Counter(v for unit in units for v in unit)
    n_pairable = sum(freq.values())
    if len(freq) < 2:
        raise DegenerateDataError("all rated values identical; alpha is undefined")

    if metric == "nominal":
        dist2 = lambda a, b: 0.0 if a == b else 1.0
    elif metric == "interval":
        dist2 = lambda a, b: float(a - b) ** 2
    else:
        ordered = sorted(freq)
        position: dict = {}
        running = 0.0
        for value in ordered:
            position[value] = running + freq[value] / 2.0
            running += freq[value]
        dist2 = lambda a, b: (position[a] - position[b]) ** 2

    observed = 0.0
    for unit in units:
        m = len(unit)
        within = sum(dist2(a, b) for a in unit for b in unit)
        observed += within / (m - 1)
    observed /= n_pairable

    expected = 0.0
    values = sorted(freq)
    for i, a in enumerate(values):
        for b in values[i + 1 :]:
            expected += 2.0 * freq[a] * freq[b] * dist2(a, b)
    expected /= n_pairable * (n_pairable - 1)

    if expected == 0.0:
        raise DegenerateDataError("expected disagreement is zero; alpha is undefined")
    return 1.0 - observed / expected


# --- prediction evaluation ---------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f_beta: float
    counts: Mapping[str, int]
    per_split: Mapping[str, "EvalReport"]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f_beta": self.f_beta,
            "counts": dict(self.counts),
            "per_split": {name: report.to_dict() for name, report in self.per_split.items()},
        }


def _report(preds: Sequence[bool], golds: Sequence[bool], beta: float) -> EvalReport:
    tp = sum(1 for p, g in zip(preds, golds) if p and g)
    fp = sum(1 for p, g in zip(preds, golds) if p and not g)
    fn = sum(1 for p, g in zip(preds, golds) if not p and g)
    tn = sum(1 for p, g in zip(preds, golds) if not p and not g)
    precision, recall = precision_recall(preds, golds)
    return EvalReport(
        precision=precision,
        recall=recall,
        f_beta=f_beta(precision, recall, beta),
        counts={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        per_split={},
    )


def evaluate_predictions(
    items: Sequence[RdteItem],
    predicted_sufficiency: Sequence[int],
    threshold: int = 4,
    beta: float = 0.5,
) -> EvalReport:
    """Score ordinal sufficiency predictions against the reconciled gold
    labels, binarizing both sides at the threshold; reports overall and
    per-split precision, recall and F-beta."""
    if len(items) != len(predicted_sufficiency):
        raise ValueError("items and predictions must align")
    if not items:
        raise ValueError("empty inputs")
    golds: list[bool] = []
    preds: list[bool] = []
    for index, (item, predicted) in enumerate(zip(items, predicted_sufficiency)):
        if item.reconciled_sufficiency is None:
            raise ValueError(
                f"item {index} (question {item.question.id!r}) lacks a reconciled sufficiency label"
            )
        golds.append(binarize_sufficiency(item.reconciled_sufficiency, threshold))
        preds.append(binarize_sufficiency(predicted, threshold))

    overall = _report(preds, golds, beta)
    per_split: dict[str, EvalReport] = {}
    for split in Split:
        idx = [i for i, item in enumerate(items) if item.split is split]
        if idx:
            per_split[split.value] = _report([preds[i] for i in idx], [golds[i] for i in idx], beta)
    return EvalReport(
        precision=overall.precision,
        recall=overall.recall,
        f_beta=overall.f_beta,
        counts=overall.counts,
        per_split=per_split,
    )
