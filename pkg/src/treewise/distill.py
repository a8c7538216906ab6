"""The silver-data pipeline: pull candidate decompositions out of search run
logs, classify their hypotheses, collect teacher judgments in batches, and
export student training files.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .backends.ops import (
    CompletionBackend,
    ZERO_SHOT_JUDGE,
    declarativize,
    pick_distractor,
    rdte_judge_exchange,
)
from .core import (
    Decomposition,
    Hypothesis,
    HypothesisKind,
    Provenance,
    Question,
    QuestionOption,
    RdteJudgment,
    Statement,
    binarize_sufficiency,
)
from .search import RunLog

__all__ = [
    "TraceGroup",
    "extract_traces",
    "classify_hypothesis",
    "SilverRecord",
    "teacher_annotate",
    "write_silver",
    "export_classifier_data",
    "export_imitation_data",
    "FORMAT_VERSION",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

EventStream = Union[str, Path, RunLog, Iterable[Mapping]]


@dataclass(frozen=True)
class TraceGroup:
    question: Question
    hypothesis: Hypothesis
    decompositions: tuple[Decomposition, ...]


def _iter_events(stream: EventStream) -> Iterable[tuple[Optional[Mapping], bool]]:
    """Yield (event, ok) pairs; ok=False flags an unreadable log line."""
    if isinstance(stream, RunLog):
        for event in stream.events:
            yield event, True
        return
    if isinstance(stream, (str, Path)):
        with open(stream, encoding="utf-8") as handle:
            for raw in handle:
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    payload = json.loads(raw)
                except json.JSONDecodeError:
                    yield None, False
                    continue
                if isinstance(payload, dict):
                    yield payload, True
                else:
                    yield None, False
        return
    for event in stream:
        if isinstance(event, Mapping):
            yield event, True
        else:
            yield None, False


def _question_from_payload(payload: Mapping) -> Question:
    return Question(
        id=str(payload.get("id", "")),
        text=payload["text"],
        options=tuple(QuestionOption(o["label"], o["text"]) for o in payload.get("options", ())),
        gold_label=payload.get("gold_label"),
    )


def extract_traces(run_logs: Sequence[EventStream]) -> tuple[list[TraceGroup], int]:
    """Group every candidate decomposition (kept or filtered) from the run
    logs by (question, hypothesis norm), deduplicating identical premise
    sets.  Returns (groups, skipped_line_count)."""
    skipped = 0
    groups: dict[tuple[str, str], dict] = {}
    for stream in run_logs:
        question: Optional[Question] = None
        for event, ok in _iter_events(stream):
            if not ok:
                skipped += 1
                continue
            name = event.get("event")
            detail = event.get("detail", {})
            if name == "search_start":
                try:
                    question = _question_from_payload(detail["question"])
                except (KeyError, TypeError, ValueError):
                    skipped += 1
                    question = None
                continue
            if name != "candidates" or question is None:
                continue
            try:
                statement = Statement(event["hypothesis"])
                depth = int(event.get("depth", 0))
                kind = HypothesisKind(detail.get("kind", HypothesisKind.RECURSIVE.value))
                hypothesis = Hypothesis(statement, question.id, depth, kind)
                decompositions = []
                for entry in detail.get("decompositions", ()):
                    premises = tuple(Statement(p) for p in entry["premises"])
                    provenance = Provenance(entry.get("provenance", Provenance.EXTERNAL.value))
                    decompositions.append(Decomposition(statement, premises, provenance))
            except (KeyError, TypeError, ValueError):
                skipped += 1
                continue
            key = (question.id, statement.norm)
            group = groups.setdefault(
                key, {"question": question, "hypothesis": hypothesis, "decs": [], "norms": set()}
            )
            for decomposition in decompositions:
                norms = decomposition.premise_norms
                if norms not in group["norms"]:
                    group["norms"].add(norms)
                    group["decs"].append(decomposition)
    result = [
        TraceGroup(g["question"], g["hypothesis"], tuple(g["decs"])) for g in groups.values()
    ]
    return result, skipped


def classify_hypothesis(
    hypothesis: Hypothesis,
    question: Question,
    backend: CompletionBackend,
    root_correct: Optional[bool] = None,
) -> HypothesisKind:
    """Assign the hypothesis class: a depth-0 hypothesis matching the
    declarativized gold option is top-level correct, one matching the chosen
    distractor is top-level incorrect; deeper hypotheses are recursive,
    qualified by whether their root was correct."""
    if hypothesis.depth > 0:
        return HypothesisKind.RECURSIVE_CORRECT if root_correct else HypothesisKind.RECURSIVE
    if question.gold_label is None:
        raise ValueError(f"question {question.id!r} has no gold label")
    gold_statement = declarativize(question, question.option(question.gold_label), backend)
    if gold_statement.norm == hypothesis.statement.norm:
        return HypothesisKind.TOP_LEVEL_CORRECT
    distractor_label = pick_distractor(question, backend)
    distractor_statement = declarativize(question, question.option(distractor_label), backend)
    if distractor_statement.norm == hypothesis.statement.norm:
        return HypothesisKind.TOP_LEVEL_INCORRECT
    raise ValueError(
        f"depth-0 hypothesis {hypothesis.statement.text!r} matches neither the gold option "
        f"nor the distractor for question {question.id!r}"
    )


@dataclass(frozen=True)
class SilverRecord:
    question: Question
    hypothesis: Hypothesis
    decomposition: Decomposition
    teacher_judgment: RdteJudgment
    teacher_model_id: str
    batch_id: str
    prompt: Optional[str] = None
    raw_response: Optional[str] = None


def _batch_id(question: Question, hypothesis: Hypothesis, batch_index: int) -> str:
    digest = hashlib.sha256(hypothesis.statement.norm.encode("utf-8")).hexdigest()[:8]
    return f"{question.id}:{digest}:{batch_index}"


def teacher_annotate(
    groups: Sequence[TraceGroup],
    teacher_backend: CompletionBackend,
    batch_max: int = 15,
    template_id: str = ZERO_SHOT_JUDGE,
    temperature: float = 0.2,
) -> list[SilverRecord]:
    """Judge every candidate decomposition with the teacher, batching at most
    ``batch_max`` per prompt.  Total: one record per input decomposition
    (omissions fail closed inside the judge)."""
    if batch_max < 1:
        raise ValueError("batch_max must be at least 1")
    records: list[SilverRecord] = []
    for group in groups:
        for batch_index, start in enumerate(range(0, len(group.decompositions), batch_max)):
            batch = group.decompositions[start : start + batch_max]
            exchange = rdte_judge_exchange(
                group.question,
                group.hypothesis.statement,
                batch,
                teacher_backend,
                template_id=template_id,
                temperature=temperature,
                recursive=group.hypothesis.depth > 0,
            )
            batch_id = _batch_id(group.question, group.hypothesis, batch_index)
            for (index, judgment), decomposition in zip(exchange.judgments, batch):
                records.append(
                    SilverRecord(
                        question=group.question,
                        hypothesis=group.hypothesis,
                        decomposition=decomposition,
                        teacher_judgment=judgment,
                        teacher_model_id=teacher_backend.model_id,
                        batch_id=batch_id,
                        prompt=exchange.prompt,
                        raw_response=exchange.raw_response,
                    )
                )
    return records


def _header_line(kind: str) -> str:
    return json.dumps({"format_version": FORMAT_VERSION, "kind": kind}, ensure_ascii=False)


def write_silver(records: Sequence[SilverRecord], path: str | Path) -> int:
    lines = [_header_line("silver")]
    for record in records:
        judgment = record.teacher_judgment
        lines.append(
            json.dumps(
                {
                    "question": {
                        "id": record.question.id,
                        "text": record.question.text,
                        "options": [
                            {"label": o.label, "text": o.text} for o in record.question.options
                        ],
                        "gold_label": record.question.gold_label,
                    },
                    "hypothesis": record.hypothesis.statement.text,
                    "kind": record.hypothesis.kind.value,
                    "depth": record.hypothesis.depth,
                    "premises": [p.text for p in record.decomposition.premises],
                    "provenance": record.decomposition.provenance.value,
                    "judgment": {
                        "factuality": list(judgment.factuality) if judgment.factuality else None,
                        "relevance": list(judgment.relevance),
                        "redundancy": list(judgment.redundancy),
                        "sufficiency": judgment.sufficiency,
                        "explanation": judgment.explanation,
                    },
                    "teacher_model_id": record.teacher_model_id,
                    "batch_id": record.batch_id,
                },
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(records)


def export_classifier_data(
    records: Sequence[SilverRecord],
    path: str | Path,
    threshold: int = 4,
) -> dict[str, int]:
    """Binary classification pairs: label = binarized teacher sufficiency.
    Returns the class counts."""
    if not records:
        raise ValueError("no records to export")
    counts = {"0": 0, "1": 0}
    lines = [_header_line("classifier")]
    for record in records:
        label = int(binarize_sufficiency(record.teacher_judgment.sufficiency, threshold))
        counts[str(label)] += 1
        lines.append(
            json.dumps(
                {
                    "question": record.question.rendered(),
                    "hypothesis": record.hypothesis.statement.text,
                    "premises": [p.text for p in record.decomposition.premises],
                    "label": label,
                },
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return counts


def export_imitation_data(records: Sequence[SilverRecord], path: str | Path) -> tuple[int, int]:
    """Imitation pairs, one per judged batch: the rendered judging prompt and
    the teacher's verbatim response, byte-exact.  Records lacking raw text
    are skipped with a warning.  Returns (pairs_written, records_skipped)."""
    lines = [_header_line("imitation")]
    pairs = 0
    skipped = 0
    seen_batches: set[str] = set()
    for record in records:
        if record.raw_response is None or record.prompt is None:
            skipped += 1
            continue
        if record.batch_id in seen_batches:
            continue
        seen_batches.add(record.batch_id)
        lines.append(
            json.dumps({"prompt": record.prompt, "target": record.raw_response}, ensure_ascii=False)
        )
        pairs += 1
    if skipped:
        log.warning("imitation export skipped %d records lacking raw teacher text", skipped)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return pairs, skipped
