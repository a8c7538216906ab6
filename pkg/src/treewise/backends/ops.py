"""Prompt-backed operations: declarativization, decomposition generators,
forward chaining, batch decomposition judging, passage entailment, paraphrase
similarity, and distractor selection.

Every parse here is total: arbitrary backend text yields a typed value or a
typed error, never a crash.  Omitted or unparseable judgments fail closed to
sufficiency 1.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import (
    Decomposition,
    Provenance,
    Question,
    QuestionOption,
    RdteJudgment,
    Statement,
)
from ..retrieval import DocumentChunk, build_index, hypothesis_query, retrieve
from .client import BackendError, ChatClient, ChatRequest, ResponseCache, cached_complete
from .embedding import Embedder
from .templates import render, render_template, load_template

__all__ = [
    "CompletionBackend",
    "EngineBackends",
    "ForwardInference",
    "GeneratorKind",
    "GenerationResult",
    "Exemplar",
    "ExemplarStore",
    "declarativize",
    "icl_exemplars",
    "gen_decompositions",
    "forward_chain",
    "JudgeExchange",
    "rdte_judge_exchange",
    "judge_rdte_batch",
    "fail_closed_judgment",
    "judge_passage_entailment",
    "paraphrase_similarity",
    "is_paraphrase",
    "pick_distractor",
    "probability_to_ordinal",
    "extract_ordinal",
]

log = logging.getLogger(__name__)

ZERO_SHOT_JUDGE = "rdte_judge_zero_shot"
ICL_JUDGE = "rdte_judge_icl"


class CompletionBackend:
    """Renders a template, then serves the completion through the cache."""

    def __init__(
        self,
        client: Optional[ChatClient],
        cache: Optional[ResponseCache] = None,
        model_id: str = "default",
        max_tokens: int = 2048,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.client = client
        self.cache = cache
        self.model_id = model_id
        self.max_tokens = max_tokens
        self.sleep = sleep

    def complete(
        self,
        template_id: str,
        params: dict,
        temperature: float,
        sample_index: int = 0,
        max_tokens: Optional[int] = None,
    ) -> str:
        prompt = render(template_id, **params)
        return self.complete_rendered(template_id, prompt, params, temperature, sample_index, max_tokens)

    def complete_rendered(
        self,
        template_id: str,
        rendered_prompt: str,
        params: dict,
        temperature: float,
        sample_index: int = 0,
        max_tokens: Optional[int] = None,
    ) -> str:
        request = ChatRequest(
            template_id=template_id,
            rendered_prompt=rendered_prompt,
            temperature=temperature,
            max_tokens=max_tokens or self.max_tokens,
            model_id=self.model_id,
            sample_index=sample_index,
            params=params,
        )
        return cached_complete(request, self.cache, self.client, self.sleep)


@dataclass
class EngineBackends:
    """Everything the engine calls out to, wired once per run."""

    generation: CompletionBackend
    judgment: CompletionBackend
    embedder: Embedder
    reranker: Callable[[str, str], float]
    exemplars: Optional["ExemplarStore"] = None


# --- small parsing helpers ---------------------------------------------------

_ORDINAL = re.compile(r"(?<![0-9.])([1-5])(?![0-9])")


def extract_ordinal(text: str) -> Optional[int]:
    """First standalone integer 1..5 in the text, or None."""
    match = _ORDINAL.search(text)
    return int(match.group(1)) if match else None


def _json_lines(text: str) -> list[dict]:
    """Best-effort JSONL parse: returns the dict payload of every line that
    parses; anything else is skipped."""
    out = []
    for raw in text.splitlines():
        raw = raw.strip()
        if not raw:
            continue
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            continue
        if isinstance(payload, dict):
            out.append(payload)
    return out


def _plain_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _int_list(value, length: Optional[int] = None) -> Optional[tuple[int, ...]]:
    if not isinstance(value, list) or not all(_plain_int(v) for v in value):
        return None
    if length is not None and len(value) != length:
        return None
    return tuple(value)


# --- declarativization --------------------------------------------------------


def declarativize(
    question: Question,
    option: QuestionOption,
    backend: CompletionBackend,
    temperature: float = 0.0,
    sample_index: int = 0,
) -> Statement:
    """Combine the question stem and one answer option into a single
    declarative sentence.  Multi-line or empty replies are retried once."""
    if option not in question.options:
        raise ValueError(f"option {option.label!r} does not belong to question {question.id!r}")
    params = {"question": question.text, "option": option.text}
    for attempt in range(2):
        reply = backend.complete("declarativize", params, temperature, sample_index + attempt).strip()
        if reply and "\n" not in reply:
            return Statement(reply)
    raise BackendError(
        f"declarativize produced no usable sentence for question {question.id!r} option {option.label!r}"
    )


# --- exemplar store -----------------------------------------------------------


@dataclass(frozen=True)
class Exemplar:
    question_text: str
    hypothesis_text: str
    decomposition_lines: tuple[str, ...]

    def rendered(self) -> str:
        n = len(self.decomposition_lines)
        lines = "\n".join(self.decomposition_lines)
        return (
            f"QUESTION:\n{self.question_text}\n\n"
            f"HYPOTHESIS:\n{self.hypothesis_text}\n\n"
            f"{n} DIFFERENT POSSIBLE DECOMPOSITIONS, 2 OR 3 FACTS EACH, ONE JSON ITEM PER LINE:\n"
            f"{lines}"
        )


class ExemplarStore:
    """Fixed training items served as in-context exemplars, ranked by BM25
    over the concatenated question + hypothesis text."""

    def __init__(self, exemplars: Sequence[Exemplar]) -> None:
        if not exemplars:
            raise ValueError("exemplar store is empty")
        self.exemplars = list(exemplars)
        chunks = [
            DocumentChunk(f"ex{i:06d}", f"ex{i:06d}", "", f"{e.question_text} {e.hypothesis_text}")
            for i, e in enumerate(self.exemplars)
        ]
        self._index = build_index(chunks)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ExemplarStore":
        exemplars = []
        with open(path, encoding="utf-8") as handle:
            for raw in handle:
                raw = raw.strip()
                if not raw:
                    continue
                data = json.loads(raw)
                lines = tuple(
                    d if isinstance(d, str) else json.dumps(d, ensure_ascii=False)
                    for d in data["decompositions"]
                )
                exemplars.append(Exemplar(data["question"], data["hypothesis"], lines))
        return cls(exemplars)

    def __len__(self) -> int:
        return len(self.exemplars)


def icl_exemplars(
    question: Question,
    hypothesis: Statement,
    store: ExemplarStore,
    k: int,
) -> list[Exemplar]:
    """Top-k exemplars by BM25 with the question + hypothesis as query; the
    remainder of the store (original order) fills any unranked slots."""
    if k <= 0:
        return []
    query = hypothesis_query(question, hypothesis)
    ranked_ids = [cid for cid, _ in retrieve(store._index, query, k=len(store))]
    order = [int(cid[2:]) for cid in ranked_ids]
    chosen = list(order)
    for i in range(len(store)):
        if i not in chosen:
            chosen.append(i)
    return [store.exemplars[i] for i in chosen[:k]]


# --- decomposition generation ---------------------------------------------------


class GeneratorKind(str, Enum):
    FACT_CONDITIONED = "fact_conditioned"
    FOLLOW_UP = "follow_up"
    ICL_EXEMPLAR = "icl_exemplar"


_GEN_PROVENANCE = {
    GeneratorKind.FACT_CONDITIONED: Provenance.FACT_CONDITIONED,
    GeneratorKind.FOLLOW_UP: Provenance.FOLLOW_UP,
    GeneratorKind.ICL_EXEMPLAR: Provenance.ICL_EXEMPLAR,
}


@dataclass(frozen=True)
class FactConditionedExchange:
    prompt: str
    response: str


@dataclass
class GenerationResult:
    decompositions: list[Decomposition]
    dropped: int
    exchange: Optional[FactConditionedExchange] = None


def parse_decomposition_lines(
    text: str,
    hypothesis: Statement,
    provenance: Provenance,
    n: int,
    max_premises: int = 4,
) -> tuple[list[Decomposition], int]:
    """Parse ``{"fact1": ..., "fact2": ..., "fact3": optional}`` lines.
    Lines without at least two distinct premises are dropped and counted."""
    kept: list[Decomposition] = []
    dropped = 0
    for raw in text.splitlines():
        raw = raw.strip()
        if not raw:
            continue
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            dropped += 1
            continue
        if not isinstance(payload, dict):
            dropped += 1
            continue
        premises = []
        for key in ("fact1", "fact2", "fact3", "fact4"):
            value = payload.get(key)
            if isinstance(value, str) and value.strip():
                premises.append(value.strip())
        try:
            if not 2 <= len(premises) <= max_premises:
                raise ValueError("premise count out of range")
            decomposition = Decomposition(
                hypothesis, tuple(Statement(p) for p in premises), provenance
            )
        except ValueError:
            dropped += 1
            continue
        if len(kept) < n:
            kept.append(decomposition)
    return kept, dropped


def gen_decompositions(
    question: Question,
    hypothesis: Statement,
    facts: Sequence[str],
    generator: GeneratorKind,
    backend: CompletionBackend,
    n: int = 10,
    max_premises: int = 4,
    temperature: float = 1.0,
    sample_index: int = 0,
    context: Optional[FactConditionedExchange] = None,
    store: Optional[ExemplarStore] = None,
    n_exemplars: int = 2,
) -> GenerationResult:
    """Run one decomposition generator and parse its JSONL reply.

    An unparseable reply yields an empty list (with the drop count) so the
    search can continue with the other generators.
    """
    provenance = _GEN_PROVENANCE[generator]
    if generator is GeneratorKind.FACT_CONDITIONED:
        params = {
            "n_candidates": n,
            "question": question.rendered(),
            "hypothesis": hypothesis.text,
            "facts": "\n".join(facts) if facts else "(none)",
        }
        prompt = render("decompose_fact_conditioned", **params)
        reply = backend.complete_rendered(
            "decompose_fact_conditioned", prompt, params, temperature, sample_index
        )
        exchange = FactConditionedExchange(prompt, reply)
    elif generator is GeneratorKind.FOLLOW_UP:
        if context is None:
            raise ValueError("follow-up generation requires a prior fact-conditioned exchange")
        follow_up = render("decompose_followup", n_candidates=n)
        prompt = f"{context.prompt}\n\n{context.response}\n\n{follow_up}"
        params = {
            "n_candidates": n,
            "question": question.rendered(),
            "hypothesis": hypothesis.text,
        }
        reply = backend.complete_rendered("decompose_followup", prompt, params, temperature, sample_index)
        exchange = None
    else:
        if store is None:
            raise ValueError("in-context generation requires an exemplar store")
        exemplars = icl_exemplars(question, hypothesis, store, n_exemplars)
        params = {
            "n_candidates": n,
            "question": question.rendered(),
            "hypothesis": hypothesis.text,
            "exemplars": "\n\n\n".join(e.rendered() for e in exemplars),
        }
        reply = backend.complete("decompose_icl", params, temperature, sample_index)
        exchange = None

    decompositions, dropped = parse_decomposition_lines(reply, hypothesis, provenance, n, max_premises)
    if not decompositions:
        log.warning("generator %s produced no parseable decompositions (%d lines dropped)",
                    generator.value, dropped)
    return GenerationResult(decompositions, dropped, exchange)


# --- forward chaining -----------------------------------------------------------


@dataclass(frozen=True)
class ForwardInference:
    inference: Statement
    source_indices: tuple[int, ...]


def parse_forward_inferences(
    text: str,
    hypothesis: Statement,
    n_documents: int,
    n: int,
) -> tuple[list[ForwardInference], int]:
    kept: list[ForwardInference] = []
    dropped = 0
    for payload in _json_lines(text):
        inference = payload.get("inference")
        source = payload.get("source")
        if _plain_int(source):
            source = [source]
        indices = _int_list(source) if isinstance(source, list) else None
        if not isinstance(inference, str) or not inference.strip() or indices is None:
            dropped += 1
            continue
        if any(not 0 <= i < n_documents for i in indices):
            dropped += 1
            continue
        statement = Statement(inference.strip())
        if statement.norm == hypothesis.norm:
            dropped += 1  # restates the hypothesis
            continue
        if len(kept) < n:
            kept.append(ForwardInference(statement, indices))
    return kept, dropped


def forward_chain(
    question: Question,
    hypothesis: Statement,
    documents: Sequence[str],
    backend: CompletionBackend,
    n: int = 30,
    temperature: float = 1.0,
    sample_index: int = 0,
) -> tuple[list[ForwardInference], int]:
    """Generate up to ``n`` inferences entailed by the support documents;
    hypothesis restatements and out-of-bounds sources are dropped."""
    if not documents:
        raise ValueError("forward chaining requires at least one document")
    rendered_docs = "\n".join(f"[{i}] {doc}" for i, doc in enumerate(documents))
    params = {
        "question": question.rendered(),
        "hypothesis": hypothesis.text,
        "documents": rendered_docs,
        "n": n,
    }
    reply = backend.complete("forward_chain", params, temperature, sample_index)
    inferences, dropped = parse_forward_inferences(reply, hypothesis, len(documents), n)
    if dropped:
        log.info("forward chaining dropped %d malformed/restating inferences", dropped)
    return inferences, dropped


# --- decomposition judging --------------------------------------------------------


def fail_closed_judgment(premise_count: int, explanation: str = "judge omitted") -> RdteJudgment:
    return RdteJudgment(
        relevance=(1,) * premise_count,
        redundancy=(1,) * premise_count,
        sufficiency=1,
        factuality=None,
        explanation=explanation,
    )


def parse_judgment_lines(
    text: str,
    premise_counts: Sequence[int],
) -> dict[int, RdteJudgment]:
    """Parse judgment JSONL; ``complete_inference`` maps to sufficiency.

    Lines with unknown indices, mismatched facet lengths, or out-of-range
    scores are rejected; on duplicate indices the first occurrence is kept.
    """
    judgments: dict[int, RdteJudgment] = {}
    n = len(premise_counts)
    for payload in _json_lines(text):
        index = payload.get("index")
        if not _plain_int(index) or not 1 <= index <= n or index in judgments:
            continue
        count = premise_counts[index - 1]
        relevance = _int_list(payload.get("relevance"), count)
        redundancy = _int_list(payload.get("redundancy"), count)
        sufficiency = payload.get("complete_inference")
        factuality = payload.get("factuality")
        if factuality is not None:
            factuality = _int_list(factuality, count)
            if factuality is None:
                continue
        if relevance is None or redundancy is None or not _plain_int(sufficiency):
            continue
        explanation = payload.get("explanation", "")
        if not isinstance(explanation, str):
            explanation = ""
        try:
            judgments[index] = RdteJudgment(
                relevance=relevance,
                redundancy=redundancy,
                sufficiency=sufficiency,
                factuality=factuality,
                explanation=explanation,
            )
        except ValueError:
            continue
    return judgments


@dataclass
class JudgeExchange:
    prompt: str
    raw_response: str
    judgments: list[tuple[int, RdteJudgment]]
    retried: bool = False


def _decomposition_block(decompositions: Sequence[Decomposition]) -> str:
    return "\n".join(
        f"({i}) " + " AND ".join(p.text for p in d.premises)
        for i, d in enumerate(decompositions, start=1)
    )


def rdte_judge_exchange(
    question: Question,
    hypothesis: Statement,
    decompositions: Sequence[Decomposition],
    backend: CompletionBackend,
    template_id: str = ZERO_SHOT_JUDGE,
    temperature: float = 0.2,
    sample_index: int = 0,
    recursive: bool = False,
) -> JudgeExchange:
    """One full batch-judging exchange, fail-closed.

    Indices the judge omits (or garbles) survive one full-batch retry, after
    which they are assigned sufficiency 1 with explanation "judge omitted".
    """
    if not decompositions:
        raise ValueError("nothing to judge")
    premise_counts = [len(d.premises) for d in decompositions]
    params = {
        "question": question.rendered(),
        "recursive_or_not": " (RECURSIVE)" if recursive else "",
        "hypothesis": hypothesis.text,
        "decompositions": _decomposition_block(decompositions),
        "n_items": len(decompositions),
    }
    prompt = render(template_id, **params)
    raw = backend.complete_rendered(template_id, prompt, params, temperature, sample_index)
    parsed = parse_judgment_lines(raw, premise_counts)
    retried = False
    if len(parsed) < len(decompositions):
        retried = True
        retry_raw = backend.complete_rendered(
            template_id, prompt, params, temperature, sample_index + 1
        )
        for index, judgment in parse_judgment_lines(retry_raw, premise_counts).items():
            parsed.setdefault(index, judgment)
        if not parsed:
            log.warning(
                "judge produced no parseable output twice for hypothesis %r; "
                "failing all %d items closed",
                hypothesis.text,
                len(decompositions),
            )
    judgments = [
        (i, parsed.get(i, fail_closed_judgment(premise_counts[i - 1])))
        for i in range(1, len(decompositions) + 1)
    ]
    return JudgeExchange(prompt, raw, judgments, retried)


def judge_rdte_batch(
    question: Question,
    hypothesis: Statement,
    decompositions: Sequence[Decomposition],
    judge_backend: CompletionBackend,
    template_id: str = ZERO_SHOT_JUDGE,
    temperature: float = 0.2,
    sample_index: int = 0,
    recursive: bool = False,
) -> list[tuple[int, RdteJudgment]]:
    exchange = rdte_judge_exchange(
        question, hypothesis, decompositions, judge_backend,
        template_id, temperature, sample_index, recursive,
    )
    return exchange.judgments


# --- passage entailment ------------------------------------------------------------


def judge_passage_entailment(
    question: Question,
    hypothesis: Statement,
    passage: str,
    backend: CompletionBackend,
    temperature: float = 0.2,
    sample_index: int = 0,
) -> int:
    """Single-premise entailment on the 1-5 scale; unparseable replies retry
    once and then fail closed to 1."""
    if not passage.strip():
        raise ValueError("empty passage")
    params = {
        "question": question.rendered(),
        "hypothesis": hypothesis.text,
        "passage": passage,
    }
    for attempt in range(2):
        reply = backend.complete("passage_entailment", params, temperature, sample_index + attempt)
        score = extract_ordinal(reply)
        if score is not None:
            return score
    return 1


# --- paraphrase detection ------------------------------------------------------------


def paraphrase_similarity(a: Statement, b: Statement, embedder: Embedder) -> float:
    """Cosine similarity of the two statements' embeddings; norm-equal
    statements return 1.0 without touching the embedder."""
    if a.norm == b.norm:
        return 1.0
    similarity = float(np.dot(embedder(a.text), embedder(b.text)))
    return max(-1.0, min(1.0, similarity))


def is_paraphrase(a: Statement, b: Statement, embedder: Embedder, min_sim: float = 0.9) -> bool:
    return paraphrase_similarity(a, b, embedder) >= min_sim


# --- distractor selection --------------------------------------------------------------


def pick_distractor(
    question: Question,
    backend: CompletionBackend,
    temperature: float = 0.0,
    sample_index: int = 0,
) -> str:
    """Label of the incorrect option closest to correct.  A reply naming the
    gold or an unknown label is retried once, then the first non-gold label
    wins."""
    if question.gold_label is None:
        raise ValueError(f"question {question.id!r} has no gold label")
    if len(question.options) < 2:
        raise ValueError(f"question {question.id!r} needs at least two options")
    non_gold = [o.label for o in question.options if o.label != question.gold_label]
    if len(non_gold) == 1:
        return non_gold[0]
    params = {"question": question.rendered(), "gold_label": f"({question.gold_label})"}
    labels = [o.label for o in question.options]
    for attempt in range(2):
        reply = backend.complete("pick_distractor", params, temperature, sample_index + attempt)
        found: list[tuple[int, str]] = []
        for label in labels:
            pattern = re.compile(rf"\(\s*{re.escape(label)}\s*\)|\b{re.escape(label)}\b")
            match = pattern.search(reply)
            if match:
                found.append((match.start(), label))
        if found:
            first_label = min(found)[1]
            if first_label != question.gold_label:
                return first_label
    return non_gold[0]


# --- classifier-score adaptation ----------------------------------------------------------


def probability_to_ordinal(probability: float, keep_prob: float = 0.6) -> int:
    """Map a normalized classifier score onto the 1-5 scale such that
    probability >= keep_prob exactly when the ordinal reaches 4."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError("keep_prob must lie in (0, 1]")
    if probability >= keep_prob:
        if keep_prob == 1.0:
            return 5
        return 4 + round((probability - keep_prob) / (1.0 - keep_prob))
    return min(3, 1 + int(3.0 * probability / keep_prob))
