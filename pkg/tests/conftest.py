"""Shared fixtures: a tiny corpus and a declarative scenario builder that
wires scripted backends for the engine, the baselines, and the QA driver."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import pytest

from treewise.backends.embedding import FixtureEmbedder, HashingEmbedder
from treewise.backends.mock import ScriptedBackend
from treewise.backends.ops import CompletionBackend, EngineBackends, Exemplar, ExemplarStore
from treewise.core import Question, QuestionOption, Statement, normalize_statement
from treewise.retrieval import DocumentChunk, LexicalOverlapReranker, build_index


def make_chunks(texts: Mapping[str, str]) -> list[DocumentChunk]:
    """Chunks keyed by doc id; each text becomes one chunk ``<doc>#0``."""
    return [DocumentChunk(f"{doc}#0", doc, doc, text) for doc, text in texts.items()]


@dataclass
class Scenario:
    """Declarative mock wiring.

    passage_scores maps (hypothesis norm, chunk id) to an entailment score
    (default 1).  decompositions maps a hypothesis norm to premise lists
    proposed for it.  judge_scores maps (hypothesis norm, frozenset of
    premise norms) to a sufficiency score (default 1).
    """

    chunks: list[DocumentChunk]
    passage_scores: dict[tuple[str, str], int] = field(default_factory=dict)
    decompositions: dict[str, list[list[str]]] = field(default_factory=dict)
    judge_scores: dict[tuple[str, frozenset], int] = field(default_factory=dict)
    declaratives: dict[str, str] = field(default_factory=dict)  # option text -> sentence
    forward_inferences: dict[str, list[str]] = field(default_factory=dict)
    embedder_vectors: dict[str, Sequence[float]] = field(default_factory=dict)
    default_judge_score: int = 1
    exemplars: Optional[ExemplarStore] = None

    def __post_init__(self) -> None:
        self._text_to_chunk = {normalize_statement(c.text): c.chunk_id for c in self.chunks}
        self.backend = ScriptedBackend()
        self.backend.add_handler("passage_entailment", self._handle_passage)
        self.backend.add_handler("decompose_fact_conditioned", self._handle_decompose)
        self.backend.add_handler("decompose_followup", self._handle_empty)
        self.backend.add_handler("decompose_icl", self._handle_empty)
        self.backend.add_handler("forward_chain", self._handle_forward)
        self.backend.add_handler("rdte_judge_zero_shot", self._handle_judge)
        self.backend.add_handler("rdte_judge_icl", self._handle_judge)
        self.backend.add_handler("declarativize", self._handle_declarativize)

    # -- handlers (pure functions of the request params) --

    def _handle_passage(self, request) -> str:
        hyp = normalize_statement(str(request.params["hypothesis"]))
        chunk_id = self._text_to_chunk.get(normalize_statement(str(request.params["passage"])), "")
        return str(self.passage_scores.get((hyp, chunk_id), 1))

    def _handle_decompose(self, request) -> str:
        hyp = normalize_statement(str(request.params["hypothesis"]))
        lines = []
        for premises in self.decompositions.get(hyp, []):
            payload = {f"fact{i}": text for i, text in enumerate(premises, start=1)}
            lines.append(json.dumps(payload))
        return "\n".join(lines)

    def _handle_empty(self, request) -> str:
        return ""

    def _handle_forward(self, request) -> str:
        hyp = normalize_statement(str(request.params["hypothesis"]))
        lines = [
            json.dumps({"inference": text, "source": [0]})
            for text in self.forward_inferences.get(hyp, [])
        ]
        return "\n".join(lines)

    def _handle_judge(self, request) -> str:
        hyp = normalize_statement(str(request.params["hypothesis"]))
        block = str(request.params["decompositions"])
        lines = []
        for raw in block.splitlines():
            match = re.match(r"\((\d+)\)\s+(.*)", raw)
            if not match:
                continue
            index = int(match.group(1))
            premises = [normalize_statement(p) for p in match.group(2).split(" AND ")]
            score = self.judge_scores.get((hyp, frozenset(premises)), self.default_judge_score)
            lines.append(
                json.dumps(
                    {
                        "index": index,
                        "relevance": [5] * len(premises),
                        "redundancy": [5] * len(premises),
                        "complete_inference": score,
                        "explanation": "scripted",
                    }
                )
            )
        return "\n".join(lines)

    def _handle_declarativize(self, request) -> str:
        option = str(request.params["option"])
        return self.declaratives.get(option, f"The answer is {option}.")

    # -- assembled backends --

    def engine_backends(self, cache=None) -> EngineBackends:
        completion = CompletionBackend(self.backend, cache=cache, model_id="scripted")
        embedder = (
            FixtureEmbedder(self.embedder_vectors) if self.embedder_vectors else HashingEmbedder()
        )
        return EngineBackends(
            generation=completion,
            judgment=completion,
            embedder=embedder,
            reranker=LexicalOverlapReranker(),
            exemplars=self.exemplars,
        )


@pytest.fixture
def moon_question() -> Question:
    return Question(
        id="q-moon",
        text="What does the Moon orbit?",
        options=(QuestionOption("A", "the Earth"), QuestionOption("B", "the Sun")),
        gold_label="A",
    )


def desk_scenario():
    """The hand-built two-level proof scenario.

    Hypothesis H decomposes into P1 and P2; P1 grounds in chunk alpha#0 with
    score 5, P2 grounds in chunk beta#0 with score 4; the step judges 4.
    Gold tree integrity: min(4, 5, 4) = 4.
    """
    question = Question(id="q-desk", text="Why do tides happen?")
    hypothesis = Statement("The Moon causes ocean tides on Earth.")
    p1 = "The Moon exerts gravitational pull on Earth."
    p2 = "Gravitational pull on oceans creates tides."
    chunks = make_chunks(
        {
            "alpha": "The Moon exerts gravitational pull on Earth.",
            "beta": "Gravitational pull on oceans creates tides.",
            "gamma": "Volcanoes erupt when magma rises.",
            "delta": "The Sun is a star at the center of the solar system.",
            "epsilon": "Rivers flow downhill toward the sea.",
        }
    )
    scenario = Scenario(
        chunks=chunks,
        passage_scores={
            (normalize_statement(p1), "alpha#0"): 5,
            (normalize_statement(p2), "beta#0"): 4,
        },
        decompositions={hypothesis.norm: [[p1, p2]]},
        judge_scores={
            (
                hypothesis.norm,
                frozenset({normalize_statement(p1), normalize_statement(p2)}),
            ): 4
        },
    )
    index = build_index(chunks)
    return question, hypothesis, scenario, index
