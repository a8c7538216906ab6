"""The entailment tree search engine: budgeted breadth-first backward
chaining over four unification rules, with condensation, batch decomposition
judging, and proof scoring.

Per dequeued hypothesis the engine runs, in order:

1. fact unification -- retrieve support chunks, rerank, judge single-premise
   entailment; any chunk at or above the keep threshold proves the hypothesis
   without decomposition (does not consume budget);
2. paraphrase unification -- alias to a previously expanded hypothesis when
   embedding cosine reaches the paraphrase threshold (does not consume
   budget; linking to a search ancestor is refused to keep proofs acyclic);
3. rule generation -- forward-chain inferences from the support documents,
   run the decomposition generators, condense, judge, keep candidates at or
   above the threshold, and enqueue their premises (consumes one budget unit).

Premises at depth > 0 that match the question or option text ground as
question leaves for free.  A hypothesis expansion is the unit of budget.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Callable, Optional, Sequence

from .backends.ops import (
    EngineBackends,
    FactConditionedExchange,
    GeneratorKind,
    forward_chain,
    gen_decompositions,
    judge_passage_entailment,
    judge_rdte_batch,
    paraphrase_similarity,
)
from .core import (
    Decomposition,
    DecompositionStep,
    DocumentLeaf,
    EntailmentTree,
    Hypothesis,
    HypothesisKind,
    ParaphraseLink,
    ProofResult,
    Question,
    QuestionLeaf,
    RdteJudgment,
    SearchConfig,
    Statement,
    TreeNode,
    question_grounds,
)
from .retrieval import DocumentChunk, InvertedIndex, hypothesis_query, rerank, retrieve

__all__ = ["RunLog", "SearchState", "SearchTask", "prove", "expand", "condense", "should_terminate"]

log = logging.getLogger(__name__)

# Generator schedule: the fourth slot resamples the in-context generator.
_GENERATOR_SEQUENCE: tuple[tuple[GeneratorKind, int], ...] = (
    (GeneratorKind.FACT_CONDITIONED, 0),
    (GeneratorKind.FOLLOW_UP, 0),
    (GeneratorKind.ICL_EXEMPLAR, 0),
    (GeneratorKind.ICL_EXEMPLAR, 1),
)


class RunLog:
    """JSONL event log: ``{"event", "hypothesis", "depth", "detail"}``."""

    def __init__(self, stream: Optional[IO[str]] = None) -> None:
        self.events: list[dict] = []
        self.stream = stream

    def write(self, event: str, hypothesis: str = "", depth: int = 0, **detail) -> None:
        record = {"event": event, "hypothesis": hypothesis, "depth": depth, "detail": detail}
        self.events.append(record)
        if self.stream is not None:
            self.stream.write(json.dumps(record, ensure_ascii=False) + "\n")


@dataclass
class _HypoNode:
    """One hypothesis in the and-or proof graph.  The free rules resolve a
    node to exactly one route class; rule generation may attach several
    alternative steps."""

    statement: Statement
    depth: int
    question_grounded: bool = False
    groundings: list[tuple[str, int]] = field(default_factory=list)
    paraphrase: Optional[tuple[str, float]] = None
    steps: list["_Step"] = field(default_factory=list)
    dead: bool = False

    @property
    def resolved(self) -> bool:
        return self.question_grounded or bool(self.groundings) or self.paraphrase is not None


@dataclass
class _Step:
    decomposition: Decomposition
    judgment: RdteJudgment
    child_norms: tuple[str, ...]


@dataclass
class SearchTask:
    hypothesis: Hypothesis
    bound: int
    ancestors: frozenset[str]


@dataclass
class SearchState:
    question: Question
    config: SearchConfig
    backends: EngineBackends
    index: InvertedIndex
    run_log: RunLog
    root_norm: str = ""
    root_kind: HypothesisKind = HypothesisKind.TOP_LEVEL_CORRECT
    frontier: deque[SearchTask] = field(default_factory=deque)
    graph: dict[str, _HypoNode] = field(default_factory=dict)
    expanded: dict[str, _HypoNode] = field(default_factory=dict)
    queued: dict[str, SearchTask] = field(default_factory=dict)
    expansions_used: int = 0
    untraversed: int = 0
    best_integrity: Optional[int] = None
    jobs: int = 1


def should_terminate(state: SearchState, config: SearchConfig) -> bool:
    """True when the search cannot improve: budget exhausted, frontier empty,
    or the optimistic bound of every open branch is at most the best proof
    integrity found so far.  Monotone for a fixed state."""
    if state.expansions_used >= config.budget_nodes:
        return True
    if not state.frontier:
        return True
    if state.best_integrity is not None and all(
        task.bound <= state.best_integrity for task in state.frontier
    ):
        return True
    return False


def condense(
    decompositions: Sequence[Decomposition],
    embedder=None,
    min_sim: float = 0.9,
) -> list[Decomposition]:
    """Deduplicate semantically equivalent candidates.

    Exact duplicates (equal premise-norm sets, order-insensitive) always
    collapse; with an embedder, a candidate whose premises each paraphrase a
    premise of an earlier survivor is dropped too.  First seen survives and
    output order preserves first occurrence.
    """
    survivors: list[Decomposition] = []
    seen_norm_sets: list[frozenset[str]] = []
    for candidate in decompositions:
        norms = candidate.premise_norms
        if norms in seen_norm_sets:
            continue
        near_duplicate = False
        if embedder is not None:
            for survivor in survivors:
                if len(survivor.premises) != len(candidate.premises):
                    continue
                matched = all(
                    any(
                        paraphrase_similarity(p, q, embedder) >= min_sim
                        for q in survivor.premises
                    )
                    for p in candidate.premises
                )
                if matched:
                    near_duplicate = True
                    break
        if near_duplicate:
            continue
        survivors.append(candidate)
        seen_norm_sets.append(norms)
    return survivors


def _map_ordered(fn: Callable, items: Sequence, jobs: int) -> list:
    """Apply fn to items, optionally fanning out, merging in input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _child_kind(state: SearchState) -> HypothesisKind:
    if state.root_kind is HypothesisKind.TOP_LEVEL_CORRECT:
        return HypothesisKind.RECURSIVE_CORRECT
    return HypothesisKind.RECURSIVE


def _support_candidates(state: SearchState, hypothesis: Hypothesis) -> list[tuple[DocumentChunk, float]]:
    query = hypothesis_query(state.question, hypothesis.statement)
    first_stage = retrieve(state.index, query, k=state.config.first_stage_k)
    chunks = [state.index.chunks[chunk_id] for chunk_id, _ in first_stage]
    return rerank(query, chunks, state.backends.reranker, keep=state.config.rerank_keep)


def _try_fact_unification(
    state: SearchState,
    task: SearchTask,
    support: Sequence[tuple[DocumentChunk, float]],
) -> bool:
    node = state.graph[task.hypothesis.statement.norm]
    config = state.config

    def judge(pair: tuple[DocumentChunk, float]) -> tuple[str, int]:
        chunk, _ = pair
        score = judge_passage_entailment(
            state.question,
            task.hypothesis.statement,
            chunk.text,
            state.backends.judgment,
            temperature=config.judge_temperature,
        )
        return chunk.chunk_id, score

    judged = _map_ordered(judge, list(support), state.jobs)
    entailing = sorted(
        ((cid, score) for cid, score in judged if score >= config.keep_threshold),
        key=lambda pair: (-pair[1], pair[0]),
    )
    if entailing:
        node.groundings = entailing
        best = entailing[0]
        state.run_log.write(
            "grounded",
            task.hypothesis.statement.text,
            task.hypothesis.depth,
            chunk_id=best[0],
            score=best[1],
            alternates=[list(pair) for pair in entailing[1:]],
        )
        return True
    return False


def _try_paraphrase_unification(state: SearchState, task: SearchTask) -> bool:
    """Rule 4: alias to a previously expanded hypothesis.  Returns True when
    the task was resolved (aliased) or killed (only circular aliases exist)."""
    norm = task.hypothesis.statement.norm
    node = state.graph[norm]
    if norm in state.expanded:
        # Exact re-encounter of an expanded hypothesis: alias, or a dead
        # circular branch when the target is the task's own ancestor.
        if norm in task.ancestors:
            node.dead = True
            state.run_log.write(
                "dead_branch", task.hypothesis.statement.text, task.hypothesis.depth,
                reason="circular restatement",
            )
            return True
        node.paraphrase = (norm, 1.0)
        state.run_log.write(
            "paraphrase", task.hypothesis.statement.text, task.hypothesis.depth,
            target=norm, similarity=1.0,
        )
        return True
    best: Optional[tuple[str, float]] = None
    for expanded_norm, expanded_node in state.expanded.items():
        if expanded_norm in task.ancestors:
            continue
        similarity = paraphrase_similarity(
            task.hypothesis.statement, expanded_node.statement, state.backends.embedder
        )
        if similarity >= state.config.paraphrase_min_sim and (best is None or similarity > best[1]):
            best = (expanded_norm, similarity)
    if best is not None:
        node.paraphrase = best
        state.run_log.write(
            "paraphrase", task.hypothesis.statement.text, task.hypothesis.depth,
            target=best[0], similarity=best[1],
        )
        return True
    return False


def expand(
    state: SearchState,
    task: SearchTask,
    support: Sequence[tuple[DocumentChunk, float]],
) -> None:
    """Rules 2*/3*: forward-chain, generate candidate decompositions,
    condense, judge, keep, and enqueue premises.  Consumes one budget unit."""
    config = state.config
    hypothesis = task.hypothesis
    norm = hypothesis.statement.norm
    node = state.graph[norm]

    state.expansions_used += 1
    state.expanded[norm] = node

    documents = [chunk.text for chunk, _ in support]
    inferences: list = []
    if documents:
        inferences, _ = forward_chain(
            state.question,
            hypothesis.statement,
            documents,
            state.backends.generation,
            n=config.n_forward_inferences,
            temperature=config.gen_temperature,
        )
    facts = [inference.inference.text for inference in inferences]

    multiplier = config.depth0_multiplier if hypothesis.depth == 0 else 1
    n_per_generator = config.n_per_generator * multiplier

    candidates: list[Decomposition] = []
    dropped = 0
    fact_exchange: Optional[FactConditionedExchange] = None
    for generator, resample in _GENERATOR_SEQUENCE[: config.n_generators]:
        if generator is GeneratorKind.FOLLOW_UP and fact_exchange is None:
            continue
        if generator is GeneratorKind.ICL_EXEMPLAR and state.backends.exemplars is None:
            continue
        result = gen_decompositions(
            state.question,
            hypothesis.statement,
            facts,
            generator,
            state.backends.generation,
            n=n_per_generator,
            max_premises=config.max_premises,
            temperature=config.gen_temperature,
            sample_index=resample,
            context=fact_exchange,
            store=state.backends.exemplars,
        )
        if result.exchange is not None:
            fact_exchange = result.exchange
        candidates.extend(result.decompositions)
        dropped += result.dropped

    condensed = condense(candidates, state.backends.embedder, config.paraphrase_min_sim)
    state.run_log.write(
        "candidates",
        hypothesis.statement.text,
        hypothesis.depth,
        question_id=state.question.id,
        kind=hypothesis.kind.value,
        decompositions=[
            {"premises": [p.text for p in d.premises], "provenance": d.provenance.value}
            for d in condensed
        ],
        dropped=dropped,
        generated=len(candidates),
    )

    judged: list[tuple[Decomposition, RdteJudgment]] = []
    for start in range(0, len(condensed), config.judge_batch_max):
        batch = condensed[start : start + config.judge_batch_max]
        results = judge_rdte_batch(
            state.question,
            hypothesis.statement,
            batch,
            state.backends.judgment,
            temperature=config.judge_temperature,
            recursive=hypothesis.depth > 0,
        )
        judged.extend((batch[i - 1], j) for i, j in results)

    kept = [(d, j) for d, j in judged if j.sufficiency >= config.keep_threshold]
    state.run_log.write(
        "judged",
        hypothesis.statement.text,
        hypothesis.depth,
        scores=[j.sufficiency for _, j in judged],
        kept=len(kept),
    )

    child_ancestors = task.ancestors | {norm}
    for decomposition, judgment in kept:
        child_norms = []
        for premise in decomposition.premises:
            child_norm = premise.norm
            child_norms.append(child_norm)
            child_bound = min(task.bound, judgment.sufficiency)
            existing = state.graph.get(child_norm)
            if existing is None:
                state.graph[child_norm] = _HypoNode(premise, hypothesis.depth + 1)
                child = Hypothesis(
                    premise, state.question.id, hypothesis.depth + 1, _child_kind(state)
                )
                child_task = SearchTask(child, child_bound, child_ancestors)
                state.frontier.append(child_task)
                state.queued[child_norm] = child_task
            else:
                queued = state.queued.get(child_norm)
                if queued is not None and child_bound > queued.bound:
                    queued.bound = child_bound
        node.steps.append(_Step(decomposition, judgment, tuple(child_norms)))


# --- proof extraction --------------------------------------------------------


@dataclass
class _Plan:
    kind: str  # "question" | "document" | "paraphrase" | "step"
    node: _HypoNode
    integrity: int
    chunk: Optional[tuple[str, int]] = None
    step: Optional[_Step] = None
    children: list["_Plan"] = field(default_factory=list)
    target: Optional["_Plan"] = None
    similarity: float = 1.0


def _best_plan(state: SearchState, norm: str, visiting: frozenset[str]) -> Optional[_Plan]:
    if norm in visiting:
        return None
    node = state.graph.get(norm)
    if node is None or node.dead:
        return None
    if node.question_grounded:
        return _Plan("question", node, 5)
    if node.groundings:
        chunk_id, score = node.groundings[0]
        return _Plan("document", node, score, chunk=(chunk_id, score))
    if node.paraphrase is not None:
        target_norm, similarity = node.paraphrase
        target = _best_plan(state, target_norm, visiting | {norm})
        if target is None:
            return None
        return _Plan("paraphrase", node, target.integrity, target=target, similarity=similarity)
    best: Optional[_Plan] = None
    for step in node.steps:
        children = []
        feasible = True
        for child_norm in step.child_norms:
            child_plan = _best_plan(state, child_norm, visiting | {norm})
            if child_plan is None:
                feasible = False
                break
            children.append(child_plan)
        if not feasible:
            continue
        integrity = min([step.judgment.sufficiency] + [c.integrity for c in children])
        if best is None or integrity > best.integrity:
            best = _Plan("step", node, integrity, step=step, children=children)
    return best


def _materialize(plan: _Plan, nodes: dict[str, TreeNode], counter: list[int]) -> str:
    node_id = f"n{counter[0]}"
    counter[0] += 1
    statement = plan.node.statement
    if plan.kind == "question":
        nodes[node_id] = QuestionLeaf(statement)
    elif plan.kind == "document":
        chunk_id, score = plan.chunk
        nodes[node_id] = DocumentLeaf(statement, chunk_id, score)
    elif plan.kind == "paraphrase":
        target_id = _materialize(plan.target, nodes, counter)
        nodes[node_id] = ParaphraseLink(statement, target_id, plan.similarity)
    else:
        child_ids = tuple(_materialize(child, nodes, counter) for child in plan.children)
        nodes[node_id] = DecompositionStep(statement, child_ids, plan.step.judgment)
    return node_id


def _plan_to_tree(plan: _Plan) -> EntailmentTree:
    nodes: dict[str, TreeNode] = {}
    counter = [0]
    root_id = _materialize(plan, nodes, counter)
    return EntailmentTree(root_id=root_id, nodes=nodes)


def _root_proofs(state: SearchState) -> list[_Plan]:
    """One plan per successful proof route at the root: its grounding, or
    each kept decomposition whose premises all prove."""
    root = state.graph.get(state.root_norm)
    if root is None:
        return []
    if root.groundings:
        chunk_id, score = root.groundings[0]
        return [_Plan("document", root, score, chunk=(chunk_id, score))]
    plans = []
    for step in root.steps:
        children = []
        feasible = True
        for child_norm in step.child_norms:
            child_plan = _best_plan(state, child_norm, frozenset({state.root_norm}))
            if child_plan is None:
                feasible = False
                break
            children.append(child_plan)
        if feasible:
            integrity = min([step.judgment.sufficiency] + [c.integrity for c in children])
            plans.append(_Plan("step", root, integrity, step=step, children=children))
    return plans


def _refresh_best(state: SearchState) -> None:
    plans = _root_proofs(state)
    if plans:
        best = max(plan.integrity for plan in plans)
        if state.best_integrity is None or best > state.best_integrity:
            state.best_integrity = best


def prove(
    question: Question,
    hypothesis: Hypothesis,
    config: SearchConfig,
    backends: EngineBackends,
    index: InvertedIndex,
    run_log: Optional[RunLog] = None,
    jobs: int = 1,
) -> list[ProofResult]:
    """Search for proofs of the hypothesis grounded in the corpus, returning
    one result per distinct root proof route, best integrity first.

    Backend failures on a single hypothesis skip that expansion and the
    search continues.
    """
    run_log = run_log or RunLog()
    state = SearchState(
        question=question,
        config=config,
        backends=backends,
        index=index,
        run_log=run_log,
        root_norm=hypothesis.statement.norm,
        root_kind=hypothesis.kind,
        jobs=jobs,
    )
    run_log.write(
        "search_start",
        hypothesis.statement.text,
        hypothesis.depth,
        question={
            "id": question.id,
            "text": question.text,
            "options": [{"label": o.label, "text": o.text} for o in question.options],
            "gold_label": question.gold_label,
        },
        config=config.to_dict(),
    )
    state.graph[state.root_norm] = _HypoNode(hypothesis.statement, hypothesis.depth)
    root_task = SearchTask(hypothesis, 5, frozenset({state.root_norm}))
    state.frontier.append(root_task)
    state.queued[state.root_norm] = root_task

    while not should_terminate(state, config):
        task = state.frontier.popleft()
        norm = task.hypothesis.statement.norm
        state.queued.pop(norm, None)
        if state.best_integrity is not None and task.bound <= state.best_integrity:
            state.untraversed += 1
            state.run_log.write(
                "untraversed", task.hypothesis.statement.text, task.hypothesis.depth,
                reason="bound", bound=task.bound, best=state.best_integrity,
            )
            continue
        try:
            node = state.graph[norm]
            if task.hypothesis.depth > 0 and question_grounds(state.question, norm):
                node.question_grounded = True
                state.run_log.write(
                    "question_grounded", task.hypothesis.statement.text, task.hypothesis.depth
                )
            else:
                support = _support_candidates(state, task.hypothesis)
                if not _try_fact_unification(state, task, support):
                    if not _try_paraphrase_unification(state, task):
                        expand(state, task, support)
        except Exception as exc:  # noqa: BLE001 - a branch failure must not sink the run
            state.untraversed += 1
            state.run_log.write(
                "branch_failed", task.hypothesis.statement.text, task.hypothesis.depth,
                error=str(exc),
            )
            log.warning("expansion failed for %r: %s", task.hypothesis.statement.text, exc)
        _refresh_best(state)

    state.untraversed += len(state.frontier)
    for task in state.frontier:
        state.run_log.write(
            "untraversed", task.hypothesis.statement.text, task.hypothesis.depth,
            reason="terminated",
        )

    plans = _root_proofs(state)
    plans.sort(key=lambda plan: -plan.integrity)
    results = [
        ProofResult.for_tree(_plan_to_tree(plan), state.expansions_used, state.untraversed)
        for plan in plans
    ]
    run_log.write(
        "done",
        hypothesis.statement.text,
        hypothesis.depth,
        proofs=len(results),
        best_integrity=results[0].integrity if results else None,
        expansions_used=state.expansions_used,
        untraversed=state.untraversed,
    )
    return results
