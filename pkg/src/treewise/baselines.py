"""Greedy entailment-tree baselines: an end-to-end generator that decodes
candidate trees in one prompt, and a stepwise generator that decodes one step
at a time, plus pruning, leaf grounding, and best-of-k selection.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence, Union

from .backends.ops import (
    CompletionBackend,
    EngineBackends,
    ZERO_SHOT_JUDGE,
    declarativize,
    fail_closed_judgment,
    judge_rdte_batch,
)
from .core import (
    Decomposition,
    DecompositionStep,
    DocumentLeaf,
    EntailmentTree,
    Provenance,
    Question,
    QuestionLeaf,
    QuestionOption,
    RdteJudgment,
    Statement,
    TreeNode,
    TreeStructureError,
    children_of,
    iter_reachable,
    normalize_statement,
    question_grounds,
    tree_integrity,
    validate_tree,
)
from .retrieval import DocumentChunk, InvertedIndex, hypothesis_query, rerank, retrieve
from .core import SearchConfig

__all__ = [
    "StepLine",
    "parse_step_line",
    "prune_tree",
    "find_ungrounded_leaves",
    "ground_leaves",
    "is_entailed_by_index",
    "parse_tree_lines",
    "GeneratedTree",
    "e2e_generate",
    "stepwise_generate",
    "StepJudge",
    "make_step_judge",
    "judge_tree_steps",
    "select_best",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepLine:
    """One textual proof line: ``conclusion <- premise & premise [& premise]``."""

    conclusion: Statement
    premises: tuple[Statement, ...]

    def __post_init__(self) -> None:
        if not self.premises:
            raise ValueError("a step line needs at least one premise")


def parse_step_line(text: str) -> Optional[StepLine]:
    """Parse the wire syntax; both ``<-`` and the arrow ``⇐`` are accepted.
    Returns None for anything unusable."""
    for arrow in ("<-", "⇐", "<="):
        if arrow in text:
            head, _, tail = text.partition(arrow)
            conclusion = head.strip()
            premises = [p.strip() for p in tail.split("&")]
            premises = [p for p in premises if p]
            if conclusion and premises:
                try:
                    return StepLine(Statement(conclusion), tuple(Statement(p) for p in premises))
                except ValueError:
                    return None
            return None
    return None


# --- tree surgery --------------------------------------------------------------


def prune_tree(tree: EntailmentTree) -> EntailmentTree:
    """Keep exactly the nodes reachable from the root.  Idempotent; never
    removes the root."""
    if tree.root_id not in tree.nodes:
        raise TreeStructureError(f"tree has no root node {tree.root_id!r}")
    reachable = list(iter_reachable(tree))
    return EntailmentTree(tree.root_id, {node_id: tree.nodes[node_id] for node_id in reachable})


SupportItem = Union[DocumentChunk, Statement, str]


def _support_entries(support: Sequence[SupportItem]) -> list[tuple[str, Optional[str]]]:
    entries = []
    for item in support:
        if isinstance(item, DocumentChunk):
            entries.append((normalize_statement(item.text), item.chunk_id))
        elif isinstance(item, Statement):
            entries.append((item.norm, None))
        else:
            entries.append((normalize_statement(item), None))
    return entries


def _match_support(norm: str, entries: Sequence[tuple[str, Optional[str]]]) -> Optional[tuple[str, Optional[str]]]:
    # Exact normal-form equality only; fuzzier grounding must go through the
    # judged is_entailed_by_index route.
    for entry_norm, chunk_id in entries:
        if norm == entry_norm:
            return entry_norm, chunk_id
    return None


def _bare_leaves(tree: EntailmentTree) -> list[str]:
    return [
        node_id
        for node_id in iter_reachable(tree)
        if isinstance(tree.nodes[node_id], DecompositionStep) and not tree.nodes[node_id].child_ids
    ]


def find_ungrounded_leaves(
    tree: EntailmentTree,
    support: Sequence[SupportItem],
    question: Optional[Question] = None,
) -> list[str]:
    """Ids of bare statement leaves whose normal form matches no support
    statement and no question/option text."""
    entries = _support_entries(support)
    ungrounded = []
    for node_id in _bare_leaves(tree):
        norm = tree.nodes[node_id].statement.norm
        if _match_support(norm, entries) is not None:
            continue
        if question is not None and node_id != tree.root_id and question_grounds(question, norm):
            continue
        ungrounded.append(node_id)
    return ungrounded


def ground_leaves(
    tree: EntailmentTree,
    support: Sequence[SupportItem],
    question: Optional[Question] = None,
) -> EntailmentTree:
    """Convert bare leaves that match a support chunk into document leaves
    (score 5 for a direct statement match), and leaves matching the question
    into question leaves.  The root is never question-grounded."""
    entries = _support_entries(support)
    nodes = dict(tree.nodes)
    for node_id in _bare_leaves(tree):
        statement = nodes[node_id].statement
        match = _match_support(statement.norm, entries)
        if match is not None and match[1] is not None:
            nodes[node_id] = DocumentLeaf(statement, match[1], 5)
        elif question is not None and node_id != tree.root_id and question_grounds(question, statement.norm):
            nodes[node_id] = QuestionLeaf(statement)
    return EntailmentTree(tree.root_id, nodes)


def is_entailed_by_index(
    leaf: Statement,
    question: Question,
    index: InvertedIndex,
    backends: EngineBackends,
    config: SearchConfig,
) -> Optional[tuple[str, int]]:
    """Retrieve and rerank for the leaf; the first candidate whose passage
    entailment reaches the keep threshold grounds it.  Backend failures are
    treated as not entailed."""
    from .backends.ops import judge_passage_entailment

    query = hypothesis_query(question, leaf)
    first_stage = retrieve(index, query, k=config.first_stage_k)
    chunks = [index.chunks[chunk_id] for chunk_id, _ in first_stage]
    candidates = rerank(query, chunks, backends.reranker, keep=config.rerank_keep)
    for chunk, _ in candidates:
        try:
            score = judge_passage_entailment(
                question, leaf, chunk.text, backends.judgment,
                temperature=config.judge_temperature,
            )
        except Exception as exc:  # noqa: BLE001
            log.warning("passage judge failed on %s: %s", chunk.chunk_id, exc)
            continue
        if score >= config.keep_threshold:
            return chunk.chunk_id, score
    return None


# --- end-to-end generation --------------------------------------------------------


def _draft_from_nested(payload, nodes: dict[str, TreeNode], counter: list[int], depth: int) -> Optional[str]:
    if depth > 30 or counter[0] > 500:
        return None
    if not isinstance(payload, dict) or not isinstance(payload.get("statement"), str):
        return None
    statement_text = payload["statement"].strip()
    if not statement_text:
        return None
    children_payload = payload.get("children", [])
    if not isinstance(children_payload, list):
        return None
    node_id = f"n{counter[0]}"
    counter[0] += 1
    nodes[node_id] = None  # reserve preorder slot
    child_ids = []
    for child in children_payload:
        child_id = _draft_from_nested(child, nodes, counter, depth + 1)
        if child_id is None:
            return None
        child_ids.append(child_id)
    nodes[node_id] = DecompositionStep(Statement(statement_text), tuple(child_ids))
    return node_id


def parse_tree_lines(text: str, limit: int) -> list[EntailmentTree]:
    """Parse candidate trees, one nested-JSON object per line:
    ``{"statement": ..., "children": [...]}``.  Unusable lines are skipped."""
    trees: list[EntailmentTree] = []
    for raw in text.splitlines():
        raw = raw.strip()
        if not raw or len(trees) >= limit:
            continue
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError:
            continue
        nodes: dict[str, TreeNode] = {}
        counter = [0]
        root_id = _draft_from_nested(payload, nodes, counter, 0)
        if root_id is None:
            continue
        trees.append(EntailmentTree(root_id, nodes))
    return trees


@dataclass(frozen=True)
class GeneratedTree:
    tree: EntailmentTree
    generator: str
    repetition: int


def _support_block(support: Sequence[tuple[DocumentChunk, float]]) -> str:
    return "\n".join(f"[{i}] {chunk.text}" for i, (chunk, _) in enumerate(support))


def e2e_generate(
    question: Question,
    option: QuestionOption,
    index: InvertedIndex,
    backends: EngineBackends,
    config: SearchConfig,
    m: int = 5,
    t: int = 5,
) -> list[GeneratedTree]:
    """Greedy end-to-end generation: retrieve support once, decode up to
    ``m`` candidate trees per repetition (keeping ``t``), prune, ground
    leaves against the support then the full index, and retain trees whose
    leaves all ground.  Repeated ``best_of_k`` times."""
    hypothesis = declarativize(question, option, backends.generation)
    query = hypothesis_query(question, hypothesis)
    first_stage = retrieve(index, query, k=config.first_stage_k)
    support = rerank(
        query, [index.chunks[cid] for cid, _ in first_stage], backends.reranker,
        keep=config.rerank_keep,
    )
    support_chunks = [chunk for chunk, _ in support]
    retained: list[GeneratedTree] = []
    for repetition in range(config.best_of_k):
        params = {
            "n_trees": m,
            "question": question.rendered(),
            "hypothesis": hypothesis.text,
            "support": _support_block(support) or "(none)",
        }
        reply = backends.generation.complete(
            "tree_e2e", params, config.gen_temperature, sample_index=repetition
        )
        for draft in parse_tree_lines(reply, t):
            tree = prune_tree(draft)
            tree = ground_leaves(tree, support_chunks, question)
            grounded = True
            nodes = dict(tree.nodes)
            for leaf_id in find_ungrounded_leaves(tree, support_chunks, question):
                statement = nodes[leaf_id].statement
                hit = is_entailed_by_index(statement, question, index, backends, config)
                if hit is None:
                    grounded = False
                    break
                nodes[leaf_id] = DocumentLeaf(statement, hit[0], hit[1])
            if not grounded:
                continue
            tree = EntailmentTree(tree.root_id, nodes)
            if validate_tree(tree, set(index.chunks), question):
                continue
            retained.append(GeneratedTree(tree, "e2e", repetition))
    return retained


# --- stepwise generation -------------------------------------------------------------


def _build_step_tree(
    hypothesis: Statement,
    lines: Sequence[StepLine],
    groundings: Mapping[str, tuple[str, int]],
    support_chunks: Sequence[DocumentChunk],
    question: Question,
) -> EntailmentTree:
    """Materialize the accumulated step lines into a tree rooted at the
    hypothesis.  For each conclusion the first line wins; grounded leaves
    become document leaves; cycles are broken by leaving the repeat bare."""
    by_norm: dict[str, StepLine] = {}
    for line in lines:
        by_norm.setdefault(line.conclusion.norm, line)
    entries = _support_entries(list(support_chunks))
    nodes: dict[str, TreeNode] = {}
    counter = [0]

    def build(statement: Statement, ancestors: frozenset[str], is_root: bool) -> str:
        node_id = f"n{counter[0]}"
        counter[0] += 1
        nodes[node_id] = None
        norm = statement.norm
        if norm in groundings:
            chunk_id, score = groundings[norm]
            nodes[node_id] = DocumentLeaf(statement, chunk_id, score)
            return node_id
        match = _match_support(norm, entries)
        if match is not None and match[1] is not None:
            nodes[node_id] = DocumentLeaf(statement, match[1], 5)
            return node_id
        if not is_root and question_grounds(question, norm):
            nodes[node_id] = QuestionLeaf(statement)
            return node_id
        line = by_norm.get(norm)
        if line is not None and norm not in ancestors:
            child_ids = tuple(
                build(premise, ancestors | {norm}, False) for premise in line.premises
            )
            nodes[node_id] = DecompositionStep(statement, child_ids)
            return node_id
        nodes[node_id] = DecompositionStep(statement, ())
        return node_id

    root_id = build(hypothesis, frozenset(), True)
    return EntailmentTree(root_id, nodes)


def _frontier_support(
    question: Question,
    frontier: Sequence[Statement],
    index: InvertedIndex,
    backends: EngineBackends,
    config: SearchConfig,
) -> list[DocumentChunk]:
    """Support for every frontier sentence, flattened and deduplicated by
    chunk id (first seen wins)."""
    seen: set[str] = set()
    merged: list[DocumentChunk] = []
    for sentence in frontier:
        query = hypothesis_query(question, sentence)
        first_stage = retrieve(index, query, k=config.first_stage_k)
        ranked = rerank(
            query, [index.chunks[cid] for cid, _ in first_stage], backends.reranker,
            keep=config.rerank_keep,
        )
        for chunk, _ in ranked:
            if chunk.chunk_id not in seen:
                seen.add(chunk.chunk_id)
                merged.append(chunk)
    return merged


def stepwise_generate(
    question: Question,
    option: QuestionOption,
    index: InvertedIndex,
    backends: EngineBackends,
    config: SearchConfig,
    repetition: int = 0,
) -> EntailmentTree:
    """Iteratively decode one proof line at a time, grounding leaves via the
    index after each line, until the tree is fully grounded or the step limit
    is reached."""
    hypothesis = declarativize(question, option, backends.generation)
    lines: list[StepLine] = []
    groundings: dict[str, tuple[str, int]] = {}
    frontier: list[Statement] = [hypothesis]
    tree = _build_step_tree(hypothesis, lines, groundings, [], question)
    sample_base = repetition * config.max_stepwise_steps
    for iteration in range(config.max_stepwise_steps):
        if not frontier:
            break
        support_chunks = _frontier_support(question, frontier, index, backends, config)
        params = {
            "question": question.rendered(),
            "hypothesis": hypothesis.text,
            "support": "\n".join(f"[{i}] {c.text}" for i, c in enumerate(support_chunks)) or "(none)",
            "lines": "\n".join(f"{l.conclusion.text} <- " + " & ".join(p.text for p in l.premises) for l in lines)
            or "(none)",
        }
        reply = backends.generation.complete(
            "tree_one_step", params, config.gen_temperature,
            sample_index=sample_base + iteration,
        )
        line = next(
            (parsed for parsed in (parse_step_line(raw) for raw in reply.splitlines()) if parsed),
            None,
        )
        if line is not None:
            lines.append(line)
        tree = prune_tree(_build_step_tree(hypothesis, lines, groundings, support_chunks, question))
        ungrounded_ids = find_ungrounded_leaves(tree, support_chunks, question)
        still_open: list[Statement] = []
        for leaf_id in ungrounded_ids:
            statement = tree.nodes[leaf_id].statement
            hit = is_entailed_by_index(statement, question, index, backends, config)
            if hit is not None:
                groundings[statement.norm] = hit
            else:
                still_open.append(statement)
        if groundings:
            tree = prune_tree(_build_step_tree(hypothesis, lines, groundings, support_chunks, question))
        frontier = still_open
    return tree


# --- selection ------------------------------------------------------------------


StepJudge = Callable[[Statement, Sequence[Statement]], RdteJudgment]


def make_step_judge(
    question: Question,
    backend: CompletionBackend,
    config: SearchConfig,
    template_id: str = ZERO_SHOT_JUDGE,
) -> StepJudge:
    """A per-step judge over (statement, premises); failures and unjudgeable
    steps fail closed to sufficiency 1."""

    def judge(statement: Statement, premises: Sequence[Statement]) -> RdteJudgment:
        try:
            decomposition = Decomposition(statement, tuple(premises), Provenance.EXTERNAL)
        except ValueError:
            return fail_closed_judgment(len(premises), "unjudgeable step")
        try:
            results = judge_rdte_batch(
                question, statement, [decomposition], backend,
                template_id=template_id, temperature=config.judge_temperature, recursive=True,
            )
            return results[0][1]
        except Exception as exc:  # noqa: BLE001
            log.warning("step judge failed on %r: %s", statement.text, exc)
            return fail_closed_judgment(len(premises), "judge failed")

    return judge


def judge_tree_steps(tree: EntailmentTree, judge: StepJudge) -> EntailmentTree:
    """Attach a fresh judgment to every decomposition step."""
    nodes = dict(tree.nodes)
    for node_id in iter_reachable(tree):
        node = nodes[node_id]
        if isinstance(node, DecompositionStep):
            premises = [nodes[c].statement for c in node.child_ids if c in nodes]
            nodes[node_id] = replace(node, judgment=judge(node.statement, premises))
    return EntailmentTree(tree.root_id, nodes)


def select_best(trees: Sequence[EntailmentTree], judge: StepJudge) -> tuple[EntailmentTree, int]:
    """Judge every tree's steps, score each by minimum step/leaf score, and
    return the best (ties: first in input order)."""
    if not trees:
        raise ValueError("no trees to select from")
    best: Optional[tuple[EntailmentTree, int]] = None
    for tree in trees:
        judged = judge_tree_steps(tree, judge)
        try:
            integrity = tree_integrity(judged)
        except TreeStructureError as exc:
            log.warning("tree failed integrity scoring (%s); failing closed", exc)
            integrity = 1
        if best is None or integrity > best[1]:
            best = (judged, integrity)
    return best
