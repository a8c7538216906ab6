"""Core domain types: statements, hypotheses, decompositions, judgments,
entailment trees, and the search configuration shared by every other module.

All types are immutable values after construction and safe to share across
concurrent workers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Iterator, Mapping, Optional, Sequence, Union

__all__ = [
    "normalize_statement",
    "Statement",
    "QuestionOption",
    "Question",
    "HypothesisKind",
    "Hypothesis",
    "Provenance",
    "Decomposition",
    "ensure_ordinal",
    "RdteJudgment",
    "DocumentLeaf",
    "QuestionLeaf",
    "DecompositionStep",
    "ParaphraseLink",
    "TreeNode",
    "EntailmentTree",
    "TreeStructureError",
    "TreeJsonError",
    "children_of",
    "iter_reachable",
    "validate_tree",
    "tree_integrity",
    "binarize_sufficiency",
    "tree_to_json",
    "tree_from_json",
    "tree_to_dot",
    "SearchConfig",
    "ProofResult",
    "proof_result_to_dict",
]

_WHITESPACE = re.compile(r"\s+")


@lru_cache(maxsize=65536)
def normalize_statement(text: str) -> str:
    """Canonical form of a sentence: lowercased, whitespace collapsed,
    trailing periods stripped.  Idempotent."""
    collapsed = _WHITESPACE.sub(" ", text).strip().lower()
    while collapsed and collapsed[-1] in ". ":
        collapsed = collapsed[:-1]
    return collapsed


@dataclass(frozen=True, eq=False)
class Statement:
    """A declarative sentence.  Two statements are the same statement iff
    their normal forms are equal; equality and hashing use ``norm``."""

    text: str

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("statement text must be non-empty")

    @property
    def norm(self) -> str:
        return normalize_statement(self.text)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Statement):
            return NotImplemented
        return self.norm == other.norm

    def __hash__(self) -> int:
        return hash(self.norm)

    def __repr__(self) -> str:
        return f"Statement({self.text!r})"


@dataclass(frozen=True)
class QuestionOption:
    label: str
    text: str


@dataclass(frozen=True)
class Question:
    """A (possibly multiple-choice) question.  Options, when present, carry
    unique labels; ``gold_label`` is optional and must name an option."""

    id: str
    text: str
    options: tuple[QuestionOption, ...] = ()
    gold_label: Optional[str] = None

    def __post_init__(self) -> None:
        labels = [o.label for o in self.options]
        if len(set(labels)) != len(labels):
            raise ValueError("question options must carry unique labels")
        if self.gold_label is not None and self.options and self.gold_label not in labels:
            raise ValueError(f"gold label {self.gold_label!r} is not an option label")

    def option(self, label: str) -> QuestionOption:
        for opt in self.options:
            if opt.label == label:
                return opt
        raise KeyError(f"no option labeled {label!r}")

    def rendered(self) -> str:
        """Question text with options inlined, e.g. ``... (A) foo, (B) bar``."""
        if not self.options:
            return self.text
        opts = ", ".join(f"({o.label}) {o.text}" for o in self.options)
        return f"{self.text} {opts}"


class HypothesisKind(str, Enum):
    TOP_LEVEL_CORRECT = "top_level_correct"
    RECURSIVE_CORRECT = "recursive_correct"
    TOP_LEVEL_INCORRECT = "top_level_incorrect"
    RECURSIVE = "recursive"

    @property
    def is_top_level(self) -> bool:
        return self in (HypothesisKind.TOP_LEVEL_CORRECT, HypothesisKind.TOP_LEVEL_INCORRECT)


@dataclass(frozen=True)
class Hypothesis:
    statement: Statement
    question_id: str
    depth: int
    kind: HypothesisKind

    def __post_init__(self) -> None:
        if self.depth < 0:
            raise ValueError("hypothesis depth must be non-negative")
        if (self.depth == 0) != self.kind.is_top_level:
            raise ValueError("depth 0 exactly when kind is a top-level variant")


class Provenance(str, Enum):
    FACT_CONDITIONED = "fact_conditioned"
    FOLLOW_UP = "follow_up"
    ICL_EXEMPLAR = "icl_exemplar"
    BASELINE_E2E = "baseline_e2e"
    BASELINE_STEPWISE = "baseline_stepwise"
    EXTERNAL = "external"


@dataclass(frozen=True)
class Decomposition:
    """A premise set proposed to conjunctively entail a hypothesis.

    At least two premises, no two sharing a normal form.  Generators cap the
    premise count at ``SearchConfig.max_premises`` when parsing.
    """

    hypothesis: Statement
    premises: tuple[Statement, ...]
    provenance: Provenance

    def __post_init__(self) -> None:
        if len(self.premises) < 2:
            raise ValueError("a decomposition needs at least two premises")
        norms = [p.norm for p in self.premises]
        if len(set(norms)) != len(norms):
            raise ValueError("decomposition premises must have distinct normal forms")

    @property
    def premise_norms(self) -> frozenset[str]:
        return frozenset(p.norm for p in self.premises)


def ensure_ordinal(value: int, what: str = "score") -> int:
    """Validate an ordinal 1..5 score, returning it as a plain int."""
    if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
        raise ValueError(f"{what} must be an integer in [1, 5], got {value!r}")
    return value


@dataclass(frozen=True)
class RdteJudgment:
    """Ordinal judgment of one decomposition: per-premise factuality (optional),
    relevance and redundancy, plus an overall 1-5 sufficiency score."""

    relevance: tuple[int, ...]
    redundancy: tuple[int, ...]
    sufficiency: int
    factuality: Optional[tuple[int, ...]] = None
    explanation: str = ""

    def __post_init__(self) -> None:
        for score in self.relevance:
            ensure_ordinal(score, "relevance")
        for score in self.redundancy:
            ensure_ordinal(score, "redundancy")
        ensure_ordinal(self.sufficiency, "sufficiency")
        if len(self.relevance) != len(self.redundancy):
            raise ValueError("relevance and redundancy must have equal length")
        if self.factuality is not None:
            for score in self.factuality:
                ensure_ordinal(score, "factuality")
            if len(self.factuality) != len(self.relevance):
                raise ValueError("factuality must match relevance length")

    @property
    def premise_count(self) -> int:
        return len(self.relevance)


# --- entailment tree -------------------------------------------------------


@dataclass(frozen=True)
class DocumentLeaf:
    """A statement entailed directly by a corpus chunk."""

    statement: Statement
    chunk_id: str
    entail_score: int

    def __post_init__(self) -> None:
        ensure_ordinal(self.entail_score, "entail_score")


@dataclass(frozen=True)
class QuestionLeaf:
    """A statement grounded in the question or option text."""

    statement: Statement


@dataclass(frozen=True)
class DecompositionStep:
    """An internal step: the statement follows from its children.

    ``child_ids`` may be empty while a tree is under construction (a bare,
    ungrounded statement); a finished tree requires at least two children,
    enforced by :func:`validate_tree`.  ``judgment`` is attached when the
    step has been judged.
    """

    statement: Statement
    child_ids: tuple[str, ...] = ()
    judgment: Optional[RdteJudgment] = None


@dataclass(frozen=True)
class ParaphraseLink:
    """An alias of the statement to an equivalent node elsewhere in the tree."""

    statement: Statement
    target_id: str
    similarity: float

    def __post_init__(self) -> None:
        if not -1.0 <= self.similarity <= 1.0:
            raise ValueError("similarity must lie in [-1, 1]")


TreeNode = Union[DocumentLeaf, QuestionLeaf, DecompositionStep, ParaphraseLink]


class TreeStructureError(Exception):
    """Raised when an operation requires a structurally sound tree."""


class TreeJsonError(Exception):
    """Raised on malformed tree JSON; carries a human-readable position."""


@dataclass(frozen=True)
class EntailmentTree:
    """A rooted proof tree.  Leaves are document or question leaves; internal
    nodes are decomposition steps; paraphrase links alias into the tree."""

    root_id: str
    nodes: Mapping[str, TreeNode]

    def node(self, node_id: str) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TreeStructureError(f"no node with id {node_id!r}") from None


def children_of(node: TreeNode) -> tuple[str, ...]:
    if isinstance(node, DecompositionStep):
        return node.child_ids
    if isinstance(node, ParaphraseLink):
        return (node.target_id,)
    return ()


def iter_reachable(tree: EntailmentTree) -> Iterator[str]:
    """Yield node ids reachable from the root in depth-first preorder,
    visiting each node once.  Dangling child references are skipped."""
    seen: set[str] = set()
    stack = [tree.root_id]
    while stack:
        node_id = stack.pop()
        if node_id in seen or node_id not in tree.nodes:
            continue
        seen.add(node_id)
        yield node_id
        stack.extend(reversed(children_of(tree.nodes[node_id])))


def _norm_in(needle: str, haystack: str) -> bool:
    return bool(needle) and needle in normalize_statement(haystack)


def question_grounds(question: Question, statement_norm: str) -> bool:
    """True when the normalized statement occurs inside the question text or
    one of its option texts (the normalized-substring rule)."""
    if _norm_in(statement_norm, question.text):
        return True
    return any(_norm_in(statement_norm, opt.text) for opt in question.options)


def validate_tree(
    tree: EntailmentTree,
    corpus_chunk_ids: set[str],
    question: Question,
    paraphrase_min_sim: float = 0.9,
) -> list[str]:
    """Check every structural and grounding invariant, returning a list of
    violation descriptions (empty when the tree is sound)."""
    if not tree.nodes:
        raise TreeStructureError("tree has no nodes")
    violations: list[str] = []
    if tree.root_id not in tree.nodes:
        violations.append(f"missing root {tree.root_id}")
        return violations

    for node_id, node in tree.nodes.items():
        for child_id in children_of(node):
            if child_id not in tree.nodes:
                violations.append(f"dangling child {child_id} (parent {node_id})")

    # Cycle detection over resolvable edges, iterative DFS with colors.
    color: dict[str, int] = {}  # 1 = on stack, 2 = done
    for start in tree.nodes:
        if color.get(start):
            continue
        stack: list[tuple[str, Iterator[str]]] = [(start, iter(children_of(tree.nodes[start])))]
        color[start] = 1
        while stack:
            node_id, it = stack[-1]
            advanced = False
            for child_id in it:
                if child_id not in tree.nodes:
                    continue
                state = color.get(child_id)
                if state == 1:
                    violations.append(f"cycle through {child_id}")
                elif state is None:
                    color[child_id] = 1
                    stack.append((child_id, iter(children_of(tree.nodes[child_id]))))
                    advanced = True
                    break
            if not advanced:
                color[node_id] = 2
                stack.pop()

    reachable = set(iter_reachable(tree))
    for node_id in tree.nodes:
        if node_id not in reachable:
            violations.append(f"unreachable node {node_id}")

    for node_id in tree.nodes:
        node = tree.nodes[node_id]
        if isinstance(node, DecompositionStep):
            if len(node.child_ids) == 0:
                violations.append(f"leaf not grounded: bare statement node {node_id}")
            elif len(node.child_ids) < 2:
                violations.append(f"step {node_id} has fewer than 2 children")
            if node.judgment is not None and node.judgment.premise_count != len(node.child_ids):
                violations.append(f"step {node_id} judgment arrays do not match child count")
        elif isinstance(node, DocumentLeaf):
            if node.chunk_id not in corpus_chunk_ids:
                violations.append(f"leaf not grounded: {node_id} (chunk {node.chunk_id})")
        elif isinstance(node, QuestionLeaf):
            if not question_grounds(question, node.statement.norm):
                violations.append(f"question leaf not grounded: {node_id}")
        elif isinstance(node, ParaphraseLink):
            if node.similarity < paraphrase_min_sim:
                violations.append(
                    f"paraphrase similarity below threshold: {node_id} "
                    f"({node.similarity:.3f} < {paraphrase_min_sim})"
                )
    return violations


def tree_integrity(tree: EntailmentTree) -> int:
    """Minimum score over the tree: step sufficiency, document-leaf entailment
    score, 5 for question leaves; a paraphrase link inherits its target's
    subtree integrity."""

    def score(node_id: str, on_path: frozenset[str]) -> int:
        if node_id in on_path:
            raise TreeStructureError(f"cycle through {node_id}")
        node = tree.node(node_id)
        if isinstance(node, DocumentLeaf):
            return node.entail_score
        if isinstance(node, QuestionLeaf):
            return 5
        if isinstance(node, ParaphraseLink):
            return score(node.target_id, on_path | {node_id})
        if node.judgment is None:
            raise TreeStructureError(f"step {node_id} has no judgment to score")
        child_scores = [score(c, on_path | {node_id}) for c in node.child_ids]
        return min([node.judgment.sufficiency] + child_scores)

    return score(tree.root_id, frozenset())


def binarize_sufficiency(score: int, threshold: int = 4) -> bool:
    """Entailment holds iff the ordinal score reaches the threshold."""
    ensure_ordinal(score, "score")
    ensure_ordinal(threshold, "threshold")
    return score >= threshold


# --- serialization ---------------------------------------------------------

_KIND_NAMES = {
    DocumentLeaf: "document_leaf",
    QuestionLeaf: "question_leaf",
    DecompositionStep: "step",
    ParaphraseLink: "paraphrase",
}


def _judgment_to_dict(j: Optional[RdteJudgment]) -> Optional[dict]:
    if j is None:
        return None
    return {
        "factuality": list(j.factuality) if j.factuality is not None else None,
        "relevance": list(j.relevance),
        "redundancy": list(j.redundancy),
        "sufficiency": j.sufficiency,
        "explanation": j.explanation,
    }


def judgment_from_dict(data: Mapping) -> RdteJudgment:
    factuality = data.get("factuality")
    return RdteJudgment(
        relevance=tuple(data["relevance"]),
        redundancy=tuple(data["redundancy"]),
        sufficiency=data["sufficiency"],
        factuality=tuple(factuality) if factuality is not None else None,
        explanation=data.get("explanation", ""),
    )


def node_to_dict(node: TreeNode) -> dict:
    out: dict = {"kind": _KIND_NAMES[type(node)], "statement": node.statement.text}
    if isinstance(node, DocumentLeaf):
        out["chunk_id"] = node.chunk_id
        out["entail_score"] = node.entail_score
    elif isinstance(node, DecompositionStep):
        out["children"] = list(node.child_ids)
        out["judgment"] = _judgment_to_dict(node.judgment)
    elif isinstance(node, ParaphraseLink):
        out["target"] = node.target_id
        out["similarity"] = node.similarity
    return out


def node_from_dict(data: Mapping) -> TreeNode:
    kind = data.get("kind")
    statement = Statement(data["statement"])
    if kind == "document_leaf":
        return DocumentLeaf(statement, data["chunk_id"], data["entail_score"])
    if kind == "question_leaf":
        return QuestionLeaf(statement)
    if kind == "step":
        judgment = data.get("judgment")
        return DecompositionStep(
            statement,
            tuple(data.get("children", ())),
            judgment_from_dict(judgment) if judgment is not None else None,
        )
    if kind == "paraphrase":
        return ParaphraseLink(statement, data["target"], data["similarity"])
    raise TreeJsonError(f"unknown node kind {kind!r}")


def tree_to_json(tree: EntailmentTree) -> str:
    """Canonical JSON form: sorted keys, two-space indent."""
    payload = {
        "root": tree.root_id,
        "nodes": {node_id: node_to_dict(node) for node_id, node in tree.nodes.items()},
    }
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False)


def tree_from_json(text: str) -> EntailmentTree:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeJsonError(
            f"malformed tree JSON at line {exc.lineno} column {exc.colno} (char {exc.pos}): {exc.msg}"
        ) from exc
    try:
        nodes = {node_id: node_from_dict(d) for node_id, d in payload["nodes"].items()}
        return EntailmentTree(root_id=payload["root"], nodes=nodes)
    except TreeJsonError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise TreeJsonError(f"invalid tree document: {exc}") from exc


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def tree_to_dot(tree: EntailmentTree) -> str:
    """Graphviz DOT rendering: one declaration per node, edges parent -> child."""
    lines = ["digraph entailment_tree {", "  rankdir=TB;"]
    shapes = {"document_leaf": "box", "question_leaf": "box", "step": "ellipse", "paraphrase": "diamond"}
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        kind = _KIND_NAMES[type(node)]
        label = _dot_escape(node.statement.text)
        extra = ""
        if isinstance(node, DocumentLeaf):
            extra = f"\\n[{_dot_escape(node.chunk_id)} : {node.entail_score}]"
        lines.append(f'  "{node_id}" [label="{label}{extra}", shape={shapes[kind]}];')
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        style = ' [style=dashed, label="paraphrase"]' if isinstance(node, ParaphraseLink) else ""
        for child_id in children_of(node):
            lines.append(f'  "{node_id}" -> "{child_id}"{style};')
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- configuration and results ----------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    """Every numeric knob of the engine; defaults match the reference setup."""

    budget_nodes: int = 80
    keep_threshold: int = 4
    paraphrase_min_sim: float = 0.9
    first_stage_k: int = 1000
    rerank_keep: int = 30
    n_forward_inferences: int = 30
    n_per_generator: int = 10
    n_generators: int = 4
    depth0_multiplier: int = 2
    max_premises: int = 4
    judge_temperature: float = 0.2
    gen_temperature: float = 1.0
    max_stepwise_steps: int = 10
    best_of_k: int = 5
    prob_keep_threshold: float = 0.6
    judge_batch_max: int = 15

    def __post_init__(self) -> None:
        positive = (
            "first_stage_k",
            "rerank_keep",
            "n_forward_inferences",
            "n_per_generator",
            "n_generators",
            "depth0_multiplier",
            "max_premises",
            "max_stepwise_steps",
            "best_of_k",
            "judge_batch_max",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.budget_nodes < 0:
            raise ValueError("budget_nodes must be non-negative")
        ensure_ordinal(self.keep_threshold, "keep_threshold")
        if not 0.0 < self.paraphrase_min_sim <= 1.0:
            raise ValueError("paraphrase_min_sim must lie in (0, 1]")
        if self.judge_temperature < 0 or self.gen_temperature < 0:
            raise ValueError("temperatures must be non-negative")
        if not 0.0 < self.prob_keep_threshold <= 1.0:
            raise ValueError("prob_keep_threshold must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SearchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown search config fields: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class ProofResult:
    tree: EntailmentTree
    integrity: int
    expansions_used: int
    untraversed_branches: int

    def __post_init__(self) -> None:
        actual = tree_integrity(self.tree)
        if actual != self.integrity:
            raise ValueError(f"integrity {self.integrity} does not match tree ({actual})")
        if self.expansions_used < 0 or self.untraversed_branches < 0:
            raise ValueError("counters must be non-negative")

    @classmethod
    def for_tree(cls, tree: EntailmentTree, expansions_used: int, untraversed_branches: int) -> "ProofResult":
        return cls(tree, tree_integrity(tree), expansions_used, untraversed_branches)


def proof_result_to_dict(result: ProofResult) -> dict:
    return {
        "integrity": result.integrity,
        "expansions_used": result.expansions_used,
        "untraversed_branches": result.untraversed_branches,
        "tree": json.loads(tree_to_json(result.tree)),
    }
