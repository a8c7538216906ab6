"""Multiple-choice QA driver: declarativize each option, prove or generate a
tree for it, pick the option with the best tree, and report accuracy plus
mean tree integrity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .backends.client import BackendError
from .backends.ops import EngineBackends, declarativize
from .baselines import (
    StepJudge,
    e2e_generate,
    judge_tree_steps,
    make_step_judge,
    select_best,
    stepwise_generate,
)
from .core import (
    DecompositionStep,
    EntailmentTree,
    Hypothesis,
    HypothesisKind,
    ProofResult,
    Question,
    SearchConfig,
    iter_reachable,
    tree_integrity,
    tree_to_json,
)
from .retrieval import InvertedIndex
from .search import RunLog, prove

__all__ = [
    "ENGINES",
    "OptionOutcome",
    "QaResult",
    "answer_question",
    "QaEvaluation",
    "evaluate_qa",
    "IntegrityReport",
    "integrity_report",
]

log = logging.getLogger(__name__)

ENGINES = ("treewise", "e2e", "stepwise")


@dataclass(frozen=True)
class OptionOutcome:
    integrity: int  # 0 when the option produced no tree
    proof_count: int


@dataclass(frozen=True)
class QaResult:
    question_id: str
    chosen_label: str
    per_option: Mapping[str, OptionOutcome]
    tie_flag: bool
    winning_tree: Optional[EntailmentTree]

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "chosen_label": self.chosen_label,
            "tie_flag": self.tie_flag,
            "per_option": {
                label: {"integrity": o.integrity, "proof_count": o.proof_count}
                for label, o in self.per_option.items()
            },
            "winning_tree": (
                None if self.winning_tree is None else tree_to_json(self.winning_tree)
            ),
        }


def _top_level_kind(question: Question, label: str) -> HypothesisKind:
    if question.gold_label is not None and label != question.gold_label:
        return HypothesisKind.TOP_LEVEL_INCORRECT
    return HypothesisKind.TOP_LEVEL_CORRECT


def _run_option(
    question: Question,
    label: str,
    engine: str,
    config: SearchConfig,
    backends: EngineBackends,
    index: InvertedIndex,
    run_log: Optional[RunLog],
) -> tuple[int, int, Optional[EntailmentTree]]:
    option = question.option(label)
    if engine == "treewise":
        hypothesis = Hypothesis(
            declarativize(question, option, backends.generation),
            question.id,
            0,
            _top_level_kind(question, label),
        )
        results = prove(question, hypothesis, config, backends, index, run_log=run_log)
        if not results:
            return 0, 0, None
        return results[0].integrity, len(results), results[0].tree
    judge = make_step_judge(question, backends.judgment, config)
    if engine == "e2e":
        retained = e2e_generate(question, option, index, backends, config)
        if not retained:
            return 0, 0, None
        tree, integrity = select_best([g.tree for g in retained], judge)
        return integrity, len(retained), tree
    if engine == "stepwise":
        trees = [
            stepwise_generate(question, option, index, backends, config, repetition=rep)
            for rep in range(config.best_of_k)
        ]
        tree, integrity = select_best(trees, judge)
        return integrity, len(trees), tree
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def answer_question(
    question: Question,
    engine: str,
    config: SearchConfig,
    backends: EngineBackends,
    index: InvertedIndex,
    run_log: Optional[RunLog] = None,
) -> QaResult:
    """Prove every option and answer with the one carrying the best tree.

    Option score is its best tree integrity (0 with no tree); ties go to the
    earlier option with ``tie_flag`` set.  Options failing with backend
    errors score 0; if every option fails, the error propagates.
    """
    if len(question.options) < 2:
        raise ValueError(f"question {question.id!r} is not multiple-choice")
    outcomes: dict[str, OptionOutcome] = {}
    trees: dict[str, Optional[EntailmentTree]] = {}
    failures = 0
    for option in question.options:
        try:
            integrity, count, tree = _run_option(
                question, option.label, engine, config, backends, index, run_log
            )
        except ValueError:
            raise
        except Exception as exc:  # noqa: BLE001 - a failed option scores 0
            log.warning("option %s failed: %s", option.label, exc)
            failures += 1
            integrity, count, tree = 0, 0, None
        outcomes[option.label] = OptionOutcome(integrity, count)
        trees[option.label] = tree
    if failures == len(question.options):
        raise BackendError(f"every option of question {question.id!r} failed")

    best_label = question.options[0].label
    for option in question.options[1:]:
        if outcomes[option.label].integrity > outcomes[best_label].integrity:
            best_label = option.label
    best_score = outcomes[best_label].integrity
    tie_flag = sum(1 for o in outcomes.values() if o.integrity == best_score) > 1
    return QaResult(
        question_id=question.id,
        chosen_label=best_label,
        per_option=outcomes,
        tie_flag=tie_flag,
        winning_tree=trees[best_label],
    )


@dataclass(frozen=True)
class QaEvaluation:
    accuracy: float
    mean_integrity: float
    results: tuple[QaResult, ...]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_integrity": self.mean_integrity,
            "n_questions": len(self.results),
        }


def evaluate_qa(
    dataset: Sequence[Question],
    engine: str,
    config: SearchConfig,
    backends: EngineBackends,
    index: InvertedIndex,
) -> QaEvaluation:
    """Accuracy is the fraction of questions whose chosen option is gold;
    mean integrity averages the winning tree's integrity (0 when treeless)."""
    if not dataset:
        raise ValueError("empty QA dataset")
    results = []
    correct = 0
    integrity_total = 0
    for question in dataset:
        if question.gold_label is None:
            raise ValueError(f"question {question.id!r} has no gold label")
        result = answer_question(question, engine, config, backends, index)
        results.append(result)
        if result.chosen_label == question.gold_label:
            correct += 1
        integrity_total += result.per_option[result.chosen_label].integrity
    return QaEvaluation(
        accuracy=correct / len(dataset),
        mean_integrity=integrity_total / len(dataset),
        results=tuple(results),
    )


@dataclass(frozen=True)
class IntegrityReport:
    per_step: Mapping[str, int]
    overall: int
    tree: EntailmentTree


def integrity_report(tree: EntailmentTree, judge: StepJudge) -> IntegrityReport:
    """Re-judge every decomposition step and score the tree by its weakest
    link; a judge failure fails that step closed to 1."""
    judged = judge_tree_steps(tree, judge)
    per_step = {
        node_id: judged.nodes[node_id].judgment.sufficiency
        for node_id in iter_reachable(judged)
        if isinstance(judged.nodes[node_id], DecompositionStep)
    }
    return IntegrityReport(per_step=per_step, overall=tree_integrity(judged), tree=judged)
