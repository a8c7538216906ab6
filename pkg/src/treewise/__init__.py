"""treewise: corpus-grounded entailment tree search.

Answers "is this hypothesis compositionally entailed by the corpus in the
context of this question?" by backward-chaining decomposition search with
ordinal entailment judging, plus the surrounding machinery: BM25 retrieval
over 100-word chunks, greedy tree-generation baselines, agreement metrics,
and a teacher/student silver-data pipeline.
"""

__version__ = "0.1.0"

from .core import (
    Decomposition,
    DecompositionStep,
    DocumentLeaf,
    EntailmentTree,
    Hypothesis,
    HypothesisKind,
    ParaphraseLink,
    ProofResult,
    Provenance,
    Question,
    QuestionLeaf,
    QuestionOption,
    RdteJudgment,
    SearchConfig,
    Statement,
    binarize_sufficiency,
    normalize_statement,
    tree_from_json,
    tree_integrity,
    tree_to_dot,
    tree_to_json,
    validate_tree,
)
from .retrieval import (
    DocumentChunk,
    InvertedIndex,
    LexicalOverlapReranker,
    bm25_score,
    build_index,
    chunk_document,
    hypothesis_query,
    rerank,
    retrieve,
    tokenize,
)
from .rdte_eval import (
    EvalReport,
    RdteItem,
    Split,
    evaluate_predictions,
    f_beta,
    krippendorff_alpha,
    load_rdte_dataset,
    precision_recall,
    raw_agreement,
)
from .search import RunLog, condense, prove, should_terminate
from .qa import answer_question, evaluate_qa, integrity_report

__all__ = [name for name in dir() if not name.startswith("_")]
