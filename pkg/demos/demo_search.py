"""Prove a hypothesis with the tree search engine, fully offline.

A scripted backend plays the generator and the judges: the hypothesis
decomposes into two premises, each premise grounds directly in a corpus
chunk, and the step is judged sufficiency 4 -- so the finished tree scores
min(4, 5, 4) = 4.

Run:  python3 demos/demo_search.py
"""

import json
import re

from treewise import SearchConfig, prove, tree_to_dot, tree_to_json, validate_tree
from treewise.backends import (
    CompletionBackend,
    EngineBackends,
    HashingEmbedder,
    ScriptedBackend,
)
from treewise.core import Hypothesis, HypothesisKind, Question, Statement, normalize_statement
from treewise.retrieval import DocumentChunk, LexicalOverlapReranker, build_index
from treewise.search import RunLog

QUESTION = Question(id="demo", text="Why do ocean tides happen?")
HYPOTHESIS = Statement("The Moon causes ocean tides on Earth.")
P1 = "The Moon exerts gravitational pull on Earth."
P2 = "Gravitational pull on oceans creates tides."

CHUNKS = [
    DocumentChunk("alpha#0", "alpha", "alpha", P1),
    DocumentChunk("beta#0", "beta", "beta", P2),
    DocumentChunk("gamma#0", "gamma", "gamma", "Volcanoes erupt when magma rises."),
]

# passage-entailment scores the judge should hand out, keyed by
# (hypothesis norm, passage norm)
PASSAGE_SCORES = {
    (normalize_statement(P1), normalize_statement(P1)): 5,
    (normalize_statement(P2), normalize_statement(P2)): 4,
}


def play_passage_judge(request):
    key = (
        normalize_statement(str(request.params["hypothesis"])),
        normalize_statement(str(request.params["passage"])),
    )
    return str(PASSAGE_SCORES.get(key, 1))


def play_generator(request):
    if normalize_statement(str(request.params["hypothesis"])) == HYPOTHESIS.norm:
        return json.dumps({"fact1": P1, "fact2": P2})
    return ""


def play_judge(request):
    lines = []
    for raw in str(request.params["decompositions"]).splitlines():
        match = re.match(r"\((\d+)\)", raw)
        n_premises = raw.count(" AND ") + 1
        lines.append(
            json.dumps(
                {
                    "index": int(match.group(1)),
                    "relevance": [5] * n_premises,
                    "redundancy": [5] * n_premises,
                    "complete_inference": 4,
                    "explanation": "scripted demo judgment",
                }
            )
        )
    return "\n".join(lines)


scripted = ScriptedBackend()
scripted.add_handler("passage_entailment", play_passage_judge)
scripted.add_handler("decompose_fact_conditioned", play_generator)
scripted.add_handler("decompose_followup", lambda request: "")
scripted.add_handler("forward_chain", lambda request: "")
scripted.add_handler("rdte_judge_zero_shot", play_judge)

completion = CompletionBackend(scripted, model_id="scripted-demo")
backends = EngineBackends(
    generation=completion,
    judgment=completion,
    embedder=HashingEmbedder(),
    reranker=LexicalOverlapReranker(),
)

index = build_index(CHUNKS)
config = SearchConfig(first_stage_k=50, rerank_keep=5, n_generators=2)
root = Hypothesis(HYPOTHESIS, QUESTION.id, 0, HypothesisKind.TOP_LEVEL_CORRECT)
log = RunLog()

results = prove(QUESTION, root, config, backends, index, run_log=log)

result = results[0]
print(f"proofs found: {len(results)}")
print(f"tree integrity: {result.integrity}  (weakest link of step 4, leaves 5 and 4)")
print(f"expansions used: {result.expansions_used}")
print(f"structural violations: {validate_tree(result.tree, set(index.chunks), QUESTION)}")

print("\nsearch events:")
for event in log.events:
    print(f"  {event['event']:18s} {event['hypothesis'][:50]}")

print("\ntree JSON:")
print(tree_to_json(result.tree))

print("\nGraphviz DOT (pipe into `dot -Tpng`):")
print(tree_to_dot(result.tree))
