"""Answer a multiple-choice question two ways: with the search engine and
with the greedy stepwise baseline, both on scripted backends.

Option A's declarativized hypothesis grounds directly in the corpus; option B
goes nowhere.  The engine answers A with a grounded tree; the stepwise
baseline decodes proof lines until its tree grounds.

Run:  python3 demos/demo_qa_baselines.py
"""

import json

from treewise import SearchConfig, answer_question, tree_to_json
from treewise.backends import (
    CompletionBackend,
    EngineBackends,
    HashingEmbedder,
    ScriptedBackend,
)
from treewise.baselines import make_step_judge, select_best, stepwise_generate
from treewise.core import Question, QuestionOption, normalize_statement
from treewise.retrieval import DocumentChunk, LexicalOverlapReranker, build_index

QUESTION = Question(
    id="demo-qa",
    text="What does the Moon orbit?",
    options=(QuestionOption("A", "the planet Earth"), QuestionOption("B", "the star Sun")),
    gold_label="A",
)

EARTH_FACT = "The Moon orbits the planet Earth."
CHUNKS = [
    DocumentChunk("earth#0", "earth", "earth", EARTH_FACT),
    DocumentChunk("noise#0", "noise", "noise", "Rocks are hard minerals."),
]

DECLARATIVES = {
    "the planet Earth": "The Moon goes around the planet Earth.",
    "the star Sun": "The Moon goes around the star Sun.",
}

# the earth chunk entails the declarativized gold hypothesis (and itself)
ENTAILED_BY_EARTH_CHUNK = {
    normalize_statement(DECLARATIVES["the planet Earth"]),
    normalize_statement(EARTH_FACT),
}


def play_declarativize(request):
    return DECLARATIVES[str(request.params["option"])]


def play_passage_judge(request):
    hypothesis = normalize_statement(str(request.params["hypothesis"]))
    passage = normalize_statement(str(request.params["passage"]))
    entailed = passage == normalize_statement(EARTH_FACT) and hypothesis in ENTAILED_BY_EARTH_CHUNK
    return "5" if entailed else "1"


def play_judge(request):
    block = str(request.params["decompositions"])
    lines = []
    for i, raw in enumerate(block.splitlines(), start=1):
        n_premises = raw.count(" AND ") + 1
        lines.append(
            json.dumps(
                {
                    "index": i,
                    "relevance": [5] * n_premises,
                    "redundancy": [5] * n_premises,
                    "complete_inference": 4,
                    "explanation": "scripted",
                }
            )
        )
    return "\n".join(lines)


def play_one_step(request):
    # decompose the hypothesis into the corpus fact plus a question echo
    return f"{DECLARATIVES['the planet Earth']} <- {EARTH_FACT} & the planet Earth"


scripted = ScriptedBackend()
scripted.add_handler("declarativize", play_declarativize)
scripted.add_handler("passage_entailment", play_passage_judge)
scripted.add_handler("rdte_judge_zero_shot", play_judge)
scripted.add_handler("decompose_fact_conditioned", lambda request: "")
scripted.add_handler("decompose_followup", lambda request: "")
scripted.add_handler("forward_chain", lambda request: "")
scripted.add_handler("tree_one_step", play_one_step)

completion = CompletionBackend(scripted, model_id="scripted-demo")
backends = EngineBackends(
    generation=completion,
    judgment=completion,
    embedder=HashingEmbedder(),
    reranker=LexicalOverlapReranker(),
)
index = build_index(CHUNKS)
config = SearchConfig(first_stage_k=50, rerank_keep=5, n_generators=2, best_of_k=1)

# --- the search engine ---
result = answer_question(QUESTION, "treewise", config, backends, index)
print("search engine:")
print(f"  chosen: {result.chosen_label} (gold {QUESTION.gold_label}), tie={result.tie_flag}")
for label, outcome in result.per_option.items():
    print(f"  option {label}: integrity {outcome.integrity}, proofs {outcome.proof_count}")

# --- the stepwise baseline on the gold option ---
tree = stepwise_generate(QUESTION, QUESTION.option("A"), index, backends, config)
judge = make_step_judge(QUESTION, backends.judgment, config)
best, integrity = select_best([tree], judge)
print(f"\nstepwise baseline: tree integrity {integrity}")
print(tree_to_json(best))
