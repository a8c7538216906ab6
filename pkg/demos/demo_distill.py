"""The silver-data pipeline end to end: run a search, pull the candidate
decompositions out of its run log, judge them with a scripted teacher, and
export the two student training files.

A second pass over the same inputs is served entirely from the response
cache -- zero live calls -- and writes byte-identical exports.

Run:  python3 demos/demo_distill.py
"""

import json
import re
import tempfile
from pathlib import Path

from treewise import SearchConfig, prove
from treewise.backends import (
    CompletionBackend,
    EngineBackends,
    HashingEmbedder,
    ResponseCache,
    ScriptedBackend,
)
from treewise.core import Hypothesis, HypothesisKind, Question, Statement, normalize_statement
from treewise.distill import export_classifier_data, export_imitation_data, extract_traces, teacher_annotate, write_silver
from treewise.retrieval import DocumentChunk, LexicalOverlapReranker, build_index
from treewise.search import RunLog

QUESTION = Question(id="demo-distill", text="Why do ocean tides happen?")
HYPOTHESIS = Statement("The Moon causes ocean tides on Earth.")
P1 = "The Moon exerts gravitational pull on Earth."
P2 = "Gravitational pull on oceans creates tides."

CHUNKS = [
    DocumentChunk("alpha#0", "alpha", "alpha", P1),
    DocumentChunk("beta#0", "beta", "beta", P2),
]

# sufficiency the teacher hands out per premise pair
TEACHER_SCORES = {
    frozenset({normalize_statement(P1), normalize_statement(P2)}): 4,
    frozenset({normalize_statement(P1), normalize_statement("The Sun does it alone.")}): 2,
}


def build_backends(cache=None):
    scripted = ScriptedBackend()
    scripted.add_handler(
        "passage_entailment",
        lambda request: "5"
        if normalize_statement(str(request.params["hypothesis"]))
        == normalize_statement(str(request.params["passage"]))
        else "1",
    )
    scripted.add_handler(
        "decompose_fact_conditioned",
        lambda request: "\n".join(
            [
                json.dumps({"fact1": P1, "fact2": P2}),
                json.dumps({"fact1": P1, "fact2": "The Sun does it alone."}),
            ]
        )
        if normalize_statement(str(request.params["hypothesis"])) == HYPOTHESIS.norm
        else "",
    )
    scripted.add_handler("decompose_followup", lambda request: "")
    scripted.add_handler("forward_chain", lambda request: "")

    def play_judge(request):
        lines = []
        for raw in str(request.params["decompositions"]).splitlines():
            match = re.match(r"\((\d+)\)\s+(.*)", raw)
            premises = frozenset(normalize_statement(p) for p in match.group(2).split(" AND "))
            n = len(premises)
            lines.append(
                json.dumps(
                    {
                        "index": int(match.group(1)),
                        "relevance": [5] * n,
                        "redundancy": [5] * n,
                        "complete_inference": TEACHER_SCORES.get(premises, 1),
                        "explanation": "scripted teacher",
                    }
                )
            )
        return "\n".join(lines)

    scripted.add_handler("rdte_judge_zero_shot", play_judge)
    completion = CompletionBackend(scripted, cache=cache, model_id="scripted-teacher")
    return (
        EngineBackends(
            generation=completion,
            judgment=completion,
            embedder=HashingEmbedder(),
            reranker=LexicalOverlapReranker(),
        ),
        scripted,
    )


workdir = Path(tempfile.mkdtemp(prefix="treewise-distill-"))
index = build_index(CHUNKS)
config = SearchConfig(first_stage_k=50, rerank_keep=5, n_generators=2)

# 1. run a search, keeping its event log
backends, _ = build_backends()
log = RunLog()
root = Hypothesis(HYPOTHESIS, QUESTION.id, 0, HypothesisKind.TOP_LEVEL_CORRECT)
prove(QUESTION, root, config, backends, index, run_log=log)

# 2. extract every candidate decomposition the run generated
groups, skipped = extract_traces([log])
print(f"extracted {len(groups)} hypothesis group(s), "
      f"{sum(len(g.decompositions) for g in groups)} candidate decomposition(s)")

# 3. teacher-annotate twice: cold, then from the warm cache
for attempt in ("cold", "warm"):
    cache = ResponseCache(workdir / "cache")
    teacher_backends, scripted = build_backends(cache=cache)
    records = teacher_annotate(groups, teacher_backends.judgment)
    write_silver(records, workdir / f"silver-{attempt}.jsonl")
    counts = export_classifier_data(records, workdir / f"classifier-{attempt}.jsonl")
    pairs, _ = export_imitation_data(records, workdir / f"imitation-{attempt}.jsonl")
    print(f"{attempt} run: {len(records)} silver records, labels {counts}, "
          f"{pairs} imitation pair(s), live calls {scripted.calls}")

cold = (workdir / "classifier-cold.jsonl").read_bytes()
warm = (workdir / "classifier-warm.jsonl").read_bytes()
print(f"classifier exports byte-identical across runs: {cold == warm}")
print(f"\nfiles written under {workdir}")
