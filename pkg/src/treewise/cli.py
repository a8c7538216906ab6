"""Operator surface: corpus indexing, single-hypothesis search, QA runs,
evaluation, distillation, and tree rendering.

Configuration is a JSON document (see README); individual fields are
overridden with ``--set dotted.path=value``, with flag > file > default
precedence.  Outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import click

from . import __version__
from .backends.client import API_KEY_ENV_VAR, BackendError, HttpChatClient, ResponseCache
from .backends.embedding import HashingEmbedder
from .backends.mock import ScriptedBackend
from .backends.ops import CompletionBackend, EngineBackends, ExemplarStore
from .core import (
    Hypothesis,
    HypothesisKind,
    Question,
    QuestionOption,
    SearchConfig,
    Statement,
    proof_result_to_dict,
    tree_from_json,
    tree_to_dot,
)
from .distill import export_classifier_data, export_imitation_data, extract_traces, teacher_annotate, write_silver
from .qa import ENGINES, answer_question, evaluate_qa
from .rdte_eval import evaluate_predictions, load_rdte_dataset, split_counts
from .retrieval import LexicalOverlapReranker, build_index, load_corpus_jsonl, load_index, save_index
from .search import RunLog, prove

__all__ = ["main", "AppConfig", "load_app_config"]


class ConfigError(Exception):
    pass


@dataclass
class BackendSettings:
    base_url: Optional[str] = None
    model_id: str = "default"
    mock_fixture_path: Optional[str] = None


@dataclass
class AppConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    backend: BackendSettings = field(default_factory=BackendSettings)
    cache_dir: Optional[str] = None
    cache_read_only: bool = False
    index_path: Optional[str] = None
    exemplars_path: Optional[str] = None
    log_level: str = "INFO"

    def validate(self) -> None:
        live = self.backend.base_url is not None
        mock = self.backend.mock_fixture_path is not None
        if live and mock:
            raise ConfigError("configure either a live backend or a mock fixture, not both")
        if not live and not mock:
            raise ConfigError("no backend configured: set backend.base_url or backend.mock_fixture_path")
        for name in ("index_path", "exemplars_path"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name} does not exist: {value}")
        if mock and not Path(self.backend.mock_fixture_path).exists():
            raise ConfigError(f"mock fixture does not exist: {self.backend.mock_fixture_path}")


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def load_app_config(path: Optional[str], overrides: Sequence[str] = ()) -> AppConfig:
    """Defaults, then the JSON file, then ``--set`` overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    search = SearchConfig.from_dict(data.get("search", {}))
    backend = BackendSettings(**data.get("backend", {}))
    config = AppConfig(
        search=search,
        backend=backend,
        cache_dir=data.get("cache_dir"),
        cache_read_only=data.get("cache_read_only", False),
        index_path=data.get("index_path"),
        exemplars_path=data.get("exemplars_path"),
        log_level=data.get("log_level", "INFO"),
    )
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override must look like dotted.path=value, got {override!r}")
        dotted, value = override.split("=", 1)
        parts = dotted.strip().split(".")
        if parts[0] == "search" and len(parts) == 2:
            fields = {f.name: f for f in dataclasses.fields(SearchConfig)}
            if parts[1] not in fields:
                raise ConfigError(f"unknown search field {parts[1]!r}")
            current = getattr(config.search, parts[1])
            config.search = dataclasses.replace(config.search, **{parts[1]: _coerce(value, current)})
        elif parts[0] == "backend" and len(parts) == 2:
            if not hasattr(config.backend, parts[1]):
                raise ConfigError(f"unknown backend field {parts[1]!r}")
            setattr(config.backend, parts[1], value)
        elif len(parts) == 1 and hasattr(config, parts[0]) and parts[0] not in ("search", "backend"):
            current = getattr(config, parts[0])
            setattr(config, parts[0], _coerce(value, current if current is not None else ""))
        else:
            raise ConfigError(f"unknown config path {dotted!r}")
    return config


def build_backends(config: AppConfig) -> EngineBackends:
    cache = (
        ResponseCache(config.cache_dir, read_only=config.cache_read_only)
        if config.cache_dir
        else None
    )
    if config.backend.mock_fixture_path is not None:
        client = ScriptedBackend.from_jsonl(config.backend.mock_fixture_path)
    else:
        client = HttpChatClient.from_env(config.backend.base_url)
    completion = CompletionBackend(client, cache=cache, model_id=config.backend.model_id)
    exemplars = (
        ExemplarStore.from_jsonl(config.exemplars_path) if config.exemplars_path else None
    )
    return EngineBackends(
        generation=completion,
        judgment=completion,
        embedder=HashingEmbedder(),
        reranker=LexicalOverlapReranker(),
        exemplars=exemplars,
    )


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _load_question(payload: dict) -> Question:
    options = tuple(
        QuestionOption(o["label"], o["text"]) for o in payload.get("options", ())
    )
    return Question(
        id=str(payload.get("id", "")),
        text=payload.get("question", payload.get("text", "")),
        options=options,
        gold_label=payload.get("gold", payload.get("gold_label")),
    )


def load_qa_dataset(path: str | Path) -> list[Question]:
    questions = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                questions.append(_load_question(json.loads(raw)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"QA dataset line {line_no}: {exc}") from exc
    return questions


def structured_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, BackendError, ValueError, OSError) as exc:
            click.echo(json.dumps({"error": str(exc)}), err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option(
    "--set",
    "-O",
    "overrides",
    multiple=True,
    help="Override a config field, e.g. -O search.budget_nodes=10.",
)
@click.option("--jobs", type=int, default=1, show_default=True, help="Max concurrent backend calls.")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str], overrides: tuple[str, ...], jobs: int) -> None:
    """Corpus-grounded entailment tree search and evaluation."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["overrides"] = overrides
    ctx.obj["jobs"] = max(jobs, 1)


def _app_config(ctx: click.Context) -> AppConfig:
    return load_app_config(ctx.obj["config_path"], ctx.obj["overrides"])


@main.command("index")
@click.argument("corpus", type=click.Path(exists=True))
@click.argument("out_path", type=click.Path())
@click.option("--max-words", type=int, default=100, show_default=True)
@structured_errors
def cmd_index(corpus: str, out_path: str, max_words: int) -> None:
    """Chunk a JSONL corpus and persist the retrieval index."""
    chunks = load_corpus_jsonl(corpus, max_words=max_words)
    index = build_index(chunks)
    tmp = Path(out_path)
    save_index(index, tmp.with_suffix(tmp.suffix + ".tmp"))
    os.replace(tmp.with_suffix(tmp.suffix + ".tmp"), tmp)
    click.echo(json.dumps({"chunks": index.n_chunks, "terms": len(index.postings), "out": out_path}))


@main.command("search")
@click.option("--question-file", type=click.Path(exists=True), default=None)
@click.option("--question", "question_text", type=str, default=None, help="Inline question text.")
@click.option("--hypothesis", required=True, type=str)
@click.option("--out", "out_path", type=click.Path(), required=True, help="ProofResult JSON output.")
@click.option("--log", "log_path", type=click.Path(), default=None, help="Run log JSONL output.")
@click.pass_context
@structured_errors
def cmd_search(
    ctx: click.Context,
    question_file: Optional[str],
    question_text: Optional[str],
    hypothesis: str,
    out_path: str,
    log_path: Optional[str],
) -> None:
    """Prove a hypothesis against the configured index."""
    config = _app_config(ctx)
    config.validate()
    if config.index_path is None:
        raise ConfigError("index_path is not configured")
    if (question_file is None) == (question_text is None):
        raise ConfigError("provide exactly one of --question-file or --question")
    if question_file is not None:
        question = _load_question(json.loads(Path(question_file).read_text(encoding="utf-8")))
    else:
        question = Question(id="inline", text=question_text)
    backends = build_backends(config)
    index = load_index(config.index_path)
    root = Hypothesis(Statement(hypothesis), question.id, 0, HypothesisKind.TOP_LEVEL_CORRECT)
    run_log = RunLog()
    results = prove(
        question, root, config.search, backends, index, run_log=run_log, jobs=ctx.obj["jobs"]
    )
    payload = {
        "hypothesis": hypothesis,
        "question_id": question.id,
        "proofs": [proof_result_to_dict(r) for r in results],
    }
    write_atomic(out_path, json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
    if log_path is not None:
        write_atomic(
            log_path,
            "".join(json.dumps(e, ensure_ascii=False) + "\n" for e in run_log.events),
        )
    click.echo(
        json.dumps(
            {
                "proofs": len(results),
                "best_integrity": results[0].integrity if results else None,
                "out": out_path,
            }
        )
    )


@main.command("qa")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--engine", type=click.Choice(ENGINES), default="treewise", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True, help="Per-question results JSONL.")
@click.option("--summary", "summary_path", type=click.Path(), default=None, help="Summary JSON.")
@click.pass_context
@structured_errors
def cmd_qa(
    ctx: click.Context,
    dataset: str,
    engine: str,
    out_path: str,
    summary_path: Optional[str],
) -> None:
    """Answer a multiple-choice dataset and report accuracy and integrity."""
    config = _app_config(ctx)
    config.validate()
    if config.index_path is None:
        raise ConfigError("index_path is not configured")
    questions = load_qa_dataset(dataset)
    backends = build_backends(config)
    index = load_index(config.index_path)
    evaluation = evaluate_qa(questions, engine, config.search, backends, index)
    write_atomic(
        out_path,
        "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in evaluation.results),
    )
    summary = evaluation.to_dict() | {"engine": engine}
    if summary_path is not None:
        write_atomic(summary_path, json.dumps(summary, indent=2) + "\n")
    click.echo(json.dumps(summary))


@main.command("eval-rdte")
@click.argument("dataset", type=click.Path(exists=True))
@click.option(
    "--predictions",
    type=click.Path(exists=True),
    default=None,
    help="JSONL of predicted sufficiency scores (ints or {\"sufficiency\": n}).",
)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--threshold", type=int, default=4, show_default=True)
@click.pass_context
@structured_errors
def cmd_eval_rdte(
    ctx: click.Context,
    dataset: str,
    predictions: Optional[str],
    out_path: str,
    threshold: int,
) -> None:
    """Score sufficiency predictions against a judged dataset.

    Without --predictions, the configured backend judges every item.
    """
    items = load_rdte_dataset(dataset)
    if predictions is not None:
        predicted = []
        with open(predictions, encoding="utf-8") as handle:
            for raw in handle:
                raw = raw.strip()
                if not raw:
                    continue
                value = json.loads(raw)
                predicted.append(value["sufficiency"] if isinstance(value, dict) else int(value))
    else:
        config = _app_config(ctx)
        config.validate()
        backends = build_backends(config)
        from .backends.ops import judge_rdte_batch

        predicted = []
        for item in items:
            results = judge_rdte_batch(
                item.question,
                item.hypothesis.statement,
                [item.decomposition],
                backends.judgment,
                temperature=config.search.judge_temperature,
                recursive=item.hypothesis.depth > 0,
            )
            predicted.append(results[0][1].sufficiency)
    report = evaluate_predictions(items, predicted, threshold=threshold)
    payload = report.to_dict() | {"splits": split_counts(items)}
    write_atomic(out_path, json.dumps(payload, indent=2) + "\n")
    click.echo(json.dumps({"f_beta": report.f_beta, "out": out_path}))


@main.command("distill")
@click.argument("run_logs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--batch-max", type=int, default=15, show_default=True)
@click.pass_context
@structured_errors
def cmd_distill(ctx: click.Context, run_logs: tuple[str, ...], out_dir: str, batch_max: int) -> None:
    """Teacher-annotate search traces and export student training files."""
    config = _app_config(ctx)
    config.validate()
    backends = build_backends(config)
    groups, skipped = extract_traces(list(run_logs))
    records = teacher_annotate(
        groups, backends.judgment, batch_max=batch_max,
        temperature=config.search.judge_temperature,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_records = write_silver(records, out / "silver.jsonl")
    counts = export_classifier_data(records, out / "classifier.jsonl") if records else {"0": 0, "1": 0}
    pairs, _ = export_imitation_data(records, out / "imitation.jsonl")
    click.echo(
        json.dumps(
            {
                "groups": len(groups),
                "records": n_records,
                "skipped_log_lines": skipped,
                "classifier_counts": counts,
                "imitation_pairs": pairs,
                "out_dir": str(out),
            }
        )
    )


@main.command("render")
@click.argument("tree_json", type=click.Path(exists=True))
@click.argument("out_dot", type=click.Path())
@structured_errors
def cmd_render(tree_json: str, out_dot: str) -> None:
    """Render a saved tree to Graphviz DOT."""
    from .core import TreeJsonError

    try:
        tree = tree_from_json(Path(tree_json).read_text(encoding="utf-8"))
    except TreeJsonError as exc:
        raise ConfigError(str(exc)) from exc
    write_atomic(out_dot, tree_to_dot(tree))
    click.echo(json.dumps({"nodes": len(tree.nodes), "out": out_dot}))


if __name__ == "__main__":
    main()
