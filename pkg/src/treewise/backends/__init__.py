"""Generative and judgment capabilities behind narrow interfaces: the chat
client, the persistent response cache, the scripted mock, prompt templates,
and the prompt-backed operations."""

from .client import (
    API_KEY_ENV_VAR,
    BackendError,
    ChatClient,
    ChatRequest,
    HttpChatClient,
    OfflineMissError,
    ResponseCache,
    cache_key,
    cached_complete,
    canonical_input_digest,
    canonical_request,
)
from .embedding import Embedder, FixtureEmbedder, HashingEmbedder
from .mock import MockMissError, RecordingBackend, ScriptedBackend
from .ops import (
    CompletionBackend,
    EngineBackends,
    Exemplar,
    ExemplarStore,
    FactConditionedExchange,
    ForwardInference,
    GenerationResult,
    GeneratorKind,
    ICL_JUDGE,
    JudgeExchange,
    ZERO_SHOT_JUDGE,
    declarativize,
    extract_ordinal,
    fail_closed_judgment,
    forward_chain,
    gen_decompositions,
    icl_exemplars,
    is_paraphrase,
    judge_passage_entailment,
    judge_rdte_batch,
    paraphrase_similarity,
    parse_decomposition_lines,
    parse_forward_inferences,
    parse_judgment_lines,
    pick_distractor,
    probability_to_ordinal,
    rdte_judge_exchange,
)
from .templates import TemplateError, available_templates, load_template, render, render_template

__all__ = [name for name in dir() if not name.startswith("_")]
