"""Prompt template loading and rendering.

Templates live under ``treewise/prompts/`` as plain text assets keyed by
template id.  Placeholders use ``{name}`` syntax; literal braces are written
``{{`` and ``}}``.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

__all__ = ["TemplateError", "load_template", "render_template", "render", "available_templates"]

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_LBRACE = "\x00"
_RBRACE = "\x01"


class TemplateError(Exception):
    pass


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    try:
        return (
            resources.files("treewise")
            .joinpath("prompts", f"{template_id}.txt")
            .read_text(encoding="utf-8")
        )
    except FileNotFoundError:
        raise TemplateError(f"no template named {template_id!r}") from None


def render_template(template_text: str, params: dict) -> str:
    """Substitute ``{name}`` placeholders, then unescape ``{{``/``}}``.

    Unknown placeholders raise; braces inside substituted values stay literal.
    """
    protected = template_text.replace("{{", _LBRACE).replace("}}", _RBRACE)

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in params:
            raise TemplateError(f"no value for placeholder {{{name}}}")
        return str(params[name]).replace("{", _LBRACE).replace("}", _RBRACE)

    substituted = _PLACEHOLDER.sub(substitute, protected)
    return substituted.replace(_LBRACE, "{").replace(_RBRACE, "}")


def render(template_id: str, **params) -> str:
    return render_template(load_template(template_id), params)


def available_templates() -> list[str]:
    prompt_dir = resources.files("treewise").joinpath("prompts")
    return sorted(p.name[: -len(".txt")] for p in prompt_dir.iterdir() if p.name.endswith(".txt"))
