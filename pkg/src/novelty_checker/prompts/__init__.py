"""Versioned prompt templates.

Templates are plain text files using ``string.Template`` placeholders. Every
rendered prompt records its template id in the run trace, so reports always
say which wording produced them. Edit by adding a new version, never by
rewriting an existing file.
"""

from __future__ import annotations

import re
from importlib import resources
from string import Template

_WS_RE = re.compile(r"\s+")


def load_template(template_id: str) -> Template:
    text = resources.files(__package__).joinpath(f"{template_id}.txt").read_text(
        encoding="utf-8"
    )
    return Template(text)


def one_line(text: str, max_words: int = 200) -> str:
    """Collapse whitespace and cap length so one paper fits on one line.

    Numbered candidate lines are the unit both for ranking prompts and for
    their parsed replies, so embedded newlines must never survive.
    """
    words = _WS_RE.sub(" ", text).strip().split(" ")
    if len(words) > max_words:
        words = words[:max_words]
    return " ".join(words)


def numbered_block(texts: list[str], max_words: int = 200) -> str:
    return "\n".join(
        f"[{i}] {one_line(t, max_words)}" for i, t in enumerate(texts, start=1)
    )
