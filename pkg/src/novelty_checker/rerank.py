"""Two-stage narrowing of the candidate pool.

First an embedding filter: cosine similarity between the idea and each
paper's title-plus-abstract text keeps the closest N. Then a listwise LLM re-ranker
sweeps a sliding window from the tail of that list to its head, asking for a
permutation of each window, and the first k survivors become the evidence
set. The ranking criteria come in two modes: the facet-priority tiers used by
the full system, and a plain-relevance wording kept for ablation runs.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .domain import CandidatePool, Idea, Paper, PipelineConfig, RankedList
from .errors import (
    ConfigError,
    DimensionMismatch,
    UnparseableRanking,
    ValidationError,
    ZeroVector,
)
from .gateway import ChatRequest, EmbeddingVector, LlmGateway
from .prompts import load_template, numbered_block

logger = logging.getLogger(__name__)

FACET_TEMPLATE_ID = "facet_rerank_v1"
RELEVANCE_TEMPLATE_ID = "relevance_rerank_v1"

EXAMPLE_RANKING = "[2] > [1] > [3]"

_INDEX_RE = re.compile(r"\[(\d+)\]")


@dataclass(frozen=True)
class RerankCriteria:
    """Which ranking instructions the listwise re-ranker receives."""

    mode: str = "facet"

    def __post_init__(self):
        if self.mode not in ("facet", "relevance"):
            raise ConfigError(f"unknown rerank mode {self.mode!r}")

    @property
    def template_id(self) -> str:
        return FACET_TEMPLATE_ID if self.mode == "facet" else RELEVANCE_TEMPLATE_ID

    @property
    def stage(self) -> str:
        return "facet_topK" if self.mode == "facet" else "relevance_topK"


@dataclass(frozen=True)
class WindowPermutation:
    """A re-ordering of one window, as 1-based local indices."""

    window_start: int
    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(1, len(self.order) + 1)):
            raise ValidationError("order must be a permutation of 1..window_len")


def cosine(u: Sequence[float] | EmbeddingVector, v: Sequence[float] | EmbeddingVector) -> float:
    """Cosine similarity of two vectors.

    Raises:
        DimensionMismatch: unequal lengths.
        ZeroVector: either vector has zero norm.
    """
    a = list(u)
    b = list(v)
    if len(a) != len(b):
        raise DimensionMismatch(f"dimensions differ: {len(a)} vs {len(b)}")
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for a zero vector")
    return dot / (na * nb)


def embed_filter(
    idea: Idea, pool: CandidatePool, cfg: PipelineConfig, gateway: LlmGateway
) -> RankedList:
    """Rank the pool by cosine similarity to the idea and keep the top N.

    Ties in similarity break by paper id ascending so the ordering is total
    and reruns are identical.
    """
    papers = list(pool.papers)
    texts = [idea.text] + [p.text for p in papers]
    vectors = gateway.embed(cfg.embedding_model_id, texts)
    idea_vec = vectors[0]
    scored = [
        (cosine(idea_vec, vec), paper)
        for paper, vec in zip(papers, vectors[1:])
    ]
    scored.sort(key=lambda sp: (-sp[0], sp[1].paper_id))
    kept = scored[: min(cfg.N, len(scored))]
    return RankedList.from_papers(
        idea.id,
        "embedding_topN",
        [p for _, p in kept],
        scores=[s for s, _ in kept],
    )


def build_rerank_prompt(
    idea: Idea,
    window_papers: Sequence[Paper],
    criteria: RerankCriteria,
    cfg: PipelineConfig,
) -> ChatRequest:
    """Render the listwise ranking prompt for one window.

    Candidates appear as numbered single lines so the demanded reply format
    ("[i] > [j] > ...") is unambiguous.
    """
    entries = numbered_block([p.text for p in window_papers])
    prompt = load_template(criteria.template_id).substitute(
        idea_text=idea.text,
        entries=entries,
        count=len(window_papers),
        example_ranking=EXAMPLE_RANKING,
    )
    return ChatRequest(
        model=cfg.rerank_model_id,
        messages=({"role": "user", "content": prompt},),
        temperature=cfg.temperature,
    )


def parse_permutation(text: str, window_len: int, window_start: int = 0) -> WindowPermutation:
    """Recover a full permutation from a listwise reply, repairing damage.

    Bracketed integers are read in order; duplicates keep their first
    occurrence, out-of-range values are dropped, and any missing indices are
    appended in ascending order.

    Raises:
        UnparseableRanking: the text contains no valid index at all.
    """
    seen: dict[int, None] = {}
    for m in _INDEX_RE.finditer(text):
        idx = int(m.group(1))
        if 1 <= idx <= window_len and idx not in seen:
            seen[idx] = None
    if not seen:
        raise UnparseableRanking(f"no valid index in reply: {text[:120]!r}")
    order = list(seen)
    order.extend(i for i in range(1, window_len + 1) if i not in seen)
    return WindowPermutation(window_start=window_start, order=tuple(order))


def _windows(n: int, window: int, stride: int) -> list[tuple[int, int]]:
    """Window offsets for a tail-to-head sweep over a list of length n."""
    if n <= window:
        return [(0, n)]
    spans = []
    start, end = n - window, n
    while end > 0 and start + stride != 0:
        spans.append((max(start, 0), end))
        start -= stride
        end -= stride
    return spans


def facet_rerank(
    idea: Idea,
    filtered: RankedList,
    papers_by_id: Mapping[str, Paper],
    cfg: PipelineConfig,
    gateway: LlmGateway,
    criteria: RerankCriteria = RerankCriteria(),
) -> RankedList:
    """Sliding-window listwise rerank of the filtered list, truncated to k.

    Windows run from the tail to the head so strong late papers can climb
    across overlapping windows. A window whose reply cannot be parsed keeps
    its current order (logged); provider failures abort the pass.
    """
    order = [papers_by_id[pid] for pid in filtered.ids()]
    for start, end in _windows(len(order), cfg.window, cfg.stride):
        window_papers = order[start:end]
        if len(window_papers) < 2:
            continue
        request = build_rerank_prompt(idea, window_papers, criteria, cfg)
        response = gateway.chat(request)
        try:
            perm = parse_permutation(response.text, len(window_papers), start)
        except UnparseableRanking as exc:
            logger.warning(
                "window [%d:%d) kept its order, reply unparseable: %s", start, end, exc
            )
            continue
        order[start:end] = [window_papers[i - 1] for i in perm.order]
    kept = order[: min(cfg.k, len(order))]
    return RankedList.from_papers(idea.id, criteria.stage, kept)
