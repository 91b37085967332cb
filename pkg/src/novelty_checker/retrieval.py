"""Candidate-pool construction: query generation, literature search, assembly.

Three independent sources feed the pool: LLM-generated keyword and title
queries against the search endpoint, the whole idea text against the snippet
endpoint, and recommendations fanned out from any seed papers. Sources
degrade gracefully: one failing endpoint costs its contribution, not the run.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import httpx

from .domain import (
    CandidatePool,
    Idea,
    Paper,
    PipelineConfig,
    canonical_paper_id,
)
from .errors import (
    EmptyPool,
    HostError,
    MalformedQueryResponse,
    NoIdentifier,
    QuotaExceeded,
)
from .gateway import ChatRequest, LlmGateway, RateLimiter
from .prompts import load_template

logger = logging.getLogger(__name__)

SNIPPET_WORD_CAP = 500

PAPER_FIELDS = "title,abstract,externalIds,year"

QUERY_TEMPLATE_ID = "query_gen_v1"

_JSON_OBJECT_RE = re.compile(r"\{.*\}", re.DOTALL)


@dataclass(frozen=True)
class QuerySet:
    """Search strings produced for one idea, keywords before titles."""

    keyword_queries: tuple[str, ...]
    title_queries: tuple[str, ...]

    def all(self) -> list[str]:
        return list(self.keyword_queries) + list(self.title_queries)

    def __len__(self) -> int:
        return len(self.keyword_queries) + len(self.title_queries)


@dataclass(frozen=True)
class SourceResult:
    """Papers from one source call, in exactly the provider's order."""

    source: str
    papers: tuple[Paper, ...]
    query_echo: Optional[str] = None


def _dedup_queries(raw: Iterable[str], seen: set[str]) -> list[str]:
    out = []
    for q in raw:
        if not isinstance(q, str):
            continue
        q = q.strip()
        key = q.lower()
        if q and key not in seen:
            seen.add(key)
            out.append(q)
    return out


def generate_queries(idea: Idea, cfg: PipelineConfig, gateway: LlmGateway) -> QuerySet:
    """Ask the query model for keyword and title searches for this idea.

    The reply must contain a JSON object {"keywords": [...], "titles": [...]}.
    One repair round asks for bare JSON before giving up. Queries are trimmed,
    deduplicated case-insensitively, and truncated to max_queries with
    keywords taking the slots first.

    Raises:
        MalformedQueryResponse: no parseable JSON object even after repair.
    """
    prompt = load_template(QUERY_TEMPLATE_ID).substitute(
        idea_text=idea.text, max_queries=cfg.max_queries
    )
    messages = [{"role": "user", "content": prompt}]
    request = ChatRequest(
        model=cfg.query_model_id,
        messages=tuple(messages),
        temperature=cfg.temperature,
    )
    response = gateway.chat(request)
    parsed = _parse_query_json(response.text)
    if parsed is None:
        repair = messages + [
            {"role": "assistant", "content": response.text},
            {"role": "user", "content": "Respond with only the JSON object."},
        ]
        retry = gateway.chat(
            ChatRequest(
                model=cfg.query_model_id,
                messages=tuple(repair),
                temperature=cfg.temperature,
            )
        )
        parsed = _parse_query_json(retry.text)
        if parsed is None:
            raise MalformedQueryResponse("no JSON object found in query response")
    seen: set[str] = set()
    keywords = _dedup_queries(parsed.get("keywords") or [], seen)
    titles = _dedup_queries(parsed.get("titles") or [], seen)
    keywords = keywords[: cfg.max_queries]
    titles = titles[: max(0, cfg.max_queries - len(keywords))]
    return QuerySet(keyword_queries=tuple(keywords), title_queries=tuple(titles))


def _parse_query_json(text: str) -> Optional[dict]:
    candidates = [text]
    match = _JSON_OBJECT_RE.search(text)
    if match:
        candidates.append(match.group(0))
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


# --- Semantic-Scholar-shaped REST client ------------------------------------

def _paper_from_record(obj: Mapping, provenance: str) -> Optional[Paper]:
    """Map one wire record to a Paper, or None when it has no abstract."""
    abstract = obj.get("abstract")
    if not abstract:
        return None
    externals = {
        str(k): str(v)
        for k, v in (obj.get("externalIds") or {}).items()
        if v is not None
    }
    try:
        pid = canonical_paper_id(external_ids=externals, native_id=obj.get("paperId"))
    except NoIdentifier:
        logger.warning("dropping search hit without any usable identifier")
        return None
    return Paper(
        paper_id=pid,
        title=obj.get("title") or "",
        abstract=abstract,
        year=obj.get("year"),
        external_ids=externals,
        provenance=frozenset({provenance}),
    )


class S2Client:
    """Client for the academic-graph REST endpoints.

    Speaks the documented wire shapes for paper search, snippet search,
    recommendations, and single-paper lookup. Calls are rate limited and
    retried with backoff; persistent rate-limit rejections surface as
    QuotaExceeded, anything else exhausted as HostError.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        client: httpx.Client | None = None,
        rate: RateLimiter | None = None,
        retries: int = 3,
        backoff: Sequence[float] = (1.0, 2.0, 4.0),
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 30.0,
    ):
        headers = {"x-api-key": api_key} if api_key else {}
        self._client = client or httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout
        )
        self._rate = rate
        self._retries = retries
        self._backoff = tuple(backoff)
        self._sleep = sleep

    def _get(self, path: str, params: Mapping) -> dict:
        attempts = self._retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            if self._rate is not None:
                self._rate.acquire()
            try:
                resp = self._client.get(path, params=dict(params))
            except httpx.HTTPError as exc:
                last = exc
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code == 429:
                    last = QuotaExceeded(f"rate limited on {path}")
                elif resp.status_code >= 500:
                    last = HostError(f"HTTP {resp.status_code} on {path}")
                else:
                    raise HostError(f"HTTP {resp.status_code} on {path}: {resp.text[:300]}")
            if attempt < attempts - 1:
                delay = self._backoff[min(attempt, len(self._backoff) - 1)]
                logger.warning("search host error (%s), retrying in %.1fs", last, delay)
                self._sleep(delay)
        if isinstance(last, QuotaExceeded):
            raise last
        raise HostError(f"giving up on {path} after {attempts} attempts: {last}")

    def search(self, query: str, limit: int) -> list[dict]:
        body = self._get(
            "/graph/v1/paper/search",
            {"query": query, "fields": PAPER_FIELDS, "limit": limit},
        )
        return list(body.get("data") or [])

    def snippet(self, query: str, limit: int) -> list[dict]:
        body = self._get(
            "/graph/v1/snippet/search", {"query": query, "limit": limit}
        )
        return list(body.get("data") or [])

    def recommendations(self, paper_id: str, limit: int) -> list[dict]:
        body = self._get(
            f"/recommendations/v1/papers/forpaper/{paper_id}",
            {"fields": PAPER_FIELDS, "limit": limit},
        )
        return list(body.get("recommendedPapers") or [])

    def paper(self, paper_id: str) -> dict:
        return self._get(f"/graph/v1/paper/{paper_id}", {"fields": PAPER_FIELDS})


def keyword_search(s2: S2Client, query: str, limit: int) -> SourceResult:
    """One keyword query against the search endpoint, provider order kept."""
    if not query.strip():
        raise ValueError("keyword query must be non-empty")
    hits = s2.search(query, limit)
    papers = []
    dropped = 0
    for hit in hits[:limit]:
        paper = _paper_from_record(hit, "keyword")
        if paper is None:
            dropped += 1
        else:
            papers.append(paper)
    if dropped:
        logger.info("keyword query %r: dropped %d hits without abstract", query, dropped)
    return SourceResult(source="keyword", papers=tuple(papers), query_echo=query)


def truncate_words(text: str, cap: int = SNIPPET_WORD_CAP) -> str:
    words = text.split()
    if len(words) <= cap:
        return text
    return " ".join(words[:cap])


def snippet_search(s2: S2Client, idea_text: str, limit: int) -> SourceResult:
    """The whole idea as the query, capped at 500 words.

    Several snippets can resolve to the same paper; they collapse to one
    entry at the earliest position.
    """
    query = truncate_words(idea_text)
    items = s2.snippet(query, limit)
    papers: dict[str, Paper] = {}
    dropped = 0
    for item in items[:limit]:
        record = item.get("paper") or item
        paper = _paper_from_record(record, "snippet")
        if paper is None:
            dropped += 1
        elif paper.paper_id not in papers:
            papers[paper.paper_id] = paper
    if dropped:
        logger.info("snippet search: dropped %d hits without abstract", dropped)
    return SourceResult(source="snippet", papers=tuple(papers.values()), query_echo=query)


def recommend_from_seeds(s2: S2Client, seed_ids: Sequence[str], limit: int) -> SourceResult:
    """Recommendations fanned out per seed, merged round-robin, deduplicated.

    A failing seed is logged and skipped; the call only errors when every
    seed failed.
    """
    if not seed_ids:
        return SourceResult(source="recommendation", papers=())
    per_seed: list[list[Paper]] = []
    failures = 0
    for seed in seed_ids:
        try:
            hits = s2.recommendations(seed, limit)
        except HostError as exc:
            failures += 1
            logger.warning("recommendations for seed %s failed: %s", seed, exc)
            continue
        papers = [p for p in (_paper_from_record(h, "recommendation") for h in hits) if p]
        per_seed.append(papers)
    if failures == len(seed_ids):
        raise HostError(f"recommendations failed for all {failures} seeds")
    merged: dict[str, Paper] = {}
    for rank in range(max((len(lst) for lst in per_seed), default=0)):
        for lst in per_seed:
            if rank < len(lst) and lst[rank].paper_id not in merged:
                merged[lst[rank].paper_id] = lst[rank]
    papers = tuple(list(merged.values())[:limit])
    return SourceResult(source="recommendation", papers=papers)


def fetch_seed_papers(s2: S2Client, seed_ids: Sequence[str]) -> SourceResult:
    """The seed papers themselves, so the pool always contains them."""
    papers = []
    for seed in seed_ids:
        try:
            record = s2.paper(seed)
        except HostError as exc:
            logger.warning("seed paper %s could not be fetched: %s", seed, exc)
            continue
        paper = _paper_from_record(record, "seed")
        if paper is None:
            logger.warning("seed paper %s has no abstract, skipping", seed)
        else:
            papers.append(paper)
    return SourceResult(source="seed", papers=tuple(papers))


def assemble_pool(idea: Idea, results: Sequence[SourceResult]) -> CandidatePool:
    """Union all source results into one deduplicated pool.

    Duplicate papers merge their provenance tags; excluded ids are removed;
    source_counts tallies papers per source before deduplication.

    Raises:
        EmptyPool: nothing survived.
    """
    source_counts: dict[str, int] = {}
    merged: dict[str, Paper] = {}
    excluded = set(idea.exclusion_ids)
    removed = 0
    for result in results:
        source_counts[result.source] = source_counts.get(result.source, 0) + len(result.papers)
        for paper in result.papers:
            if paper.paper_id in excluded:
                removed += 1
                continue
            if paper.paper_id in merged:
                merged[paper.paper_id] = merged[paper.paper_id].with_provenance(paper.provenance)
            else:
                merged[paper.paper_id] = paper
    if removed:
        logger.info("removed %d excluded papers from the pool", removed)
    if not merged:
        raise EmptyPool(f"no candidate papers found for idea {idea.id}")
    return CandidatePool(
        idea_id=idea.id, papers=tuple(merged.values()), source_counts=source_counts
    )


ALL_SOURCES = ("seed", "recommendation", "keyword", "snippet")


def retrieve_pool(
    idea: Idea,
    cfg: PipelineConfig,
    gateway: LlmGateway,
    s2: S2Client,
    sources: Sequence[str] = ALL_SOURCES,
) -> tuple[QuerySet, list[SourceResult], CandidatePool]:
    """Run the enabled sources and assemble the candidate pool.

    A failing source contributes nothing; only all-sources-failed aborts.
    """
    results: list[SourceResult] = []
    errors: list[Exception] = []
    queries = QuerySet((), ())
    if "seed" in sources and idea.seed_paper_ids:
        try:
            results.append(fetch_seed_papers(s2, idea.seed_paper_ids))
        except HostError as exc:
            errors.append(exc)
    if "recommendation" in sources and idea.seed_paper_ids:
        try:
            results.append(
                recommend_from_seeds(s2, idea.seed_paper_ids, cfg.recommendation_limit)
            )
        except HostError as exc:
            errors.append(exc)
    if "keyword" in sources:
        queries = generate_queries(idea, cfg, gateway)
        for query in queries.all():
            try:
                results.append(keyword_search(s2, query, cfg.per_query_limit))
            except HostError as exc:
                errors.append(exc)
    if "snippet" in sources:
        try:
            results.append(snippet_search(s2, idea.text, cfg.snippet_limit))
        except HostError as exc:
            errors.append(exc)
    if errors and not any(r.papers for r in results):
        raise HostError(f"every retrieval source failed; first error: {errors[0]}")
    for exc in errors:
        logger.warning("continuing without a failed source: %s", exc)
    return queries, results, assemble_pool(idea, results)


def raw_source_order(results: Sequence[SourceResult], source: str) -> list[Paper]:
    """Provider-order ranking for a single source, round-robin across calls."""
    lists = [list(r.papers) for r in results if r.source == source]
    merged: dict[str, Paper] = {}
    for rank in range(max((len(lst) for lst in lists), default=0)):
        for lst in lists:
            if rank < len(lst) and lst[rank].paper_id not in merged:
                merged[lst[rank].paper_id] = lst[rank]
    return list(merged.values())


# --- offline transport -------------------------------------------------------

def make_mock_s2_transport(cassette_path: str | Path) -> httpx.MockTransport:
    """Serve recorded endpoint responses from a cassette file.

    The cassette maps queries and ids to wire-shaped records:
    {"search": {query: [...]}, "snippet": {query: [...]},
     "recommendations": {seed_id: [...]}, "papers": {paper_id: {...}}}.
    Unknown lookups return empty result sets; unknown paper ids return 404,
    matching live host behavior in both cases.
    """
    with open(cassette_path, "r", encoding="utf-8") as fh:
        cassette = json.load(fh)

    def handler(request: httpx.Request) -> httpx.Response:
        path = request.url.path
        params = request.url.params
        if path == "/graph/v1/paper/search":
            hits = cassette.get("search", {}).get(params.get("query", ""), [])
            return httpx.Response(200, json={"total": len(hits), "data": hits})
        if path == "/graph/v1/snippet/search":
            hits = cassette.get("snippet", {}).get(params.get("query", ""), [])
            return httpx.Response(200, json={"data": hits})
        if path.startswith("/recommendations/v1/papers/forpaper/"):
            seed = path.rsplit("/", 1)[-1]
            recs = cassette.get("recommendations", {}).get(seed)
            if recs is None:
                return httpx.Response(404, json={"error": f"unknown paper {seed}"})
            return httpx.Response(200, json={"recommendedPapers": recs})
        if path.startswith("/graph/v1/paper/"):
            pid = path.rsplit("/", 1)[-1]
            record = cassette.get("papers", {}).get(pid)
            if record is None:
                return httpx.Response(404, json={"error": f"unknown paper {pid}"})
            return httpx.Response(200, json=record)
        return httpx.Response(404, json={"error": f"unknown endpoint {path}"})

    return httpx.MockTransport(handler)
