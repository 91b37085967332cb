"""Access layer for chat and embedding providers.

Everything the pipeline says to a model goes through `LlmGateway`, which adds
request digests, a content-addressed disk cache, per-host rate limiting, and
bounded retries. Providers come in two flavors: OpenAI-compatible HTTP
backends for live runs, and table-driven mock backends that answer from a
rules file for offline runs. Both sides of the pair satisfy the same two
methods, so the pipeline cannot tell them apart.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

import httpx

from .domain import canonical_json
from .errors import (
    AuthError,
    ContextOverflow,
    DimensionMismatch,
    EmptyText,
    LengthMismatch,
    ProviderUnavailable,
    TransientProviderError,
)

logger = logging.getLogger(__name__)

DEFAULT_BACKOFF = (1.0, 2.0, 4.0)


def request_digest(kind: str, payload: Mapping) -> str:
    """Stable sha256 identity of one provider request.

    The digest covers the request kind ("chat" or "embed") plus the full wire
    payload, serialized canonically, so identical requests always share a
    cache slot and distinct requests never collide.
    """
    body = canonical_json({"kind": kind, "payload": payload})
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


# --- request / response types ----------------------------------------------

@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Mapping[str, str], ...]
    temperature: float = 0.0
    max_tokens: Optional[int] = None

    def payload(self) -> dict:
        """OpenAI-style wire payload for this request."""
        body = {
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body

    def digest(self) -> str:
        return request_digest("chat", self.payload())

    def joined_text(self) -> str:
        return "\n\n".join(m.get("content", "") for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    model: str
    usage: Mapping[str, int] = field(default_factory=dict)
    cached: bool = False


@dataclass(frozen=True)
class EmbeddingVector:
    model: str
    vector: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.vector)

    def __iter__(self):
        return iter(self.vector)


class ChatProvider(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


class EmbeddingProvider(Protocol):
    def embed(self, model: str, texts: Sequence[str]) -> list[list[float]]: ...


# --- disk cache -------------------------------------------------------------

class DirCache:
    """Content-addressed JSON cache on disk.

    Files land under ``root/<digest[:2]>/<digest>.json``. Writes go to a
    temp file in the destination directory first and are renamed into place,
    so a crashed process never leaves a half-written entry behind.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str):
        path = self._path(key)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            logger.warning("discarding corrupt cache entry %s", path)
            path.unlink(missing_ok=True)
            return None

    def put(self, key: str, value) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(value, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def stats(self) -> dict:
        entries = 0
        size = 0
        if self.root.is_dir():
            for p in self.root.rglob("*.json"):
                entries += 1
                size += p.stat().st_size
        return {"path": str(self.root), "entries": entries, "bytes": size}

    def clear(self) -> int:
        removed = 0
        if self.root.is_dir():
            for p in self.root.rglob("*.json"):
                p.unlink()
                removed += 1
        return removed


# --- rate limiting ----------------------------------------------------------

class RateLimiter:
    """Spaces calls so a host never sees more than ``qps`` requests a second.

    Enforces a minimum gap of 1/qps between consecutive acquisitions. The
    clock and sleep functions are injectable so tests can drive virtual time.
    """

    def __init__(
        self,
        qps: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.interval = 1.0 / qps if qps > 0 else 0.0
        self._clock = clock
        self._sleep = sleep
        self._next_free = 0.0

    def acquire(self) -> float:
        """Block until a slot is free; returns the wait that was imposed."""
        if self.interval <= 0:
            return 0.0
        now = self._clock()
        wait = self._next_free - now
        if wait > 0:
            self._sleep(wait)
            now = self._next_free
        self._next_free = now + self.interval
        return max(wait, 0.0)


# --- live providers ---------------------------------------------------------

def _classify_http_error(resp: httpx.Response) -> Exception:
    code = resp.status_code
    text = resp.text[:500]
    if code in (401, 403):
        return AuthError(f"provider rejected credentials (HTTP {code})")
    if code == 400 and ("context" in text.lower() and "length" in text.lower()):
        return ContextOverflow(f"provider rejected oversized request: {text}")
    if code == 429 or code >= 500:
        return TransientProviderError(f"HTTP {code} from provider: {text}")
    return ProviderUnavailable(f"HTTP {code} from provider: {text}")


class OpenAICompatChat:
    """Chat backend speaking the OpenAI chat-completions wire format."""

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        try:
            resp = self._client.post("/chat/completions", json=request.payload())
        except httpx.HTTPError as exc:
            raise TransientProviderError(f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise _classify_http_error(resp)
        body = resp.json()
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransientProviderError(f"malformed provider response: {exc}") from exc
        return ChatResponse(
            text=text,
            model=body.get("model", request.model),
            usage=body.get("usage", {}),
        )


class OpenAICompatEmbeddings:
    """Embedding backend speaking the OpenAI embeddings wire format."""

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout
        )

    def embed(self, model: str, texts: Sequence[str]) -> list[list[float]]:
        try:
            resp = self._client.post(
                "/embeddings", json={"model": model, "input": list(texts)}
            )
        except httpx.HTTPError as exc:
            raise TransientProviderError(f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise _classify_http_error(resp)
        body = resp.json()
        try:
            rows = sorted(body["data"], key=lambda d: d["index"])
            return [list(map(float, row["embedding"])) for row in rows]
        except (KeyError, TypeError) as exc:
            raise TransientProviderError(f"malformed provider response: {exc}") from exc


# --- mock providers ---------------------------------------------------------

_ENTRY_RE = re.compile(r"^\[(\d+)\]\s+(.*)$", re.MULTILINE)
_SIM_TAG_RE = re.compile(r"\[sim:(-?\d+(?:\.\d+)?)\]")


def _numbered_entries(text: str) -> list[tuple[int, str]]:
    """Candidate entries of the form ``[i] text`` at the start of a line."""
    return [(int(m.group(1)), m.group(2)) for m in _ENTRY_RE.finditer(text)]


def _ranking_string(indices: Iterable[int]) -> str:
    return " > ".join(f"[{i}]" for i in indices)


class MockChat:
    """Scripted chat backend answering from an ordered rules table.

    Each rule may gate on ``if_contains`` (substring of the joined prompt) or
    ``digest`` (exact request digest); the first matching rule wins. Rules
    answer with canned text or with a behavior computed from the prompt, so
    the reply is always a pure function of the request.
    """

    def __init__(self, rules: Sequence[Mapping]):
        self.rules = list(rules)
        self._fail_counts: dict[int, int] = {}

    def complete(self, request: ChatRequest) -> ChatResponse:
        prompt = request.joined_text()
        digest = request.digest()
        for i, rule in enumerate(self.rules):
            if "if_contains" in rule and rule["if_contains"] not in prompt:
                continue
            if "digest" in rule and rule["digest"] != digest:
                continue
            fail_times = int(rule.get("fail_times", 0))
            if fail_times and self._fail_counts.get(i, 0) < fail_times:
                self._fail_counts[i] = self._fail_counts.get(i, 0) + 1
                raise TransientProviderError(f"scripted failure {self._fail_counts[i]}")
            return ChatResponse(
                text=self._apply(rule, prompt), model=request.model, usage={}
            )
        raise ProviderUnavailable("no mock rule matched the request")

    def _apply(self, rule: Mapping, prompt: str) -> str:
        behavior = rule.get("behavior", "text")
        if behavior == "text":
            return rule["text"]
        if behavior == "error":
            kind = rule.get("error", "transient")
            if kind == "auth":
                raise AuthError("scripted auth rejection")
            if kind == "context_overflow":
                raise ContextOverflow("scripted context overflow")
            raise TransientProviderError("scripted transient failure")
        entries = _numbered_entries(prompt)
        if behavior == "identity_window":
            return _ranking_string(i for i, _ in entries)
        if behavior == "reverse_window":
            return _ranking_string(i for i, _ in reversed(entries))
        if behavior == "promote_marked":
            marker = rule["marker"]
            hits = [i for i, text in entries if marker in text]
            rest = [i for i, text in entries if marker not in text]
            return _ranking_string(hits + rest)
        if behavior == "verdict_on_marker":
            marker = rule["marker"]
            section = rule.get("section", "## Idea to assess")
            tail = prompt.rsplit(section, 1)[-1]
            scoped = _numbered_entries(tail)
            hits = [i for i, text in scoped if marker in text]
            if hits:
                return (
                    "DECISION: not novel\n"
                    f"RATIONALE: The proposal overlaps substantially with [{hits[0]}], "
                    "which already covers the same mechanism for the same purpose."
                )
            cite = scoped[0][0] if scoped else 1
            return (
                "DECISION: novel\n"
                f"RATIONALE: None of the retrieved papers, including [{cite}], "
                "combine this mechanism with this application domain."
            )
        raise ProviderUnavailable(f"unknown mock behavior {behavior!r}")


class MockEmbeddings:
    """Deterministic embedding backend.

    Resolution order per text: an explicit text-to-vector map, then a
    ``[sim:x]`` tag that yields a unit vector at cosine x from the reference
    axis, then a hashed unit vector. Every path is a pure function of the
    text, so repeated runs embed identically.
    """

    def __init__(self, mapping: Mapping[str, Sequence[float]] | None = None, dim: int = 8):
        self.mapping = dict(mapping or {})
        if dim < 2:
            raise DimensionMismatch("mock embedding dim must be >= 2")
        self.dim = dim

    def embed(self, model: str, texts: Sequence[str]) -> list[list[float]]:
        return [self._one(t) for t in texts]

    def _one(self, text: str) -> list[float]:
        if text in self.mapping:
            return [float(x) for x in self.mapping[text]]
        m = _SIM_TAG_RE.search(text)
        if m:
            x = max(-1.0, min(1.0, float(m.group(1))))
            vec = [0.0] * self.dim
            vec[0] = x
            vec[1] = math.sqrt(max(0.0, 1.0 - x * x))
            return vec
        return self._hash_vector(text)

    def _hash_vector(self, text: str) -> list[float]:
        raw = hashlib.sha256(text.encode("utf-8")).digest()
        while len(raw) < 2 * self.dim:
            raw += hashlib.sha256(raw).digest()
        vals = [int.from_bytes(raw[2 * i : 2 * i + 2], "big") / 32767.5 - 1.0 for i in range(self.dim)]
        norm = math.sqrt(sum(v * v for v in vals)) or 1.0
        return [v / norm for v in vals]


def load_mock_providers(mock_dir: str | Path) -> tuple[MockChat, MockEmbeddings]:
    """Build the mock provider pair from ``mock.json`` in a fixture directory."""
    path = Path(mock_dir) / "mock.json"
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    chat = MockChat(doc.get("chat", []))
    emb_cfg = doc.get("embedding", {})
    embeddings = MockEmbeddings(
        mapping=emb_cfg.get("map"), dim=int(emb_cfg.get("dim", 8))
    )
    return chat, embeddings


# --- the gateway ------------------------------------------------------------

class LlmGateway:
    """Caching, rate-limited front door for chat and embedding calls.

    Cache lookups happen before rate limiting, so fully cached runs never
    sleep. Transient provider failures are retried with exponential backoff;
    auth and context errors propagate immediately.
    """

    def __init__(
        self,
        chat_provider: ChatProvider,
        embedding_provider: EmbeddingProvider,
        cache: DirCache | None = None,
        rate: RateLimiter | None = None,
        retries: int = 3,
        backoff: Sequence[float] = DEFAULT_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._chat = chat_provider
        self._embeddings = embedding_provider
        self._cache = cache
        self._rate = rate
        self._retries = retries
        self._backoff = tuple(backoff)
        self._sleep = sleep
        self.transcript: list[dict] = []

    def _record(self, kind: str, digest: str, cached: bool) -> None:
        self.transcript.append({"kind": kind, "digest": digest, "cached": cached})

    def _with_retries(self, call: Callable[[], object]):
        attempts = self._retries + 1
        for attempt in range(attempts):
            try:
                return call()
            except TransientProviderError as exc:
                if attempt == attempts - 1:
                    raise ProviderUnavailable(
                        f"giving up after {attempts} attempts: {exc}"
                    ) from exc
                delay = self._backoff[min(attempt, len(self._backoff) - 1)]
                logger.warning("provider error (%s), retrying in %.1fs", exc, delay)
                self._sleep(delay)

    def chat(self, request: ChatRequest) -> ChatResponse:
        digest = request.digest()
        if self._cache is not None:
            hit = self._cache.get(digest)
            if hit is not None:
                self._record("chat", digest, cached=True)
                return ChatResponse(
                    text=hit["text"],
                    model=hit.get("model", request.model),
                    usage=hit.get("usage", {}),
                    cached=True,
                )
        if self._rate is not None:
            self._rate.acquire()
        response = self._with_retries(lambda: self._chat.complete(request))
        if self._cache is not None:
            self._cache.put(
                digest,
                {"text": response.text, "model": response.model, "usage": dict(response.usage)},
            )
        self._record("chat", digest, cached=False)
        return response

    def embed(self, model: str, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        for i, t in enumerate(texts):
            if not t or not t.strip():
                raise EmptyText(f"cannot embed empty text at position {i}")
        digests = [
            request_digest("embed", {"model": model, "input": t}) for t in texts
        ]
        vectors: dict[int, list[float]] = {}
        missing: list[int] = []
        if self._cache is not None:
            for i, d in enumerate(digests):
                hit = self._cache.get(d)
                if hit is not None:
                    vectors[i] = hit["vector"]
                    self._record("embed", d, cached=True)
                else:
                    missing.append(i)
        else:
            missing = list(range(len(texts)))
        if missing:
            if self._rate is not None:
                self._rate.acquire()
            fetched = self._with_retries(
                lambda: self._embeddings.embed(model, [texts[i] for i in missing])
            )
            if len(fetched) != len(missing):
                raise LengthMismatch(
                    f"asked for {len(missing)} embeddings, got {len(fetched)}"
                )
            for i, vec in zip(missing, fetched):
                vectors[i] = list(vec)
                if self._cache is not None:
                    self._cache.put(digests[i], {"vector": vectors[i]})
                self._record("embed", digests[i], cached=False)
        dims = {len(vectors[i]) for i in range(len(texts))}
        if len(dims) > 1:
            raise DimensionMismatch(f"mixed embedding dimensions {sorted(dims)}")
        return [EmbeddingVector(model=model, vector=tuple(vectors[i])) for i in range(len(texts))]
