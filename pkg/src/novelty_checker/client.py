"""Thin client for the HTTP service.

The CLI talks to the pipeline exclusively through this client. By default it
mounts the FastAPI app in-process over an ASGI transport, so offline runs
need no sockets; pointed at a base URL it speaks to a remote server with the
same calls. Error bodies carry the originating exception kind, which the
client rethrows as the matching local exception type.
"""

from __future__ import annotations

import asyncio
from typing import Any, Mapping, Optional

import httpx

from . import errors
from .errors import ConfigError, NoveltyCheckerError, ProviderUnavailable

_IN_PROCESS_BASE = "http://novelty.service"


def _rebuild_error(status: int, body: Mapping) -> Exception:
    detail = body.get("detail")
    if not isinstance(detail, Mapping):
        return NoveltyCheckerError(f"service error {status}: {detail}")
    kind = detail.get("kind", "")
    message = detail.get("message", str(detail))
    cls = getattr(errors, str(kind), None)
    if isinstance(cls, type) and issubclass(cls, NoveltyCheckerError):
        if cls is errors.DatasetError:
            return cls(message, detail.get("line"))
        if cls is errors.PipelineError:
            return NoveltyCheckerError(message)
        return cls(message)
    return NoveltyCheckerError(f"service error {status}: {message}")


class ServiceClient:
    """Calls the service endpoints and returns parsed JSON documents."""

    def __init__(self, app=None, base_url: Optional[str] = None):
        if (app is None) == (base_url is None):
            raise ConfigError("pass exactly one of app or base_url")
        self._app = app
        self._base_url = base_url

    def _client(self) -> httpx.AsyncClient:
        if self._app is not None:
            return httpx.AsyncClient(
                transport=httpx.ASGITransport(app=self._app),
                base_url=_IN_PROCESS_BASE,
                timeout=None,
            )
        return httpx.AsyncClient(base_url=self._base_url, timeout=600.0)

    def _request(self, method: str, path: str, payload: Optional[Mapping] = None) -> Any:
        async def go():
            async with self._client() as client:
                return await client.request(method, path, json=payload)

        try:
            response = asyncio.run(go())
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"service unreachable: {exc}") from exc
        if response.status_code >= 400:
            try:
                body = response.json()
            except ValueError:
                body = {}
            raise _rebuild_error(response.status_code, body)
        return response.json()

    def health(self) -> dict:
        return self._request("GET", "/health")

    def check(self, idea: Mapping, config: Optional[Mapping] = None) -> dict:
        return self._request("POST", "/check", {"idea": dict(idea), "config": config})

    def retrieve(
        self,
        idea: Mapping,
        sources: Optional[list[str]] = None,
        config: Optional[Mapping] = None,
    ) -> dict:
        return self._request(
            "POST", "/retrieve", {"idea": dict(idea), "sources": sources, "config": config}
        )

    def rerank(
        self,
        idea: Mapping,
        pool: Mapping,
        mode: str = "facet",
        config: Optional[Mapping] = None,
    ) -> dict:
        return self._request(
            "POST",
            "/rerank",
            {"idea": dict(idea), "pool": dict(pool), "mode": mode, "config": config},
        )

    def judge(
        self,
        idea: Mapping,
        pool: Mapping,
        ranked: Mapping,
        config: Optional[Mapping] = None,
    ) -> dict:
        return self._request(
            "POST",
            "/judge",
            {"idea": dict(idea), "pool": dict(pool), "ranked": dict(ranked), "config": config},
        )

    def eval(
        self,
        records: list[Mapping],
        fixed_papers: bool = False,
        config: Optional[Mapping] = None,
    ) -> dict:
        return self._request(
            "POST",
            "/eval",
            {"records": [dict(r) for r in records], "fixed_papers": fixed_papers, "config": config},
        )

    def ablate(
        self,
        records: list[Mapping],
        variants: Optional[list[str]] = None,
        config: Optional[Mapping] = None,
    ) -> dict:
        return self._request(
            "POST",
            "/ablate",
            {"records": [dict(r) for r in records], "variants": variants, "config": config},
        )

    def cache_stats(self) -> dict:
        return self._request("GET", "/cache/stats")

    def cache_clear(self) -> dict:
        return self._request("POST", "/cache/clear")
