"""Provider wiring: turn resolved settings into a ready-to-run pipeline.

Mock mode builds table-driven providers and a recorded search transport from
a fixture directory; live mode builds HTTP providers with rate limiting.
Both modes share the same disk cache and expose the identical Runtime
surface, so nothing downstream knows which mode it is running in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import httpx

from .domain import LabeledExample, PipelineConfig, load_examples
from .errors import ConfigError
from .gateway import (
    DirCache,
    LlmGateway,
    OpenAICompatChat,
    OpenAICompatEmbeddings,
    RateLimiter,
    load_mock_providers,
)
from .retrieval import S2Client, make_mock_s2_transport
from .settings import Settings

logger = logging.getLogger(__name__)

def _no_sleep(seconds: float) -> None:
    return None


@dataclass
class Runtime:
    """Everything a pipeline run needs besides the idea itself."""

    cfg: PipelineConfig
    gateway: LlmGateway
    s2: S2Client
    examples: Sequence[LabeledExample] = ()


def build_runtime(settings: Settings) -> Runtime:
    """Construct providers, cache, and examples from settings.

    Raises:
        ConfigError: neither mock nor live mode selected, or live mode is
            missing its endpoints.
    """
    cache = DirCache(settings.cache_dir)
    if settings.mock_dir is not None:
        chat, embeddings = load_mock_providers(settings.mock_dir)
        transport = httpx.Client(
            transport=make_mock_s2_transport(settings.mock_dir / "s2.json"),
            base_url="http://offline.invalid",
        )
        s2 = S2Client(
            base_url="http://offline.invalid", client=transport, sleep=_no_sleep
        )
        gateway = LlmGateway(chat, embeddings, cache=cache, sleep=_no_sleep)
    elif settings.live:
        if not settings.llm_base_url:
            raise ConfigError("live mode needs NOVELTY_LLM_BASE_URL (or llm_base_url)")
        if not settings.embed_base_url:
            raise ConfigError("live mode needs NOVELTY_EMBED_BASE_URL (or embed_base_url)")
        chat = OpenAICompatChat(settings.llm_base_url, settings.llm_api_key)
        embeddings = OpenAICompatEmbeddings(settings.embed_base_url, settings.embed_api_key)
        qps = settings.pipeline.rate_limit
        gateway = LlmGateway(chat, embeddings, cache=cache, rate=RateLimiter(qps))
        s2 = S2Client(
            base_url=settings.s2_base_url,
            api_key=settings.s2_api_key,
            rate=RateLimiter(qps),
        )
    else:
        raise ConfigError(
            "no providers configured: pass --mock DIR for offline fixtures "
            "or --live for real endpoints"
        )
    cfg = settings.pipeline
    examples: list[LabeledExample] = []
    if settings.examples_path is not None:
        examples = load_examples(settings.examples_path)
    elif cfg.n_examples > 0:
        logger.warning(
            "no examples file configured; judging zero-shot instead of with %d examples",
            cfg.n_examples,
        )
        cfg = replace(cfg, n_examples=0)
    return Runtime(cfg=cfg, gateway=gateway, s2=s2, examples=examples)
