"""FastAPI application exposing the pipeline.

The app owns one Runtime built lazily from its settings. Domain and data
errors map to 422, provider and pipeline failures to 502; every error body
carries the exception kind so thin clients can rethrow the right type.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from datetime import datetime, timezone
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..domain import CandidatePool, DatasetRecord, PipelineConfig, validate_idea
from ..errors import NoveltyCheckerError, ValidationError
from ..evaluation import (
    evaluate_dataset,
    resolve_variants,
    run_ablation,
    validate_eval_records,
)
from ..gateway import DirCache
from ..judge import check_novelty, judge_from_parts, report_to_dict
from ..rerank import RerankCriteria, embed_filter, facet_rerank
from ..retrieval import ALL_SOURCES, retrieve_pool
from ..runtime import Runtime, build_runtime
from ..settings import Settings
from . import schemas

logger = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _merge_config(base: PipelineConfig, overrides: Optional[schemas.ConfigOverrides]) -> PipelineConfig:
    if overrides is None:
        return base
    changes = overrides.model_dump(exclude_none=True)
    return replace(base, **changes) if changes else base


def _idea_from(body: schemas.IdeaIn):
    return validate_idea(
        body.idea_text,
        seeds=body.seed_paper_ids,
        exclusions=body.exclusion_ids,
        idea_id=body.idea_id,
    )


def _records_from(rows: list[schemas.DatasetRecordIn]) -> list[tuple[int, DatasetRecord]]:
    return [
        (line, DatasetRecord(
            id=row.id,
            idea_text=row.idea_text,
            seed_paper_ids=tuple(row.seed_paper_ids),
            top_papers=tuple(row.top_papers),
            label=row.label,
            rationale=row.rationale,
        ))
        for line, row in enumerate(rows, start=1)
    ]


def create_app(settings: Settings) -> FastAPI:
    app = FastAPI(title="novelty-checker", version=__version__)
    app.state.settings = settings
    app.state.runtime = None

    def runtime() -> Runtime:
        if app.state.runtime is None:
            app.state.runtime = build_runtime(app.state.settings)
        return app.state.runtime

    @app.exception_handler(NoveltyCheckerError)
    async def _domain_error(request: Request, exc: NoveltyCheckerError):
        status = 422 if isinstance(exc, ValidationError) else 502
        detail = {"kind": type(exc).__name__, "message": str(exc)}
        line = getattr(exc, "line", None)
        if line is not None:
            detail["line"] = line
        return JSONResponse(status_code=status, content={"detail": detail})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        mode = "mock" if settings.mock_dir is not None else "live" if settings.live else "unconfigured"
        return schemas.HealthResponse(status="ok", version=__version__, mode=mode)

    @app.post("/check", response_model=schemas.CheckResponse)
    def check(body: schemas.CheckRequest):
        rt = runtime()
        cfg = _merge_config(rt.cfg, body.config)
        report = check_novelty(_idea_from(body.idea), cfg, rt)
        return report_to_dict(report, generated_at=_now())

    @app.post("/retrieve", response_model=schemas.PoolResponse)
    def retrieve(body: schemas.RetrieveRequest):
        rt = runtime()
        cfg = _merge_config(rt.cfg, body.config)
        sources = tuple(body.sources) if body.sources else ALL_SOURCES
        unknown = set(sources) - set(ALL_SOURCES)
        if unknown:
            raise ValidationError(f"unknown sources: {', '.join(sorted(unknown))}")
        queries, _, pool = retrieve_pool(_idea_from(body.idea), cfg, rt.gateway, rt.s2, sources)
        doc = pool.to_dict()
        doc["queries"] = {
            "keywords": list(queries.keyword_queries),
            "titles": list(queries.title_queries),
        }
        return doc

    @app.post("/rerank", response_model=schemas.RankedResponse)
    def rerank(body: schemas.RerankRequest):
        rt = runtime()
        cfg = _merge_config(rt.cfg, body.config)
        idea = _idea_from(body.idea)
        pool = CandidatePool.from_dict(body.pool)
        criteria = RerankCriteria(mode=body.mode)
        filtered = embed_filter(idea, pool, cfg, rt.gateway)
        ranked = facet_rerank(idea, filtered, pool.by_id(), cfg, rt.gateway, criteria)
        return {
            "idea_id": idea.id,
            "mode": criteria.mode,
            "template_id": criteria.template_id,
            "filtered": filtered.to_dict(),
            "ranked": ranked.to_dict(),
        }

    @app.post("/judge", response_model=schemas.CheckResponse)
    def judge(body: schemas.JudgeRequest):
        rt = runtime()
        cfg = _merge_config(rt.cfg, body.config)
        report = judge_from_parts(_idea_from(body.idea), body.pool, body.ranked, cfg, rt)
        return report_to_dict(report, generated_at=_now())

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_(body: schemas.EvalRequest):
        rt = runtime()
        cfg = _merge_config(rt.cfg, body.config)
        records = validate_eval_records(_records_from(body.records), body.fixed_papers)
        report = evaluate_dataset(records, cfg, rt, fixed_papers=body.fixed_papers)
        report["generated_at"] = _now()
        return report

    @app.post("/ablate", response_model=schemas.AblateResponse)
    def ablate(body: schemas.AblateRequest):
        rt = runtime()
        cfg = _merge_config(rt.cfg, body.config)
        records = [rec for _, rec in _records_from(body.records)]
        variants = resolve_variants(body.variants)
        report = run_ablation(records, variants, cfg, rt)
        report["generated_at"] = _now()
        return report

    @app.get("/cache/stats", response_model=schemas.CacheStatsResponse)
    def cache_stats():
        return DirCache(settings.cache_dir).stats()

    @app.post("/cache/clear", response_model=schemas.CacheClearResponse)
    def cache_clear():
        return {"removed": DirCache(settings.cache_dir).clear()}

    return app
