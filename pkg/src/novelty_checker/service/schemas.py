"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class ConfigOverrides(BaseModel):
    """Per-request pipeline overrides; unset fields keep server settings."""

    model_config = ConfigDict(extra="forbid")

    N: Optional[int] = None
    k: Optional[int] = None
    n_examples: Optional[int] = None
    example_seed: Optional[int] = None
    query_model_id: Optional[str] = None
    rerank_model_id: Optional[str] = None
    judge_model_id: Optional[str] = None
    embedding_model_id: Optional[str] = None
    window: Optional[int] = None
    stride: Optional[int] = None
    max_queries: Optional[int] = None
    per_query_limit: Optional[int] = None
    snippet_limit: Optional[int] = None
    recommendation_limit: Optional[int] = None
    temperature: Optional[float] = None
    rate_limit: Optional[float] = None
    judge_repair_attempts: Optional[int] = None


class IdeaIn(BaseModel):
    idea_text: str
    idea_id: Optional[str] = None
    seed_paper_ids: list[str] = Field(default_factory=list)
    exclusion_ids: list[str] = Field(default_factory=list)


class CheckRequest(BaseModel):
    idea: IdeaIn
    config: Optional[ConfigOverrides] = None


class RetrieveRequest(BaseModel):
    idea: IdeaIn
    sources: Optional[list[str]] = None
    config: Optional[ConfigOverrides] = None


class RerankRequest(BaseModel):
    idea: IdeaIn
    pool: dict[str, Any]
    mode: Literal["facet", "relevance"] = "facet"
    config: Optional[ConfigOverrides] = None


class JudgeRequest(BaseModel):
    idea: IdeaIn
    pool: dict[str, Any]
    ranked: dict[str, Any]
    config: Optional[ConfigOverrides] = None


class DatasetRecordIn(BaseModel):
    id: str
    idea_text: str
    seed_paper_ids: list[str] = Field(default_factory=list)
    top_papers: list[dict[str, Any]] = Field(default_factory=list)
    label: Optional[str] = None
    rationale: Optional[str] = None


class EvalRequest(BaseModel):
    records: list[DatasetRecordIn]
    fixed_papers: bool = False
    config: Optional[ConfigOverrides] = None


class AblateRequest(BaseModel):
    records: list[DatasetRecordIn]
    variants: Optional[list[str]] = None
    config: Optional[ConfigOverrides] = None


class PaperOut(BaseModel):
    paper_id: str
    title: str
    abstract: str
    year: Optional[int] = None
    external_ids: dict[str, str] = Field(default_factory=dict)
    provenance: list[str] = Field(default_factory=list)


class PoolResponse(BaseModel):
    idea_id: str
    papers: list[PaperOut]
    source_counts: dict[str, int]
    digest: str
    queries: dict[str, list[str]]


class RankEntryOut(BaseModel):
    rank: int
    paper_id: str
    score: Optional[float] = None


class RankedListOut(BaseModel):
    idea_id: str
    stage: str
    entries: list[RankEntryOut]
    digest: str


class RankedResponse(BaseModel):
    idea_id: str
    mode: str
    template_id: str
    filtered: RankedListOut
    ranked: RankedListOut


class CitedPaperOut(BaseModel):
    paper_id: str
    title: str


class EvidenceRowOut(BaseModel):
    rank: int
    paper_id: str
    title: str


class CheckResponse(BaseModel):
    idea_id: str
    decision: Literal["novel", "not_novel"]
    rationale: str
    cited_papers: list[CitedPaperOut]
    evidence: list[EvidenceRowOut]
    trace: dict[str, Any]
    config: dict[str, Any]
    generated_at: str


class EvalResponse(BaseModel):
    n: int
    per_variant: dict[str, Any]
    per_idea: list[dict[str, Any]]
    generated_at: str


class AblateResponse(BaseModel):
    n: int
    k: int
    variants: list[str]
    per_variant: dict[str, Any]
    per_idea: list[dict[str, Any]]
    generated_at: str


class CacheStatsResponse(BaseModel):
    path: str
    entries: int
    bytes: int


class CacheClearResponse(BaseModel):
    removed: int


class HealthResponse(BaseModel):
    status: str
    version: str
    mode: str
