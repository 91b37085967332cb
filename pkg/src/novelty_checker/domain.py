"""Canonical data model shared by every pipeline stage.

All types are frozen dataclasses: validated on construction, immutable
afterwards, safe to share between threads. Serialization helpers keep the
JSON forms canonical (sorted keys, stable separators) so that digests and
byte-for-byte report comparisons are meaningful.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Optional

from .errors import (
    ConfigError,
    DatasetError,
    EmptyIdea,
    IdeaTooLong,
    NoIdentifier,
    ValidationError,
)

MAX_IDEA_CHARS = 20_000

# "fixed" marks papers supplied directly with a dataset record rather than
# retrieved; it never appears in assembled pools.
SOURCE_TAGS = ("seed", "recommendation", "keyword", "snippet", "fixed")

RANK_STAGES = ("embedding_topN", "facet_topK", "relevance_topK", "raw_source")

NOVEL = "novel"
NOT_NOVEL = "not_novel"
CLASSES = (NOVEL, NOT_NOVEL)


def canonical_json(obj) -> str:
    """Canonical JSON text: sorted keys, no whitespace, UTF-8 passthrough."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def pretty_json(obj) -> str:
    """Stable human-readable JSON used for every file this package writes."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def digest_of(obj) -> str:
    """sha256 hex digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def canonical_paper_id(
    external_ids: Mapping[str, str] | None = None,
    native_id: str | None = None,
) -> str:
    """Resolve one stable paper identifier from whatever ids a record carries.

    Preference order: native id, then DOI, then arXiv. The result is trimmed
    and lowercased, with DOI/arXiv values prefixed by their scheme so ids from
    different schemes can never collide. Idempotent: feeding a canonical id
    back through as the native id returns it unchanged.

    Raises:
        NoIdentifier: if every input is absent or blank.
    """
    if native_id and native_id.strip():
        return native_id.strip().lower()
    ids = {k.strip().lower(): v for k, v in (external_ids or {}).items() if v and v.strip()}
    doi = ids.get("doi")
    if doi:
        value = doi.strip().lower()
        return value if value.startswith("doi:") else f"doi:{value}"
    arxiv = ids.get("arxiv")
    if arxiv:
        value = arxiv.strip().lower()
        return value if value.startswith("arxiv:") else f"arxiv:{value}"
    raise NoIdentifier("no native id, DOI, or arXiv id present")


@dataclass(frozen=True)
class Idea:
    """The text under assessment plus optional seed-paper references."""

    id: str
    text: str
    seed_paper_ids: tuple[str, ...] = ()
    exclusion_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise EmptyIdea("idea text is empty")
        if len(self.text) > MAX_IDEA_CHARS:
            raise IdeaTooLong(f"idea text exceeds {MAX_IDEA_CHARS} characters")
        if len(set(self.seed_paper_ids)) != len(self.seed_paper_ids):
            raise ValidationError("seed_paper_ids contains duplicates")


def validate_idea(
    raw_text: str,
    seeds: Iterable[str] = (),
    exclusions: Iterable[str] = (),
    idea_id: str | None = None,
) -> Idea:
    """Build a valid Idea from raw inputs.

    Trims the text, deduplicates seeds preserving first occurrence, and
    derives a stable id from the trimmed text when none is given.

    Raises:
        EmptyIdea: blank text after trimming.
        IdeaTooLong: text longer than the 20k character cap.
    """
    text = raw_text.strip()
    if not text:
        raise EmptyIdea("idea text is empty")
    if len(text) > MAX_IDEA_CHARS:
        raise IdeaTooLong(f"idea text exceeds {MAX_IDEA_CHARS} characters")
    seen: dict[str, None] = {}
    for s in seeds:
        s = s.strip()
        if s and s not in seen:
            seen[s] = None
    excl = tuple(dict.fromkeys(e.strip().lower() for e in exclusions if e.strip()))
    if idea_id is None:
        idea_id = "idea-" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    return Idea(id=idea_id, text=text, seed_paper_ids=tuple(seen), exclusion_ids=excl)


@dataclass(frozen=True)
class Paper:
    """One literature record; the unit of the candidate pool.

    Records without an abstract are dropped before pooling, so ``abstract``
    is required here.
    """

    paper_id: str
    title: str
    abstract: str
    year: Optional[int] = None
    external_ids: Mapping[str, str] = field(default_factory=dict)
    provenance: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.paper_id:
            raise ValidationError("paper_id must be non-empty")
        if not self.abstract.strip():
            raise ValidationError(f"paper {self.paper_id} has no abstract")
        if not self.provenance:
            raise ValidationError(f"paper {self.paper_id} has empty provenance")
        unknown = set(self.provenance) - set(SOURCE_TAGS)
        if unknown:
            raise ValidationError(f"unknown provenance tags {sorted(unknown)}")

    def with_provenance(self, tags: Iterable[str]) -> "Paper":
        return replace(self, provenance=frozenset(self.provenance) | frozenset(tags))

    @property
    def text(self) -> str:
        """The comparison text used for embeddings: title then abstract."""
        return f"{self.title}. {self.abstract}"

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "title": self.title,
            "abstract": self.abstract,
            "year": self.year,
            "external_ids": dict(self.external_ids),
            "provenance": sorted(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Paper":
        return cls(
            paper_id=d["paper_id"],
            title=d.get("title", ""),
            abstract=d["abstract"],
            year=d.get("year"),
            external_ids=dict(d.get("external_ids") or {}),
            provenance=frozenset(d.get("provenance") or ()),
        )


@dataclass(frozen=True)
class CandidatePool:
    """Deduplicated union of papers gathered for one idea."""

    idea_id: str
    papers: tuple[Paper, ...]
    source_counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        ids = [p.paper_id for p in self.papers]
        if len(set(ids)) != len(ids):
            raise ValidationError("candidate pool contains duplicate paper ids")

    def ids(self) -> list[str]:
        return [p.paper_id for p in self.papers]

    def by_id(self) -> dict[str, Paper]:
        return {p.paper_id: p for p in self.papers}

    def digest(self) -> str:
        return digest_of(
            {
                "idea_id": self.idea_id,
                "papers": [p.to_dict() for p in self.papers],
                "source_counts": dict(self.source_counts),
            }
        )

    def to_dict(self) -> dict:
        return {
            "idea_id": self.idea_id,
            "papers": [p.to_dict() for p in self.papers],
            "source_counts": dict(self.source_counts),
            "digest": self.digest(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CandidatePool":
        try:
            return cls(
                idea_id=d["idea_id"],
                papers=tuple(Paper.from_dict(p) for p in d["papers"]),
                source_counts=dict(d.get("source_counts") or {}),
            )
        except (KeyError, TypeError, ValidationError) as exc:
            raise DatasetError(f"invalid candidate pool document: {exc}") from exc


@dataclass(frozen=True)
class RankEntry:
    rank: int
    paper_id: str
    score: Optional[float] = None


@dataclass(frozen=True)
class RankedList:
    """Ordered papers with the stage that produced the ordering."""

    idea_id: str
    stage: str
    entries: tuple[RankEntry, ...]

    def __post_init__(self):
        if self.stage not in RANK_STAGES:
            raise ValidationError(f"unknown ranking stage {self.stage!r}")
        ranks = [e.rank for e in self.entries]
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValidationError("ranks must be exactly 1..n with no gaps")
        ids = [e.paper_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("ranked list contains duplicate paper ids")
        if self.stage == "embedding_topN":
            scores = [e.score for e in self.entries]
            if any(s is None for s in scores):
                raise ValidationError("embedding_topN entries must carry scores")
            if any(not -1.0 - 1e-9 <= s <= 1.0 + 1e-9 for s in scores):
                raise ValidationError("embedding scores must lie in [-1, 1]")
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise ValidationError("embedding scores must be non-increasing")

    def ids(self) -> list[str]:
        return [e.paper_id for e in self.entries]

    def top(self, k: int) -> "RankedList":
        kept = self.entries[:k]
        return RankedList(self.idea_id, self.stage, kept)

    def rank_of(self) -> dict[str, int]:
        return {e.paper_id: e.rank for e in self.entries}

    def digest(self) -> str:
        return digest_of(self.to_dict(include_digest=False))

    def to_dict(self, include_digest: bool = True) -> dict:
        d = {
            "idea_id": self.idea_id,
            "stage": self.stage,
            "entries": [
                {"rank": e.rank, "paper_id": e.paper_id, "score": e.score}
                for e in self.entries
            ],
        }
        if include_digest:
            d["digest"] = self.digest()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RankedList":
        try:
            return cls(
                idea_id=d["idea_id"],
                stage=d["stage"],
                entries=tuple(
                    RankEntry(e["rank"], e["paper_id"], e.get("score"))
                    for e in d["entries"]
                ),
            )
        except (KeyError, TypeError, ValidationError) as exc:
            raise DatasetError(f"invalid ranked list document: {exc}") from exc

    @classmethod
    def from_papers(
        cls,
        idea_id: str,
        stage: str,
        papers: Iterable[Paper | str],
        scores: Iterable[float] | None = None,
    ) -> "RankedList":
        ids = [p.paper_id if isinstance(p, Paper) else p for p in papers]
        score_list = list(scores) if scores is not None else [None] * len(ids)
        entries = tuple(
            RankEntry(rank=i + 1, paper_id=pid, score=score_list[i])
            for i, pid in enumerate(ids)
        )
        return cls(idea_id=idea_id, stage=stage, entries=entries)


@dataclass(frozen=True)
class Verdict:
    """The binary decision plus literature-grounded rationale."""

    decision: str
    rationale: str
    cited_paper_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.decision not in CLASSES:
            raise ValidationError(f"decision must be one of {CLASSES}")
        if not self.rationale.strip():
            raise ValidationError("rationale must be non-empty")


@dataclass(frozen=True)
class LabeledExample:
    """An expert-labeled (idea, top papers, label, rationale) record."""

    idea_text: str
    top_papers: tuple[tuple[str, str], ...]  # (title, abstract)
    label: str
    rationale: str
    example_id: str = ""

    def __post_init__(self):
        if self.label not in CLASSES:
            raise ValidationError(f"label must be one of {CLASSES}")


@dataclass(frozen=True)
class PipelineConfig:
    """Every pipeline tunable in one place.

    Defaults: keep the top 100 papers at the embedding filter, hand the judge
    the top 10, guide it with 15 examples drawn with seed 100, and rerank with
    a 20-wide window sliding by 10.
    """

    N: int = 100
    k: int = 10
    n_examples: int = 15
    example_seed: int = 100
    query_model_id: str = "gpt-4o"
    rerank_model_id: str = "gpt-4o"
    judge_model_id: str = "gpt-4o"
    embedding_model_id: str = "specter2"
    window: int = 20
    stride: int = 10
    max_queries: int = 10
    per_query_limit: int = 20
    snippet_limit: int = 25
    recommendation_limit: int = 50
    temperature: float = 0.0
    rate_limit: float = 1.0
    judge_repair_attempts: int = 1

    def __post_init__(self):
        if not 1 <= self.k <= self.N:
            raise ConfigError(f"need 1 <= k <= N, got k={self.k}, N={self.N}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if not 1 <= self.stride < self.window:
            raise ConfigError(
                f"need 1 <= stride < window, got stride={self.stride}, window={self.window}"
            )
        if self.n_examples < 0:
            raise ConfigError("n_examples must be >= 0")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# --- dataset records (JSONL) ------------------------------------------------

@dataclass(frozen=True)
class DatasetRecord:
    """One line of the JSONL dataset format.

    ``label`` and ``rationale`` are optional for unlabeled runs; ``top_papers``
    is optional unless the record is judged with fixed papers.
    """

    id: str
    idea_text: str
    seed_paper_ids: tuple[str, ...] = ()
    top_papers: tuple[dict, ...] = ()
    label: Optional[str] = None
    rationale: Optional[str] = None

    def to_idea(self) -> Idea:
        return validate_idea(self.idea_text, self.seed_paper_ids, idea_id=self.id)

    def to_example(self) -> LabeledExample:
        if self.label is None:
            raise ValidationError(f"record {self.id} has no label")
        return LabeledExample(
            idea_text=self.idea_text,
            top_papers=tuple(
                (p.get("title", ""), p.get("abstract", "")) for p in self.top_papers
            ),
            label=self.label,
            rationale=self.rationale or "",
            example_id=self.id,
        )


def parse_record(obj: Mapping, line: int | None = None) -> DatasetRecord:
    """Parse one dataset object, reporting the offending line on failure."""
    try:
        if not isinstance(obj, Mapping):
            raise DatasetError("record is not a JSON object", line)
        rec_id = obj.get("id")
        idea_text = obj.get("idea_text")
        if not rec_id or not isinstance(rec_id, str):
            raise DatasetError("missing or invalid 'id'", line)
        if not idea_text or not isinstance(idea_text, str):
            raise DatasetError("missing or invalid 'idea_text'", line)
        label = obj.get("label")
        if label is not None:
            label = str(label).replace(" ", "_")
            if label not in CLASSES:
                raise DatasetError(f"label must be one of {CLASSES}, got {label!r}", line)
        top_papers = obj.get("top_papers") or ()
        for p in top_papers:
            if not isinstance(p, Mapping) or "abstract" not in p:
                raise DatasetError("top_papers entries need at least an 'abstract'", line)
        return DatasetRecord(
            id=rec_id,
            idea_text=idea_text,
            seed_paper_ids=tuple(obj.get("seed_paper_ids") or ()),
            top_papers=tuple(dict(p) for p in top_papers),
            label=label,
            rationale=obj.get("rationale"),
        )
    except DatasetError:
        raise
    except (TypeError, AttributeError) as exc:
        raise DatasetError(f"malformed record: {exc}", line) from exc


def iter_dataset(path):
    """Yield (line_number, record) pairs from a JSONL dataset file."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", line_no) from exc
            yield line_no, parse_record(obj, line_no)


def load_dataset(path) -> list[DatasetRecord]:
    """Read a JSONL dataset file; every error names its line number."""
    return [rec for _, rec in iter_dataset(path)]


def load_examples(path) -> list[LabeledExample]:
    """Read labeled examples from a JSONL dataset file."""
    examples = []
    for line_no, rec in iter_dataset(path):
        if rec.label is None:
            raise DatasetError("example record has no label", line_no)
        examples.append(rec.to_example())
    return examples
