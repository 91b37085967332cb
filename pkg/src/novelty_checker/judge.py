"""Final verdict stage and the per-idea pipeline driver.

The judge sees the idea next to its top-k retrieved papers, guided by
expert-labeled examples rendered into the prompt, and must answer with a
decision line and a rationale that cites papers by number. A reply that
cannot be parsed is retried once with a format reminder and then becomes an
error: a parse failure is never turned into a label.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .domain import (
    CandidatePool,
    Idea,
    LabeledExample,
    Paper,
    PipelineConfig,
    RankedList,
    Verdict,
    digest_of,
)
from .errors import (
    ContextOverflow,
    EmptyPool,
    NotEnoughExamples,
    NoveltyCheckerError,
    PipelineError,
    UnparseableVerdict,
    ValidationError,
)
from .gateway import ChatRequest, LlmGateway
from .prompts import load_template, numbered_block
from .rerank import RerankCriteria, embed_filter, facet_rerank
from .retrieval import ALL_SOURCES, S2Client, raw_source_order, retrieve_pool

logger = logging.getLogger(__name__)

JUDGE_TEMPLATE_ID = "judge_v1"
JUDGE_SYSTEM_TEMPLATE_ID = "judge_system_v1"
EXAMPLE_TEMPLATE_ID = "judge_example_v1"

REPAIR_INSTRUCTION = (
    "Answer in exactly two lines. First line: DECISION: novel or DECISION: "
    "not novel. Second line: RATIONALE: your reasoning, citing papers by "
    "bracketed number."
)

_DECISION_RE = re.compile(
    r"decision\s*\**\s*[:\-]\s*\**\s*(not[\s_-]*novel|novel)", re.IGNORECASE
)
_RATIONALE_RE = re.compile(
    r"rationale\s*\**\s*[:\-]\s*\**\s*(.+)\Z", re.IGNORECASE | re.DOTALL
)
_CITATION_RE = re.compile(r"\[(\d+)\]")

_LCG_MULTIPLIER = 1664525
_LCG_INCREMENT = 1013904223
_LCG_MODULUS = 2**32


def select_examples(
    train_set: Sequence[LabeledExample], n_examples: int, seed: int
) -> list[LabeledExample]:
    """Seeded sample of in-context examples, without replacement.

    The generator is pinned so any implementation can reproduce the same
    selection: a 32-bit linear congruential generator with state update
    state = (1664525 * state + 1013904223) mod 2**32, initial state = seed
    mod 2**32, driving a partial Fisher-Yates shuffle. At step i (0-based)
    the generator advances once and position i swaps with position
    i + state mod (len - i). The first n_examples positions, in that order,
    form the sample.

    Raises:
        NotEnoughExamples: fewer training examples than requested.
    """
    if n_examples > len(train_set):
        raise NotEnoughExamples(
            f"asked for {n_examples} examples but only {len(train_set)} are available"
        )
    indices = list(range(len(train_set)))
    state = seed % _LCG_MODULUS
    for i in range(n_examples):
        state = (_LCG_MULTIPLIER * state + _LCG_INCREMENT) % _LCG_MODULUS
        j = i + state % (len(indices) - i)
        indices[i], indices[j] = indices[j], indices[i]
    return [train_set[i] for i in indices[:n_examples]]


def _label_text(label: str) -> str:
    return "not novel" if label == "not_novel" else "novel"


def build_judge_prompt(
    idea: Idea,
    evidence: RankedList,
    papers: Mapping[str, Paper],
    examples: Sequence[LabeledExample],
    cfg: PipelineConfig,
) -> ChatRequest:
    """Render the judgment prompt: definition, examples, then the idea.

    Each example block shows an idea with its numbered top papers, its label,
    and its rationale; the idea under assessment follows in the same layout.
    """
    example_template = load_template(EXAMPLE_TEMPLATE_ID)
    blocks = []
    for n, ex in enumerate(examples, start=1):
        entries = numbered_block([f"{t}. {a}" for t, a in ex.top_papers])
        blocks.append(
            example_template.substitute(
                n=n,
                idea_text=ex.idea_text,
                entries=entries or "(none)",
                label=_label_text(ex.label),
                rationale=ex.rationale or "(none given)",
            )
        )
    entries = numbered_block([papers[pid].text for pid in evidence.ids()])
    user = load_template(JUDGE_TEMPLATE_ID).substitute(
        examples="".join(blocks),
        idea_text=idea.text,
        entries=entries,
    )
    system = load_template(JUDGE_SYSTEM_TEMPLATE_ID).template
    return ChatRequest(
        model=cfg.judge_model_id,
        messages=(
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ),
        temperature=cfg.temperature,
    )


def parse_verdict(text: str, evidence: RankedList) -> Verdict:
    """Read the decision and rationale out of a judge reply.

    Case-insensitive; "not novel" is matched before "novel" so the negation
    is never swallowed. Cited bracket numbers map to evidence paper ids;
    numbers outside the evidence are dropped with a warning.

    Raises:
        UnparseableVerdict: no decision line, or a decision with no
            reasoning at all.
    """
    m = _DECISION_RE.search(text)
    if not m:
        raise UnparseableVerdict(f"no decision line in reply: {text[:120]!r}")
    decision = "not_novel" if m.group(1).lower().startswith("not") else "novel"
    rm = _RATIONALE_RE.search(text)
    rationale = (rm.group(1) if rm else text[m.end():]).strip()
    if not rationale:
        raise UnparseableVerdict("decision without any rationale")
    rank_to_id = {e.rank: e.paper_id for e in evidence.entries}
    cited: dict[str, None] = {}
    for cm in _CITATION_RE.finditer(rationale):
        rank = int(cm.group(1))
        pid = rank_to_id.get(rank)
        if pid is None:
            logger.warning("rationale cites [%d], outside the evidence; dropped", rank)
        else:
            cited[pid] = None
    return Verdict(decision=decision, rationale=rationale, cited_paper_ids=tuple(cited))


def judge_novelty(
    idea: Idea,
    evidence: RankedList,
    papers: Mapping[str, Paper],
    examples: Sequence[LabeledExample],
    cfg: PipelineConfig,
    gateway: LlmGateway,
) -> tuple[Verdict, list[str]]:
    """One judge call with bounded repair; returns the verdict and example ids.

    If the prompt overflows the model's context, whole examples are dropped
    from the end and the call retried; the evidence papers are never cut.
    """
    examples = list(examples)
    while True:
        request = build_judge_prompt(idea, evidence, papers, examples, cfg)
        try:
            response = gateway.chat(request)
        except ContextOverflow:
            if not examples:
                raise
            dropped = examples.pop()
            logger.warning(
                "judge prompt over budget; dropped example %s", dropped.example_id
            )
            continue
        break
    attempts = cfg.judge_repair_attempts
    while True:
        try:
            verdict = parse_verdict(response.text, evidence)
            break
        except UnparseableVerdict:
            if attempts <= 0:
                raise
            attempts -= 1
            logger.warning("judge reply unparseable, asking once more for the format")
            repair = request.messages + (
                {"role": "assistant", "content": response.text},
                {"role": "user", "content": REPAIR_INSTRUCTION},
            )
            response = gateway.chat(
                ChatRequest(
                    model=cfg.judge_model_id,
                    messages=repair,
                    temperature=cfg.temperature,
                )
            )
    return verdict, [ex.example_id for ex in examples]


# --- pipeline orchestration --------------------------------------------------

@dataclass(frozen=True)
class NoveltyReport:
    """Everything one pipeline run decided and how it got there."""

    idea_id: str
    verdict: Verdict
    evidence: RankedList
    trace: tuple[Mapping, ...]
    config_snapshot: PipelineConfig
    paper_titles: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.evidence.entries) > self.config_snapshot.k:
            raise ValidationError("evidence longer than k")
        evidence_ids = set(self.evidence.ids())
        stray = [pid for pid in self.verdict.cited_paper_ids if pid not in evidence_ids]
        if stray:
            raise ValidationError(f"verdict cites papers outside the evidence: {stray}")


def report_to_dict(report: NoveltyReport, generated_at: str) -> dict:
    titles = report.paper_titles
    return {
        "idea_id": report.idea_id,
        "decision": report.verdict.decision,
        "rationale": report.verdict.rationale,
        "cited_papers": [
            {"paper_id": pid, "title": titles.get(pid, "")}
            for pid in report.verdict.cited_paper_ids
        ],
        "evidence": [
            {"rank": e.rank, "paper_id": e.paper_id, "title": titles.get(e.paper_id, "")}
            for e in report.evidence.entries
        ],
        "trace": {"stages": [dict(s) for s in report.trace]},
        "config": report.config_snapshot.to_dict(),
        "generated_at": generated_at,
    }


def render_markdown(report: Mapping) -> str:
    """Human-readable rendering of a report document."""
    lines = [
        f"# Novelty report: {report['idea_id']}",
        "",
        f"**Decision:** {_label_text(report['decision'])}",
        "",
        "## Rationale",
        "",
        report["rationale"],
        "",
        "## Evidence",
        "",
    ]
    for row in report["evidence"]:
        lines.append(f"{row['rank']}. {row['title'] or row['paper_id']} (`{row['paper_id']}`)")
    if report.get("cited_papers"):
        lines += ["", "## Cited in the rationale", ""]
        for row in report["cited_papers"]:
            lines.append(f"- {row['title'] or row['paper_id']} (`{row['paper_id']}`)")
    lines += ["", f"_Generated {report.get('generated_at', '')}_", ""]
    return "\n".join(lines)


def _stage(name: str, fn):
    try:
        return fn()
    except EmptyPool:
        raise
    except PipelineError:
        raise
    except NoveltyCheckerError as exc:
        raise PipelineError(name, exc) from exc


def run_pipeline(
    idea: Idea,
    cfg: PipelineConfig,
    rt,
    criteria_mode: str = "facet",
    sources: Sequence[str] = ALL_SOURCES,
    ranking: str = "rerank",
    retrieval_memo: Optional[dict] = None,
) -> NoveltyReport:
    """Run retrieval, filtering, ranking, and judging for one idea.

    ``ranking`` selects how the evidence list is formed: "rerank" is the
    full two-stage path, "embedding" stops after the cosine filter, and
    "raw" takes provider order straight from the single enabled search
    source. ``retrieval_memo`` lets callers share retrieval work between
    runs that use the same sources.
    """
    memo_key = (idea.id, tuple(sources))
    if retrieval_memo is not None and memo_key in retrieval_memo:
        queries, results, pool = retrieval_memo[memo_key]
    else:
        queries, results, pool = _stage(
            "retrieve",
            lambda: retrieve_pool(idea, cfg, rt.gateway, rt.s2, sources),
        )
        if retrieval_memo is not None:
            retrieval_memo[memo_key] = (queries, results, pool)
    trace: list[dict] = [
        {
            "stage": "pool",
            "pool_size": len(pool.papers),
            "source_counts": dict(pool.source_counts),
            "queries": {
                "keywords": list(queries.keyword_queries),
                "titles": list(queries.title_queries),
            },
            "digest": pool.digest(),
        }
    ]
    papers = pool.by_id()
    if ranking == "raw":
        search_sources = [s for s in sources if s in ("keyword", "snippet")]
        if len(search_sources) != 1:
            raise ValueError("raw ranking needs exactly one search source")
        ordered = raw_source_order(results, search_sources[0])
        evidence = RankedList.from_papers(
            idea.id, "raw_source", ordered[: cfg.k]
        )
        trace.append(
            {
                "stage": "rank",
                "mode": "raw_source",
                "source": search_sources[0],
                "digest": evidence.digest(),
            }
        )
    else:
        filtered = _stage("embed", lambda: embed_filter(idea, pool, cfg, rt.gateway))
        trace.append(
            {
                "stage": "embed",
                "model": cfg.embedding_model_id,
                "n_in": len(pool.papers),
                "n_out": len(filtered.entries),
                "digest": filtered.digest(),
            }
        )
        if ranking == "embedding":
            evidence = filtered.top(cfg.k)
        elif ranking == "rerank":
            criteria = RerankCriteria(mode=criteria_mode)
            ranked = _stage(
                "rerank",
                lambda: facet_rerank(idea, filtered, papers, cfg, rt.gateway, criteria),
            )
            trace.append(
                {
                    "stage": "rerank",
                    "mode": criteria.mode,
                    "template_id": criteria.template_id,
                    "digest": ranked.digest(),
                }
            )
            evidence = ranked
        else:
            raise ValueError(f"unknown ranking mode {ranking!r}")
    examples = select_examples(rt.examples, cfg.n_examples, cfg.example_seed)
    verdict, example_ids = _stage(
        "judge",
        lambda: judge_novelty(idea, evidence, papers, examples, cfg, rt.gateway),
    )
    trace.append(
        {
            "stage": "judge",
            "template_id": JUDGE_TEMPLATE_ID,
            "n_examples": len(example_ids),
            "example_ids": example_ids,
            "digest": digest_of(
                {
                    "decision": verdict.decision,
                    "rationale": verdict.rationale,
                    "cited": list(verdict.cited_paper_ids),
                }
            ),
        }
    )
    return NoveltyReport(
        idea_id=idea.id,
        verdict=verdict,
        evidence=evidence,
        trace=tuple(trace),
        config_snapshot=cfg,
        paper_titles={pid: papers[pid].title for pid in evidence.ids()},
    )


def check_novelty(idea: Idea, cfg: PipelineConfig, rt) -> NoveltyReport:
    """The complete per-idea pipeline with default criteria and sources."""
    return run_pipeline(idea, cfg, rt)


def judge_from_parts(
    idea: Idea,
    pool_doc: Mapping,
    ranked_doc: Mapping,
    cfg: PipelineConfig,
    rt,
) -> NoveltyReport:
    """Judge a previously computed ranking, rebuilding the full trace.

    ``pool_doc`` and ``ranked_doc`` are the documents written by the
    retrieve and rerank steps: the pool with its query echo, and the
    filtered plus reranked lists with their stage digests. Composing
    retrieve, rerank, and this function over files yields the same trace
    digests as one end-to-end run on identical inputs.
    """
    pool = CandidatePool.from_dict(pool_doc)
    papers = pool.by_id()
    filtered = RankedList.from_dict(ranked_doc["filtered"])
    evidence = RankedList.from_dict(ranked_doc["ranked"])
    trace: list[dict] = [
        {
            "stage": "pool",
            "pool_size": len(pool.papers),
            "source_counts": dict(pool.source_counts),
            "queries": dict(pool_doc.get("queries") or {"keywords": [], "titles": []}),
            "digest": pool.digest(),
        },
        {
            "stage": "embed",
            "model": cfg.embedding_model_id,
            "n_in": len(pool.papers),
            "n_out": len(filtered.entries),
            "digest": filtered.digest(),
        },
        {
            "stage": "rerank",
            "mode": ranked_doc["mode"],
            "template_id": ranked_doc["template_id"],
            "digest": evidence.digest(),
        },
    ]
    examples = select_examples(rt.examples, cfg.n_examples, cfg.example_seed)
    verdict, example_ids = _stage(
        "judge",
        lambda: judge_novelty(idea, evidence, papers, examples, cfg, rt.gateway),
    )
    trace.append(
        {
            "stage": "judge",
            "template_id": JUDGE_TEMPLATE_ID,
            "n_examples": len(example_ids),
            "example_ids": example_ids,
            "digest": digest_of(
                {
                    "decision": verdict.decision,
                    "rationale": verdict.rationale,
                    "cited": list(verdict.cited_paper_ids),
                }
            ),
        }
    )
    return NoveltyReport(
        idea_id=idea.id,
        verdict=verdict,
        evidence=evidence,
        trace=tuple(trace),
        config_snapshot=cfg,
        paper_titles={pid: papers[pid].title for pid in evidence.ids()},
    )
