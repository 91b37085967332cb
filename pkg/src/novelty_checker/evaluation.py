"""Metrics over labeled runs and the ablation harness.

Binary metrics treat "novel" as the positive class; the headline precision,
recall, and F1 are macro-averaged with per-class values always reported, so
either convention can be reconciled from one report. Kappa is computed in
integer arithmetic and only divided once, which keeps clean ratios exact.
Degenerate denominators follow the usual conventions: per-class divisions
by zero score 0, kappa with no chance disagreement is undefined.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .domain import (
    CLASSES,
    DatasetRecord,
    Paper,
    PipelineConfig,
    RankedList,
)
from .errors import (
    ConfigError,
    DatasetError,
    LengthMismatch,
    NoveltyCheckerError,
    PipelineError,
    UnknownClass,
)
from .judge import judge_novelty, run_pipeline, select_examples
from .retrieval import ALL_SOURCES

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with "novel" fixed as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.total < 1:
            raise ValueError("confusion matrix must count at least one pair")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion(preds: Sequence[str], labels: Sequence[str]) -> ConfusionMatrix:
    """Tally predictions against gold labels.

    Raises:
        LengthMismatch: unequal vector lengths or empty input.
        UnknownClass: any value outside {novel, not_novel}.
    """
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    if not preds:
        raise LengthMismatch("cannot evaluate zero pairs")
    tp = fp = fn = tn = 0
    for p, l in zip(preds, labels):
        if p not in CLASSES:
            raise UnknownClass(f"unknown predicted class {p!r}")
        if l not in CLASSES:
            raise UnknownClass(f"unknown label class {l!r}")
        if p == "novel" and l == "novel":
            tp += 1
        elif p == "novel":
            fp += 1
        elif l == "novel":
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def accuracy(cm: ConfusionMatrix) -> float:
    return (cm.tp + cm.tn) / cm.total


def _safe_div(num: int, den: int) -> float:
    return num / den if den else 0.0


def per_class_prf(cm: ConfusionMatrix) -> dict[str, dict[str, float]]:
    """Precision, recall, and F1 for each class; divisions by zero give 0."""
    out = {}
    for cls, tp, pred, true in (
        ("novel", cm.tp, cm.tp + cm.fp, cm.tp + cm.fn),
        ("not_novel", cm.tn, cm.tn + cm.fn, cm.tn + cm.fp),
    ):
        p = _safe_div(tp, pred)
        r = _safe_div(tp, true)
        f = 2 * p * r / (p + r) if p + r else 0.0
        out[cls] = {"precision": p, "recall": r, "f1": f}
    return out


def _averaged(cm: ConfusionMatrix, metric: str, averaging: str) -> float:
    per_class = per_class_prf(cm)
    if averaging == "positive_class":
        return per_class["novel"][metric]
    if averaging == "macro":
        return sum(per_class[c][metric] for c in CLASSES) / len(CLASSES)
    raise ValueError(f"unknown averaging {averaging!r}")


def precision(cm: ConfusionMatrix, averaging: str = "macro") -> float:
    return _averaged(cm, "precision", averaging)


def recall(cm: ConfusionMatrix, averaging: str = "macro") -> float:
    return _averaged(cm, "recall", averaging)


def f1(cm: ConfusionMatrix, averaging: str = "macro") -> float:
    return _averaged(cm, "f1", averaging)


def cohen_kappa(cm: ConfusionMatrix) -> Optional[float]:
    """Chance-corrected agreement, or None when chance agreement is total.

    Multiplying the usual observed/expected form through by n**2 gives
    kappa = (n*(tp+tn) - S) / (n**2 - S) with
    S = (tp+fp)*(tp+fn) + (tn+fp)*(tn+fn). Everything stays an integer
    until the one final division, so ratios like 500/1250 come out exact.
    """
    n = cm.total
    s = (cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.tn + cm.fp) * (cm.tn + cm.fn)
    denominator = n * n - s
    if denominator == 0:
        return None
    return (n * (cm.tp + cm.tn) - s) / denominator


@dataclass(frozen=True)
class MetricsReport:
    """All headline numbers for one prediction set."""

    n: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    kappa: Optional[float]
    per_class: Mapping[str, Mapping[str, float]]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "kappa": self.kappa,
            "per_class": {c: dict(v) for c, v in self.per_class.items()},
        }


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:
    return MetricsReport(
        n=cm.total,
        accuracy=accuracy(cm),
        precision=precision(cm),
        recall=recall(cm),
        f1=f1(cm),
        kappa=cohen_kappa(cm),
        per_class=per_class_prf(cm),
    )


def format_metric(value: Optional[float]) -> str:
    """Two-decimal rendering; undefined values print as "-"."""
    return "-" if value is None else f"{value:.2f}"


# --- rank diagnostics --------------------------------------------------------

def rank_overlap(a: RankedList, b: RankedList, k: int) -> int:
    """How many papers the two top-k lists share."""
    return len(set(a.ids()[:k]) & set(b.ids()[:k]))


def rank_shift(a: RankedList, b: RankedList, k: int) -> Optional[float]:
    """Mean absolute rank difference over shared papers; None when disjoint."""
    pos_a = {pid: i + 1 for i, pid in enumerate(a.ids()[:k])}
    pos_b = {pid: i + 1 for i, pid in enumerate(b.ids()[:k])}
    shared = [pid for pid in pos_a if pid in pos_b]
    if not shared:
        return None
    return sum(abs(pos_a[pid] - pos_b[pid]) for pid in shared) / len(shared)


@dataclass(frozen=True)
class RankComparison:
    overlap: float
    rank_shift: Optional[float]


# --- ablation harness --------------------------------------------------------

@dataclass(frozen=True)
class AblationVariant:
    """One pipeline configuration exercised by the ablation."""

    name: str
    description: str
    criteria_mode: str
    sources: tuple[str, ...]
    ranking: str


VARIANTS: dict[str, AblationVariant] = {
    v.name: v
    for v in (
        AblationVariant(
            "complete",
            "all sources, embedding filter, facet-criteria listwise rerank",
            "facet",
            tuple(ALL_SOURCES),
            "rerank",
        ),
        AblationVariant(
            "relevance_rankgpt",
            "listwise rerank with generic relevance criteria instead of facets",
            "relevance",
            tuple(ALL_SOURCES),
            "rerank",
        ),
        AblationVariant(
            "embedding_only",
            "embedding filter only, no listwise rerank",
            "facet",
            tuple(ALL_SOURCES),
            "embedding",
        ),
        AblationVariant(
            "snippet_only",
            "snippet search results in provider order",
            "facet",
            ("snippet",),
            "raw",
        ),
        AblationVariant(
            "keyword_only",
            "keyword search results in provider order",
            "facet",
            ("keyword",),
            "raw",
        ),
    )
}


def resolve_variants(names: Sequence[str] | None) -> list[AblationVariant]:
    if not names:
        return list(VARIANTS.values())
    out = []
    for name in names:
        if name not in VARIANTS:
            raise ConfigError(
                f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}"
            )
        out.append(VARIANTS[name])
    return out


def run_ablation(
    records: Sequence[DatasetRecord],
    variants: Sequence[AblationVariant],
    cfg: PipelineConfig,
    rt,
) -> dict:
    """Run every variant over the dataset and compare against the complete run.

    Retrieval is shared between variants that use the same sources, so the
    comparisons isolate the stages that actually differ. Overlap and rank
    shift are reported against the complete variant's top-k; pairs with zero
    overlap contribute nothing to the shift mean.
    """
    if not records:
        raise DatasetError("dataset is empty")
    unlabeled = [r.id for r in records if r.label is None]
    if unlabeled:
        raise DatasetError(f"records without labels: {', '.join(unlabeled[:5])}")
    per_idea: list[dict] = []
    evidence: dict[tuple[str, str], RankedList] = {}
    for record in records:
        idea = record.to_idea()
        memo: dict = {}
        row: dict = {"idea_id": idea.id, "label": record.label, "results": {}}
        for variant in variants:
            try:
                report = run_pipeline(
                    idea,
                    cfg,
                    rt,
                    criteria_mode=variant.criteria_mode,
                    sources=variant.sources,
                    ranking=variant.ranking,
                    retrieval_memo=memo,
                )
            except NoveltyCheckerError as exc:
                raise PipelineError(f"{variant.name}/{idea.id}", exc) from exc
            evidence[(variant.name, idea.id)] = report.evidence
            row["results"][variant.name] = {
                "decision": report.verdict.decision,
                "top_k": report.evidence.ids(),
            }
        per_idea.append(row)
    have_complete = any(v.name == "complete" for v in variants)
    if not have_complete:
        logger.warning("complete variant not selected; comparison columns omitted")
    per_variant: dict[str, dict] = {}
    for variant in variants:
        preds = [row["results"][variant.name]["decision"] for row in per_idea]
        labels = [row["label"] for row in per_idea]
        cm = confusion(preds, labels)
        entry: dict = {
            "description": variant.description,
            "accuracy": accuracy(cm),
            "metrics": metrics_report(cm).to_dict(),
        }
        if have_complete:
            comparison = _compare_to_complete(variant.name, per_idea, evidence, cfg.k)
            entry["overlap_vs_complete"] = comparison.overlap
            entry["rank_shift_vs_complete"] = comparison.rank_shift
        per_variant[variant.name] = entry
    return {
        "n": len(records),
        "k": cfg.k,
        "variants": [v.name for v in variants],
        "per_variant": per_variant,
        "per_idea": per_idea,
    }


def _compare_to_complete(
    name: str,
    per_idea: Sequence[Mapping],
    evidence: Mapping[tuple[str, str], RankedList],
    k: int,
) -> RankComparison:
    overlaps = []
    shifts = []
    for row in per_idea:
        a = evidence[(name, row["idea_id"])]
        b = evidence[("complete", row["idea_id"])]
        overlaps.append(rank_overlap(a, b, k))
        shift = rank_shift(a, b, k)
        if shift is not None:
            shifts.append(shift)
    mean_overlap = sum(overlaps) / len(overlaps)
    mean_shift = sum(shifts) / len(shifts) if shifts else None
    return RankComparison(overlap=mean_overlap, rank_shift=mean_shift)


def render_ablation_text(report: Mapping) -> str:
    """Plain-text tables: accuracy per variant, then rank comparisons."""
    lines = [f"Ablation over {report['n']} ideas (k={report['k']})", ""]
    header = f"{'variant':<20} {'accuracy':>8}"
    lines += [header, "-" * len(header)]
    for name in report["variants"]:
        entry = report["per_variant"][name]
        lines.append(f"{name:<20} {format_metric(entry['accuracy']):>8}")
    if any("overlap_vs_complete" in v for v in report["per_variant"].values()):
        lines += ["", f"{'variant':<20} {'overlap':>8} {'shift':>8}"]
        lines.append("-" * 38)
        for name in report["variants"]:
            entry = report["per_variant"][name]
            if "overlap_vs_complete" not in entry:
                continue
            lines.append(
                f"{name:<20} {entry['overlap_vs_complete']:>8.2f} "
                f"{format_metric(entry.get('rank_shift_vs_complete')):>8}"
            )
    return "\n".join(lines) + "\n"


# --- labeled-dataset evaluation ----------------------------------------------

def validate_eval_records(
    numbered: Sequence[tuple[int, DatasetRecord]], fixed_papers: bool
) -> list[DatasetRecord]:
    """Check eval preconditions, reporting the offending line on failure."""
    if not numbered:
        raise DatasetError("dataset is empty")
    for line, record in numbered:
        if record.label is None:
            raise DatasetError(f"record {record.id} has no label", line)
        if fixed_papers and not record.top_papers:
            raise DatasetError(f"record {record.id} has no top_papers", line)
    return [record for _, record in numbered]


def _fixed_evidence(record: DatasetRecord) -> tuple[RankedList, dict[str, Paper]]:
    papers = {}
    ids = []
    for i, doc in enumerate(record.top_papers, start=1):
        pid = doc.get("paper_id") or f"{record.id}-p{i}"
        papers[pid] = Paper(
            paper_id=pid,
            title=doc.get("title", ""),
            abstract=doc["abstract"],
            provenance=frozenset({"fixed"}),
        )
        ids.append(pid)
    return RankedList.from_papers(record.id, "raw_source", ids), papers


def evaluate_dataset(
    records: Sequence[DatasetRecord],
    cfg: PipelineConfig,
    rt,
    fixed_papers: bool = False,
) -> dict:
    """Score pipeline predictions against gold labels.

    With ``fixed_papers`` the retrieval and ranking stages are skipped and
    the judge runs directly on each record's stored top papers, so judging
    quality is measured against an identical evidence set for every system
    under comparison.
    """
    variant = "fixed_papers" if fixed_papers else "complete"
    preds = []
    labels = []
    per_idea = []
    for record in records:
        idea = record.to_idea()
        if fixed_papers:
            evidence, papers = _fixed_evidence(record)
            examples = select_examples(rt.examples, cfg.n_examples, cfg.example_seed)
            try:
                verdict, _ = judge_novelty(idea, evidence, papers, examples, cfg, rt.gateway)
            except NoveltyCheckerError as exc:
                raise PipelineError(f"{variant}/{idea.id}", exc) from exc
            decision = verdict.decision
        else:
            try:
                report = run_pipeline(idea, cfg, rt)
            except NoveltyCheckerError as exc:
                raise PipelineError(f"{variant}/{idea.id}", exc) from exc
            decision = report.verdict.decision
        preds.append(decision)
        labels.append(record.label)
        per_idea.append(
            {
                "idea_id": idea.id,
                "label": record.label,
                "decision": decision,
                "correct": decision == record.label,
            }
        )
    cm = confusion(preds, labels)
    return {
        "n": len(records),
        "per_variant": {
            variant: {
                "accuracy": accuracy(cm),
                "metrics": metrics_report(cm).to_dict(),
                "confusion": cm.to_dict(),
            }
        },
        "per_idea": per_idea,
    }


def render_eval_text(report: Mapping) -> str:
    """Plain-text metric table for an evaluation run."""
    lines = [f"Evaluation over {report['n']} ideas", ""]
    header = (
        f"{'variant':<16} {'acc':>6} {'prec':>6} {'rec':>6} {'f1':>6} {'kappa':>6}"
    )
    lines += [header, "-" * len(header)]
    for name, entry in report["per_variant"].items():
        m = entry["metrics"]
        lines.append(
            f"{name:<16} {format_metric(m['accuracy']):>6} "
            f"{format_metric(m['precision']):>6} {format_metric(m['recall']):>6} "
            f"{format_metric(m['f1']):>6} {format_metric(m['kappa']):>6}"
        )
    wrong = [row["idea_id"] for row in report["per_idea"] if not row["correct"]]
    if wrong:
        lines += ["", f"misclassified: {', '.join(wrong)}"]
    return "\n".join(lines) + "\n"
