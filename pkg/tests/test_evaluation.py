from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from novelty_checker.domain import RankedList, RankEntry
from novelty_checker.errors import ConfigError, LengthMismatch, UnknownClass
from novelty_checker.evaluation import (
    VARIANTS,
    ConfusionMatrix,
    accuracy,
    cohen_kappa,
    confusion,
    f1,
    format_metric,
    metrics_report,
    per_class_prf,
    precision,
    rank_overlap,
    rank_shift,
    recall,
    resolve_variants,
)

LABELS = st.sampled_from(["novel", "not_novel"])


def _ranked(ids) -> RankedList:
    entries = tuple(RankEntry(rank=i + 1, paper_id=p) for i, p in enumerate(ids))
    return RankedList(idea_id="i", stage="facet_topK", entries=entries)


def _brute_force(preds, labels):
    # independent raw-pair counting, kappa straight from p_o and p_e
    n = len(preds)
    tp = sum(1 for p, l in zip(preds, labels) if p == "novel" and l == "novel")
    fp = sum(1 for p, l in zip(preds, labels) if p == "novel" and l == "not_novel")
    fn = sum(1 for p, l in zip(preds, labels) if p == "not_novel" and l == "novel")
    tn = sum(1 for p, l in zip(preds, labels) if p == "not_novel" and l == "not_novel")
    acc = (tp + tn) / n

    def prf(cls_tp, cls_pred, cls_true):
        p = cls_tp / cls_pred if cls_pred else 0.0
        r = cls_tp / cls_true if cls_true else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f

    novel = prf(tp, tp + fp, tp + fn)
    not_novel = prf(tn, tn + fn, tn + fp)
    macro = tuple((a + b) / 2 for a, b in zip(novel, not_novel))
    p_o = acc
    p_e = ((tp + fp) * (tp + fn) + (tn + fp) * (tn + fn)) / (n * n)
    kappa = None if p_e == 1.0 else (p_o - p_e) / (1.0 - p_e)
    return {
        "cm": (tp, fp, fn, tn),
        "accuracy": acc,
        "novel": novel,
        "not_novel": not_novel,
        "macro": macro,
        "kappa": kappa,
    }


# ------------------------------------------------------------------ confusion


def test_confusion_counts_quadrants():
    preds = ["novel", "novel", "not_novel", "not_novel"]
    labels = ["novel", "not_novel", "novel", "not_novel"]
    cm = confusion(preds, labels)
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (1, 1, 1, 1)
    assert cm.total == 4


def test_confusion_rejects_length_mismatch():
    with pytest.raises(LengthMismatch):
        confusion(["novel"], [])
    with pytest.raises(LengthMismatch):
        confusion([], [])


def test_confusion_rejects_unknown_class():
    with pytest.raises(UnknownClass):
        confusion(["maybe"], ["novel"])
    with pytest.raises(UnknownClass):
        confusion(["novel"], ["1"])


# -------------------------------------------------------------------- metrics


def test_accuracy_of_paper_scale_counts():
    # 52 correct out of 58
    cm = ConfusionMatrix(tp=30, fp=3, fn=3, tn=22)
    assert accuracy(cm) == pytest.approx(0.8966, abs=1e-4)


def test_accuracy_renders_to_two_decimals():
    cm = ConfusionMatrix(tp=13, fp=3, fn=3, tn=13)
    assert accuracy(cm) == pytest.approx(0.8125)
    assert format_metric(accuracy(cm)) == "0.81"


def test_kappa_exact_on_integer_ratio():
    cm = ConfusionMatrix(tp=20, fp=5, fn=10, tn=15)
    assert cohen_kappa(cm) == 0.4


def test_kappa_none_when_chance_agreement_is_total():
    assert cohen_kappa(ConfusionMatrix(tp=5, fp=0, fn=0, tn=0)) is None
    assert cohen_kappa(ConfusionMatrix(tp=0, fp=0, fn=0, tn=7)) is None


def test_format_metric_handles_none():
    assert format_metric(None) == "-"
    assert format_metric(0.5) == "0.50"


def test_per_class_prf_zero_safe():
    # no novel predictions at all: novel precision and recall are 0, not NaN
    cm = ConfusionMatrix(tp=0, fp=0, fn=4, tn=6)
    per = per_class_prf(cm)
    assert per["novel"] == {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    assert per["not_novel"]["recall"] == 1.0


def test_averaging_modes():
    cm = ConfusionMatrix(tp=8, fp=2, fn=4, tn=6)
    per = per_class_prf(cm)
    assert precision(cm, "positive_class") == per["novel"]["precision"]
    assert precision(cm, "macro") == pytest.approx(
        (per["novel"]["precision"] + per["not_novel"]["precision"]) / 2
    )
    with pytest.raises(ValueError):
        f1(cm, "micro")


@given(st.lists(st.tuples(LABELS, LABELS), min_size=1, max_size=200))
@settings(max_examples=200, deadline=None)
def test_metrics_match_brute_force(pairs):
    preds = [p for p, _ in pairs]
    labels = [l for _, l in pairs]
    want = _brute_force(preds, labels)
    cm = confusion(preds, labels)
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == want["cm"]
    assert accuracy(cm) == pytest.approx(want["accuracy"], abs=1e-12)
    per = per_class_prf(cm)
    for cls in ("novel", "not_novel"):
        got = (per[cls]["precision"], per[cls]["recall"], per[cls]["f1"])
        for g, w in zip(got, want[cls]):
            assert g == pytest.approx(w, abs=1e-12)
    assert precision(cm) == pytest.approx(want["macro"][0], abs=1e-12)
    assert recall(cm) == pytest.approx(want["macro"][1], abs=1e-12)
    assert f1(cm) == pytest.approx(want["macro"][2], abs=1e-12)
    got_kappa = cohen_kappa(cm)
    if want["kappa"] is None:
        assert got_kappa is None
    else:
        assert got_kappa == pytest.approx(want["kappa"], abs=1e-12)


def test_metrics_report_shape():
    report = metrics_report(ConfusionMatrix(tp=3, fp=1, fn=1, tn=2)).to_dict()
    assert report["n"] == 7
    assert set(report) == {
        "n", "accuracy", "precision", "recall", "f1", "kappa", "per_class",
    }


# ------------------------------------------------------------ rank comparison


def test_rank_overlap_and_shift_on_swapped_pair():
    a = _ranked(["A", "B", "C"])
    b = _ranked(["B", "A", "C"])
    assert rank_overlap(a, b, 10) == 3
    assert rank_shift(a, b, 10) == pytest.approx(0.6667, abs=1e-4)


def test_rank_comparison_identical_lists():
    ids = [f"p{i}" for i in range(10)]
    a, b = _ranked(ids), _ranked(list(ids))
    assert rank_overlap(a, b, 10) == 10
    assert rank_shift(a, b, 10) == 0.0


def test_rank_comparison_disjoint_lists():
    a = _ranked(["a1", "a2"])
    b = _ranked(["b1", "b2"])
    assert rank_overlap(a, b, 10) == 0
    assert rank_shift(a, b, 10) is None


def test_rank_overlap_respects_k():
    a = _ranked(["x", "y", "z"])
    b = _ranked(["z", "y", "x"])
    assert rank_overlap(a, b, 1) == 0
    assert rank_overlap(a, b, 2) == 1
    assert rank_overlap(a, b, 3) == 3


@given(
    st.lists(st.integers(0, 30), min_size=1, max_size=15, unique=True),
    st.lists(st.integers(0, 30), min_size=1, max_size=15, unique=True),
    st.integers(1, 15),
)
def test_rank_comparison_symmetry(ids_a, ids_b, k):
    a = _ranked([f"p{i}" for i in ids_a])
    b = _ranked([f"p{i}" for i in ids_b])
    assert rank_overlap(a, b, k) == rank_overlap(b, a, k)
    assert rank_shift(a, b, k) == rank_shift(b, a, k)
    overlap = rank_overlap(a, b, k)
    assert 0 <= overlap <= min(k, len(ids_a), len(ids_b))
    shift = rank_shift(a, b, k)
    assert (shift is None) == (overlap == 0)
    if shift is not None:
        assert 0 <= shift <= k - 1


# ------------------------------------------------------------------- variants


def test_variants_are_ordered_and_complete_first():
    names = list(VARIANTS)
    assert names[0] == "complete"
    assert set(names) == {
        "complete",
        "relevance_rankgpt",
        "embedding_only",
        "snippet_only",
        "keyword_only",
    }


def test_resolve_variants_default_is_all():
    assert [v.name for v in resolve_variants(None)] == list(VARIANTS)


def test_resolve_variants_keeps_request_order():
    picked = resolve_variants(["embedding_only", "complete"])
    assert [v.name for v in picked] == ["embedding_only", "complete"]


def test_resolve_variants_unknown_name():
    with pytest.raises(ConfigError):
        resolve_variants(["complete", "tfidf_only"])
