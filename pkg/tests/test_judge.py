from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from novelty_checker.domain import (
    LabeledExample,
    Paper,
    PipelineConfig,
    RankedList,
    RankEntry,
    validate_idea,
)
from novelty_checker.errors import (
    NotEnoughExamples,
    UnparseableVerdict,
    ValidationError,
)
from novelty_checker.gateway import LlmGateway, MockChat, MockEmbeddings
from novelty_checker.judge import (
    NoveltyReport,
    build_judge_prompt,
    judge_novelty,
    parse_verdict,
    report_to_dict,
    select_examples,
)

IDEA = validate_idea("An idea under judgment. [sim:1.0]", idea_id="idea-j")
CFG = PipelineConfig()


def _example(i: int, label: str = "novel") -> LabeledExample:
    return LabeledExample(
        idea_text=f"Example idea {i}.",
        top_papers=(("A title", "An abstract."),),
        label=label,
        rationale=f"Reasoning {i}.",
        example_id=f"e{i:02d}",
    )


def _evidence(*pids: str) -> RankedList:
    entries = tuple(RankEntry(rank=i + 1, paper_id=p) for i, p in enumerate(pids))
    return RankedList(idea_id=IDEA.id, stage="facet_topK", entries=entries)


def _papers(*pids: str) -> dict[str, Paper]:
    return {
        p: Paper(
            paper_id=p,
            title=f"Title {p}",
            abstract=f"Abstract {p}.",
            provenance=frozenset({"keyword"}),
        )
        for p in pids
    }


def _gateway(rules) -> LlmGateway:
    return LlmGateway(MockChat(rules), MockEmbeddings(dim=8), sleep=lambda s: None)


# ----------------------------------------------------------- example sampling


def test_select_examples_matches_pinned_generator():
    train = [_example(i) for i in range(35)]
    chosen = select_examples(train, 15, seed=100)
    assert [ex.example_id for ex in chosen] == [
        "e28", "e13", "e20", "e27", "e10", "e07", "e23", "e11",
        "e30", "e06", "e31", "e03", "e33", "e04", "e14",
    ]


def test_select_examples_deterministic_across_calls():
    train = [_example(i) for i in range(30)]
    assert select_examples(train, 10, 7) == select_examples(train, 10, 7)
    assert select_examples(train, 10, 7) != select_examples(train, 10, 8)


def test_select_examples_rejects_short_train_set():
    with pytest.raises(NotEnoughExamples):
        select_examples([_example(1)], 2, seed=0)


def test_select_examples_zero_is_empty():
    assert select_examples([_example(1)], 0, seed=0) == []


@given(
    n_total=st.integers(1, 60),
    n_pick=st.integers(0, 60),
    seed=st.integers(0, 2**40),
)
@settings(max_examples=80, deadline=None)
def test_select_examples_is_sample_without_replacement(n_total, n_pick, seed):
    train = [_example(i) for i in range(n_total)]
    if n_pick > n_total:
        with pytest.raises(NotEnoughExamples):
            select_examples(train, n_pick, seed)
        return
    chosen = select_examples(train, n_pick, seed)
    assert len(chosen) == n_pick
    ids = [ex.example_id for ex in chosen]
    assert len(set(ids)) == n_pick


# -------------------------------------------------------------------- prompts


def test_build_judge_prompt_layout():
    examples = [_example(1, "novel"), _example(2, "not_novel")]
    req = build_judge_prompt(IDEA, _evidence("p1", "p2"), _papers("p1", "p2"), examples, CFG)
    assert req.messages[0]["role"] == "system"
    user = req.messages[1]["content"]
    assert "### Example 1" in user and "### Example 2" in user
    assert "Label: novel" in user and "Label: not novel" in user
    assert user.index("### Example 2") < user.index("## Idea to assess")
    assert "[1] Title p1." in user and "[2] Title p2." in user


def test_build_judge_prompt_zero_shot():
    req = build_judge_prompt(IDEA, _evidence("p1"), _papers("p1"), [], CFG)
    user = req.messages[1]["content"]
    assert "### Example" not in user
    assert "## Idea to assess" in user


# ------------------------------------------------------------ verdict parsing


def test_parse_verdict_basic():
    v = parse_verdict(
        "DECISION: novel\nRATIONALE: Nothing matches [1].", _evidence("p1", "p2")
    )
    assert v.decision == "novel"
    assert v.cited_paper_ids == ("p1",)


def test_parse_verdict_not_novel_never_swallowed():
    v = parse_verdict(
        "Decision: Not Novel\nRationale: Covered by [2].", _evidence("p1", "p2")
    )
    assert v.decision == "not_novel"
    assert v.cited_paper_ids == ("p2",)


def test_parse_verdict_tolerates_markdown_and_dashes():
    v = parse_verdict(
        "**Decision** - **not_novel**\n**Rationale** - Prior work [1] covers it.",
        _evidence("p1"),
    )
    assert v.decision == "not_novel"


def test_parse_verdict_rationale_falls_back_to_tail():
    v = parse_verdict(
        "DECISION: novel. The idea combines mechanisms not seen in [1].",
        _evidence("p1"),
    )
    assert v.decision == "novel"
    assert "combines mechanisms" in v.rationale


def test_parse_verdict_drops_out_of_evidence_citations():
    v = parse_verdict(
        "DECISION: novel\nRATIONALE: see [1] and [9].", _evidence("p1", "p2")
    )
    assert v.cited_paper_ids == ("p1",)


def test_parse_verdict_missing_decision_raises():
    with pytest.raises(UnparseableVerdict):
        parse_verdict("I think this is interesting work.", _evidence("p1"))


def test_parse_verdict_decision_without_reasoning_raises():
    with pytest.raises(UnparseableVerdict):
        parse_verdict("DECISION: novel", _evidence("p1"))


def test_parse_verdict_never_defaults():
    # a reply mentioning novelty without a decision line must not turn into a verdict
    texts = [
        "The novelty here is unclear.",
        "novel approaches are discussed",
        "not novel enough to say; no decision",
    ]
    for text in texts:
        try:
            v = parse_verdict(text, _evidence("p1"))
        except UnparseableVerdict:
            continue
        # any parse that does succeed must come from an explicit decision word
        assert v.decision in ("novel", "not_novel")


@given(st.text(max_size=300))
def test_parse_verdict_total(text):
    evidence = _evidence("p1", "p2", "p3")
    try:
        v = parse_verdict(text, evidence)
    except UnparseableVerdict:
        return
    assert v.decision in ("novel", "not_novel")
    assert v.rationale
    assert set(v.cited_paper_ids) <= {"p1", "p2", "p3"}


# ---------------------------------------------------------------- judge calls


def _verdict_rule(marker: str = "KILL") -> dict:
    return {"behavior": "verdict_on_marker", "marker": marker}


def test_judge_novelty_clean_call():
    papers = _papers("p1", "p2")
    papers["p2"] = Paper(
        paper_id="p2",
        title="Title p2",
        abstract="Abstract with KILL mark.",
        provenance=frozenset({"keyword"}),
    )
    gw = _gateway([_verdict_rule()])
    verdict, used = judge_novelty(
        IDEA, _evidence("p1", "p2"), papers, [_example(1)], CFG, gw
    )
    assert verdict.decision == "not_novel"
    assert verdict.cited_paper_ids == ("p2",)
    assert used == ["e01"]


def test_judge_novelty_repair_round():
    rules = [
        {
            "if_contains": "Answer in exactly two lines",
            "behavior": "text",
            "text": "DECISION: novel\nRATIONALE: After reformatting, nothing overlaps [1].",
        },
        {"behavior": "text", "text": "Well, it depends on many things."},
    ]
    gw = _gateway(rules)
    verdict, _ = judge_novelty(
        IDEA, _evidence("p1"), _papers("p1"), [], CFG, gw
    )
    assert verdict.decision == "novel"
    assert len(gw.transcript) == 2


def test_judge_novelty_repair_exhausted():
    gw = _gateway([{"behavior": "text", "text": "no structure here"}])
    with pytest.raises(UnparseableVerdict):
        judge_novelty(IDEA, _evidence("p1"), _papers("p1"), [], CFG, gw)
    assert len(gw.transcript) == 1 + CFG.judge_repair_attempts


def test_judge_novelty_context_overflow_drops_examples():
    calls = {"n": 0}

    class Overflowing:
        def complete(self, request):
            calls["n"] += 1
            if "### Example 3" in request.joined_text():
                from novelty_checker.errors import ContextOverflow

                raise ContextOverflow("too long")
            from novelty_checker.gateway import ChatResponse

            return ChatResponse(
                text="DECISION: novel\nRATIONALE: Fits after shrinking [1].",
                model=request.model,
            )

    gw = LlmGateway(Overflowing(), MockEmbeddings(dim=8), sleep=lambda s: None)
    examples = [_example(i) for i in range(1, 5)]
    verdict, used = judge_novelty(
        IDEA, _evidence("p1"), _papers("p1"), examples, CFG, gw
    )
    assert verdict.decision == "novel"
    # two examples fell off the tail before the prompt fit
    assert used == ["e01", "e02"]
    assert calls["n"] == 3


# -------------------------------------------------------------------- reports


def test_report_requires_cited_within_evidence():
    from novelty_checker.domain import Verdict

    verdict = Verdict(
        decision="novel", rationale="ok", cited_paper_ids=("stranger",)
    )
    with pytest.raises(ValidationError):
        NoveltyReport(
            idea_id=IDEA.id,
            verdict=verdict,
            evidence=_evidence("p1"),
            trace=(),
            config_snapshot=CFG,
            paper_titles={"p1": "Title p1"},
        )


def test_report_to_dict_shape():
    from novelty_checker.domain import Verdict

    verdict = Verdict(decision="novel", rationale="ok [1]", cited_paper_ids=("p1",))
    report = NoveltyReport(
        idea_id=IDEA.id,
        verdict=verdict,
        evidence=_evidence("p1"),
        trace=({"stage": "judge", "digest": "d"},),
        config_snapshot=CFG,
        paper_titles={"p1": "Title p1"},
    )
    doc = report_to_dict(report, generated_at="2026-01-01T00:00:00Z")
    assert doc["decision"] == "novel"
    assert doc["cited_papers"] == [{"paper_id": "p1", "title": "Title p1"}]
    assert doc["generated_at"] == "2026-01-01T00:00:00Z"
    assert doc["trace"]["stages"][0]["stage"] == "judge"
    assert doc["config"]["k"] == CFG.k
