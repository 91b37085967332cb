from __future__ import annotations

import json

import httpx
import pytest

from fixture_corpus import QUERY_RULE_KEY
from novelty_checker.domain import PipelineConfig, validate_idea
from novelty_checker.errors import (
    EmptyPool,
    HostError,
    MalformedQueryResponse,
    QuotaExceeded,
)
from novelty_checker.gateway import LlmGateway, MockChat, MockEmbeddings
from novelty_checker.retrieval import (
    ALL_SOURCES,
    S2Client,
    SourceResult,
    assemble_pool,
    fetch_seed_papers,
    generate_queries,
    keyword_search,
    make_mock_s2_transport,
    raw_source_order,
    recommend_from_seeds,
    retrieve_pool,
    snippet_search,
    truncate_words,
)

IDEA = validate_idea("An idea about staged retrieval. [sim:1.0]", idea_id="idea-r")
CFG = PipelineConfig()


def _gateway(rules) -> LlmGateway:
    return LlmGateway(MockChat(rules), MockEmbeddings(dim=8), sleep=lambda s: None)


def _wire(pid: str, abstract: str = "An abstract.", **kw) -> dict:
    rec = {"paperId": pid, "title": f"Title {pid}", "abstract": abstract, "year": 2023}
    rec.update(kw)
    return rec


def _s2(cassette: dict, tmp_path, **kw) -> S2Client:
    path = tmp_path / "s2.json"
    path.write_text(json.dumps(cassette), encoding="utf-8")
    transport = make_mock_s2_transport(path)
    client = httpx.Client(transport=transport, base_url="http://offline.invalid")
    kw.setdefault("sleep", lambda s: None)
    return S2Client(base_url="http://offline.invalid", client=client, **kw)


# ------------------------------------------------------------ query generation


def _query_json() -> str:
    return json.dumps({"keywords": ["alpha", "beta"], "titles": ["Gamma title"]})


def test_generate_queries_parses_clean_json():
    gw = _gateway([{"if_contains": QUERY_RULE_KEY, "behavior": "text", "text": _query_json()}])
    qs = generate_queries(IDEA, CFG, gw)
    assert qs.keyword_queries == ("alpha", "beta")
    assert qs.title_queries == ("Gamma title",)
    assert qs.all() == ["alpha", "beta", "Gamma title"]


def test_generate_queries_accepts_json_wrapped_in_prose():
    text = "Here you go:\n```json\n" + _query_json() + "\n```\nanything else"
    gw = _gateway([{"if_contains": QUERY_RULE_KEY, "behavior": "text", "text": text}])
    assert len(generate_queries(IDEA, CFG, gw)) == 3


def test_generate_queries_repair_round():
    rules = [
        {
            "if_contains": "Respond with only the JSON object.",
            "behavior": "text",
            "text": _query_json(),
        },
        {"if_contains": QUERY_RULE_KEY, "behavior": "text", "text": "not json at all"},
    ]
    gw = _gateway(rules)
    qs = generate_queries(IDEA, CFG, gw)
    assert qs.keyword_queries == ("alpha", "beta")
    # two chat calls: the broken reply plus the repair
    assert len(gw.transcript) == 2


def test_generate_queries_gives_up_after_repair():
    gw = _gateway([{"behavior": "text", "text": "still not json"}])
    with pytest.raises(MalformedQueryResponse):
        generate_queries(IDEA, CFG, gw)


def test_generate_queries_dedup_and_truncation():
    payload = json.dumps(
        {
            "keywords": [" alpha ", "ALPHA", "beta", "gamma", "delta"],
            "titles": ["Beta", "epsilon", "zeta", "eta"],
        }
    )
    gw = _gateway([{"behavior": "text", "text": payload}])
    cfg = PipelineConfig(max_queries=5)
    qs = generate_queries(IDEA, cfg, gw)
    assert qs.keyword_queries == ("alpha", "beta", "gamma", "delta")
    # keywords fill their slots first; titles get what remains
    assert qs.title_queries == ("epsilon",)
    assert len(qs) == 5


# ------------------------------------------------------------------ s2 client


def test_keyword_search_drops_records_without_abstract(tmp_path):
    cassette = {
        "search": {
            "q": [_wire("p1"), _wire("p2", abstract=""), _wire("p3", abstract=None)]
        }
    }
    s2 = _s2(cassette, tmp_path)
    result = keyword_search(s2, "q", limit=10)
    assert [p.paper_id for p in result.papers] == ["p1"]
    assert result.source == "keyword"
    assert result.query_echo == "q"


def test_search_retries_then_quota_error(tmp_path):
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        return httpx.Response(429, json={"message": "slow down"})

    client = httpx.Client(
        transport=httpx.MockTransport(handler), base_url="http://offline.invalid"
    )
    s2 = S2Client(base_url="http://offline.invalid", client=client, sleep=lambda s: None)
    with pytest.raises(QuotaExceeded):
        s2.search("q", 5)
    assert calls["n"] == 4


def test_search_4xx_fails_without_retry(tmp_path):
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        return httpx.Response(400, text="bad request")

    client = httpx.Client(
        transport=httpx.MockTransport(handler), base_url="http://offline.invalid"
    )
    s2 = S2Client(base_url="http://offline.invalid", client=client, sleep=lambda s: None)
    with pytest.raises(HostError):
        s2.search("q", 5)
    assert calls["n"] == 1


def test_truncate_words_caps_at_500():
    text = " ".join(f"w{i}" for i in range(600))
    out = truncate_words(text)
    assert len(out.split()) == 500
    short = "just a few words"
    assert truncate_words(short) == short


def test_snippet_search_collapses_duplicate_papers(tmp_path):
    idea_text = "short idea"
    cassette = {
        "snippet": {
            idea_text: [
                {"snippet": "first", "paper": _wire("pA")},
                {"snippet": "second", "paper": _wire("pB")},
                {"snippet": "third", "paper": _wire("pA")},
            ]
        }
    }
    s2 = _s2(cassette, tmp_path)
    result = snippet_search(s2, idea_text, limit=10)
    assert [p.paper_id for p in result.papers] == ["pa", "pb"]


def test_recommendations_round_robin_merge(tmp_path):
    cassette = {
        "recommendations": {
            "s1": [_wire("a1"), _wire("a2"), _wire("a3")],
            "s2": [_wire("b1"), _wire("a1"), _wire("b2")],
        }
    }
    s2 = _s2(cassette, tmp_path)
    result = recommend_from_seeds(s2, ["s1", "s2"], limit=10)
    assert [p.paper_id for p in result.papers] == ["a1", "b1", "a2", "a3", "b2"]


def test_recommendations_skip_failing_seed(tmp_path):
    cassette = {"recommendations": {"good": [_wire("g1")]}}
    s2 = _s2(cassette, tmp_path, retries=0)
    result = recommend_from_seeds(s2, ["missing", "good"], limit=10)
    assert [p.paper_id for p in result.papers] == ["g1"]


def test_recommendations_all_seeds_failing_raises(tmp_path):
    s2 = _s2({"recommendations": {}}, tmp_path, retries=0)
    with pytest.raises(HostError):
        recommend_from_seeds(s2, ["m1", "m2"], limit=10)


def test_fetch_seed_papers_skips_missing_and_abstractless(tmp_path):
    cassette = {"papers": {"ok": _wire("ok"), "bare": _wire("bare", abstract="")}}
    s2 = _s2(cassette, tmp_path, retries=0)
    result = fetch_seed_papers(s2, ["ok", "bare", "gone"])
    assert [p.paper_id for p in result.papers] == ["ok"]
    assert result.source == "seed"


# ----------------------------------------------------------------------- pool


def _result(source: str, *pids: str) -> SourceResult:
    from novelty_checker.domain import Paper

    papers = tuple(
        Paper(
            paper_id=pid,
            title=f"T {pid}",
            abstract=f"A {pid}.",
            provenance=frozenset({source}),
        )
        for pid in pids
    )
    return SourceResult(source=source, papers=papers)


def test_assemble_pool_merges_provenance():
    pool = assemble_pool(
        IDEA, [_result("seed", "x"), _result("keyword", "x", "y")]
    )
    assert pool.ids() == ["x", "y"]
    assert pool.by_id()["x"].provenance == frozenset({"seed", "keyword"})
    assert pool.source_counts == {"seed": 1, "keyword": 2}


def test_assemble_pool_applies_exclusions():
    idea = validate_idea("text", exclusions=["y"], idea_id="idea-e")
    pool = assemble_pool(idea, [_result("keyword", "x", "y")])
    assert pool.ids() == ["x"]


def test_assemble_pool_empty_raises():
    with pytest.raises(EmptyPool):
        assemble_pool(IDEA, [SourceResult(source="keyword", papers=())])


def test_raw_source_order_round_robins_queries():
    first = _result("keyword", "a", "b")
    second = _result("keyword", "c", "a")
    other = _result("snippet", "z")
    merged = raw_source_order([first, second, other], "keyword")
    assert [p.paper_id for p in merged] == ["a", "c", "b"]


# ------------------------------------------------------------- full retrieval


def test_retrieve_pool_over_demo_corpus(demo_corpus):
    root, info = demo_corpus
    from novelty_checker.gateway import load_mock_providers

    chat, emb = load_mock_providers(root)
    gw = LlmGateway(chat, emb, sleep=lambda s: None)
    client = httpx.Client(
        transport=make_mock_s2_transport(root / "s2.json"),
        base_url="http://offline.invalid",
    )
    s2 = S2Client(base_url="http://offline.invalid", client=client, sleep=lambda s: None)
    idea = validate_idea(info["idea_text"], seeds=info["seeds"])
    queries, results, pool = retrieve_pool(idea, CFG, gw, s2, ALL_SOURCES)
    assert len(queries) == 4
    assert {r.source for r in results} == set(ALL_SOURCES)
    # seeds always survive into the pool
    assert set(info["seeds"]) <= set(pool.ids())
    assert sum(pool.source_counts.values()) >= len(pool.ids())


def test_retrieve_pool_single_source(demo_corpus):
    root, info = demo_corpus
    from novelty_checker.gateway import load_mock_providers

    chat, emb = load_mock_providers(root)
    gw = LlmGateway(chat, emb, sleep=lambda s: None)
    client = httpx.Client(
        transport=make_mock_s2_transport(root / "s2.json"),
        base_url="http://offline.invalid",
    )
    s2 = S2Client(base_url="http://offline.invalid", client=client, sleep=lambda s: None)
    idea = validate_idea(info["idea_text"], seeds=info["seeds"])
    _, results, pool = retrieve_pool(idea, CFG, gw, s2, ("snippet",))
    assert {r.source for r in results} == {"snippet"}
    assert all(p.provenance == frozenset({"snippet"}) for p in pool.papers)
