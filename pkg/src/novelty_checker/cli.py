"""Command-line interface.

Every command is a thin client of the HTTP service. Without --server the
service app is mounted in-process, so offline runs never open a socket;
with --server the same requests go to a remote instance. Exit codes: 0
success, 2 pipeline or provider failure, 3 configuration problem, 4 bad
input data.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from .client import ServiceClient
from .domain import DatasetRecord, iter_dataset, pretty_json
from .errors import ConfigError, DatasetError, NoveltyCheckerError, ValidationError
from .evaluation import (
    VARIANTS,
    render_ablation_text,
    render_eval_text,
    validate_eval_records,
)
from .judge import render_markdown
from .service import create_app
from .settings import load_settings

logger = logging.getLogger(__name__)


def _service_options(fn):
    fn = click.option(
        "--config", "config_path", type=click.Path(), default=None,
        help="TOML file with pipeline settings.",
    )(fn)
    fn = click.option(
        "--cache-dir", type=click.Path(), default=None,
        help="Provider cache directory (default ./.novelty-cache).",
    )(fn)
    fn = click.option(
        "--mock", "mock_dir", type=click.Path(), default=None,
        help="Fixture directory with mock.json and s2.json; run fully offline.",
    )(fn)
    fn = click.option(
        "--live", is_flag=True, default=False,
        help="Use real provider endpoints (requires env credentials).",
    )(fn)
    fn = click.option(
        "--server", default=None, metavar="URL",
        help="Talk to a running service instead of running in-process.",
    )(fn)
    fn = click.option("--log-level", default=None, help="Logging level (default INFO).")(fn)
    return fn


def _make_client(config_path, cache_dir, mock_dir, live, server, log_level) -> ServiceClient:
    level = (log_level or "INFO").upper()
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if level != "DEBUG":
        # httpx logs every request at INFO, which swamps the useful output
        logging.getLogger("httpx").setLevel(logging.WARNING)
    if server is not None:
        conflicting = {
            "--config": config_path,
            "--cache-dir": cache_dir,
            "--mock": mock_dir,
            "--live": live or None,
        }
        bad = [flag for flag, value in conflicting.items() if value]
        if bad:
            raise ConfigError(
                f"{', '.join(bad)} configure the server side and cannot be "
                "combined with --server"
            )
        return ServiceClient(base_url=server)
    settings = load_settings(
        config_path,
        overrides={
            "cache_dir": cache_dir,
            "mock_dir": mock_dir,
            "live": live or None,
        },
    )
    return ServiceClient(app=create_app(settings))


def _read_idea_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"idea file not found: {path}")
    return p.read_text(encoding="utf-8")


def _read_json_doc(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path} is not valid JSON: {exc.msg}")


def _idea_payload(text: str, idea_id, seeds, excludes) -> dict:
    return {
        "idea_text": text,
        "idea_id": idea_id,
        "seed_paper_ids": list(seeds),
        "exclusion_ids": list(excludes),
    }


def _load_records(path: str) -> list[tuple[int, dict]]:
    numbered = list(iter_dataset(path))
    return [
        (line, {
            "id": rec.id,
            "idea_text": rec.idea_text,
            "seed_paper_ids": list(rec.seed_paper_ids),
            "top_papers": [dict(p) for p in rec.top_papers],
            "label": rec.label,
            "rationale": rec.rationale,
        })
        for line, rec in numbered
    ]


def _write_doc(out: Optional[str], doc: dict, fmt: str = "json") -> None:
    if out is None:
        return
    text = render_markdown(doc) if fmt == "md" else pretty_json(doc)
    Path(out).write_text(text, encoding="utf-8")


def _echo_decision(doc: dict) -> None:
    click.echo("not novel" if doc["decision"] == "not_novel" else "novel")


@click.group()
def cli():
    """Assess the novelty of research ideas against the literature."""


@cli.command()
@click.option("--idea", "idea_path", required=True, help="Idea text file, or - for stdin.")
@click.option("--idea-id", default=None, help="Stable id for the idea (default: text hash).")
@click.option("--seed", "seeds", multiple=True, help="Seed paper id (repeatable).")
@click.option("--exclude", "excludes", multiple=True, help="Paper id to drop from the pool (repeatable).")
@click.option("--out", type=click.Path(), default=None, help="Write the report here.")
@click.option("--format", "fmt", type=click.Choice(["json", "md"]), default="json")
@_service_options
def check(idea_path, idea_id, seeds, excludes, out, fmt, **svc):
    """Run the full pipeline on one idea and print the decision."""
    client = _make_client(**svc)
    doc = client.check(_idea_payload(_read_idea_text(idea_path), idea_id, seeds, excludes))
    _echo_decision(doc)
    _write_doc(out, doc, fmt)


@cli.command()
@click.option("--idea", "idea_path", required=True, help="Idea text file, or - for stdin.")
@click.option("--idea-id", default=None)
@click.option("--seed", "seeds", multiple=True)
@click.option("--exclude", "excludes", multiple=True)
@click.option("--sources", default=None, help="Comma-separated subset of seed,recommendation,keyword,snippet.")
@click.option("--out", type=click.Path(), required=True, help="Write the candidate pool here.")
@_service_options
def retrieve(idea_path, idea_id, seeds, excludes, sources, out, **svc):
    """Gather and deduplicate the candidate pool; write it as JSON."""
    client = _make_client(**svc)
    source_list = [s.strip() for s in sources.split(",")] if sources else None
    doc = client.retrieve(
        _idea_payload(_read_idea_text(idea_path), idea_id, seeds, excludes),
        sources=source_list,
    )
    _write_doc(out, doc)
    click.echo(f"pool of {len(doc['papers'])} papers written to {out}")


@cli.command()
@click.option("--idea", "idea_path", required=True, help="Idea text file, or - for stdin.")
@click.option("--idea-id", default=None)
@click.option("--pool", "pool_path", required=True, type=click.Path(), help="Pool file from retrieve.")
@click.option("--mode", type=click.Choice(["facet", "relevance"]), default="facet")
@click.option("--out", type=click.Path(), required=True, help="Write the ranked lists here.")
@_service_options
def rerank(idea_path, idea_id, pool_path, mode, out, **svc):
    """Filter and rerank a stored pool; write the ranked lists as JSON."""
    client = _make_client(**svc)
    pool_doc = _read_json_doc(pool_path)
    doc = client.rerank(
        _idea_payload(_read_idea_text(idea_path), idea_id, (), ()),
        pool_doc,
        mode=mode,
    )
    _write_doc(out, doc)
    click.echo(f"top {len(doc['ranked']['entries'])} ranking written to {out}")


@cli.command()
@click.option("--idea", "idea_path", required=True, help="Idea text file, or - for stdin.")
@click.option("--idea-id", default=None)
@click.option("--pool", "pool_path", required=True, type=click.Path())
@click.option("--ranked", "ranked_path", required=True, type=click.Path(), help="Ranked file from rerank.")
@click.option("--out", type=click.Path(), default=None, help="Write the report here.")
@click.option("--format", "fmt", type=click.Choice(["json", "md"]), default="json")
@_service_options
def judge(idea_path, idea_id, pool_path, ranked_path, out, fmt, **svc):
    """Judge a stored ranking and print the decision."""
    client = _make_client(**svc)
    doc = client.judge(
        _idea_payload(_read_idea_text(idea_path), idea_id, (), ()),
        _read_json_doc(pool_path),
        _read_json_doc(ranked_path),
    )
    _echo_decision(doc)
    _write_doc(out, doc, fmt)


@cli.command("eval")
@click.option("--data", "data_path", required=True, type=click.Path(), help="Labeled JSONL dataset.")
@click.option("--fixed-papers", is_flag=True, default=False,
              help="Judge each record's stored top_papers instead of retrieving.")
@click.option("--out", type=click.Path(), default=None, help="Write the metric report here.")
@_service_options
def eval_cmd(data_path, fixed_papers, out, **svc):
    """Score pipeline predictions against gold labels."""
    client = _make_client(**svc)
    numbered = _load_records(data_path)
    _validate_numbered(numbered, fixed_papers)
    report = client.eval([rec for _, rec in numbered], fixed_papers=fixed_papers)
    click.echo(render_eval_text(report), nl=False)
    _write_doc(out, report)


@cli.command()
@click.option("--data", "data_path", required=True, type=click.Path(), help="Labeled JSONL dataset.")
@click.option("--variants", default=None,
              help=f"Comma-separated subset of {','.join(VARIANTS)} (default all).")
@click.option("--out", type=click.Path(), default=None, help="Write the ablation report here.")
@_service_options
def ablate(data_path, variants, out, **svc):
    """Run the pipeline variants over a dataset and compare them."""
    client = _make_client(**svc)
    numbered = _load_records(data_path)
    _validate_numbered(numbered, fixed_papers=False)
    names = None
    if variants:
        names = [v.strip() for v in variants.split(",") if v.strip()]
        unknown = [v for v in names if v not in VARIANTS]
        if unknown:
            raise ConfigError(
                f"unknown variants: {', '.join(unknown)}; choose from {', '.join(VARIANTS)}"
            )
    report = client.ablate([rec for _, rec in numbered], variants=names)
    click.echo(render_ablation_text(report), nl=False)
    _write_doc(out, report)


def _validate_numbered(numbered: list[tuple[int, dict]], fixed_papers: bool) -> None:
    pairs = [
        (line, DatasetRecord(
            id=rec["id"],
            idea_text=rec["idea_text"],
            seed_paper_ids=tuple(rec["seed_paper_ids"]),
            top_papers=tuple(rec["top_papers"]),
            label=rec["label"],
            rationale=rec["rationale"],
        ))
        for line, rec in numbered
    ]
    validate_eval_records(pairs, fixed_papers)


@cli.group()
def cache():
    """Inspect or clear the provider cache."""


@cache.command("stats")
@_service_options
def cache_stats(**svc):
    """Print cache location, entry count, and size."""
    client = _make_client(**svc)
    stats = client.cache_stats()
    click.echo(f"{stats['path']}: {stats['entries']} entries, {stats['bytes']} bytes")


@cache.command("clear")
@_service_options
def cache_clear(**svc):
    """Delete every cache entry."""
    client = _make_client(**svc)
    result = client.cache_clear()
    click.echo(f"removed {result['removed']} entries")


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8100)
@_service_options
def serve(host, port, **svc):
    """Run the HTTP service."""
    import uvicorn

    if svc.get("server"):
        raise ConfigError("serve starts a server; --server makes no sense here")
    settings = load_settings(
        svc.get("config_path"),
        overrides={
            "cache_dir": svc.get("cache_dir"),
            "mock_dir": svc.get("mock_dir"),
            "live": svc.get("live") or None,
        },
    )
    uvicorn.run(create_app(settings), host=host, port=port, log_level=(svc.get("log_level") or "info").lower())


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.Abort:
        click.echo("aborted", err=True)
        return 3
    except click.ClickException as exc:
        exc.show()
        return 3
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except (DatasetError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 4
    except NoveltyCheckerError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
