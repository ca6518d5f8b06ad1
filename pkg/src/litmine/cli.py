"""Command-line front end.

Subcommand groups mirror the pipeline stages: ``query`` (gen / validate /
ensemble), ``corpus`` (build / stats / validate), ``eval``, ``extract``,
``workbench`` (serve plus headless mirrors of every endpoint), and
``pipeline run``. The default backend is the deterministic offline model;
``--backend openai`` targets any OpenAI-compatible server with the key in
an environment variable.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import evaluation, pipeline
from .extraction import (
    DEFAULT_CHARACTERISTIC_FIELDS,
    FieldSpec,
    GroupDef,
    ValueKind,
    extract_arm_design,
    extract_participant_statistics,
    extract_study_characteristics,
    extract_trial_results,
    prepare_document,
)
from .gateway import LlmGateway, MockBackend, OpenAiChatBackend, OpenAiEmbeddingBackend, RetryPolicy
from .offline import OfflineModel, offline_gateway
from .query import (
    Dialect,
    ensemble_search,
    generate_search_query,
    parse_query,
    serialize_query,
    validate_query,
    write_query_file,
)
from .registry import FixtureRegistryClient, FixtureStore
from .screening import PICO
from .workbench import WorkbenchService


def _build_gateway(backend: str, base_url: str, model: str, key_env: str,
                   mock_fixtures: str | None) -> LlmGateway:
    if backend == "offline":
        return offline_gateway()
    if backend == "mock":
        return LlmGateway(
            MockBackend(responders=[OfflineModel()], fixtures_dir=mock_fixtures),
            retry=RetryPolicy(sleeper=lambda _s: None),
        )
    chat = OpenAiChatBackend(base_url, model, api_key=os.environ.get(key_env))
    embed = OpenAiEmbeddingBackend(base_url, model, api_key=os.environ.get(key_env))
    return LlmGateway(chat, embed)


def _load_pico(path: str) -> PICO:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return PICO(**data)


def _fixture_client(fixtures: str) -> FixtureRegistryClient:
    return FixtureRegistryClient(FixtureStore.load(fixtures))


def _publication_client(fixtures: str | None, registry_config: str | None):
    if registry_config:
        from .registry import registry_from_config

        publications, _trials = registry_from_config(registry_config)
        return publications
    if not fixtures:
        raise click.ClickException("pass --fixtures DIR or --registry-config FILE")
    return _fixture_client(fixtures)


backend_options = [
    click.option("--backend", type=click.Choice(["offline", "mock", "openai"]), default="offline",
                 show_default=True),
    click.option("--base-url", default="https://api.openai.com/v1", show_default=True),
    click.option("--model", default="gpt-4o", show_default=True),
    click.option("--key-env", default="LLM_API_KEY", show_default=True,
                 help="environment variable holding the API key"),
    click.option("--mock-fixtures", default=None, help="fixture dir for the mock backend"),
]


def with_backend(fn):
    for option in reversed(backend_options):
        fn = option(fn)
    return fn


@click.group()
def main() -> None:
    """Medical literature mining pipeline."""


# ---------------------------------------------------------------------------
# query
# ---------------------------------------------------------------------------


@main.group()
def query() -> None:
    """Boolean search query generation and validation."""


@query.command("gen")
@click.option("--pico-file", required=True, help="JSON file with PICO fields")
@click.option("--out", default="-", help="output file (- for stdout)")
@click.option("--dialect", type=click.Choice([d.value for d in Dialect]), default="fixture")
@with_backend
def query_gen(pico_file: str, out: str, dialect: str, backend: str, base_url: str,
              model: str, key_env: str, mock_fixtures: str | None) -> None:
    gateway = _build_gateway(backend, base_url, model, key_env, mock_fixtures)
    bundle = generate_search_query(_load_pico(pico_file), gateway)
    text = serialize_query(bundle.final_query, Dialect(dialect))
    if out == "-":
        click.echo(text)
    else:
        write_query_file(out, [bundle], Dialect(dialect))
        click.echo(f"wrote {out}")


@query.command("validate")
@click.option("--query-text", required=True)
@click.option("--fixtures", default=None, help="fixture corpus directory")
@click.option("--registry-config", default=None, help="JSON registry config (live mode opt-in)")
@click.option("--truth", required=True, help="comma-separated ground-truth citation ids")
@click.option("--threshold", default=0.2, show_default=True)
def query_validate(query_text: str, fixtures: str | None, registry_config: str | None,
                   truth: str, threshold: float) -> None:
    client = _publication_client(fixtures, registry_config)
    ast = parse_query(query_text, Dialect.FIXTURE)
    from .query import QueryBundle, Provenance, And

    # wrap a bare query so validate_query can execute it
    bundle = QueryBundle(ast, ast, And((ast, ast)), Provenance.LLM_GENERATED)
    verdict = validate_query(bundle, set(truth.split(",")), client, threshold=threshold)
    click.echo(json.dumps({"accepted": verdict.accepted, "recall": verdict.recall,
                           "retrieved": verdict.retrieved}))
    sys.exit(0 if verdict.accepted else 1)


@query.command("ensemble")
@click.option("--pico-file", required=True)
@click.option("--fixtures", default=None)
@click.option("--registry-config", default=None, help="JSON registry config (live mode opt-in)")
@click.option("--runs", default=10, show_default=True)
@click.option("--truth", default=None, help="comma-separated ground-truth ids")
@with_backend
def query_ensemble(pico_file: str, fixtures: str | None, registry_config: str | None, runs: int,
                   truth: str | None, backend: str, base_url: str, model: str, key_env: str,
                   mock_fixtures: str | None) -> None:
    gateway = _build_gateway(backend, base_url, model, key_env, mock_fixtures)
    client = _publication_client(fixtures, registry_config)
    ground_truth = set(truth.split(",")) if truth else None
    result = ensemble_search(_load_pico(pico_file), gateway, client, runs=runs,
                             ground_truth=ground_truth)
    click.echo(json.dumps({
        "ids": list(result.ids),
        "union_recall": result.union_recall,
        "failed_runs": result.failed_runs,
        "per_run_recall": [r.recall for r in result.runs],
    }, indent=2))


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


@main.group()
def corpus() -> None:
    """Instruction-corpus building and validation."""


@corpus.command("build")
@click.option("--fixtures", required=True)
@click.option("--out", required=True)
@click.option("--seed", default=pipeline.GOLDEN_SPLIT_SEED, show_default=True)
@click.option("--pool-capacity", default=pipeline.GOLDEN_POOL_CAPACITY, show_default=True)
def corpus_build(fixtures: str, out: str, seed: int, pool_capacity: int) -> None:
    result = pipeline.run_fixture_pipeline(fixtures, out, pool_capacity=pool_capacity,
                                           split_seed=seed)
    click.echo(json.dumps(result.summary, indent=2, sort_keys=True))


@corpus.command("stats")
@click.option("--corpus-dir", required=True)
def corpus_stats_cmd(corpus_dir: str) -> None:
    click.echo(json.dumps(corpus_mod.corpus_stats(corpus_dir), indent=2, sort_keys=True))


@corpus.command("validate")
@click.option("--corpus-dir", required=True)
def corpus_validate_cmd(corpus_dir: str) -> None:
    problems = corpus_mod.validate_corpus(corpus_dir)
    if problems:
        for problem in problems:
            click.echo(f"PROBLEM: {problem}", err=True)
        sys.exit(1)
    click.echo("corpus valid")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@main.group(name="eval")
def eval_group() -> None:
    """Metrics over ranked lists and extraction records."""


@eval_group.command("recall")
@click.option("--ranked-file", required=True, help="JSON file: {review_id: [ids...]}")
@click.option("--truth-file", required=True, help="JSON file: {review_id: [ids...]}")
@click.option("--k", default="auto", help='top-K (integer or "auto")')
def eval_recall(ranked_file: str, truth_file: str, k: str) -> None:
    ranked = json.loads(Path(ranked_file).read_text(encoding="utf-8"))
    truth = json.loads(Path(truth_file).read_text(encoding="utf-8"))
    k_value: object = "auto" if k == "auto" else int(k)
    out = {}
    for review_id in sorted(truth):
        out[review_id] = evaluation.recall_at_k(
            ranked.get(review_id, []), set(truth[review_id]), k_value
        )
    out["__mean__"] = sum(out.values()) / len(out) if out else 0.0
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@eval_group.command("extraction")
@click.option("--pairs-file", required=True,
              help="JSON list of {citation_id, task, field, predicted, gold, kind}")
@click.option("--out-dir", default=None, help="write reports/ files here")
def eval_extraction(pairs_file: str, out_dir: str | None) -> None:
    pairs = json.loads(Path(pairs_file).read_text(encoding="utf-8"))
    predictions = [
        evaluation.FieldPrediction(p["citation_id"], p["task"], p["field"], p["predicted"],
                                   p["gold"])
        for p in pairs
    ]
    rules = {
        p["field"]: evaluation.MatchRule(evaluation.MatchKind(p["kind"])) for p in pairs
    }
    report = evaluation.evaluate_extraction(predictions, rules, offline_gateway())
    if out_dir:
        evaluation.write_report(report, out_dir)
    click.echo(json.dumps({"accuracy": report.aggregate, "count": report.count}, indent=2))


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------


@main.group()
def extract() -> None:
    """Run one extraction task against a fixture citation."""


def _document(fixtures: str, citation_id: str):
    client = _fixture_client(fixtures)
    fetch = client.fetch_citations([citation_id])
    if fetch.unresolved:
        raise click.ClickException(f"unknown citation {citation_id}")
    return prepare_document(fetch.citations[0]), client


@extract.command("characteristics")
@click.option("--fixtures", required=True)
@click.option("--citation", required=True)
@click.option("--fields", default=None,
              help='JSON list of {"name","value_kind","description"}; default standard set')
@with_backend
def extract_characteristics(fixtures: str, citation: str, fields: str | None, backend: str,
                            base_url: str, model: str, key_env: str,
                            mock_fixtures: str | None) -> None:
    gateway = _build_gateway(backend, base_url, model, key_env, mock_fixtures)
    doc, _client = _document(fixtures, citation)
    specs = DEFAULT_CHARACTERISTIC_FIELDS
    if fields:
        specs = [FieldSpec(f["name"], ValueKind(f["value_kind"]), f.get("description", ""))
                 for f in json.loads(fields)]
    record = extract_study_characteristics(doc, specs, gateway)
    click.echo(json.dumps(record.values, indent=2, sort_keys=True))


@extract.command("arms")
@click.option("--fixtures", required=True)
@click.option("--citation", required=True)
@with_backend
def extract_arms(fixtures: str, citation: str, backend: str, base_url: str, model: str,
                 key_env: str, mock_fixtures: str | None) -> None:
    gateway = _build_gateway(backend, base_url, model, key_env, mock_fixtures)
    doc, _client = _document(fixtures, citation)
    design = extract_arm_design(doc, gateway)
    click.echo(json.dumps([arm.__dict__ | {"intervention_names": list(arm.intervention_names)}
                           for arm in design.arms], indent=2))


@extract.command("participants")
@click.option("--fixtures", required=True)
@click.option("--citation", required=True)
@click.option("--measure", required=True)
@click.option("--parameter-type", default="COUNT", show_default=True)
@click.option("--unit", default="participants", show_default=True)
@click.option("--groups", required=True, help='JSON list of {"group_id","definition"}')
@with_backend
def extract_participants(fixtures: str, citation: str, measure: str, parameter_type: str,
                         unit: str, groups: str, backend: str, base_url: str, model: str,
                         key_env: str, mock_fixtures: str | None) -> None:
    gateway = _build_gateway(backend, base_url, model, key_env, mock_fixtures)
    doc, _client = _document(fixtures, citation)
    group_defs = [GroupDef(g["group_id"], g.get("definition", "")) for g in json.loads(groups)]
    record = extract_participant_statistics(doc, measure, parameter_type, unit, group_defs, gateway)
    click.echo(json.dumps([r.__dict__ for r in record.results], indent=2))


@extract.command("results")
@click.option("--fixtures", required=True)
@click.option("--citation", required=True)
@click.option("--outcome", required=True)
@click.option("--group", required=True)
@click.option("--parameter-type", default="MEAN", show_default=True)
@click.option("--unit", default="points", show_default=True)
@click.option("--timeframe", default="", show_default=True)
@click.option("--denominator-unit", default="participants", show_default=True)
@click.option("--denominator-value", default=None, type=float)
@with_backend
def extract_results(fixtures: str, citation: str, outcome: str, group: str, parameter_type: str,
                    unit: str, timeframe: str, denominator_unit: str,
                    denominator_value: float | None, backend: str, base_url: str, model: str,
                    key_env: str, mock_fixtures: str | None) -> None:
    gateway = _build_gateway(backend, base_url, model, key_env, mock_fixtures)
    doc, _client = _document(fixtures, citation)
    record = extract_trial_results(doc, outcome, group, parameter_type, unit, timeframe,
                                   denominator_unit, denominator_value, gateway)
    click.echo(json.dumps([r.__dict__ for r in record.results], indent=2))


# ---------------------------------------------------------------------------
# workbench
# ---------------------------------------------------------------------------


@main.group()
def workbench() -> None:
    """Human-in-the-loop review workbench."""


@workbench.command("serve")
@click.option("--storage", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8400, show_default=True)
def workbench_serve(storage: str, host: str, port: int) -> None:
    import uvicorn

    from .webapi import create_app

    uvicorn.run(create_app(WorkbenchService(storage)), host=host, port=port)


@workbench.command("create-project")
@click.option("--storage", required=True)
@click.option("--config-file", required=True)
def workbench_create(storage: str, config_file: str) -> None:
    service = WorkbenchService(storage)
    config = json.loads(Path(config_file).read_text(encoding="utf-8"))
    click.echo(json.dumps(service.create_project(config), indent=2, sort_keys=True))


@workbench.command("assign-arms")
@click.option("--storage", required=True)
@click.option("--project", required=True)
@click.option("--seed", default=0, show_default=True)
def workbench_assign(storage: str, project: str, seed: int) -> None:
    service = WorkbenchService(storage)
    click.echo(json.dumps(service.assign_arms(project, seed), indent=2, sort_keys=True))


@workbench.command("open-screening")
@click.option("--storage", required=True)
@click.option("--project", required=True)
@click.option("--review", required=True)
@click.option("--participant", required=True)
@click.option("--seed", default=0, show_default=True)
def workbench_open_screening(storage: str, project: str, review: str, participant: str,
                             seed: int) -> None:
    service = WorkbenchService(storage)
    click.echo(json.dumps(service.open_screening_session(project, review, participant, seed),
                          indent=2, sort_keys=True))


@workbench.command("submit-decisions")
@click.option("--storage", required=True)
@click.option("--project", required=True)
@click.option("--session", required=True)
@click.option("--decisions-file", required=True,
              help='JSON list of {"citation_id","verdict"}')
@click.option("--partial", is_flag=True)
def workbench_submit(storage: str, project: str, session: str, decisions_file: str,
                     partial: bool) -> None:
    service = WorkbenchService(storage)
    decisions = json.loads(Path(decisions_file).read_text(encoding="utf-8"))
    click.echo(json.dumps(service.submit_decisions(project, session, decisions, partial),
                          indent=2, sort_keys=True))


@workbench.command("report")
@click.option("--storage", required=True)
@click.option("--project", required=True)
@click.option("--csv", "csv_path", default=None, help="also export the comparison CSV here")
def workbench_report(storage: str, project: str, csv_path: str | None) -> None:
    service = WorkbenchService(storage)
    report = service.report_arm_comparison(project)
    if csv_path:
        service.export_arm_comparison_csv(project, csv_path)
    click.echo(json.dumps(report, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@main.group(name="pipeline")
def pipeline_group() -> None:
    """End-to-end offline runs."""


@pipeline_group.command("run")
@click.option("--fixtures", required=True)
@click.option("--out", required=True)
@click.option("--seed", default=pipeline.GOLDEN_SPLIT_SEED, show_default=True)
@click.option("--pool-capacity", default=pipeline.GOLDEN_POOL_CAPACITY, show_default=True)
def pipeline_run(fixtures: str, out: str, seed: int, pool_capacity: int) -> None:
    result = pipeline.run_fixture_pipeline(fixtures, out, pool_capacity=pool_capacity,
                                           split_seed=seed)
    click.echo(json.dumps(result.summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
