"""Command-line entry point wiring corpus, evaluation, and the session service."""
from __future__ import annotations

import hashlib
import json
import logging
import sys

import click

from . import __version__
from .backend import (
    Backend,
    EchoBackend,
    GtIndex,
    HttpLlmClient,
    RemoteBackend,
    RemoteConfig,
    ReplayBackend,
    ReplayLlm,
    iou_threshold_oracle,
    perfect_oracle,
)
from .corpus import (
    Diagnostic,
    PartitionPolicy,
    ingest_detection,
    ingest_ocr,
    ingest_vqa,
    generate_region_chat,
    load_contexts,
    load_seeds,
    partition,
    read_records,
    write_records,
)
from .errors import (
    BackendError,
    ConfigError,
    GenerationError,
    ProtocolError,
    RecordError,
    SpotkitError,
    TransportError,
)
from .evalkit import (
    EvalPolicy,
    REGION_SOURCE_BOXES,
    REGION_SOURCE_GT,
    eval_regional_classification,
    eval_text_task,
    hallucination_ratio,
    robustness_sweep,
    trigram_fallback_embedder,
    write_report,
)
from .instructgen import Task, TemplateRegistry

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRANSPORT = 3

_SECRET_KEYS = {"token"}


def config_fingerprint(config: dict) -> str:
    """Stable hash of the canonicalized config; secrets never enter the hash."""

    def scrub(value):
        if isinstance(value, dict):
            return {k: scrub(v) for k, v in sorted(value.items()) if k not in _SECRET_KEYS}
        if isinstance(value, (list, tuple)):
            return [scrub(v) for v in value]
        return value

    canon = json.dumps(scrub(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _registry(templates_path: str | None) -> TemplateRegistry:
    if templates_path:
        return TemplateRegistry.from_file(templates_path)
    return TemplateRegistry.default()


def _build_backend(kind: str, records, *, tau: float, fixture: str | None) -> Backend:
    if kind == "mock-perfect":
        return perfect_oracle(GtIndex.from_records(records))
    if kind == "mock-iou":
        return iou_threshold_oracle(GtIndex.from_records(records), tau)
    if kind == "echo":
        return EchoBackend()
    if kind == "replay":
        if not fixture:
            raise ConfigError("--backend replay needs --fixture")
        return ReplayBackend(fixture)
    if kind == "remote":
        return RemoteBackend(RemoteConfig.from_env())
    raise ConfigError(f"unknown backend kind {kind!r}")


def _print_diagnostics(diagnostics: list[Diagnostic]) -> None:
    if not diagnostics:
        return
    by_reason: dict[str, int] = {}
    for d in diagnostics:
        by_reason[d.reason] = by_reason.get(d.reason, 0) + 1
    click.echo(f"skipped {len(diagnostics)} item(s):", err=True)
    for reason, count in sorted(by_reason.items()):
        click.echo(f"  {count:>6}  {reason}", err=True)


@click.group()
@click.version_option(version=__version__, prog_name="spotkit")
def cli() -> None:
    """Region-referring instruction toolkit."""


@cli.command("convert")
@click.option("--kind", "source_kind", type=click.Choice(["detection", "ocr", "vqa"]), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--output", "output_path", type=click.Path(dir_okay=False), required=True)
@click.option("--limit", type=int, default=None, help="Deterministically sample down to N records.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--referent", type=click.Choice(["none", "box", "point"]), default="none", show_default=True)
@click.option("--source", "source_name", default=None, help="Source tag stored on records.")
@click.option("--templates", "templates_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--eval-split", is_flag=True, help="Mark every emitted record split=eval.")
def cmd_convert(source_kind, input_path, output_path, limit, seed, referent, source_name, templates_path, eval_split):
    """Convert an annotation file into unified instruction records."""
    registry = _registry(templates_path)
    diagnostics: list[Diagnostic] = []
    task_for_kind = {
        "detection": Task.region_class,
        "ocr": Task.region_ocr,
        "vqa": Task.vqa if referent == "none" else Task.region_vqa,
    }
    pool = registry.pool(task_for_kind[source_kind])
    if source_kind == "detection":
        records = ingest_detection(
            input_path, pool, limit, source=source_name, seed=seed, diagnostics=diagnostics
        )
    elif source_kind == "ocr":
        records = ingest_ocr(input_path, pool, source=source_name, diagnostics=diagnostics)
    else:
        records = ingest_vqa(
            input_path, pool, referent, source=source_name, diagnostics=diagnostics
        )
    if eval_split and records:
        policy = PartitionPolicy(eval_sources=frozenset({records[0].source}))
        records = partition(records, policy)
    config = {
        "command": "convert",
        "kind": source_kind,
        "input": str(input_path),
        "limit": limit,
        "seed": seed,
        "referent": referent,
        "source": source_name,
        "templates": str(templates_path) if templates_path else "default",
        "eval_split": bool(eval_split),
    }
    meta = {"config_fingerprint": config_fingerprint(config), "tool_version": __version__}
    count = write_records(records, output_path, meta=meta)
    _print_diagnostics(diagnostics)
    click.echo(f"wrote {count} record(s) to {output_path}")


_BACKEND_CHOICES = click.Choice(["mock-perfect", "mock-iou", "echo", "replay", "remote"])


def _eval_options(fn):
    fn = click.option("--records", "records_path", type=click.Path(exists=True, dir_okay=False), required=True)(fn)
    fn = click.option("--backend", "backend_kind", type=_BACKEND_CHOICES, default="mock-perfect", show_default=True)(fn)
    fn = click.option("--tau", type=float, default=0.5, show_default=True, help="IoU threshold for mock-iou.")(fn)
    fn = click.option("--fixture", type=click.Path(exists=True, dir_okay=False), default=None, help="Replay fixture file.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)(fn)
    fn = click.option("--workers", type=int, default=8, show_default=True)(fn)
    fn = click.option("--no-figures", is_flag=True, help="Skip PNG rendering.")(fn)
    return fn


def _policy(task, records_path, backend_kind, tau, fixture, workers, **extra) -> EvalPolicy:
    config = {
        "command": extra.pop("command"),
        "task": task,
        "records": str(records_path),
        "backend": backend_kind,
        "tau": tau,
        "fixture": str(fixture) if fixture else None,
        "workers": workers,
        **extra,
    }
    return EvalPolicy(
        workers=workers,
        word_boundary=extra.get("word_boundary", False),
        exclude_failed=extra.get("exclude_failed", False),
        config_fingerprint=config_fingerprint(config),
    )


@cli.command("evaluate")
@click.option("--task", type=click.Choice([t.value for t in (Task.region_class, Task.region_ocr, Task.vqa, Task.region_vqa)]), required=True)
@click.option("--region-source", type=click.Choice([REGION_SOURCE_GT, REGION_SOURCE_BOXES]), default=REGION_SOURCE_GT, show_default=True)
@click.option("--boxes", "boxes_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Detector boxes file (region-source=external_boxes_file).")
@click.option("--word-boundary", is_flag=True, help="Require whole-token answer containment.")
@click.option("--exclude-failed", is_flag=True, help="Drop failed backend calls from denominators.")
@_eval_options
def cmd_evaluate(task, region_source, boxes_path, word_boundary, exclude_failed, records_path, backend_kind, tau, fixture, out_dir, workers, no_figures):
    """Evaluate one task; classification, OCR and VQA share this command."""
    records = read_records(records_path)
    backend = _build_backend(backend_kind, records, tau=tau, fixture=fixture)
    policy = _policy(
        task, records_path, backend_kind, tau, fixture, workers,
        command="evaluate", region_source=region_source,
        boxes=str(boxes_path) if boxes_path else None,
        word_boundary=word_boundary, exclude_failed=exclude_failed,
    )
    if task == Task.region_class.value:
        report = eval_regional_classification(
            records, region_source, backend, trigram_fallback_embedder(),
            boxes_file=boxes_path, policy=policy,
        )
    else:
        report = eval_text_task(records, backend, policy=policy)
    paths = write_report(report, out_dir, figures=not no_figures)
    click.echo(f"report written to {paths['report']}")


@cli.command("robustness")
@click.option("--scales", default="0,0.1,0.2,0.3", show_default=True, help="Comma-separated noise scales.")
@click.option("--seeds", default="10", show_default=True, help="Seed count N (seeds 0..N-1) or comma-separated list.")
@_eval_options
def cmd_robustness(scales, seeds, records_path, backend_kind, tau, fixture, out_dir, workers, no_figures):
    """Box-noise robustness sweep over the given scales."""
    records = read_records(records_path)
    backend = _build_backend(backend_kind, records, tau=tau, fixture=fixture)
    scale_values = [float(s) for s in scales.split(",") if s.strip() != ""]
    seed_values = (
        [int(s) for s in seeds.split(",")] if "," in seeds else list(range(int(seeds)))
    )
    policy = _policy(
        "robustness", records_path, backend_kind, tau, fixture, workers,
        command="robustness", scales=scale_values, seeds=seed_values,
    )
    report = robustness_sweep(
        records, scale_values, seed_values, backend,
        embedder=trigram_fallback_embedder(), policy=policy,
    )
    paths = write_report(report, out_dir, figures=not no_figures)
    click.echo(f"report written to {paths['report']}")


@cli.command("hallucination")
@click.option("--denominator", type=click.Choice(["all", "errors"]), default="all", show_default=True)
@_eval_options
def cmd_hallucination(denominator, records_path, backend_kind, tau, fixture, out_dir, workers, no_figures):
    """Region-referring hallucination ratio on a classification corpus."""
    records = read_records(records_path)
    backend = _build_backend(backend_kind, records, tau=tau, fixture=fixture)
    policy = _policy(
        "hallucination", records_path, backend_kind, tau, fixture, workers,
        command="hallucination", denominator=denominator,
    )
    report = eval_regional_classification(
        records, REGION_SOURCE_GT, backend, trigram_fallback_embedder(), policy=policy
    )
    ratio = hallucination_ratio(
        report.outcomes, GtIndex.from_records(records), denominator=denominator
    )
    from dataclasses import replace as _replace

    report = _replace(report, hallucination_ratio=ratio)
    paths = write_report(report, out_dir, figures=not no_figures)
    click.echo(f"hallucination ratio: {ratio:.4f}")
    click.echo(f"report written to {paths['report']}")


@cli.command("genchat")
@click.option("--contexts", "contexts_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--seeds", "seeds_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--llm", "llm_kind", type=click.Choice(["replay", "http"]), default="replay", show_default=True)
@click.option("--fixture", type=click.Path(exists=True, dir_okay=False), default=None, help="Replay fixture for --llm replay.")
@click.option("--rounds", type=int, default=3, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True, help="Parallel generations (per-image).")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), required=True)
def cmd_genchat(contexts_path, seeds_path, llm_kind, fixture, rounds, workers, output_path):
    """Generate region-grounded chat records from dense caption contexts."""
    from concurrent.futures import ThreadPoolExecutor

    contexts = load_contexts(contexts_path)
    seeds = load_seeds(seeds_path)
    if llm_kind == "replay":
        if not fixture:
            raise ConfigError("--llm replay needs --fixture")
        llm = ReplayLlm(fixture)
    else:
        llm = HttpLlmClient(RemoteConfig.from_env())

    def generate(context):
        try:
            return generate_region_chat(context, seeds, llm, rounds), None
        except GenerationError as exc:
            return None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(generate, contexts))  # output keeps input order
    else:
        results = [generate(c) for c in contexts]
    records = []
    rejected = 0
    for context, (record, err) in zip(contexts, results):
        if record is not None:
            records.append(record)
        else:
            rejected += 1
            log.warning("generation failed for %s: %s", context.image.uri, err)
    config = {
        "command": "genchat",
        "contexts": str(contexts_path),
        "seeds": str(seeds_path),
        "llm": llm_kind,
        "fixture": str(fixture) if fixture else None,
        "rounds": rounds,
        "workers": workers,
    }
    meta = {"config_fingerprint": config_fingerprint(config), "tool_version": __version__}
    count = write_records(records, output_path, meta=meta)
    click.echo(f"accepted {count} dialogue(s), rejected {rejected}")
    if rejected and not count:
        raise GenerationError("every context was rejected")


@cli.command("serve")
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--backend", "backend_kind", type=click.Choice(["echo", "remote", "replay"]), default="echo", show_default=True)
@click.option("--fixture", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--db", "db_path", default=":memory:", show_default=True, help="Session store path.")
@click.option("--history-window", type=int, default=20, show_default=True)
def cmd_serve(port, host, backend_kind, fixture, db_path, history_window):
    """Run the interactive session HTTP API."""
    import uvicorn

    from .service import create_app
    from .session import SessionService, SessionStore

    backend = _build_backend(backend_kind, [], tau=0.5, fixture=fixture)
    service = SessionService(SessionStore(db_path), backend, history_window=history_window)
    app = create_app(service)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except OSError as exc:
        raise TransportError(f"cannot bind {host}:{port}: {exc}")


def main(argv=None) -> int:
    """Entry point with the documented exit codes (0 ok, 1 usage, 2 data, 3 transport)."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except (TransportError, ProtocolError, BackendError) as exc:
        click.echo(f"transport error: {exc}", err=True)
        return EXIT_TRANSPORT
    except (RecordError, ConfigError, GenerationError, SpotkitError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
