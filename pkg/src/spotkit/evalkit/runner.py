"""Evaluation protocols: regional classification, text tasks, robustness, hallucination."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from .. import __version__ as _tool_version
from ..backend import Backend, BackendRequest, GtIndex
from ..corpus import InstructionRecord
from ..errors import BackendError, ConfigError, MetricError, RecordError
from ..geometry import Region, RegionKind, box_area_px, enclosing_box, iou, normalize_region, perturb_box
from ..instructgen import Task, render_conversation
from .ap import ApTable, Detection, GtBox, compute_ap
from .matching import CategoryMatcher, Embedder, contains_answer

log = logging.getLogger(__name__)

REGION_SOURCE_GT = "gt"
REGION_SOURCE_BOXES = "external_boxes_file"


@dataclass(frozen=True)
class EvalOutcome:
    """One query's verdict: what was asked, what came back, how it was judged."""

    record_id: str
    image_uri: str
    queried_region: Region | None
    gt_class: str | None
    gt_answer: str | None
    response_text: str
    matched_class: str | None
    match_score: float
    correct: bool
    hallucination: bool = False
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "image_uri": self.image_uri,
            "queried_region": self.queried_region.to_dict() if self.queried_region else None,
            "gt_class": self.gt_class,
            "gt_answer": self.gt_answer,
            "response_text": self.response_text,
            "matched_class": self.matched_class,
            "match_score": self.match_score,
            "correct": self.correct,
            "hallucination": self.hallucination,
            "failed": self.failed,
        }


@dataclass(frozen=True)
class EvalReport:
    """Aggregated metrics for one evaluation run."""

    task: str
    source: str
    backend_id: str
    ap_table: ApTable | None = None
    accuracy: float | None = None
    robustness_curve: tuple[tuple[float, float], ...] | None = None
    robustness_hallucination: tuple[tuple[float, float], ...] | None = None
    hallucination_ratio: float | None = None
    detail_file: str | None = None
    config_fingerprint: str = ""
    tool_version: str = _tool_version
    outcomes: tuple[EvalOutcome, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.robustness_curve:
            scales = [s for s, _ in self.robustness_curve]
            if scales[0] != 0.0 or any(a >= b for a, b in zip(scales, scales[1:])):
                raise ConfigError(f"robustness scales must start at 0 and increase: {scales}")

    def to_dict(self) -> dict:
        d: dict = {
            "task": self.task,
            "source": self.source,
            "backend_id": self.backend_id,
            "metrics": self.ap_table.to_dict() if self.ap_table else {"accuracy": self.accuracy},
        }
        if self.robustness_curve is not None:
            d["robustness_curve"] = [[s, a] for s, a in self.robustness_curve]
        if self.robustness_hallucination is not None:
            d["robustness_hallucination"] = [[s, h] for s, h in self.robustness_hallucination]
        if self.hallucination_ratio is not None:
            d["hallucination_ratio"] = self.hallucination_ratio
        d["detail_file"] = self.detail_file
        d["config_fingerprint"] = self.config_fingerprint
        d["tool_version"] = self.tool_version
        return d


@dataclass(frozen=True)
class EvalPolicy:
    """Evaluation knobs that change how outcomes are judged or aggregated."""

    exclude_failed: bool = False  # default: failed backend calls count as incorrect
    word_boundary: bool = False
    categories: tuple[str, ...] | None = None
    workers: int = 8
    hallucination_denominator: str = "all"  # or "errors"
    config_fingerprint: str = ""


def _require_task(records: Sequence[InstructionRecord], allowed: set[Task]) -> Task:
    if not records:
        raise RecordError("no records to evaluate")
    tasks = {r.task for r in records}
    if len(tasks) > 1:
        raise RecordError(f"records mix tasks {sorted(t.value for t in tasks)}")
    task = tasks.pop()
    if task not in allowed:
        raise RecordError(f"task {task.value} not valid here (expected {sorted(t.value for t in allowed)})")
    return task


def _request_for(record: InstructionRecord, region: Region | None = None) -> BackendRequest:
    rec = record if region is None else replace(record, regions=(region,) + record.regions[1:])
    return BackendRequest(
        image_uri=rec.image.uri, dims=rec.image.dims, turns=tuple(render_conversation(rec))
    )


def _fan_out(
    backend: Backend, requests: Sequence[BackendRequest], workers: int
) -> list[tuple[str, BackendError | None]]:
    """Query the backend concurrently; results come back in request order."""

    def one(req: BackendRequest) -> tuple[str, BackendError | None]:
        try:
            return backend.complete(req).text, None
        except BackendError as exc:
            return "", exc

    if workers <= 1 or len(requests) <= 1:
        return [one(r) for r in requests]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, requests))


def derive_seed(record_id: str, sweep_seed: int) -> int:
    """Stable per-record noise seed for a sweep seed."""
    digest = hashlib.sha256(f"{record_id}:{sweep_seed}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _category_vocabulary(records: Sequence[InstructionRecord]) -> list[str]:
    cats: set[str] = set()
    for r in records:
        gt = r.ground_truth
        if gt is None:
            continue
        if gt.class_label:
            cats.add(gt.class_label)
        for obj in gt.all_objects or ():
            cats.add(obj.category)
    if not cats:
        raise RecordError("records carry no category labels")
    return sorted(cats)


def _is_hallucination(
    matched: str | None, gt_class: str | None, queried: Region | None, objects
) -> bool:
    if matched is None or gt_class is None or queried is None or matched == gt_class:
        return False
    queried_box = enclosing_box(queried)
    for category, box in objects:
        if category == matched and iou(enclosing_box(box), queried_box) > 0.5:
            return True
    return False


def _classify_records(
    records: Sequence[InstructionRecord],
    regions: Sequence[Region],
    backend: Backend,
    matcher: CategoryMatcher,
    policy: EvalPolicy,
) -> list[EvalOutcome]:
    """Query one region per record and judge the responses."""
    requests = [_request_for(rec, region) for rec, region in zip(records, regions)]
    results = _fan_out(backend, requests, policy.workers)
    outcomes: list[EvalOutcome] = []
    for record, region, (text, err) in zip(records, regions, results):
        gt = record.ground_truth
        gt_class = gt.class_label if gt else None
        objects = tuple((o.category, o.box) for o in gt.all_objects) if gt and gt.all_objects else ()
        if err is not None:
            log.warning("backend failed for %s: %s", record.id, err)
            outcomes.append(
                EvalOutcome(
                    record_id=record.id,
                    image_uri=record.image.uri,
                    queried_region=region,
                    gt_class=gt_class,
                    gt_answer=None,
                    response_text="",
                    matched_class=None,
                    match_score=0.0,
                    correct=False,
                    failed=True,
                )
            )
            continue
        matched, score = matcher.match(text)
        correct = matched == gt_class
        outcomes.append(
            EvalOutcome(
                record_id=record.id,
                image_uri=record.image.uri,
                queried_region=region,
                gt_class=gt_class,
                gt_answer=None,
                response_text=text,
                matched_class=matched,
                match_score=score,
                correct=correct,
                hallucination=_is_hallucination(matched, gt_class, region, objects),
            )
        )
    return outcomes


def _accuracy(outcomes: Sequence[EvalOutcome], policy: EvalPolicy) -> float | None:
    pool = [o for o in outcomes if not (policy.exclude_failed and o.failed)]
    if not pool:
        return None
    return sum(1 for o in pool if o.correct) / len(pool)


def _load_external_boxes(path, dims_by_uri: dict) -> list[tuple[str, Region, float]]:
    """Read detector outputs: JSON lines {image_id, bbox [x,y,w,h] px, score}."""
    out: list[tuple[str, Region, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                image_id = str(row["image_id"])
                dims = dims_by_uri.get(image_id)
                if dims is None:
                    continue  # detector box for an image outside the evaluated corpus
                x, y, w, h = (float(v) for v in row["bbox"])
                region = normalize_region([(x, y), (x + w, y + h)], RegionKind.box, dims)
                out.append((image_id, region, float(row.get("score", 0.0))))
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordError(f"invalid detector box: {exc}", line=line_no)
    return out


def eval_regional_classification(
    records: Sequence[InstructionRecord],
    region_source: str,
    backend: Backend,
    embedder: Embedder,
    *,
    boxes_file=None,
    policy: EvalPolicy = EvalPolicy(),
) -> EvalReport:
    """Zero-shot region recognition: query each region, match classes, compute AP.

    ``region_source="gt"`` queries every record's own box and also reports plain
    accuracy; ``region_source="external_boxes_file"`` queries detector boxes
    from ``boxes_file`` instead (no accuracy, AP only). Ground truth for AP is
    the evaluated records' instances; detection scores are the matcher cosine
    (backend confidence is not collected here, the mocks embed certainty in text).
    """
    _require_task(records, {Task.region_class})
    for r in records:
        if r.ground_truth is None or r.ground_truth.class_label is None:
            raise RecordError(f"record {r.id}: classification eval needs ground truth")
    categories = list(policy.categories) if policy.categories else _category_vocabulary(records)
    matcher = CategoryMatcher(embedder, categories)

    gts = [
        GtBox(
            image_id=r.image.uri,
            box=r.regions[0],
            category=r.ground_truth.class_label,
            area_px=box_area_px(enclosing_box(r.regions[0]), r.image.dims),
        )
        for r in records
    ]

    if region_source == REGION_SOURCE_GT:
        outcomes = _classify_records(
            records, [r.regions[0] for r in records], backend, matcher, policy
        )
        detections = [
            Detection(o.image_uri, o.queried_region, o.matched_class, o.match_score)
            for o in outcomes
            if not o.failed
        ]
        accuracy = _accuracy(outcomes, policy)
    elif region_source == REGION_SOURCE_BOXES:
        if boxes_file is None:
            raise ConfigError("region_source=external_boxes_file needs boxes_file")
        record_by_uri: dict[str, InstructionRecord] = {}
        for r in records:
            record_by_uri.setdefault(r.image.uri, r)
        dims_by_uri = {uri: r.image.dims for uri, r in record_by_uri.items()}
        boxes = _load_external_boxes(boxes_file, dims_by_uri)
        scaffold = [record_by_uri[uri] for uri, _, _ in boxes]
        outcomes = _classify_records(
            scaffold, [region for _, region, _ in boxes], backend, matcher, policy
        )
        # Re-judge against the best-overlapping evaluated instance, if any.
        gt_by_image: dict[str, list[GtBox]] = {}
        for g in gts:
            gt_by_image.setdefault(g.image_id, []).append(g)
        rejudged = []
        for o in outcomes:
            candidates = gt_by_image.get(o.image_uri, [])
            best = max(candidates, key=lambda g: iou(g.box, o.queried_region), default=None)
            gt_class = (
                best.category if best is not None and iou(best.box, o.queried_region) >= 0.5 else None
            )
            rejudged.append(
                replace(o, gt_class=gt_class, correct=(o.matched_class == gt_class and gt_class is not None))
            )
        outcomes = rejudged
        detections = [
            Detection(o.image_uri, o.queried_region, o.matched_class, o.match_score)
            for o in outcomes
            if not o.failed
        ]
        accuracy = None
    else:
        raise ConfigError(f"unknown region_source {region_source!r}")

    table = compute_ap(detections, gts)
    ratio = None
    if all(r.ground_truth.all_objects is not None for r in records):
        ratio = hallucination_ratio(
            outcomes, GtIndex.from_records(records), denominator=policy.hallucination_denominator
        )
    return EvalReport(
        task=Task.region_class.value,
        source=records[0].source,
        backend_id=backend.id,
        ap_table=replace(table, accuracy=accuracy),
        accuracy=accuracy,
        hallucination_ratio=ratio,
        config_fingerprint=policy.config_fingerprint,
        outcomes=tuple(outcomes),
    )


def _text_outcomes(
    records: Sequence[InstructionRecord],
    regions: Sequence[Region | None],
    backend: Backend,
    policy: EvalPolicy,
) -> list[EvalOutcome]:
    requests = []
    for record, region in zip(records, regions):
        requests.append(_request_for(record, region))
    results = _fan_out(backend, requests, policy.workers)
    outcomes: list[EvalOutcome] = []
    for record, region, (text, err) in zip(records, regions, results):
        answer = record.ground_truth.answer
        if err is not None:
            log.warning("backend failed for %s: %s", record.id, err)
            outcomes.append(
                EvalOutcome(
                    record_id=record.id,
                    image_uri=record.image.uri,
                    queried_region=region,
                    gt_class=None,
                    gt_answer=answer,
                    response_text="",
                    matched_class=None,
                    match_score=0.0,
                    correct=False,
                    failed=True,
                )
            )
            continue
        correct = contains_answer(text, answer, word_boundary=policy.word_boundary)
        outcomes.append(
            EvalOutcome(
                record_id=record.id,
                image_uri=record.image.uri,
                queried_region=region,
                gt_class=None,
                gt_answer=answer,
                response_text=text,
                matched_class=None,
                match_score=1.0 if correct else 0.0,
                correct=correct,
            )
        )
    return outcomes


def eval_text_task(
    records: Sequence[InstructionRecord],
    backend: Backend,
    *,
    policy: EvalPolicy = EvalPolicy(),
) -> EvalReport:
    """OCR / VQA accuracy by answer containment."""
    task = _require_task(records, {Task.region_ocr, Task.vqa, Task.region_vqa})
    for r in records:
        if r.ground_truth is None or r.ground_truth.answer is None:
            raise RecordError(f"record {r.id}: text eval needs a ground-truth answer")
    regions = [r.regions[0] if r.regions else None for r in records]
    outcomes = _text_outcomes(records, regions, backend, policy)
    return EvalReport(
        task=task.value,
        source=records[0].source,
        backend_id=backend.id,
        accuracy=_accuracy(outcomes, policy),
        config_fingerprint=policy.config_fingerprint,
        outcomes=tuple(outcomes),
    )


def _evaluate_for_sweep(
    task: Task,
    records: Sequence[InstructionRecord],
    regions: Sequence[Region],
    backend: Backend,
    matcher: CategoryMatcher | None,
    policy: EvalPolicy,
) -> list[EvalOutcome]:
    if task is Task.region_class:
        return _classify_records(records, regions, backend, matcher, policy)
    return _text_outcomes(records, regions, backend, policy)


def robustness_sweep(
    records: Sequence[InstructionRecord],
    scales: Sequence[float],
    seeds: Sequence[int],
    backend: Backend,
    embedder: Embedder | None = None,
    *,
    policy: EvalPolicy = EvalPolicy(),
) -> EvalReport:
    """Re-run the task evaluation with noised query boxes at each scale.

    Per-record noise seeds derive from (record id, sweep seed); per-scale
    accuracy is the pooled fraction of correct outcomes over all sweep seeds.
    Scale 0 runs the evaluation exactly once with untouched regions, so its row
    is bit-identical to the plain evaluation.
    """
    task = _require_task(records, {Task.region_class, Task.region_ocr, Task.region_vqa})
    if not scales or scales[0] != 0.0:
        raise ConfigError(f"scales must start at 0, got {list(scales)}")
    if not seeds:
        raise ConfigError("at least one sweep seed is required")
    matcher = None
    track_hallucination = False
    if task is Task.region_class:
        if embedder is None:
            raise ConfigError("classification sweep needs an embedder")
        categories = list(policy.categories) if policy.categories else _category_vocabulary(records)
        matcher = CategoryMatcher(embedder, categories)
        track_hallucination = all(
            r.ground_truth is not None and r.ground_truth.all_objects is not None for r in records
        )
    base_regions = [enclosing_box(r.regions[0]) for r in records]

    curve: list[tuple[float, float]] = []
    halluc_curve: list[tuple[float, float]] = []
    baseline: tuple[EvalOutcome, ...] = ()
    for scale in scales:
        if scale == 0.0:
            runs = [
                _evaluate_for_sweep(task, records, [r.regions[0] for r in records], backend, matcher, policy)
            ]
            baseline = tuple(runs[0])
        else:
            runs = []
            for seed in seeds:
                perturbed = [
                    perturb_box(base, scale, derive_seed(rec.id, seed))
                    for rec, base in zip(records, base_regions)
                ]
                runs.append(
                    _evaluate_for_sweep(task, records, perturbed, backend, matcher, policy)
                )
        pooled = [o for run in runs for o in run if not (policy.exclude_failed and o.failed)]
        accuracy = sum(1 for o in pooled if o.correct) / len(pooled) if pooled else 0.0
        curve.append((float(scale), accuracy))
        if track_hallucination:
            ratio = sum(1 for o in pooled if o.hallucination) / len(pooled) if pooled else 0.0
            halluc_curve.append((float(scale), ratio))

    return EvalReport(
        task=task.value,
        source=records[0].source,
        backend_id=backend.id,
        accuracy=curve[0][1],
        robustness_curve=tuple(curve),
        robustness_hallucination=tuple(halluc_curve) if track_hallucination else None,
        config_fingerprint=policy.config_fingerprint,
        outcomes=baseline,
    )


def hallucination_ratio(
    outcomes: Sequence[EvalOutcome], gt_index: GtIndex, *, denominator: str = "all"
) -> float:
    """Fraction of queries misread as a different object overlapping the region.

    An outcome counts when its matched class differs from the ground truth and
    some other object of the matched class overlaps the queried region at
    IoU > 0.5. Denominator is all outcomes by default; ``denominator="errors"``
    divides by misclassifications only.
    """
    if denominator not in ("all", "errors"):
        raise ConfigError(f"unknown denominator {denominator!r}")
    if not outcomes:
        return 0.0
    hits = 0
    errors = 0
    for o in outcomes:
        entry = gt_index.get(o.image_uri)
        if entry is None or not entry.objects:
            raise MetricError(
                f"hallucination ratio needs the full object list for image {o.image_uri!r}"
            )
        if o.matched_class is not None and not o.correct:
            errors += 1
        if _is_hallucination(o.matched_class, o.gt_class, o.queried_region, entry.objects):
            hits += 1
    denom = len(outcomes) if denominator == "all" else errors
    return hits / denom if denom else 0.0
