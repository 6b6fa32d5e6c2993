"""Unified instruction-corpus construction.

Ingests detection / OCR / VQA annotation files into one record schema, drives
an external text LLM to synthesize region-grounded chats, partitions records
into training stages, and round-trips everything through line-delimited JSON.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import (
    ConfigError,
    GenerationError,
    RecordError,
    RegionParseError,
    SpotkitError,
)
from .geometry import ImageDims, Region, RegionKind, normalize_region
from .instructgen import (
    REGION_TASKS,
    Role,
    Style,
    Task,
    Template,
    Turn,
    expand_instruction_text,
    parse_region_tokens,
    region_slot,
    serialize_region,
)

log = logging.getLogger(__name__)

# Tolerance for matching LLM-cited coordinates against context boxes.
CHAT_COORD_TOLERANCE = 0.02
CHAT_MAX_ATTEMPTS = 3

_REGION_SLOT_SCAN = re.compile(r"<region:(\d+)>")


class Split(str, Enum):
    stage1 = "stage1"
    stage2 = "stage2"
    eval = "eval"


@dataclass(frozen=True)
class ImageRef:
    uri: str
    dims: ImageDims

    def to_dict(self) -> dict:
        return {"uri": self.uri, "dims": self.dims.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(uri=str(d["uri"]), dims=ImageDims.from_dict(d["dims"]))


@dataclass(frozen=True)
class GtObject:
    category: str
    box: Region

    def to_dict(self) -> dict:
        return {"category": self.category, "box": self.box.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GtObject":
        return cls(category=str(d["category"]), box=Region.from_dict(d["box"]))


@dataclass(frozen=True)
class GroundTruth:
    class_label: str | None = None
    answer: str | None = None
    all_objects: tuple[GtObject, ...] | None = None

    def to_dict(self) -> dict:
        d: dict = {}
        if self.class_label is not None:
            d["class_label"] = self.class_label
        if self.answer is not None:
            d["answer"] = self.answer
        if self.all_objects is not None:
            d["all_objects"] = [o.to_dict() for o in self.all_objects]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        objs = d.get("all_objects")
        return cls(
            class_label=d.get("class_label"),
            answer=d.get("answer"),
            all_objects=tuple(GtObject.from_dict(o) for o in objs) if objs is not None else None,
        )


@dataclass(frozen=True)
class InstructionRecord:
    """One instruction-following sample in the unified schema."""

    id: str
    image: ImageRef
    task: Task
    turns: tuple[Turn, ...]
    regions: tuple[Region, ...]
    style: Style
    source: str
    split: Split
    ground_truth: GroundTruth | None = None

    def to_dict(self) -> dict:
        d: dict = {
            "id": self.id,
            "image": self.image.to_dict(),
            "task": self.task.value,
            "turns": [t.to_dict() for t in self.turns],
            "regions": [r.to_dict() for r in self.regions],
            "style": self.style.value,
            "source": self.source,
            "split": self.split.value,
        }
        if self.ground_truth is not None:
            d["ground_truth"] = self.ground_truth.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionRecord":
        gt = d.get("ground_truth")
        return cls(
            id=str(d["id"]),
            image=ImageRef.from_dict(d["image"]),
            task=Task(d["task"]),
            turns=tuple(Turn.from_dict(t) for t in d["turns"]),
            regions=tuple(Region.from_dict(r) for r in d["regions"]),
            style=Style(d["style"]),
            source=str(d["source"]),
            split=Split(d["split"]),
            ground_truth=GroundTruth.from_dict(gt) if gt is not None else None,
        )


def validate_record(record: InstructionRecord) -> None:
    """Enforce every record invariant; raises RecordError on the first violation."""
    if not record.id:
        raise RecordError("record id must be non-empty")
    if not record.turns:
        raise RecordError(f"record {record.id}: no turns")
    for i, turn in enumerate(record.turns):
        expected = Role.user if i % 2 == 0 else Role.assistant
        if turn.role is not expected:
            raise RecordError(
                f"record {record.id}: turn {i} has role {turn.role.value}, "
                f"expected {expected.value} (user/assistant must alternate)"
            )
        for m in _REGION_SLOT_SCAN.finditer(turn.text):
            idx = int(m.group(1))
            if idx >= len(record.regions):
                raise RecordError(
                    f"record {record.id}: turn {i} cites {region_slot(idx)} but only "
                    f"{len(record.regions)} region(s) are defined"
                )
    if record.task in REGION_TASKS:
        if not record.regions:
            raise RecordError(f"record {record.id}: {record.task.value} record needs >= 1 region")
    else:
        if record.regions:
            raise RecordError(f"record {record.id}: {record.task.value} record cannot carry regions")
    if record.split is Split.stage1 and record.task in REGION_TASKS:
        raise RecordError(f"record {record.id}: stage1 split holds image-task records only")
    gt = record.ground_truth
    if gt is not None:
        if record.task is Task.region_class and (gt.class_label is None or gt.all_objects is None):
            raise RecordError(
                f"record {record.id}: region_class ground truth needs class_label and all_objects"
            )
        if record.task in (Task.region_ocr, Task.region_vqa, Task.vqa) and gt.answer is None:
            raise RecordError(f"record {record.id}: {record.task.value} ground truth needs an answer")


# ---------------------------------------------------------------------------
# Line-delimited record files


def write_records(
    records: Iterable[InstructionRecord], path, meta: Mapping | None = None
) -> int:
    """Write records as UTF-8 JSON lines; optional leading ``_meta`` line.

    Returns the number of records written. Output is byte-for-byte
    deterministic for a fixed record sequence and meta mapping.
    """
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": dict(meta)}, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_records(path) -> list[InstructionRecord]:
    """Read and fully validate a record file; rejects on the first bad line."""
    out: list[InstructionRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"invalid JSON: {exc}", line=line_no)
            if line_no == 1 and isinstance(data, dict) and "_meta" in data:
                continue
            try:
                record = InstructionRecord.from_dict(data)
                validate_record(record)
            except RecordError as exc:
                raise RecordError(str(exc), line=line_no)
            except (SpotkitError, KeyError, ValueError, TypeError) as exc:
                raise RecordError(f"invalid record: {exc}", line=line_no)
            out.append(record)
    return out


# ---------------------------------------------------------------------------
# Annotation ingestion


@dataclass(frozen=True)
class Diagnostic:
    """One skipped-item note from an ingest run."""

    source: str
    item: str
    reason: str


DiagnosticSink = Callable[[Diagnostic], None] | None


def _emit(diagnostics: list[Diagnostic] | None, diag: Diagnostic) -> None:
    if diagnostics is not None:
        diagnostics.append(diag)
    log.debug("skipped %s (%s): %s", diag.item, diag.source, diag.reason)


def _load_json_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise RecordError(f"{path}: not valid JSON: {exc}")


def _resolve_images(data: dict, source: str, diagnostics) -> dict:
    images: dict = {}
    for img in data.get("images", []):
        img_id = img.get("id")
        width, height = img.get("width"), img.get("height")
        if not isinstance(width, int) or not isinstance(height, int) or width < 1 or height < 1:
            _emit(diagnostics, Diagnostic(source, f"image {img_id}", "missing or invalid dims"))
            continue
        images[img_id] = ImageRef(
            uri=str(img.get("file_name", img_id)), dims=ImageDims(width, height)
        )
    return images


def _box_from_xywh(bbox: Sequence[float], dims: ImageDims) -> Region:
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise RecordError(f"degenerate bbox {bbox}")
    return normalize_region([(x, y), (x + w, y + h)], RegionKind.box, dims)


def _group_annotations(data: dict) -> dict:
    grouped: dict = {}
    for ann in data.get("annotations", []):
        grouped.setdefault(ann.get("image_id"), []).append(ann)
    return grouped


def _sample_records(
    records: list[InstructionRecord], limit: int | None, seed: int
) -> list[InstructionRecord]:
    if limit is None or len(records) <= limit:
        return records
    rng = random.Random(seed)
    keep = sorted(rng.sample(range(len(records)), limit))
    return [records[i] for i in keep]


def ingest_detection(
    annotation_file,
    template_pool: Sequence[Template],
    limit: int | None = None,
    *,
    source: str | None = None,
    seed: int = 0,
    diagnostics: list[Diagnostic] | None = None,
) -> list[InstructionRecord]:
    """Turn a detection annotation file into region-classification records.

    The input is the common detection interchange format: one JSON document
    with ``images`` (id, width, height, file_name), ``annotations`` (image_id,
    bbox [x, y, w, h] in pixels, category_id) and ``categories`` (id, name).
    Emits one record per valid (image, instance) pair, each carrying its class
    label and the image's full object list; bad instances are skipped with a
    diagnostic. When ``limit`` is set, records are down-sampled with a
    deterministic RNG seeded by ``seed``.
    """
    if not template_pool:
        raise ConfigError("ingest_detection needs a non-empty template pool")
    data = _load_json_file(annotation_file)
    source = source or Path(str(annotation_file)).stem
    images = _resolve_images(data, source, diagnostics)
    categories = {c.get("id"): str(c.get("name")) for c in data.get("categories", [])}
    grouped = _group_annotations(data)

    records: list[InstructionRecord] = []
    for img in data.get("images", []):
        img_id = img.get("id")
        image = images.get(img_id)
        anns = grouped.get(img_id, [])
        if image is None:
            for ann in anns:
                _emit(diagnostics, Diagnostic(source, f"annotation@image {img_id}", "missing image dims"))
            continue
        valid: list[tuple[dict, str, Region]] = []
        for ann in anns:
            cat = categories.get(ann.get("category_id"))
            item = f"annotation@{image.uri}"
            if cat is None:
                _emit(diagnostics, Diagnostic(source, item, f"unresolvable category id {ann.get('category_id')}"))
                continue
            try:
                region = _box_from_xywh(ann["bbox"], image.dims)
            except (SpotkitError, KeyError, TypeError, ValueError) as exc:
                _emit(diagnostics, Diagnostic(source, item, f"bad bbox: {exc}"))
                continue
            valid.append((ann, cat, region))
        all_objects = tuple(GtObject(category=cat, box=region) for _, cat, region in valid)
        for k, (_, cat, region) in enumerate(valid):
            template = template_pool[len(records) % len(template_pool)]
            text = expand_instruction_text(template)
            records.append(
                InstructionRecord(
                    id=f"{source}/{img_id}/{k}",
                    image=image,
                    task=Task.region_class,
                    turns=(Turn(Role.user, text),),
                    regions=(region,),
                    style=template.style,
                    source=source,
                    split=Split.stage2,
                    ground_truth=GroundTruth(class_label=cat, all_objects=all_objects),
                )
            )
    return _sample_records(records, limit, seed)


def ingest_ocr(
    annotation_file,
    template_pool: Sequence[Template],
    *,
    source: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> list[InstructionRecord]:
    """Turn an OCR annotation file into region text-reading records.

    Same envelope as detection, with per-annotation ``transcription`` (alias
    ``utf8_string``) and an optional ``legibility`` flag; illegible or empty
    transcriptions are skipped with diagnostics.
    """
    if not template_pool:
        raise ConfigError("ingest_ocr needs a non-empty template pool")
    data = _load_json_file(annotation_file)
    source = source or Path(str(annotation_file)).stem
    images = _resolve_images(data, source, diagnostics)
    grouped = _group_annotations(data)

    records: list[InstructionRecord] = []
    for img in data.get("images", []):
        img_id = img.get("id")
        image = images.get(img_id)
        anns = grouped.get(img_id, [])
        if image is None:
            for ann in anns:
                _emit(diagnostics, Diagnostic(source, f"annotation@image {img_id}", "missing image dims"))
            continue
        k = 0
        for ann in anns:
            item = f"annotation@{image.uri}"
            if str(ann.get("legibility", "legible")).lower() == "illegible":
                _emit(diagnostics, Diagnostic(source, item, "illegible instance"))
                continue
            text_gt = str(ann.get("transcription", ann.get("utf8_string", "")) or "").strip()
            if not text_gt:
                _emit(diagnostics, Diagnostic(source, item, "empty transcription"))
                continue
            try:
                region = _box_from_xywh(ann["bbox"], image.dims)
            except (SpotkitError, KeyError, TypeError, ValueError) as exc:
                _emit(diagnostics, Diagnostic(source, item, f"bad bbox: {exc}"))
                continue
            template = template_pool[len(records) % len(template_pool)]
            records.append(
                InstructionRecord(
                    id=f"{source}/{img_id}/{k}",
                    image=image,
                    task=Task.region_ocr,
                    turns=(Turn(Role.user, expand_instruction_text(template)),),
                    regions=(region,),
                    style=template.style,
                    source=source,
                    split=Split.stage2,
                    ground_truth=GroundTruth(answer=text_gt),
                )
            )
            k += 1
    return records


_VQA_REFERENTS = ("none", "box", "point")


def ingest_vqa(
    annotation_file,
    template_pool: Sequence[Template],
    referent: str = "none",
    *,
    source: str | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> list[InstructionRecord]:
    """Turn a question/answer file into (region-)VQA records.

    Input is JSON lines: ``{"image": {"uri", "width", "height"}, "question",
    "answer" | "answers", "box": [x1, y1, x2, y2], "point": [x, y]}`` with
    pixel coordinates. ``referent`` selects whether records are plain VQA or
    grounded on the given box/point; rows lacking the required referent are
    skipped with diagnostics.
    """
    if referent not in _VQA_REFERENTS:
        raise ConfigError(f"referent must be one of {_VQA_REFERENTS}, got {referent!r}")
    if not template_pool:
        raise ConfigError("ingest_vqa needs a non-empty template pool")
    source = source or Path(str(annotation_file)).stem
    task = Task.vqa if referent == "none" else Task.region_vqa

    records: list[InstructionRecord] = []
    with open(annotation_file, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"invalid JSON: {exc}", line=line_no)
            item = f"row {line_no}"
            try:
                img = row["image"]
                image = ImageRef(
                    uri=str(img["uri"]),
                    dims=ImageDims(int(img["width"]), int(img["height"])),
                )
                question = str(row["question"]).strip()
            except (SpotkitError, KeyError, TypeError, ValueError) as exc:
                _emit(diagnostics, Diagnostic(source, item, f"bad row: {exc}"))
                continue
            answers = row.get("answers") or ([row["answer"]] if row.get("answer") is not None else [])
            answer = str(answers[0]).strip() if answers else ""
            if not question or not answer:
                _emit(diagnostics, Diagnostic(source, item, "missing question or answer"))
                continue
            regions: tuple[Region, ...] = ()
            if referent == "box":
                box = row.get("box")
                if not box:
                    _emit(diagnostics, Diagnostic(source, item, "referent=box but row has no box"))
                    continue
                try:
                    x1, y1, x2, y2 = (float(v) for v in box)
                    regions = (
                        normalize_region([(x1, y1), (x2, y2)], RegionKind.box, image.dims),
                    )
                except (SpotkitError, ValueError) as exc:
                    _emit(diagnostics, Diagnostic(source, item, f"bad box: {exc}"))
                    continue
            elif referent == "point":
                point = row.get("point")
                if not point:
                    _emit(diagnostics, Diagnostic(source, item, "referent=point but row has no point"))
                    continue
                try:
                    x, y = (float(v) for v in point)
                    regions = (normalize_region([(x, y)], RegionKind.point, image.dims),)
                except (SpotkitError, ValueError) as exc:
                    _emit(diagnostics, Diagnostic(source, item, f"bad point: {exc}"))
                    continue
            template = template_pool[len(records) % len(template_pool)]
            records.append(
                InstructionRecord(
                    id=f"{source}/{line_no}",
                    image=image,
                    task=task,
                    turns=(Turn(Role.user, expand_instruction_text(template, question)),),
                    regions=regions,
                    style=template.style,
                    source=source,
                    split=Split.stage2 if regions else Split.stage1,
                    ground_truth=GroundTruth(answer=answer),
                )
            )
    return records


# ---------------------------------------------------------------------------
# LLM-generated region chats


@dataclass(frozen=True)
class RegionCaption:
    text: str
    box: Region


@dataclass(frozen=True)
class ImageContext:
    """Dense region captions for one image, the generation prompt's grounding."""

    image: ImageRef
    captions: tuple[RegionCaption, ...]

    def rendered(self, delimiter: str = ",") -> str:
        return "\n".join(f"{serialize_region(c.box, delimiter)}: {c.text}" for c in self.captions)


@dataclass(frozen=True)
class SeedExample:
    """An exemplar (context, dialogue) pair used for in-context prompting."""

    context: str
    dialogue: tuple[Turn, ...]

    def __post_init__(self) -> None:
        context_boxes = [r for r, _ in parse_region_tokens(self.context)]
        for turn in self.dialogue:
            for region, _ in parse_region_tokens(turn.text):
                if _match_context_region(region, context_boxes) is None:
                    raise RecordError(
                        f"seed dialogue cites {serialize_region(region)} absent from its context"
                    )


def _match_context_region(region: Region, boxes: Sequence[Region]) -> int | None:
    """Index of the context box matching ``region`` within tolerance, else None."""
    for i, box in enumerate(boxes):
        if len(box.points) != len(region.points):
            continue
        if all(
            abs(a - b) <= CHAT_COORD_TOLERANCE
            for (ax, ay), (bx, by) in zip(region.points, box.points)
            for a, b in ((ax, bx), (ay, by))
        ):
            return i
    return None


def build_chat_prompt(
    context: ImageContext, seeds: Sequence[SeedExample], rounds: int, delimiter: str = ","
) -> str:
    parts = [
        "You write grounded dialogues about one image from dense region captions.",
        f"Produce between 1 and {rounds} question-answer pairs as alternating lines "
        "starting with 'User:' and 'Assistant:'.",
        "Whenever a turn mentions a region it must cite the exact coordinates from the "
        "context, wrapped in <box> and </box>.",
        "Never invent coordinates that are not in the context.",
        "",
    ]
    for seed in seeds:
        parts.append("Context:")
        parts.append(seed.context)
        parts.append("Dialogue:")
        for turn in seed.dialogue:
            prefix = "User" if turn.role is Role.user else "Assistant"
            parts.append(f"{prefix}: {turn.text}")
        parts.append("")
    parts.append("Context:")
    parts.append(context.rendered(delimiter))
    parts.append("Dialogue:")
    return "\n".join(parts)


class _DialogueInvalid(SpotkitError):
    pass


def _parse_dialogue(reply: str) -> list[Turn]:
    turns: list[Turn] = []
    for raw in reply.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("User:"):
            turns.append(Turn(Role.user, line[len("User:"):].strip()))
        elif line.startswith("Assistant:"):
            turns.append(Turn(Role.assistant, line[len("Assistant:"):].strip()))
        elif turns:
            turns[-1] = Turn(turns[-1].role, f"{turns[-1].text} {line}")
        else:
            raise _DialogueInvalid(f"reply does not start with a 'User:' line: {line!r}")
    return turns


def _validate_reply(
    reply: str, context: ImageContext, rounds: int
) -> tuple[tuple[Turn, ...], tuple[Region, ...]]:
    turns = _parse_dialogue(reply)
    if not turns:
        raise _DialogueInvalid("empty dialogue")
    if len(turns) % 2 != 0:
        raise _DialogueInvalid(f"dialogue has {len(turns)} turns, expected complete QA pairs")
    pairs = len(turns) // 2
    if not (1 <= pairs <= rounds):
        raise _DialogueInvalid(f"dialogue has {pairs} QA pairs, expected 1..{rounds}")
    for i, turn in enumerate(turns):
        expected = Role.user if i % 2 == 0 else Role.assistant
        if turn.role is not expected:
            raise _DialogueInvalid(f"turn {i} has role {turn.role.value}, expected {expected.value}")

    context_boxes = [c.box for c in context.captions]
    slot_of_box: dict[int, int] = {}
    used_boxes: list[Region] = []
    rewritten: list[Turn] = []
    for turn in turns:
        try:
            spans = parse_region_tokens(turn.text)
        except RegionParseError as exc:
            raise _DialogueInvalid(f"malformed region span: {exc}")
        text = turn.text
        for region, (start, end) in reversed(spans):
            ctx_idx = _match_context_region(region, context_boxes)
            if ctx_idx is None:
                raise _DialogueInvalid(
                    f"cited coordinates {serialize_region(region)} match no context box "
                    f"within {CHAT_COORD_TOLERANCE}"
                )
            if ctx_idx not in slot_of_box:
                slot_of_box[ctx_idx] = len(used_boxes)
                used_boxes.append(context_boxes[ctx_idx])
            text = text[:start] + region_slot(slot_of_box[ctx_idx]) + text[end:]
        rewritten.append(Turn(turn.role, text))
    return tuple(rewritten), tuple(used_boxes)


def generate_region_chat(
    image_context: ImageContext,
    seeds: Sequence[SeedExample],
    llm,
    rounds: int = 3,
    *,
    source: str = "regionchat",
) -> InstructionRecord:
    """Ask an LLM for a multi-turn dialogue grounded in the context boxes.

    The reply is accepted only if it alternates User/Assistant lines, holds
    1..rounds QA pairs, and every cited coordinate tuple matches a context box
    within 0.02 per coordinate; accepted coordinates are rewritten to
    ``<region:i>`` slots. Invalid replies are retried; after three validation
    failures a GenerationError carrying the last reply is raised.
    """
    if not image_context.captions:
        raise GenerationError("image context has no captions")
    prompt = build_chat_prompt(image_context, seeds, rounds)
    last_reply = ""
    for _ in range(CHAT_MAX_ATTEMPTS):
        last_reply = llm.complete_text(prompt)
        try:
            turns, regions = _validate_reply(last_reply, image_context, rounds)
        except _DialogueInvalid as exc:
            log.debug("rejected generated dialogue: %s", exc)
            continue
        digest = hashlib.sha256(image_context.image.uri.encode("utf-8")).hexdigest()[:12]
        record = InstructionRecord(
            id=f"{source}/{digest}",
            image=image_context.image,
            task=Task.region_chat,
            turns=turns,
            regions=regions,
            style=Style.none,
            source=source,
            split=Split.stage2,
        )
        validate_record(record)
        return record
    raise GenerationError(
        f"no valid dialogue after {CHAT_MAX_ATTEMPTS} attempts", last_reply=last_reply
    )


def load_contexts(path) -> list[ImageContext]:
    """Read image contexts from JSON lines of {image, captions:[{text, box}]}."""
    out: list[ImageContext] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out.append(
                    ImageContext(
                        image=ImageRef.from_dict(row["image"]),
                        captions=tuple(
                            RegionCaption(text=str(c["text"]), box=Region.from_dict(c["box"]))
                            for c in row["captions"]
                        ),
                    )
                )
            except (SpotkitError, KeyError, TypeError, ValueError) as exc:
                raise RecordError(f"invalid context: {exc}", line=line_no)
    return out


def load_seeds(path) -> list[SeedExample]:
    """Read seed examples from JSON lines of {context, dialogue:[{role, text}]}."""
    out: list[SeedExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out.append(
                    SeedExample(
                        context=str(row["context"]),
                        dialogue=tuple(Turn.from_dict(t) for t in row["dialogue"]),
                    )
                )
            except (SpotkitError, KeyError, TypeError, ValueError) as exc:
                raise RecordError(f"invalid seed example: {exc}", line=line_no)
    return out


# ---------------------------------------------------------------------------
# Stage partitioning


@dataclass(frozen=True)
class PartitionPolicy:
    """How records are assigned to stage1/stage2/eval splits.

    Sources named in ``eval_sources`` are held out wholesale; other sources may
    hold out a per-source fraction, drawn deterministically from (seed, record
    id). Everything else lands in stage1 (image tasks) or stage2 (region tasks).
    """

    eval_sources: frozenset[str] = frozenset()
    holdout_fraction: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0


def _holdout_draw(seed: int, record_id: str) -> float:
    digest = hashlib.sha256(f"{seed}:{record_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def partition(
    records: Sequence[InstructionRecord], policy: PartitionPolicy
) -> list[InstructionRecord]:
    """Assign a split to every record; total and deterministic for a policy."""
    known_sources = {r.source for r in records}
    referenced = set(policy.eval_sources) | set(policy.holdout_fraction)
    unknown = referenced - known_sources
    if unknown:
        raise ConfigError(f"partition policy references unknown source(s): {sorted(unknown)}")
    out: list[InstructionRecord] = []
    for record in records:
        if record.source in policy.eval_sources:
            split = Split.eval
        elif _holdout_draw(policy.seed, record.id) < policy.holdout_fraction.get(record.source, 0.0):
            split = Split.eval
        elif record.task in REGION_TASKS:
            split = Split.stage2
        else:
            split = Split.stage1
        out.append(replace(record, split=split))
    return out
