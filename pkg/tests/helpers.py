"""Shared builders: synthetic corpora, scripted backends, fake LLMs."""
from __future__ import annotations

import json
import random
import threading

from spotkit.backend import Backend, BackendRequest, BackendResponse, LlmClient
from spotkit.corpus import (
    GroundTruth,
    GtObject,
    ImageRef,
    InstructionRecord,
    Split,
)
from spotkit.errors import TransportError
from spotkit.geometry import ImageDims, Region
from spotkit.instructgen import Role, Style, Task, Turn

CLASS_PROMPT = "What can you see in this region? <region:0>"


def class_record(
    record_id: str,
    uri: str,
    dims: ImageDims,
    region: Region,
    label: str,
    objects: list[GtObject],
    source: str = "synthetic",
) -> InstructionRecord:
    return InstructionRecord(
        id=record_id,
        image=ImageRef(uri=uri, dims=dims),
        task=Task.region_class,
        turns=(Turn(Role.user, CLASS_PROMPT),),
        regions=(region,),
        style=Style.none,
        source=source,
        split=Split.eval,
        ground_truth=GroundTruth(class_label=label, all_objects=tuple(objects)),
    )


def text_record(
    record_id: str,
    uri: str,
    dims: ImageDims,
    region: Region | None,
    answer: str,
    task: Task = Task.region_ocr,
    question: str | None = None,
    source: str = "synthetic",
) -> InstructionRecord:
    if task is Task.region_ocr:
        prompt = "What text can you see in this region? <region:0>"
    elif task is Task.region_vqa:
        prompt = f"Given the region <region:0>, please tell me: {question}"
    else:
        prompt = f"Given an image <image>, please tell me: {question}"
    return InstructionRecord(
        id=record_id,
        image=ImageRef(uri=uri, dims=dims),
        task=task,
        turns=(Turn(Role.user, prompt),),
        regions=(region,) if region is not None else (),
        style=Style.none,
        source=source,
        split=Split.eval,
        ground_truth=GroundTruth(answer=answer),
    )


def random_box(rng: random.Random, min_side: float = 0.1, max_side: float = 0.5) -> Region:
    w = rng.uniform(min_side, max_side)
    h = rng.uniform(min_side, max_side)
    x = rng.uniform(0.0, 1.0 - w)
    y = rng.uniform(0.0, 1.0 - h)
    return Region.box_at(x, y, x + w, y + h)


def single_object_corpus(
    n: int,
    classes: list[str],
    dims: ImageDims = ImageDims(640, 480),
    seed: int = 42,
    source: str = "synthetic",
) -> list[InstructionRecord]:
    """One queried object per image; classes cycle deterministically."""
    rng = random.Random(seed)
    records = []
    for i in range(n):
        label = classes[i % len(classes)]
        region = random_box(rng, 0.15, 0.45)
        records.append(
            class_record(
                f"{source}/{i}",
                f"img://{source}/{i}.jpg",
                dims,
                region,
                label,
                [GtObject(label, region)],
                source=source,
            )
        )
    return records


def coco_style_annotations(
    n_images: int = 3,
    instances_per_image: tuple = (3, 2, 2),
    classes: tuple = ("zebra", "toaster", "cactus"),
    dims: tuple = (640, 480),
    seed: int = 11,
) -> dict:
    """Detection interchange document with valid, in-frame instances."""
    rng = random.Random(seed)
    width, height = dims
    images = []
    annotations = []
    categories = [{"id": k + 1, "name": name} for k, name in enumerate(classes)]
    for i in range(n_images):
        images.append({"id": i + 1, "width": width, "height": height, "file_name": f"im{i+1}.jpg"})
        for _ in range(instances_per_image[i % len(instances_per_image)]):
            w = rng.uniform(0.1, 0.4) * width
            h = rng.uniform(0.1, 0.4) * height
            x = rng.uniform(0, width - w)
            y = rng.uniform(0, height - h)
            annotations.append(
                {
                    "image_id": i + 1,
                    "bbox": [round(x, 2), round(y, 2), round(w, 2), round(h, 2)],
                    "category_id": rng.randrange(len(classes)) + 1,
                }
            )
    return {"images": images, "annotations": annotations, "categories": categories}


class ScriptedBackend(Backend):
    """Answers from a {record-region key -> text} script; keyed by queried span."""

    id = "scripted"

    def __init__(self, answer_for_request):
        self._answer_for_request = answer_for_request

    def complete(self, req: BackendRequest) -> BackendResponse:
        return BackendResponse(text=self._answer_for_request(req))


class FlakyBackend(Backend):
    """Fails on a deterministic schedule, then recovers; thread-safe."""

    id = "flaky"

    def __init__(self, inner: Backend, fail_every: int = 2):
        self.inner = inner
        self.fail_every = fail_every
        self._calls = 0
        self._lock = threading.Lock()

    def complete(self, req: BackendRequest) -> BackendResponse:
        with self._lock:
            self._calls += 1
            n = self._calls
        if n % self.fail_every == 0:
            raise TransportError(f"scheduled failure on call {n}")
        return self.inner.complete(req)


class ScriptedLlm(LlmClient):
    """Plays back a list of completions in order; repeats the last one."""

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.calls = 0

    def complete_text(self, prompt: str) -> str:
        reply = self.replies[min(self.calls, len(self.replies) - 1)]
        self.calls += 1
        return reply


def write_jsonl(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
