"""Pluggable model backends.

The chat model lives behind a single ``complete(request) -> response``
boundary. Four implementations ship here: an HTTP client for a remote
chat-completion endpoint, two deterministic ground-truth oracles that make the
harness testable offline, and a replay backend that serves recorded fixtures.
A generic text-in/text-out LLM client (with backoff retry) supports corpus
generation.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import httpx

from .corpus import GroundTruth, InstructionRecord
from .errors import (
    BackendTimeout,
    OracleError,
    ProtocolError,
    RegionParseError,
    TransportError,
)
from .geometry import ImageDims, Region, enclosing_box, iou
from .instructgen import Role, Turn, parse_region_tokens, render_conversation, serialize_region

log = logging.getLogger(__name__)

ENDPOINT_ENV = "SPOTKIT_ENDPOINT"
TOKEN_ENV = "SPOTKIT_TOKEN"

# Fixed class answered by the IoU-threshold oracle when nothing overlaps.
OOV_CLASS = "unrecognized-object"


@dataclass(frozen=True)
class BackendRequest:
    """One fully rendered conversation; regions are already serialized in turns."""

    image_uri: str
    dims: ImageDims
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        if not self.turns:
            raise ProtocolError("request must carry at least one turn")
        if self.turns[-1].role is not Role.user:
            raise ProtocolError("final request turn must have role=user")

    def to_dict(self) -> dict:
        return {
            "image_uri": self.image_uri,
            "dims": self.dims.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
        }


@dataclass(frozen=True)
class BackendResponse:
    text: str
    confidence: float | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ProtocolError("backend response text must be non-empty")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ProtocolError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        d: dict = {"text": self.text}
        if self.confidence is not None:
            d["confidence"] = self.confidence
        return d


class Backend(ABC):
    """Chat-model boundary. Implementations must be stateless across calls."""

    id: str = "backend"

    @abstractmethod
    def complete(self, req: BackendRequest) -> BackendResponse:
        raise NotImplementedError


def request_key(req: BackendRequest) -> str:
    """Stable fingerprint of a request, used for record/replay fixtures."""
    canon = json.dumps(req.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Ground-truth index shared by the mock oracles


@dataclass(frozen=True)
class AnswerEntry:
    answer: str
    region: Region | None = None
    prompt_text: str | None = None


@dataclass
class GtEntry:
    objects: tuple = ()
    answers: tuple[AnswerEntry, ...] = ()


class GtIndex:
    """Per-image ground truth: object lists for classification, answers for text tasks."""

    def __init__(self, entries: Mapping[str, GtEntry]):
        self._entries = dict(entries)

    def entry(self, image_uri: str) -> GtEntry:
        try:
            return self._entries[image_uri]
        except KeyError:
            raise OracleError(f"no ground truth for image {image_uri!r}")

    def get(self, image_uri: str) -> GtEntry | None:
        return self._entries.get(image_uri)

    @classmethod
    def from_records(cls, records: Iterable[InstructionRecord]) -> "GtIndex":
        entries: dict[str, GtEntry] = {}
        for record in records:
            gt = record.ground_truth
            if gt is None:
                continue
            entry = entries.setdefault(record.image.uri, GtEntry())
            if gt.all_objects is not None and not entry.objects:
                entry.objects = tuple((o.category, o.box) for o in gt.all_objects)
            if gt.answer is not None:
                prompt = render_conversation(record)[-1].text if record.turns else None
                region = record.regions[0] if record.regions else None
                entry.answers = entry.answers + (
                    AnswerEntry(answer=gt.answer, region=region, prompt_text=prompt),
                )
        return cls(entries)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, GroundTruth]) -> "GtIndex":
        entries: dict[str, GtEntry] = {}
        for uri, gt in mapping.items():
            entry = GtEntry()
            if gt.all_objects is not None:
                entry.objects = tuple((o.category, o.box) for o in gt.all_objects)
            if gt.answer is not None:
                entry.answers = (AnswerEntry(answer=gt.answer),)
            entries[uri] = entry
        return cls(entries)


def _coerce_index(gt_index) -> GtIndex:
    if isinstance(gt_index, GtIndex):
        return gt_index
    return GtIndex.from_mapping(gt_index)


def _queried_regions(req: BackendRequest) -> list[Region]:
    try:
        return [r for r, _ in parse_region_tokens(req.turns[-1].text)]
    except RegionParseError as exc:
        raise OracleError(f"cannot parse regions from prompt: {exc}")


class PerfectOracle(Backend):
    """Answers every query from ground truth; confidence pinned to 1.0."""

    id = "mock-perfect"

    def __init__(self, gt_index):
        self._index = _coerce_index(gt_index)

    def complete(self, req: BackendRequest) -> BackendResponse:
        entry = self._index.entry(req.image_uri)
        regions = _queried_regions(req)
        prompt = req.turns[-1].text
        if entry.answers:
            answer = self._pick_answer(entry.answers, prompt, regions)
            if answer is not None:
                return BackendResponse(text=f"The answer is {answer}.", confidence=1.0)
        if entry.objects:
            if not regions:
                raise OracleError(f"region task prompt carries no <box> span: {prompt!r}")
            queried = enclosing_box(regions[0])
            best = max(
                entry.objects,
                key=lambda obj: iou(enclosing_box(obj[1]), queried),
            )
            return BackendResponse(
                text=f"I can see a {best[0]} in this region.", confidence=1.0
            )
        raise OracleError(f"ground truth for {req.image_uri!r} holds neither objects nor answers")

    @staticmethod
    def _pick_answer(
        answers: Sequence[AnswerEntry], prompt: str, regions: Sequence[Region]
    ) -> str | None:
        exact = [a for a in answers if a.prompt_text == prompt]
        if len(exact) == 1:
            return exact[0].answer
        pool = exact or list(answers)
        if regions:
            queried = enclosing_box(regions[0])
            grounded = [a for a in pool if a.region is not None]
            if grounded:
                best = max(grounded, key=lambda a: iou(enclosing_box(a.region), queried))
                return best.answer
        return pool[0].answer if pool else None


class IouThresholdOracle(Backend):
    """Simulates a model whose recognition degrades with box misalignment.

    Answers the class of the best-overlapping object when its IoU reaches
    ``tau``; below that it answers the class of the next-best overlapping
    object, or a fixed out-of-vocabulary class when nothing overlaps at all.
    """

    id = "mock-iou"

    def __init__(self, gt_index, tau: float = 0.5):
        self._index = _coerce_index(gt_index)
        self.tau = tau

    def complete(self, req: BackendRequest) -> BackendResponse:
        entry = self._index.entry(req.image_uri)
        regions = _queried_regions(req)
        if not regions:
            raise OracleError(f"region task prompt carries no <box> span: {req.turns[-1].text!r}")
        queried = enclosing_box(regions[0])
        scored = [(iou(enclosing_box(box), queried), i, cat) for i, (cat, box) in enumerate(entry.objects)]
        scored.sort(key=lambda t: (-t[0], t[1]))
        category = OOV_CLASS
        if scored and scored[0][0] >= self.tau:
            category = scored[0][2]
        elif len(scored) > 1 and scored[1][0] > 0.0:
            category = scored[1][2]
        return BackendResponse(text=f"I can see a {category} in this region.")


def perfect_oracle(gt_index) -> PerfectOracle:
    return PerfectOracle(gt_index)


def iou_threshold_oracle(gt_index, tau: float = 0.5) -> IouThresholdOracle:
    return IouThresholdOracle(gt_index, tau)


class EchoBackend(Backend):
    """Offline demo backend: restates the referred regions deterministically."""

    id = "echo"

    def complete(self, req: BackendRequest) -> BackendResponse:
        regions = _queried_regions(req)
        if not regions:
            return BackendResponse(text="I see the whole image; select a region to zoom in.")
        spans = ", ".join(serialize_region(r) for r in regions)
        return BackendResponse(text=f"You are referring to {spans}; this demo backend just echoes it.")


# ---------------------------------------------------------------------------
# Remote chat-completion client


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    token: str | None = None
    model: str = "default"
    timeout: float = 30.0
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, **overrides) -> "RemoteConfig":
        endpoint = overrides.pop("endpoint", None) or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ProtocolError(f"no endpoint configured ({ENDPOINT_ENV} unset)")
        token = overrides.pop("token", None) or os.environ.get(TOKEN_ENV)
        return cls(endpoint=endpoint, token=token, **overrides)


def wire_request(req: BackendRequest, model: str) -> dict:
    """Encode a request in the chat-completion wire format.

    The image travels as an ``image_uri`` content item on the first user turn;
    every turn carries its text as a ``text`` item.
    """
    messages = []
    image_attached = False
    for turn in req.turns:
        content = []
        if not image_attached and turn.role is Role.user:
            content.append({"type": "image_uri", "value": req.image_uri})
            image_attached = True
        content.append({"type": "text", "value": turn.text})
        messages.append({"role": turn.role.value, "content": content})
    return {"model": model, "messages": messages}


class RemoteBackend(Backend):
    """HTTP client for a remote chat-completion endpoint."""

    id = "remote"

    def __init__(self, config: RemoteConfig, client: httpx.Client | None = None):
        self.config = config
        headers = {}
        if config.token:
            headers["Authorization"] = f"Bearer {config.token}"
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)
        self._slots = threading.Semaphore(config.max_in_flight)

    def complete(self, req: BackendRequest) -> BackendResponse:
        body = wire_request(req, self.config.model)
        with self._slots:
            try:
                resp = self._client.post(self.config.endpoint, json=body)
            except httpx.TimeoutException as exc:
                raise BackendTimeout(f"backend timed out after {self.config.timeout}s: {exc}")
            except httpx.HTTPError as exc:
                raise TransportError(f"transport failure: {exc}")
        if resp.status_code >= 500:
            raise TransportError(f"backend returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"backend rejected request: {resp.status_code} {resp.text[:200]}")
        try:
            payload = resp.json()
            return BackendResponse(text=payload["text"], confidence=payload.get("confidence"))
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed backend response: {exc}")

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------
# Record / replay fixtures


class RecordingBackend(Backend):
    """Wraps a backend and appends (request, response) pairs to a fixture file."""

    def __init__(self, inner: Backend, path):
        self.inner = inner
        self.id = inner.id
        self._path = Path(path)
        self._lock = threading.Lock()

    def complete(self, req: BackendRequest) -> BackendResponse:
        resp = self.inner.complete(req)
        row = {"key": request_key(req), "request": req.to_dict(), "response": resp.to_dict()}
        with self._lock, open(self._path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        return resp


class ReplayBackend(Backend):
    """Serves recorded responses; unknown requests are a protocol error."""

    id = "replay"

    def __init__(self, path):
        self._responses: dict[str, BackendResponse] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                resp = row["response"]
                self._responses[row["key"]] = BackendResponse(
                    text=resp["text"], confidence=resp.get("confidence")
                )

    def complete(self, req: BackendRequest) -> BackendResponse:
        key = request_key(req)
        resp = self._responses.get(key)
        if resp is None:
            raise ProtocolError(f"no recorded response for request key {key[:12]}...")
        return resp


# ---------------------------------------------------------------------------
# Generic text LLM client (corpus generation)


class LlmClient(ABC):
    @abstractmethod
    def complete_text(self, prompt: str) -> str:
        raise NotImplementedError


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class HttpLlmClient(LlmClient):
    """Text-in/text-out client with exponential-backoff retries.

    Retries transport failures with delays 1s, 2s, 4s, ... for at most five
    tries, then raises the last TransportError.
    """

    MAX_TRIES = 5
    BASE_DELAY = 1.0
    FACTOR = 2.0

    def __init__(
        self,
        config: RemoteConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        headers = {}
        if config.token:
            headers["Authorization"] = f"Bearer {config.token}"
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)
        self._sleep = sleep
        self._slots = threading.Semaphore(config.max_in_flight)

    def _post_once(self, prompt: str) -> str:
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": [{"type": "text", "value": prompt}]}],
        }
        try:
            with self._slots:
                resp = self._client.post(self.config.endpoint, json=body)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"llm timed out: {exc}")
        except httpx.HTTPError as exc:
            raise TransportError(f"llm transport failure: {exc}")
        if resp.status_code >= 500:
            raise TransportError(f"llm returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"llm rejected request: {resp.status_code}")
        try:
            return str(resp.json()["text"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed llm response: {exc}")

    def complete_text(self, prompt: str) -> str:
        delay = self.BASE_DELAY
        last: Exception | None = None
        for attempt in range(self.MAX_TRIES):
            try:
                return self._post_once(prompt)
            except (TransportError, BackendTimeout) as exc:
                last = exc
                if attempt < self.MAX_TRIES - 1:
                    log.debug("llm try %d/%d failed: %s", attempt + 1, self.MAX_TRIES, exc)
                    self._sleep(delay)
                    delay *= self.FACTOR
        raise TransportError(f"llm failed after {self.MAX_TRIES} tries: {last}")


def llm_text_client(config: RemoteConfig, **kwargs) -> HttpLlmClient:
    return HttpLlmClient(config, **kwargs)


class RecordingLlm(LlmClient):
    def __init__(self, inner: LlmClient, path):
        self.inner = inner
        self._path = Path(path)
        self._lock = threading.Lock()

    def complete_text(self, prompt: str) -> str:
        text = self.inner.complete_text(prompt)
        row = {"key": prompt_key(prompt), "prompt": prompt, "text": text}
        with self._lock, open(self._path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        return text


class ReplayLlm(LlmClient):
    def __init__(self, path):
        self._texts: dict[str, list[str]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                self._texts.setdefault(row["key"], []).append(str(row["text"]))
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete_text(self, prompt: str) -> str:
        key = prompt_key(prompt)
        texts = self._texts.get(key)
        if not texts:
            raise ProtocolError(f"no recorded llm completion for prompt key {key[:12]}...")
        # Repeated identical prompts replay successive recordings, then stick on the last.
        with self._lock:
            i = self._cursor.get(key, 0)
            self._cursor[key] = i + 1
        return texts[min(i, len(texts) - 1)]


__all__ = [
    "OOV_CLASS",
    "ENDPOINT_ENV",
    "TOKEN_ENV",
    "BackendRequest",
    "BackendResponse",
    "Backend",
    "request_key",
    "prompt_key",
    "AnswerEntry",
    "GtEntry",
    "GtIndex",
    "PerfectOracle",
    "IouThresholdOracle",
    "perfect_oracle",
    "iou_threshold_oracle",
    "EchoBackend",
    "RemoteConfig",
    "RemoteBackend",
    "wire_request",
    "RecordingBackend",
    "ReplayBackend",
    "LlmClient",
    "HttpLlmClient",
    "llm_text_client",
    "RecordingLlm",
    "ReplayLlm",
]
