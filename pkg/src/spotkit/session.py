"""Interactive session gateway.

Holds multi-turn transcripts, converts click/box events into precise referring
instructions, and proxies to a backend. Sessions live in an embedded sqlite
store with a TTL, so the service survives restarts without extra
infrastructure. post_message is serialized per session; a backend failure
leaves the transcript untouched.
"""
from __future__ import annotations

import json
import secrets
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .backend import Backend, BackendRequest
from .errors import (
    BackendError,
    CoordinateError,
    EventValidationError,
    GatewayError,
    RegionArityError,
    UnknownSessionError,
)
from .geometry import ImageDims, Region, RegionKind, denormalize_region, normalize_region
from .instructgen import Role, Turn, serialize_region

EVENT_MARKER = "<region>"
DEFAULT_HISTORY_WINDOW = 20
DEFAULT_TTL_SECONDS = 24 * 3600


class EventKind(str, Enum):
    click = "click"
    box = "box"
    polygon = "polygon"


_EVENT_REGION_KIND = {
    EventKind.click: RegionKind.point,
    EventKind.box: RegionKind.box,
    EventKind.polygon: RegionKind.polygon,
}


@dataclass(frozen=True)
class ReferringEvent:
    kind: EventKind
    points_px: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class TranscriptTurn:
    role: Role
    text: str
    regions: tuple[Region, ...]
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "text": self.text,
            "regions": [r.to_dict() for r in self.regions],
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriptTurn":
        return cls(
            role=Role(d["role"]),
            text=str(d["text"]),
            regions=tuple(Region.from_dict(r) for r in d["regions"]),
            timestamp=float(d["timestamp"]),
        )


@dataclass
class Session:
    id: str
    image_uri: str
    dims: ImageDims
    turns: list[TranscriptTurn] = field(default_factory=list)
    history_window: int = DEFAULT_HISTORY_WINDOW

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": {"uri": self.image_uri, "dims": self.dims.to_dict()},
            "turns": [t.to_dict() for t in self.turns],
            "history_window": self.history_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Session":
        return cls(
            id=str(d["id"]),
            image_uri=str(d["image"]["uri"]),
            dims=ImageDims.from_dict(d["image"]["dims"]),
            turns=[TranscriptTurn.from_dict(t) for t in d["turns"]],
            history_window=int(d.get("history_window", DEFAULT_HISTORY_WINDOW)),
        )


class SessionStore:
    """sqlite-backed session persistence with lazy TTL expiry."""

    def __init__(self, path: str = ":memory:", ttl_seconds: float = DEFAULT_TTL_SECONDS):
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._lock = threading.Lock()
        self.ttl_seconds = ttl_seconds
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS sessions ("
                "id TEXT PRIMARY KEY, data TEXT NOT NULL, updated_at REAL NOT NULL)"
            )
            self._conn.commit()

    def put(self, session: Session) -> None:
        payload = json.dumps(session.to_dict(), ensure_ascii=False)
        with self._lock:
            self._conn.execute(
                "INSERT INTO sessions (id, data, updated_at) VALUES (?, ?, ?) "
                "ON CONFLICT(id) DO UPDATE SET data=excluded.data, updated_at=excluded.updated_at",
                (session.id, payload, time.time()),
            )
            self._conn.commit()

    def get(self, session_id: str) -> Session | None:
        now = time.time()
        with self._lock:
            self._conn.execute(
                "DELETE FROM sessions WHERE updated_at < ?", (now - self.ttl_seconds,)
            )
            row = self._conn.execute(
                "SELECT data FROM sessions WHERE id = ?", (session_id,)
            ).fetchone()
            self._conn.commit()
        if row is None:
            return None
        return Session.from_dict(json.loads(row[0]))

    def close(self) -> None:
        with self._lock:
            self._conn.close()


class SessionService:
    """Session operations over a store and a backend."""

    def __init__(
        self,
        store: SessionStore,
        backend: Backend,
        history_window: int = DEFAULT_HISTORY_WINDOW,
    ):
        self.store = store
        self.backend = backend
        self.history_window = history_window
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._locks.get(session_id)
            if lock is None:
                lock = self._locks[session_id] = threading.Lock()
            return lock

    def create_session(self, image_uri: str, dims: ImageDims) -> str:
        session = Session(
            id=secrets.token_urlsafe(24),  # 192 bits, unguessable
            image_uri=image_uri,
            dims=dims,
            history_window=self.history_window,
        )
        self.store.put(session)
        return session.id

    def get_transcript(self, session_id: str) -> Session:
        session = self.store.get(session_id)
        if session is None:
            raise UnknownSessionError(f"unknown session {session_id!r}")
        return session

    def _normalize_events(
        self, events: Sequence[ReferringEvent], dims: ImageDims
    ) -> list[Region]:
        regions = []
        for event in events:
            kind = _EVENT_REGION_KIND[EventKind(event.kind)]
            try:
                regions.append(normalize_region(event.points_px, kind, dims))
            except (CoordinateError, RegionArityError) as exc:
                raise EventValidationError(str(exc))
        return regions

    @staticmethod
    def render_user_text(text: str, regions: Sequence[Region]) -> str:
        """Consume ``<region>`` markers in order; surplus regions are appended."""
        markers = text.count(EVENT_MARKER)
        if markers > len(regions):
            raise EventValidationError(
                f"message has {markers} {EVENT_MARKER} marker(s) but only "
                f"{len(regions)} referring event(s)"
            )
        out = text
        for region in regions[:markers]:
            out = out.replace(EVENT_MARKER, serialize_region(region), 1)
        for region in regions[markers:]:
            span = serialize_region(region)
            out = f"{out} {span}" if out else span
        return out

    def post_message(
        self, session_id: str, text: str, events: Sequence[ReferringEvent] = ()
    ) -> TranscriptTurn:
        """Append one exchange: render the user turn, query the backend, commit both.

        The transcript is updated only after the backend answers; any backend
        failure surfaces as GatewayError with the transcript unchanged.
        """
        with self._lock_for(session_id):
            session = self.store.get(session_id)
            if session is None:
                raise UnknownSessionError(f"unknown session {session_id!r}")
            regions = self._normalize_events(events, session.dims)
            rendered = self.render_user_text(text, regions)
            user_turn = TranscriptTurn(
                role=Role.user, text=rendered, regions=tuple(regions), timestamp=time.time()
            )
            window = session.turns[-session.history_window :] if session.history_window else []
            request = BackendRequest(
                image_uri=session.image_uri,
                dims=session.dims,
                turns=tuple(Turn(t.role, t.text) for t in window) + (Turn(Role.user, rendered),),
            )
            try:
                response = self.backend.complete(request)
            except BackendError as exc:
                raise GatewayError(f"backend failed: {exc}")
            assistant_turn = TranscriptTurn(
                role=Role.assistant, text=response.text, regions=(), timestamp=time.time()
            )
            session.turns.append(user_turn)
            session.turns.append(assistant_turn)
            self.store.put(session)
            return assistant_turn


def transcript_view(session: Session) -> dict:
    """Transcript with regions in both normalized and pixel form for UI redraw."""
    turns = []
    for t in session.turns:
        turns.append(
            {
                "role": t.role.value,
                "text": t.text,
                "timestamp": t.timestamp,
                "regions": [
                    {
                        "kind": r.kind.value,
                        "points": [[x, y] for x, y in r.points],
                        "points_px": [
                            [x, y] for x, y in denormalize_region(r, session.dims)
                        ],
                    }
                    for r in t.regions
                ],
            }
        )
    return {
        "session_id": session.id,
        "image_uri": session.image_uri,
        "width": session.dims.width,
        "height": session.dims.height,
        "turns": turns,
    }
