"""HTTP API over the session gateway."""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .errors import EventValidationError, GatewayError, GeometryError, UnknownSessionError
from .geometry import ImageDims
from .session import EventKind, ReferringEvent, SessionService, transcript_view


class CreateSessionBody(BaseModel):
    image_uri: str
    width: int
    height: int


class EventBody(BaseModel):
    kind: EventKind
    points_px: list[list[float]] = Field(min_length=1)


class PostMessageBody(BaseModel):
    text: str = ""
    events: list[EventBody] = Field(default_factory=list)


def _error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


def create_app(service: SessionService) -> FastAPI:
    app = FastAPI(title="spotkit session gateway", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(UnknownSessionError)
    async def _unknown(request: Request, exc: UnknownSessionError):
        return _error(404, "unknown_session", str(exc))

    @app.exception_handler(EventValidationError)
    async def _invalid_event(request: Request, exc: EventValidationError):
        return _error(422, "validation", str(exc))

    @app.exception_handler(GeometryError)
    async def _invalid_geometry(request: Request, exc: GeometryError):
        return _error(422, "validation", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _invalid_body(request: Request, exc: RequestValidationError):
        return _error(422, "validation", str(exc))

    @app.exception_handler(GatewayError)
    async def _gateway(request: Request, exc: GatewayError):
        return _error(502, "backend_failure", str(exc))

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/sessions")
    def create_session(body: CreateSessionBody):
        dims = ImageDims(body.width, body.height)
        session_id = service.create_session(body.image_uri, dims)
        return {"session_id": session_id}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: PostMessageBody):
        events = [
            ReferringEvent(
                kind=e.kind, points_px=tuple((float(x), float(y)) for x, y in e.points_px)
            )
            for e in body.events
        ]
        assistant = service.post_message(session_id, body.text, events)
        session = service.get_transcript(session_id)
        rendered_user = session.turns[-2].text if len(session.turns) >= 2 else ""
        return {
            "turn": {"role": assistant.role.value, "text": assistant.text},
            "rendered_user_text": rendered_user,
        }

    @app.get("/v1/sessions/{session_id}")
    def get_transcript(session_id: str):
        return transcript_view(service.get_transcript(session_id))

    return app
