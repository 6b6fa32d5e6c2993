import pytest
from fastapi.testclient import TestClient

from spotkit.backend import Backend, EchoBackend
from spotkit.errors import TransportError
from spotkit.service import create_app
from spotkit.session import SessionService, SessionStore


@pytest.fixture
def client():
    service = SessionService(SessionStore(), EchoBackend())
    return TestClient(create_app(service))


def _create(client, width=640, height=480):
    resp = client.post(
        "/v1/sessions", json={"image_uri": "img://a.jpg", "width": width, "height": height}
    )
    assert resp.status_code == 200
    return resp.json()["session_id"]


class TestEndpoints:
    def test_healthz(self, client):
        resp = client.get("/v1/healthz")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"

    def test_create_and_get(self, client):
        sid = _create(client)
        resp = client.get(f"/v1/sessions/{sid}")
        assert resp.status_code == 200
        body = resp.json()
        assert body["turns"] == []
        assert body["width"] == 640

    def test_invalid_dims(self, client):
        resp = client.post(
            "/v1/sessions", json={"image_uri": "img://a.jpg", "width": 0, "height": 0}
        )
        assert resp.status_code == 422
        assert resp.json()["error"] == "validation"

    def test_post_message_click(self, client):
        sid = _create(client)
        resp = client.post(
            f"/v1/sessions/{sid}/messages",
            json={
                "text": "What is this? <region>",
                "events": [{"kind": "click", "points_px": [[320, 240]]}],
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["rendered_user_text"] == "What is this? <box>0.500,0.500</box>"
        assert body["turn"]["role"] == "assistant"

    def test_box_drag_payload(self, client):
        sid = _create(client, width=100, height=100)
        resp = client.post(
            f"/v1/sessions/{sid}/messages",
            json={
                "text": "what is this?",
                "events": [{"kind": "box", "points_px": [[10, 20], [50, 80]]}],
            },
        )
        assert resp.status_code == 200
        assert "<box>0.100,0.200,0.500,0.800</box>" in resp.json()["rendered_user_text"]

    def test_unknown_session_404(self, client):
        resp = client.get("/v1/sessions/does-not-exist")
        assert resp.status_code == 404
        assert resp.json()["error"] == "unknown_session"

    def test_marker_mismatch_422(self, client):
        sid = _create(client)
        resp = client.post(
            f"/v1/sessions/{sid}/messages",
            json={"text": "<region> and <region>", "events": [{"kind": "click", "points_px": [[1, 1]]}]},
        )
        assert resp.status_code == 422

    def test_malformed_body_422(self, client):
        sid = _create(client)
        resp = client.post(f"/v1/sessions/{sid}/messages", json={"events": "nope"})
        assert resp.status_code == 422
        assert resp.json()["error"] == "validation"

    def test_backend_failure_502_and_atomic(self):
        class DownBackend(Backend):
            id = "down"

            def complete(self, req):
                raise TransportError("unreachable")

        service = SessionService(SessionStore(), DownBackend())
        client = TestClient(create_app(service))
        sid = _create(client)
        resp = client.post(f"/v1/sessions/{sid}/messages", json={"text": "hello", "events": []})
        assert resp.status_code == 502
        assert resp.json()["error"] == "backend_failure"
        assert client.get(f"/v1/sessions/{sid}").json()["turns"] == []

    def test_transcript_regions_px(self, client):
        sid = _create(client, width=100, height=100)
        client.post(
            f"/v1/sessions/{sid}/messages",
            json={"text": "x", "events": [{"kind": "box", "points_px": [[10, 20], [50, 80]]}]},
        )
        body = client.get(f"/v1/sessions/{sid}").json()
        assert body["turns"][0]["regions"][0]["points_px"] == [[10.0, 20.0], [50.0, 80.0]]
