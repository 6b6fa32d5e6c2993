import json

import httpx
import pytest

from spotkit.backend import (
    OOV_CLASS,
    BackendRequest,
    BackendResponse,
    EchoBackend,
    GtIndex,
    HttpLlmClient,
    RecordingBackend,
    RemoteBackend,
    RemoteConfig,
    ReplayBackend,
    ReplayLlm,
    iou_threshold_oracle,
    perfect_oracle,
    prompt_key,
    request_key,
    wire_request,
)
from spotkit.corpus import GroundTruth, GtObject
from spotkit.errors import (
    BackendTimeout,
    OracleError,
    ProtocolError,
    TransportError,
)
from spotkit.geometry import ImageDims, Region
from spotkit.instructgen import Role, Turn, serialize_region
from helpers import class_record, text_record

DIMS = ImageDims(640, 480)
DOG_BOX = Region.box_at(0.1, 0.1, 0.4, 0.4)
CAT_BOX = Region.box_at(0.5, 0.5, 0.9, 0.9)


def _req(text, uri="img://1.jpg"):
    return BackendRequest(image_uri=uri, dims=DIMS, turns=(Turn(Role.user, text),))


def _class_request(region, uri="img://1.jpg"):
    return _req(f"What can you see in this region? {serialize_region(region)}", uri)


@pytest.fixture
def gt_index():
    record = class_record(
        "r0", "img://1.jpg", DIMS, DOG_BOX, "dog",
        [GtObject("dog", DOG_BOX), GtObject("cat", CAT_BOX)],
    )
    return GtIndex.from_records([record])


class TestRequestResponse:
    def test_empty_turns_rejected(self):
        with pytest.raises(ProtocolError):
            BackendRequest(image_uri="x", dims=DIMS, turns=())

    def test_last_turn_must_be_user(self):
        with pytest.raises(ProtocolError):
            BackendRequest(
                image_uri="x", dims=DIMS,
                turns=(Turn(Role.user, "a"), Turn(Role.assistant, "b")),
            )

    def test_empty_response_rejected(self):
        with pytest.raises(ProtocolError):
            BackendResponse(text="")

    def test_confidence_range(self):
        with pytest.raises(ProtocolError):
            BackendResponse(text="ok", confidence=1.5)


class TestPerfectOracle:
    def test_classification_sentence(self, gt_index):
        oracle = perfect_oracle(gt_index)
        resp = oracle.complete(_class_request(DOG_BOX))
        assert resp.text == "I can see a dog in this region."
        assert resp.confidence == 1.0

    def test_answers_other_object(self, gt_index):
        oracle = perfect_oracle(gt_index)
        assert "cat" in oracle.complete(_class_request(CAT_BOX)).text

    def test_ocr_answer_verbatim(self):
        record = text_record("r0", "img://2.jpg", DIMS, DOG_BOX, "STOP")
        oracle = perfect_oracle(GtIndex.from_records([record]))
        resp = oracle.complete(
            _req(f"What text can you see in this region? {serialize_region(DOG_BOX)}", "img://2.jpg")
        )
        assert "STOP" in resp.text

    def test_missing_box_on_region_task(self, gt_index):
        oracle = perfect_oracle(gt_index)
        with pytest.raises(OracleError):
            oracle.complete(_req("What can you see in this region?"))

    def test_unknown_image(self, gt_index):
        oracle = perfect_oracle(gt_index)
        with pytest.raises(OracleError):
            oracle.complete(_class_request(DOG_BOX, uri="img://unknown.jpg"))

    def test_deterministic(self, gt_index):
        oracle = perfect_oracle(gt_index)
        a = oracle.complete(_class_request(DOG_BOX))
        b = oracle.complete(_class_request(DOG_BOX))
        assert a == b

    def test_accepts_raw_mapping(self):
        mapping = {
            "img://1.jpg": GroundTruth(
                class_label="dog", all_objects=(GtObject("dog", DOG_BOX),)
            )
        }
        oracle = perfect_oracle(mapping)
        assert "dog" in oracle.complete(_class_request(DOG_BOX)).text


class TestIouThresholdOracle:
    def test_exact_box_answers_correctly(self, gt_index):
        oracle = iou_threshold_oracle(gt_index, tau=0.5)
        assert "dog" in oracle.complete(_class_request(DOG_BOX)).text

    def test_nearby_other_class_wins(self):
        # Query overlaps the cat GT at IoU 0.6 while the true dog IoU is lower.
        dog = Region.box_at(0.0, 0.0, 0.2, 0.2)
        cat = Region.box_at(0.3, 0.0, 0.5, 0.2)
        record = class_record(
            "r0", "img://3.jpg", DIMS, dog, "dog",
            [GtObject("dog", dog), GtObject("cat", cat)],
        )
        oracle = iou_threshold_oracle(GtIndex.from_records([record]), tau=0.5)
        # Query box overlapping cat at 0.6: width 0.2 box shifted from cat by d=0.05.
        query = Region.box_at(0.35, 0.0, 0.55, 0.2)
        resp = oracle.complete(_class_request(query, "img://3.jpg"))
        assert "cat" in resp.text

    def test_zero_overlap_gives_oov(self, gt_index):
        oracle = iou_threshold_oracle(gt_index, tau=0.5)
        far = Region.box_at(0.45, 0.01, 0.49, 0.05)
        resp = oracle.complete(_class_request(far))
        assert OOV_CLASS in resp.text

    def test_below_tau_answers_other_object(self, gt_index):
        oracle = iou_threshold_oracle(gt_index, tau=0.99)
        # Overlaps dog a bit, cat not at all -> best is dog but under tau,
        # and no *other* object overlaps -> OOV.
        query = Region.box_at(0.1, 0.1, 0.2, 0.2)
        assert OOV_CLASS in oracle.complete(_class_request(query)).text


class TestEchoBackend:
    def test_echoes_span(self):
        resp = EchoBackend().complete(_class_request(DOG_BOX))
        assert serialize_region(DOG_BOX) in resp.text


class TestWireFormat:
    def test_shape(self):
        req = BackendRequest(
            image_uri="img://1.jpg",
            dims=DIMS,
            turns=(Turn(Role.user, "hi"), Turn(Role.assistant, "hello"), Turn(Role.user, "bye")),
        )
        body = wire_request(req, model="m1")
        assert body["model"] == "m1"
        assert [m["role"] for m in body["messages"]] == ["user", "assistant", "user"]
        first = body["messages"][0]["content"]
        assert first[0] == {"type": "image_uri", "value": "img://1.jpg"}
        assert first[1] == {"type": "text", "value": "hi"}
        # image attached to the first user turn only
        assert all(c["type"] == "text" for c in body["messages"][2]["content"])


def _remote(handler, **cfg):
    transport = httpx.MockTransport(handler)
    config = RemoteConfig(endpoint="http://model.test/v1/chat", **cfg)
    return RemoteBackend(config, client=httpx.Client(transport=transport))


class TestRemoteBackend:
    def test_success(self):
        def handler(request):
            payload = json.loads(request.content)
            assert payload["model"] == "default"
            return httpx.Response(200, json={"text": "a dog", "confidence": 0.9})

        backend = _remote(handler)
        resp = backend.complete(_class_request(DOG_BOX))
        assert resp.text == "a dog"
        assert resp.confidence == 0.9

    def test_5xx_is_transport_error(self):
        backend = _remote(lambda request: httpx.Response(503))
        with pytest.raises(TransportError):
            backend.complete(_class_request(DOG_BOX))

    def test_4xx_is_protocol_error(self):
        backend = _remote(lambda request: httpx.Response(403, text="denied"))
        with pytest.raises(ProtocolError):
            backend.complete(_class_request(DOG_BOX))

    def test_malformed_body_is_protocol_error(self):
        backend = _remote(lambda request: httpx.Response(200, json={"nope": 1}))
        with pytest.raises(ProtocolError):
            backend.complete(_class_request(DOG_BOX))

    def test_timeout_is_distinct(self):
        def handler(request):
            raise httpx.ConnectTimeout("slow")

        backend = _remote(handler)
        with pytest.raises(BackendTimeout):
            backend.complete(_class_request(DOG_BOX))

    def test_env_config(self, monkeypatch):
        monkeypatch.setenv("SPOTKIT_ENDPOINT", "http://model.test/v1/chat")
        monkeypatch.setenv("SPOTKIT_TOKEN", "secret")
        config = RemoteConfig.from_env()
        assert config.endpoint == "http://model.test/v1/chat"
        assert config.token == "secret"

    def test_env_missing(self, monkeypatch):
        monkeypatch.delenv("SPOTKIT_ENDPOINT", raising=False)
        with pytest.raises(ProtocolError):
            RemoteConfig.from_env()


class TestRecordReplay:
    def test_roundtrip(self, tmp_path, gt_index):
        fixture = tmp_path / "fixture.jsonl"
        recording = RecordingBackend(perfect_oracle(gt_index), fixture)
        req = _class_request(DOG_BOX)
        live = recording.complete(req)
        replay = ReplayBackend(fixture)
        assert replay.complete(req) == live

    def test_miss_is_protocol_error(self, tmp_path, gt_index):
        fixture = tmp_path / "fixture.jsonl"
        RecordingBackend(perfect_oracle(gt_index), fixture).complete(_class_request(DOG_BOX))
        replay = ReplayBackend(fixture)
        with pytest.raises(ProtocolError):
            replay.complete(_class_request(CAT_BOX))

    def test_request_key_stable(self):
        req1 = _class_request(DOG_BOX)
        req2 = _class_request(DOG_BOX)
        assert request_key(req1) == request_key(req2)


class _FlakyHandler:
    def __init__(self, failures, response_text="done"):
        self.failures = failures
        self.calls = 0
        self.response_text = response_text

    def __call__(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            return httpx.Response(502)
        return httpx.Response(200, json={"text": self.response_text})


class TestHttpLlmClient:
    def _client(self, handler):
        config = RemoteConfig(endpoint="http://llm.test/v1/complete")
        sleeps = []
        client = HttpLlmClient(
            config,
            client=httpx.Client(transport=httpx.MockTransport(handler)),
            sleep=sleeps.append,
        )
        return client, sleeps

    def test_success_first_try(self):
        client, sleeps = self._client(_FlakyHandler(0))
        assert client.complete_text("hello") == "done"
        assert sleeps == []

    def test_two_transient_failures_then_success(self):
        handler = _FlakyHandler(2)
        client, sleeps = self._client(handler)
        assert client.complete_text("hello") == "done"
        assert handler.calls == 3
        assert sleeps == [1.0, 2.0]  # exponential backoff, base 1s factor 2

    def test_exhausted_retries(self):
        handler = _FlakyHandler(99)
        client, sleeps = self._client(handler)
        with pytest.raises(TransportError):
            client.complete_text("hello")
        assert handler.calls == 5
        assert sleeps == [1.0, 2.0, 4.0, 8.0]

    def test_protocol_error_not_retried(self):
        handler = lambda request: httpx.Response(400)
        client, sleeps = self._client(handler)
        with pytest.raises(ProtocolError):
            client.complete_text("hello")
        assert sleeps == []


class TestReplayLlm:
    def test_sequential_replay(self, tmp_path):
        fixture = tmp_path / "llm.jsonl"
        rows = [{"key": prompt_key("p"), "text": t} for t in ("first", "second")]
        with open(fixture, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        llm = ReplayLlm(fixture)
        assert llm.complete_text("p") == "first"
        assert llm.complete_text("p") == "second"
        assert llm.complete_text("p") == "second"  # sticks on the last

    def test_unknown_prompt(self, tmp_path):
        fixture = tmp_path / "llm.jsonl"
        fixture.write_text("", encoding="utf-8")
        with pytest.raises(ProtocolError):
            ReplayLlm(fixture).complete_text("unseen")
