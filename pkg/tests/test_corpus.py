import json

import pytest

from spotkit.corpus import (
    CHAT_COORD_TOLERANCE,
    GroundTruth,
    ImageContext,
    ImageRef,
    InstructionRecord,
    PartitionPolicy,
    RegionCaption,
    SeedExample,
    Split,
    generate_region_chat,
    ingest_detection,
    ingest_ocr,
    ingest_vqa,
    load_contexts,
    load_seeds,
    partition,
    read_records,
    validate_record,
    write_records,
)
from spotkit.errors import ConfigError, GenerationError, RecordError
from spotkit.geometry import ImageDims, Region
from spotkit.instructgen import Role, Style, Task, TemplateRegistry, Turn, serialize_region
from helpers import ScriptedLlm, coco_style_annotations, write_jsonl

REG = TemplateRegistry.default()
DET_POOL = REG.pool(Task.region_class)
OCR_POOL = REG.pool(Task.region_ocr)
VQA_POOL = REG.pool(Task.vqa)
RVQA_POOL = REG.pool(Task.region_vqa)


@pytest.fixture
def detection_file(tmp_path):
    path = tmp_path / "det.json"
    path.write_text(json.dumps(coco_style_annotations()), encoding="utf-8")
    return path


class TestIngestDetection:
    def test_one_record_per_instance(self, detection_file):
        records = ingest_detection(detection_file, DET_POOL)
        assert len(records) == 7  # 3 + 2 + 2 instances
        for r in records:
            assert r.task is Task.region_class
            assert len(r.regions) == 1
            assert r.ground_truth.class_label
            assert r.ground_truth.all_objects
            validate_record(r)

    def test_all_objects_covers_image(self, detection_file):
        records = ingest_detection(detection_file, DET_POOL)
        first_image = [r for r in records if r.image.uri == "im1.jpg"]
        assert all(len(r.ground_truth.all_objects) == 3 for r in first_image)

    def test_out_of_frame_instance_skipped(self, tmp_path):
        data = coco_style_annotations()
        data["annotations"].append(
            {"image_id": 1, "bbox": [600.0, 400.0, 100.0, 100.0], "category_id": 1}
        )
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        diagnostics = []
        records = ingest_detection(path, DET_POOL, diagnostics=diagnostics)
        assert len(records) == 7
        assert any("bad bbox" in d.reason for d in diagnostics)

    def test_unresolvable_category_skipped(self, tmp_path):
        data = coco_style_annotations()
        data["annotations"][0]["category_id"] = 999
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        diagnostics = []
        records = ingest_detection(path, DET_POOL, diagnostics=diagnostics)
        assert len(records) == 6
        assert any("unresolvable category" in d.reason for d in diagnostics)

    def test_missing_dims_skips_image(self, tmp_path):
        data = coco_style_annotations()
        del data["images"][0]["width"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        diagnostics = []
        records = ingest_detection(path, DET_POOL, diagnostics=diagnostics)
        assert len(records) == 4
        assert any("missing image dims" in d.reason for d in diagnostics)

    def test_limit_sampling_deterministic(self, detection_file):
        a = ingest_detection(detection_file, DET_POOL, limit=4, seed=3)
        b = ingest_detection(detection_file, DET_POOL, limit=4, seed=3)
        c = ingest_detection(detection_file, DET_POOL, limit=4, seed=4)
        assert [r.id for r in a] == [r.id for r in b]
        assert len(a) == 4
        assert [r.id for r in a] != [r.id for r in c]

    def test_file_level_parse_failure(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(RecordError):
            ingest_detection(path, DET_POOL)

    def test_deterministic_output(self, detection_file, tmp_path):
        out1 = tmp_path / "a.jsonl"
        out2 = tmp_path / "b.jsonl"
        write_records(ingest_detection(detection_file, DET_POOL), out1)
        write_records(ingest_detection(detection_file, DET_POOL), out2)
        assert out1.read_bytes() == out2.read_bytes()


class TestIngestOcr:
    def _file(self, tmp_path, annotations):
        data = {
            "images": [{"id": 1, "width": 200, "height": 100, "file_name": "sign.jpg"}],
            "annotations": annotations,
        }
        path = tmp_path / "ocr.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    def test_transcription_becomes_answer(self, tmp_path):
        path = self._file(
            tmp_path, [{"image_id": 1, "bbox": [10, 10, 50, 20], "transcription": "STOP"}]
        )
        records = ingest_ocr(path, OCR_POOL)
        assert len(records) == 1
        assert records[0].task is Task.region_ocr
        assert records[0].ground_truth.answer == "STOP"

    def test_empty_transcription_skipped(self, tmp_path):
        path = self._file(
            tmp_path,
            [
                {"image_id": 1, "bbox": [10, 10, 50, 20], "transcription": ""},
                {"image_id": 1, "bbox": [70, 10, 50, 20], "utf8_string": "GO"},
            ],
        )
        diagnostics = []
        records = ingest_ocr(path, OCR_POOL, diagnostics=diagnostics)
        assert len(records) == 1
        assert records[0].ground_truth.answer == "GO"
        assert any("empty transcription" in d.reason for d in diagnostics)

    def test_illegible_skipped(self, tmp_path):
        path = self._file(
            tmp_path,
            [
                {"image_id": 1, "bbox": [10, 10, 50, 20], "transcription": "X", "legibility": "illegible"},
                {"image_id": 1, "bbox": [70, 10, 50, 20], "transcription": "OK"},
            ],
        )
        records = ingest_ocr(path, OCR_POOL)
        assert [r.ground_truth.answer for r in records] == ["OK"]

    def test_two_instances_two_records(self, tmp_path):
        path = self._file(
            tmp_path,
            [
                {"image_id": 1, "bbox": [10, 10, 50, 20], "transcription": "A"},
                {"image_id": 1, "bbox": [70, 10, 50, 20], "transcription": "B"},
            ],
        )
        assert len(ingest_ocr(path, OCR_POOL)) == 2


class TestIngestVqa:
    def _file(self, tmp_path, rows):
        path = tmp_path / "vqa.jsonl"
        write_jsonl(path, rows)
        return path

    IMAGE = {"uri": "dogpark.jpg", "width": 640, "height": 480}

    def test_plain_vqa(self, tmp_path):
        path = self._file(
            tmp_path, [{"image": self.IMAGE, "question": "how many dogs", "answer": "2"}]
        )
        records = ingest_vqa(path, VQA_POOL, "none")
        assert records[0].task is Task.vqa
        assert records[0].regions == ()
        assert records[0].ground_truth.answer == "2"
        assert "how many dogs" in records[0].turns[0].text

    def test_box_referent(self, tmp_path):
        path = self._file(
            tmp_path,
            [{"image": self.IMAGE, "question": "how many dogs", "answer": "2", "box": [10, 20, 50, 80]}],
        )
        records = ingest_vqa(path, RVQA_POOL, "box")
        assert records[0].task is Task.region_vqa
        assert records[0].regions[0].kind.value == "box"

    def test_point_referent(self, tmp_path):
        path = self._file(
            tmp_path,
            [{"image": self.IMAGE, "question": "what is this", "answer": "a dog", "point": [320, 240]}],
        )
        records = ingest_vqa(path, RVQA_POOL, "point")
        assert records[0].regions[0].kind.value == "point"
        assert records[0].regions[0].points == ((0.5, 0.5),)

    def test_missing_referent_skipped(self, tmp_path):
        path = self._file(
            tmp_path, [{"image": self.IMAGE, "question": "how many", "answer": "2"}]
        )
        diagnostics = []
        records = ingest_vqa(path, RVQA_POOL, "box", diagnostics=diagnostics)
        assert records == []
        assert any("no box" in d.reason for d in diagnostics)

    def test_answers_list(self, tmp_path):
        path = self._file(
            tmp_path,
            [{"image": self.IMAGE, "question": "color", "answers": ["blue", "navy"]}],
        )
        records = ingest_vqa(path, VQA_POOL, "none")
        assert records[0].ground_truth.answer == "blue"

    def test_bad_referent_value(self, tmp_path):
        path = self._file(tmp_path, [])
        with pytest.raises(ConfigError):
            ingest_vqa(path, VQA_POOL, "blob")


class TestRecordIO:
    def test_roundtrip(self, detection_file, tmp_path):
        records = ingest_detection(detection_file, DET_POOL)
        out = tmp_path / "records.jsonl"
        write_records(records, out)
        assert read_records(out) == records

    def test_empty_file(self, tmp_path):
        out = tmp_path / "empty.jsonl"
        out.write_text("", encoding="utf-8")
        assert read_records(out) == []

    def test_meta_line_skipped(self, detection_file, tmp_path):
        records = ingest_detection(detection_file, DET_POOL, limit=2)
        out = tmp_path / "records.jsonl"
        write_records(records, out, meta={"config_fingerprint": "abc", "tool_version": "0.1.0"})
        first = out.read_text(encoding="utf-8").splitlines()[0]
        assert json.loads(first)["_meta"]["config_fingerprint"] == "abc"
        assert read_records(out) == records

    def test_dangling_region_reference_rejected_with_line(self, detection_file, tmp_path):
        records = ingest_detection(detection_file, DET_POOL, limit=2)
        rows = [r.to_dict() for r in records]
        rows[1]["turns"][0]["text"] = "look at <region:3>"
        out = tmp_path / "bad.jsonl"
        write_jsonl(out, rows)
        with pytest.raises(RecordError) as exc_info:
            read_records(out)
        assert exc_info.value.line == 2

    def test_malformed_json_line(self, tmp_path):
        out = tmp_path / "bad.jsonl"
        out.write_text('{"id": "x"}\nnot json\n', encoding="utf-8")
        with pytest.raises(RecordError) as exc_info:
            read_records(out)
        assert exc_info.value.line in (1, 2)


class TestValidateRecord:
    def _base(self, **kw):
        defaults = dict(
            id="r",
            image=ImageRef("u.jpg", ImageDims(10, 10)),
            task=Task.region_class,
            turns=(Turn(Role.user, "see <region:0>"),),
            regions=(Region.box_at(0.1, 0.1, 0.5, 0.5),),
            style=Style.none,
            source="s",
            split=Split.stage2,
            ground_truth=GroundTruth(class_label="dog", all_objects=()),
        )
        defaults.update(kw)
        return InstructionRecord(**defaults)

    def test_valid(self):
        validate_record(self._base())

    def test_region_task_needs_region(self):
        with pytest.raises(RecordError):
            validate_record(self._base(regions=(), turns=(Turn(Role.user, "see"),)))

    def test_image_task_rejects_region(self):
        with pytest.raises(RecordError):
            validate_record(
                self._base(task=Task.caption, turns=(Turn(Role.user, "describe"),),
                           ground_truth=None)
            )

    def test_stage1_region_task_rejected(self):
        with pytest.raises(RecordError):
            validate_record(self._base(split=Split.stage1))

    def test_roles_alternate(self):
        with pytest.raises(RecordError):
            validate_record(
                self._base(
                    turns=(Turn(Role.assistant, "hello"), Turn(Role.user, "see <region:0>"))
                )
            )

    def test_class_gt_needs_objects(self):
        with pytest.raises(RecordError):
            validate_record(self._base(ground_truth=GroundTruth(class_label="dog")))


def _context():
    dims = ImageDims(640, 480)
    b1 = Region.box_at(0.1, 0.1, 0.3, 0.4)
    b2 = Region.box_at(0.5, 0.5, 0.9, 0.8)
    return ImageContext(
        image=ImageRef("park.jpg", dims),
        captions=(
            RegionCaption("a brown dog running", b1),
            RegionCaption("a red frisbee", b2),
        ),
    )


def _reply_for(context, jitter=0.0):
    s1 = serialize_region(Region.box_at(0.1 + jitter, 0.1, 0.3 + jitter, 0.4))
    s2 = serialize_region(context.captions[1].box)
    return (
        f"User: What animal is at {s1}?\n"
        f"Assistant: A brown dog is running there.\n"
        f"User: And what is the object at {s2}?\n"
        f"Assistant: That is a red frisbee."
    )


class TestGenerateRegionChat:
    def test_valid_reply_accepted(self):
        context = _context()
        llm = ScriptedLlm([_reply_for(context)])
        record = generate_region_chat(context, [], llm, rounds=3)
        assert record.task is Task.region_chat
        assert len(record.regions) == 2
        assert len(record.turns) == 4
        assert "<region:0>" in record.turns[0].text
        assert "<region:1>" in record.turns[2].text
        # Canonical coordinates are the context's, not the LLM's approximation.
        assert record.regions[0] == context.captions[0].box
        validate_record(record)

    def test_near_coordinates_within_tolerance(self):
        context = _context()
        llm = ScriptedLlm([_reply_for(context, jitter=CHAT_COORD_TOLERANCE - 0.005)])
        record = generate_region_chat(context, [], llm, rounds=3)
        assert record.regions[0] == context.captions[0].box

    def test_off_context_coordinate_rejected_then_retried(self):
        context = _context()
        bad = _reply_for(context, jitter=0.2)
        llm = ScriptedLlm([bad, _reply_for(context)])
        record = generate_region_chat(context, [], llm, rounds=3)
        assert llm.calls == 2
        assert record.regions[0] == context.captions[0].box

    def test_three_failures_raise_generation_error(self):
        context = _context()
        bad = _reply_for(context, jitter=0.3)
        llm = ScriptedLlm([bad])
        with pytest.raises(GenerationError) as exc_info:
            generate_region_chat(context, [], llm, rounds=3)
        assert llm.calls == 3
        assert exc_info.value.last_reply == bad

    def test_too_many_pairs_rejected(self):
        context = _context()
        llm = ScriptedLlm([_reply_for(context)])
        with pytest.raises(GenerationError):
            generate_region_chat(context, [], llm, rounds=1)

    def test_role_alternation_enforced(self):
        context = _context()
        s1 = serialize_region(context.captions[0].box)
        llm = ScriptedLlm([f"Assistant: I speak first about {s1}.\nUser: why?"])
        with pytest.raises(GenerationError):
            generate_region_chat(context, [], llm, rounds=3)

    def test_empty_context_rejected(self):
        context = ImageContext(image=ImageRef("x.jpg", ImageDims(10, 10)), captions=())
        with pytest.raises(GenerationError):
            generate_region_chat(context, [], ScriptedLlm(["User: hi\nAssistant: hi"]), rounds=1)

    def test_seed_dialogue_must_cite_context(self):
        with pytest.raises(RecordError):
            SeedExample(
                context="<box>0.100,0.100,0.300,0.400</box>: a dog",
                dialogue=(
                    Turn(Role.user, "what is at <box>0.700,0.700,0.900,0.900</box>?"),
                    Turn(Role.assistant, "no idea"),
                ),
            )

    def test_context_and_seed_files(self, tmp_path):
        context = _context()
        ctx_path = tmp_path / "ctx.jsonl"
        write_jsonl(
            ctx_path,
            [
                {
                    "image": context.image.to_dict(),
                    "captions": [
                        {"text": c.text, "box": c.box.to_dict()} for c in context.captions
                    ],
                }
            ],
        )
        seeds_path = tmp_path / "seeds.jsonl"
        write_jsonl(
            seeds_path,
            [
                {
                    "context": "<box>0.100,0.100,0.300,0.400</box>: a dog",
                    "dialogue": [
                        {"role": "user", "text": "what is at <box>0.100,0.100,0.300,0.400</box>?"},
                        {"role": "assistant", "text": "a dog"},
                    ],
                }
            ],
        )
        assert len(load_contexts(ctx_path)) == 1
        assert len(load_seeds(seeds_path)) == 1


class TestPartition:
    def _records(self, detection_file):
        return ingest_detection(detection_file, DET_POOL)

    def test_region_records_to_stage2(self, detection_file):
        records = partition(self._records(detection_file), PartitionPolicy())
        assert all(r.split is Split.stage2 for r in records)

    def test_image_records_to_stage1(self, tmp_path):
        path = tmp_path / "vqa.jsonl"
        write_jsonl(
            path,
            [{"image": {"uri": "a.jpg", "width": 10, "height": 10}, "question": "q", "answer": "a"}],
        )
        records = ingest_vqa(path, VQA_POOL, "none")
        out = partition(records, PartitionPolicy())
        assert all(r.split is Split.stage1 for r in out)

    def test_eval_sources_held_out(self, detection_file):
        records = self._records(detection_file)
        out = partition(records, PartitionPolicy(eval_sources=frozenset({records[0].source})))
        assert all(r.split is Split.eval for r in out)

    def test_unknown_source_rejected(self, detection_file):
        with pytest.raises(ConfigError):
            partition(self._records(detection_file), PartitionPolicy(eval_sources=frozenset({"nope"})))

    def test_holdout_fraction_deterministic(self, detection_file):
        records = self._records(detection_file)
        policy = PartitionPolicy(holdout_fraction={records[0].source: 0.5}, seed=1)
        a = partition(records, policy)
        b = partition(records, policy)
        assert [r.split for r in a] == [r.split for r in b]
        assert any(r.split is Split.eval for r in a)
        assert any(r.split is Split.stage2 for r in a)

    def test_total_function(self, detection_file):
        records = self._records(detection_file)
        out = partition(records, PartitionPolicy(holdout_fraction={records[0].source: 0.3}))
        assert len(out) == len(records)
        assert all(r.split in (Split.stage1, Split.stage2, Split.eval) for r in out)
