import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from facegate.evaluation import EngineConfig
from facegate.fixtures import (CORPUS_MIN_SIZE, corpus_cascade, flat_canvas,
                               paste, render_face_pattern, rgb_from_rows)
from facegate.matching import FaceEncoding, ReferenceEmbedder
from facegate.registry import (NoFaceError, PersonRecord, Registry,
                               StoreError, load_store, persist_store)


def face_image(identity, shade=0):
    canvas = flat_canvas(120, 120)
    paste(canvas, render_face_pattern(40, identity, shade=shade), 40, 40)
    return rgb_from_rows(canvas)


def blank_image():
    return rgb_from_rows(flat_canvas(120, 120))


@pytest.fixture
def engine():
    return EngineConfig(model=corpus_cascade(), provider=ReferenceEmbedder(),
                        min_size=CORPUS_MIN_SIZE)


@pytest.fixture
def registry(tmp_path, engine):
    return Registry(tmp_path / "store.jsonl", engine,
                    alert_log_path=tmp_path / "alerts.jsonl")


class TestEnroll:
    def test_single_enrollment(self, registry):
        record = registry.enroll("Alice", {"role": "staff"}, face_image("alice"))
        assert record.person_id == "p0001"
        assert len(record.encodings) == 1
        assert record.provider == "reference-v1"
        assert registry.store_path.exists()

    def test_second_enrollment_appends_encoding(self, registry):
        first = registry.enroll("Alice", {}, face_image("alice"))
        second = registry.enroll("Alice", {}, face_image("alice", shade=4),
                                 person_id=first.person_id)
        assert second.person_id == first.person_id
        assert len(second.encodings) == 2
        assert len(registry.records) == 1

    def test_blank_image_rejected_store_unchanged(self, registry):
        with pytest.raises(NoFaceError):
            registry.enroll("Ghost", {}, blank_image())
        assert not registry.store_path.exists()
        assert registry.records == []

    def test_enrollment_is_persisted_before_return(self, registry, engine):
        registry.enroll("Bob", {"gate": "north"}, face_image("bob"))
        reloaded = Registry(registry.store_path, engine)
        assert len(reloaded.records) == 1
        assert reloaded.records[0].display_name == "Bob"
        assert reloaded.records[0].info == {"gate": "north"}


class TestIdentify:
    def test_enrolled_probe_recognized_at_hundred(self, registry):
        record = registry.enroll("Alice", {}, face_image("alice"))
        result, event = registry.identify(face_image("alice"))
        assert result.status == "recognized"
        assert result.person_id == record.person_id
        assert result.similarity_pct == 100.0
        assert result.d_face == 0.0
        assert event is None

    def test_empty_store_probe_unknown_without_similarity(self, registry):
        result, event = registry.identify(face_image("carol"))
        assert result.status == "unknown"
        assert result.similarity_pct is None and result.d_face is None
        assert event is not None and event.best_similarity is None

    def test_unknown_probe_emits_exactly_one_alert(self, registry):
        registry.enroll("Alice", {}, face_image("alice"))
        result, event = registry.identify(face_image("dave"), frame_ref="gate-7")
        assert result.status == "unknown"
        assert event.reason == "unknown-person"
        lines = registry.alert_log_path.read_text().splitlines()
        assert len(lines) == 1
        doc = json.loads(lines[0])
        assert doc["reason"] == "unknown-person"
        assert doc["frame_ref"] == "gate-7"

    def test_no_face_probe_alerts_with_reason(self, registry):
        registry.enroll("Alice", {}, face_image("alice"))
        result, event = registry.identify(blank_image())
        assert result.status == "no-face"
        assert event.reason == "no-face"

    def test_nearest_enrollee_wins(self, tmp_path, engine):
        # pin the geometry with a provider that returns fixed vectors
        class PinnedProvider:
            name = "pinned-v1"

            def __init__(self):
                self.queue = []

            def embed(self, face):
                return self.queue.pop(0)

        def vec(first, rest=0.0):
            return FaceEncoding((first,) + (rest,) * 127)

        provider = PinnedProvider()
        pinned_engine = EngineConfig(model=corpus_cascade(), provider=provider,
                                     min_size=CORPUS_MIN_SIZE)
        registry = Registry(tmp_path / "s.jsonl", pinned_engine,
                            alert_log_path=tmp_path / "a.jsonl")
        provider.queue = [vec(0.3), vec(0.4), vec(0.0)]
        a = registry.enroll("A", {}, face_image("alice"))
        registry.enroll("B", {}, face_image("bob"))
        result, _ = registry.identify(face_image("carol"))
        assert result.status == "recognized"
        assert result.person_id == a.person_id  # d 0.3 beats 0.4
        assert result.d_face == pytest.approx(0.3)

    def test_identify_does_not_mutate_records(self, registry):
        registry.enroll("Alice", {}, face_image("alice"))
        before = list(registry.records)
        registry.identify(face_image("eve"))
        assert registry.records == before

    def test_recognition_independent_of_enumeration_order(self, tmp_path, engine):
        registry = Registry(tmp_path / "s.jsonl", engine,
                            alert_log_path=tmp_path / "a.jsonl")
        registry.enroll("Alice", {}, face_image("alice"))
        registry.enroll("Bob", {}, face_image("bob"))
        result, _ = registry.identify(face_image("bob", shade=4))
        registry.records.reverse()
        result2, _ = registry.identify(face_image("bob", shade=4))
        assert (result.person_id, result.similarity_pct) == \
            (result2.person_id, result2.similarity_pct)


def random_store(rng: random.Random, n_people: int) -> list[PersonRecord]:
    records = []
    for i in range(n_people):
        encodings = tuple(
            FaceEncoding(tuple(rng.uniform(-1, 1) for _ in range(128)))
            for _ in range(rng.randint(1, 3)))
        records.append(PersonRecord(
            person_id=f"p{i:04d}",
            display_name=f"Person {i}",
            info={"k": str(rng.randint(0, 9))} if rng.random() < 0.5 else {},
            encodings=encodings,
            provider="reference-v1",
            enrolled_at=float(rng.randint(1, 10 ** 9)),
        ))
    return records


class TestPersistence:
    def test_round_trip_on_random_stores(self, tmp_path):
        rng = random.Random(5000)
        for i in range(100):
            records = random_store(rng, rng.randint(0, 6))
            path = tmp_path / f"store{i}.jsonl"
            persist_store(records, path)
            assert load_store(path) == records

    def test_missing_file_is_empty_store(self, tmp_path):
        assert load_store(tmp_path / "absent.jsonl") == []

    def test_empty_file_is_empty_store(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_store(path) == []

    def test_corrupt_trailing_line_truncated_with_warning(self, tmp_path, caplog):
        rng = random.Random(5001)
        records = random_store(rng, 2)
        path = tmp_path / "store.jsonl"
        persist_store(records, path)
        with open(path, "a") as f:
            f.write('{"person_id": "p9", "trunc')
        with caplog.at_level("WARNING"):
            loaded = load_store(path)
        assert loaded == records
        assert any("trailing" in r.message for r in caplog.records)

    def test_corrupt_middle_line_is_an_error(self, tmp_path):
        rng = random.Random(5002)
        path = tmp_path / "store.jsonl"
        persist_store(random_store(rng, 2), path)
        lines = path.read_text().splitlines()
        lines[0] = "garbage"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(StoreError, match="line 1"):
            load_store(path)

    def test_mixed_provider_rejected(self, tmp_path):
        path = tmp_path / "store.jsonl"
        records = random_store(random.Random(5003), 1)
        persist_store(records, path)
        doc = json.loads(path.read_text().splitlines()[0])
        doc["provider"] = "other-v2"
        with open(path, "a") as f:
            f.write(json.dumps(doc) + "\n")
        with pytest.raises(StoreError, match="providers"):
            load_store(path)


class _AlertSink(BaseHTTPRequestHandler):
    received = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        _AlertSink.received.append(json.loads(self.rfile.read(length)))
        self.send_response(200)
        self.end_headers()

    def log_message(self, *args):
        pass


class TestAlertCallback:
    def test_alert_posted_to_callback(self, tmp_path, engine):
        _AlertSink.received = []
        server = HTTPServer(("127.0.0.1", 0), _AlertSink)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_port}/alerts"
            registry = Registry(tmp_path / "s.jsonl", engine,
                                alert_log_path=tmp_path / "a.jsonl",
                                alert_url=url)
            registry.enroll("Alice", {}, face_image("alice"))
            result, _ = registry.identify(face_image("dave"), frame_ref="cam-1")
            assert result.status == "unknown"
            assert len(_AlertSink.received) == 1
            assert _AlertSink.received[0]["reason"] == "unknown-person"
            assert _AlertSink.received[0]["frame_ref"] == "cam-1"
        finally:
            server.shutdown()

    def test_callback_failure_does_not_break_identify(self, tmp_path, engine,
                                                      caplog):
        registry = Registry(tmp_path / "s.jsonl", engine,
                            alert_log_path=tmp_path / "a.jsonl",
                            alert_url="http://127.0.0.1:1/unroutable")
        with caplog.at_level("ERROR"):
            result, event = registry.identify(face_image("eve"))
        assert result.status == "unknown"
        assert event is not None
        assert registry.alert_log_path.exists()
        assert any("alert callback" in r.message for r in caplog.records)
