"""Headless gate-pass registry: enroll people from face images, identify
probe frames against the stored encodings, raise alerts for strangers.

The store is an append-only JSON-lines log of enrollment events; loading
replays it. Alerts always go to a local JSON-lines log and, when a callback
URL is configured, are also POSTed there (5 s timeout, no retry, failures
are logged and never block identification).
"""

from __future__ import annotations

import json
import logging
import time
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .evaluation import EngineConfig
from .imageio import RgbImage
from .matching import FaceEncoding, MatcherConfig, euclidean_distance, similarity_pct

log = logging.getLogger(__name__)

STORE_SCHEMA = 1


class StoreError(ValueError):
    pass


class NoFaceError(ValueError):
    """Enrollment image yielded no detectable face."""


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    display_name: str
    info: dict[str, str]
    encodings: tuple[FaceEncoding, ...]
    provider: str
    enrolled_at: float


@dataclass(frozen=True)
class IdentificationResult:
    status: str  # recognized | unknown | no-face
    person_id: str | None = None
    similarity_pct: float | None = None
    d_face: float | None = None


@dataclass(frozen=True)
class AlertEvent:
    timestamp: float
    frame_ref: str
    best_similarity: float | None
    reason: str  # unknown-person | no-face


def _event_line(person_id: str, name: str, info: dict[str, str], provider: str,
                encoding: FaceEncoding, enrolled_at: float) -> str:
    return json.dumps({
        "schema": STORE_SCHEMA,
        "person_id": person_id,
        "display_name": name,
        "info": info,
        "provider": provider,
        "encoding": list(encoding.values),
        "enrolled_at": enrolled_at,
    })


def _fold_event(records: list[PersonRecord], doc: dict) -> None:
    encoding = FaceEncoding(tuple(float(v) for v in doc["encoding"]))
    person_id = doc["person_id"]
    for i, rec in enumerate(records):
        if rec.person_id == person_id:
            if rec.provider != doc["provider"]:
                raise StoreError(
                    f"person {person_id!r} mixes providers "
                    f"{rec.provider!r} and {doc['provider']!r}")
            records[i] = PersonRecord(
                rec.person_id, rec.display_name, rec.info,
                rec.encodings + (encoding,), rec.provider, rec.enrolled_at)
            return
    records.append(PersonRecord(
        person_id, doc["display_name"], dict(doc["info"]),
        (encoding,), doc["provider"], float(doc["enrolled_at"])))


def load_store(path: Path) -> list[PersonRecord]:
    """Replay the enrollment log. A corrupt final line is dropped with a
    warning (interrupted append); corruption anywhere else is an error."""
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        return []
    except OSError as e:
        raise StoreError(f"unreadable store {path}: {e}") from None
    lines = [ln for ln in text.split("\n") if ln]
    records: list[PersonRecord] = []
    for i, line in enumerate(lines):
        try:
            doc = json.loads(line)
            _fold_event(records, doc)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            if isinstance(e, StoreError):
                raise
            if i == len(lines) - 1:
                log.warning("dropping corrupt trailing store line %d: %s",
                            i + 1, e)
                break
            raise StoreError(f"corrupt store line {i + 1}: {e}") from None
    return records


def persist_store(records: list[PersonRecord], path: Path) -> None:
    """Write the whole store as an event log; load_store inverts this."""
    lines = []
    for rec in records:
        for enc in rec.encodings:
            lines.append(_event_line(rec.person_id, rec.display_name, rec.info,
                                     rec.provider, enc, rec.enrolled_at))
    path.write_text("\n".join(lines) + ("\n" if lines else ""),
                    encoding="utf-8")


def post_alert(url: str, event: AlertEvent, timeout: float = 5.0) -> bool:
    """POST the alert JSON; one attempt, failures logged and swallowed."""
    body = json.dumps({
        "timestamp": event.timestamp,
        "frame_ref": event.frame_ref,
        "best_similarity": event.best_similarity,
        "reason": event.reason,
    }).encode("utf-8")
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout):
            return True
    except Exception as e:
        log.error("alert callback %s failed: %s", url, e)
        return False


class Registry:
    """Store-backed enroll/identify front. Enrollments serialize through the
    append-only log; identifications only read."""

    def __init__(self, store_path: Path | str, engine: EngineConfig,
                 alert_log_path: Path | str | None = None,
                 alert_url: str | None = None,
                 clock=time.time):
        self.store_path = Path(store_path)
        self.engine = engine
        self.alert_log_path = (Path(alert_log_path) if alert_log_path
                               else self.store_path.with_suffix(".alerts.jsonl"))
        self.alert_url = alert_url
        self.clock = clock
        self.records = load_store(self.store_path)

    def _next_person_id(self) -> str:
        existing = {r.person_id for r in self.records}
        n = len(existing) + 1
        while f"p{n:04d}" in existing:
            n += 1
        return f"p{n:04d}"

    def enroll(self, name: str, info: dict[str, str], image: RgbImage,
               person_id: str | None = None) -> PersonRecord:
        """Detect, encode and persist one enrollment; appending to an
        existing person_id adds an encoding to their record."""
        analysis = self.engine.analyze(image)
        if analysis.encoding is None:
            raise NoFaceError("no face found in enrollment image")
        person_id = person_id or self._next_person_id()
        line = _event_line(person_id, name, info, self.engine.provider.name,
                           analysis.encoding, self.clock())
        with open(self.store_path, "a", encoding="utf-8") as f:
            f.write(line + "\n")
        _fold_event(self.records, json.loads(line))
        return next(r for r in self.records if r.person_id == person_id)

    def _emit_alert(self, event: AlertEvent) -> None:
        try:
            with open(self.alert_log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps({
                    "timestamp": event.timestamp,
                    "frame_ref": event.frame_ref,
                    "best_similarity": event.best_similarity,
                    "reason": event.reason,
                }) + "\n")
        except OSError as e:
            log.error("alert log append failed: %s", e)
        if self.alert_url:
            post_alert(self.alert_url, event)

    def identify(self, frame: RgbImage, cfg: MatcherConfig | None = None,
                 frame_ref: str = "frame",
                 ) -> tuple[IdentificationResult, AlertEvent | None]:
        """Nearest stored encoding gated by the similarity threshold. Every
        non-recognized identification emits exactly one alert."""
        cfg = cfg or self.engine.matcher
        analysis = self.engine.analyze(frame)
        if analysis.encoding is None:
            event = AlertEvent(self.clock(), frame_ref, None, "no-face")
            self._emit_alert(event)
            return IdentificationResult(status="no-face"), event

        best: tuple[float, float, int] | None = None  # (d, enrolled_at, idx)
        best_person = None
        for idx, rec in enumerate(list(self.records)):  # read snapshot
            for enc in rec.encodings:
                d = euclidean_distance(analysis.encoding, enc)
                key = (d, rec.enrolled_at, idx)
                if best is None or key < best:
                    best = key
                    best_person = rec
        if best is None:
            event = AlertEvent(self.clock(), frame_ref, None, "unknown-person")
            self._emit_alert(event)
            return IdentificationResult(status="unknown"), event

        d = best[0]
        sim = similarity_pct(d, cfg)
        if sim >= cfg.threshold_pct:
            return IdentificationResult("recognized", best_person.person_id,
                                        sim, d), None
        event = AlertEvent(self.clock(), frame_ref, sim, "unknown-person")
        self._emit_alert(event)
        return IdentificationResult("unknown", None, sim, d), event
