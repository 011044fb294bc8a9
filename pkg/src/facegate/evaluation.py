"""Manifest-driven pairwise evaluation harness.

Every image in the manifest is compared against every other image (ordered
pairs, probe != gallery, N*(N-1) comparisons). Each image is analyzed once
and the result shared across its pairs. Two confusion matrices accumulate:

* detection - one outcome per pair, attributed to the probe image, so the
  detection counts always partition the comparison count: a face image with
  exactly one detection in the stopping pass is a TP, more than one an FP,
  none an FN; a non-face image is a TN with no detections, an FP otherwise.
* matching - a pair where some face image yielded no usable face counts as
  FP (a face there was, but went undetected); pairs with no computable
  distance and no missed face (non-face images without detections) are
  skipped, since nothing meaningful was compared; otherwise the truth
  (same label on two face images) against the >= threshold prediction fills
  TP/FN/FP/TN. The skip rule is configurable: `nonface_pair_rule="count"`
  books those pairs as TN instead.

TOTAL SCORE cells average the two metric rows after rounding each cell to
two decimals (half-up), which is the aggregation that reproduces published
confusion-matrix tables of this form; rounding is done in exact rational
arithmetic so boundary cases like .005 never fall victim to binary floats.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

from .cascade import CascadeModel
from .detector import DetectParams, detect_multiscale
from .enhanced import SelectionPolicy, SweepSchedule, detect_enhanced
from .imageio import RgbImage, crop, decode_netpbm, gray_to_rgb, to_grayscale
from .matching import EmbeddingProvider, FaceEncoding, MatcherConfig, match

REPORT_SCHEMA = 1


class ManifestError(ValueError):
    pass


class EncodingsFileError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    has_face: bool


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def bump(self, cell: str) -> "ConfusionCounts":
        return replace(self, **{cell: getattr(self, cell) + 1})


@dataclass(frozen=True)
class MetricRow:
    accuracy: float
    precision: float
    recall: float
    f1: float
    zero_division: tuple[str, ...] = ()


@dataclass(frozen=True)
class ComparisonRecord:
    probe: str
    gallery: str
    detection_outcome: str
    d_face: float | None
    similarity_pct: float | None
    predicted_match: bool | None
    truth_match: bool
    matching_cell: str  # tp/fp/tn/fn/skipped/errored


@dataclass(frozen=True)
class Report:
    schema: int
    mode: str
    detector: str
    provider: str
    comparisons: int
    errored: int
    skipped_matching: int
    detection_counts: ConfusionCounts
    matching_counts: ConfusionCounts
    detection_metrics: MetricRow
    matching_metrics: MetricRow
    total_score_row: MetricRow
    records: tuple[ComparisonRecord, ...]


def load_manifest(data: bytes) -> list[ManifestEntry]:
    """Parse `path,label,has_face` CSV; every violation names its line."""
    text = data.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != ["path", "label", "has_face"]:
        raise ManifestError("line 1: header must be exactly 'path,label,has_face'")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"line {lineno}: expected 3 fields, got {len(row)}")
        path, label, has_face_s = row
        if not path:
            raise ManifestError(f"line {lineno}: empty path")
        if path in seen:
            raise ManifestError(f"line {lineno}: duplicate path {path!r}")
        if has_face_s not in ("true", "false"):
            raise ManifestError(
                f"line {lineno}: has_face must be true or false, got {has_face_s!r}")
        has_face = has_face_s == "true"
        if has_face != bool(label):
            raise ManifestError(
                f"line {lineno}: has_face={has_face_s} conflicts with label "
                f"{label!r} (faces need a label, non-faces an empty one)")
        seen.add(path)
        entries.append(ManifestEntry(path, label, has_face))
    return entries


def pair_plan(entries: list[ManifestEntry]) -> list[tuple[str, str]]:
    """All ordered (probe, gallery) path pairs, probe != gallery, sorted
    lexicographically. len == N*(N-1)."""
    if len(entries) < 2:
        raise ValueError(f"need at least 2 entries, got {len(entries)}")
    paths = sorted(e.path for e in entries)
    return [(p, g) for p in paths for g in paths if p != g]


_DETECTION_CELL = {
    "exactly-one": "tp",
    "multiple": "fp",
    "none-on-face": "fn",
    "none-on-nonface": "tn",
    "found-on-nonface": "fp",
}


def detection_outcome(probe_has_face: bool, count: int) -> str:
    if probe_has_face:
        if count == 0:
            return "none-on-face"
        return "exactly-one" if count == 1 else "multiple"
    return "none-on-nonface" if count == 0 else "found-on-nonface"


def classify_detection(probe_has_face: bool, stopping_pass_count: int) -> str:
    """Confusion cell for the probe's detection outcome."""
    if stopping_pass_count < 0:
        raise ValueError("negative detection count")
    return _DETECTION_CELL[detection_outcome(probe_has_face, stopping_pass_count)]


def classify_matching(truth_match: bool, predicted_match: bool | None,
                      any_face_undetected: bool) -> str | None:
    """Confusion cell for one pair's match decision, or None to skip.

    `any_face_undetected` means a face image in the pair produced no usable
    face, which is booked as FP regardless of anything else. A pair with no
    prediction and no missed face has nothing to score and is skipped.
    """
    if any_face_undetected:
        return "fp"
    if predicted_match is None:
        return None
    if truth_match:
        return "tp" if predicted_match else "fn"
    return "fp" if predicted_match else "tn"


def metrics(c: ConfusionCounts) -> MetricRow:
    """Accuracy/precision/recall/F1 as percentages; zero denominators yield
    0 and are listed in `zero_division`."""
    if c.total == 0:
        raise ValueError("all-zero confusion counts")
    flags = []
    accuracy = 100.0 * (c.tp + c.tn) / c.total
    if c.tp + c.fp:
        precision = 100.0 * c.tp / (c.tp + c.fp)
    else:
        precision, flags = 0.0, flags + ["precision"]
    if c.tp + c.fn:
        recall = 100.0 * c.tp / (c.tp + c.fn)
    else:
        recall, flags = 0.0, flags + ["recall"]
    if precision + recall:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1"]
    return MetricRow(accuracy, precision, recall, f1, tuple(flags))


def round2_half_up(x: float | Fraction) -> Fraction:
    """Exact two-decimal half-up rounding (72.225 -> 72.23, always)."""
    f = x if isinstance(x, Fraction) else Fraction(x)
    return Fraction(math.floor(f * 100 + Fraction(1, 2)), 100)


def total_score(matching: MetricRow, detection: MetricRow) -> MetricRow:
    """Per-metric mean of the two rows, computed over the rows' 2-decimal
    cells and returned at 2 decimals (the aggregation that matches published
    tables: averaging full-precision cells can differ in the last digit)."""

    def cell(m: float, d: float) -> float:
        avg = (round2_half_up(m) + round2_half_up(d)) / 2
        return float(round2_half_up(avg))

    return MetricRow(
        accuracy=cell(matching.accuracy, detection.accuracy),
        precision=cell(matching.precision, detection.precision),
        recall=cell(matching.recall, detection.recall),
        f1=cell(matching.f1, detection.f1),
    )


# ---------------------------------------------------------------------------
# Engines: per-image analysis, computed once per image.

@dataclass(frozen=True)
class ImageAnalysis:
    count: int = 0
    encoding: FaceEncoding | None = None
    error: str | None = None


@dataclass(frozen=True)
class EngineConfig:
    """Pipeline-mode engine: cascade detection plus a pluggable embedder."""

    model: CascadeModel
    provider: EmbeddingProvider
    detector: str = "enhanced"  # "enhanced" (sweep) or "baseline"
    schedule: SweepSchedule | None = None
    policy: SelectionPolicy | None = None
    min_size: tuple[int, int] = (30, 30)
    baseline_params: DetectParams | None = None
    matcher: MatcherConfig = MatcherConfig()
    color_crop: bool = False

    def analyze(self, img: RgbImage) -> ImageAnalysis:
        gray = to_grayscale(img)
        frame = img if self.color_crop else gray_to_rgb(gray)
        if self.detector == "enhanced":
            result = detect_enhanced(self.model, gray, self.schedule,
                                     self.policy, self.min_size)
            if result is None:
                return ImageAnalysis(count=0)
            face_rect = result.face.rect
            count = len(result.detections)
        elif self.detector == "baseline":
            params = self.baseline_params or DetectParams(min_size=self.min_size)
            dets = detect_multiscale(self.model, gray, params)
            if not dets:
                return ImageAnalysis(count=0)
            face_rect = dets[0].rect  # pinned sort puts the largest first
            count = len(dets)
        else:
            raise ValueError(f"unknown detector {self.detector!r}")
        encoding = self.provider.embed(crop(frame, face_rect))
        return ImageAnalysis(count=count, encoding=encoding)


def load_encodings_jsonl(data: bytes) -> dict[str, tuple[str, FaceEncoding]]:
    """Parse precomputed encodings: one {"id", "provider", "vector"} JSON
    document per line."""
    out: dict[str, tuple[str, FaceEncoding]] = {}
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise EncodingsFileError(f"line {lineno}: invalid JSON: {e}") from None
        if not isinstance(doc, dict) or not {"id", "provider", "vector"} <= set(doc):
            raise EncodingsFileError(
                f"line {lineno}: need id/provider/vector fields")
        if doc["id"] in out:
            raise EncodingsFileError(f"line {lineno}: duplicate id {doc['id']!r}")
        try:
            enc = FaceEncoding(tuple(float(v) for v in doc["vector"]))
        except (TypeError, ValueError) as e:
            raise EncodingsFileError(f"line {lineno}: bad vector: {e}") from None
        out[doc["id"]] = (str(doc["provider"]), enc)
    return out


def dump_encodings_jsonl(encodings: dict[str, tuple[str, FaceEncoding]]) -> bytes:
    lines = []
    for path in sorted(encodings):
        provider, enc = encodings[path]
        lines.append(json.dumps(
            {"id": path, "provider": provider, "vector": list(enc.values)}))
    return ("\n".join(lines) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# The run itself.

def _analyze_all(entries: list[ManifestEntry], engine: EngineConfig,
                 base_dir: Path, jobs: int) -> dict[str, ImageAnalysis]:
    def one(entry: ManifestEntry) -> ImageAnalysis:
        try:
            img = decode_netpbm((base_dir / entry.path).read_bytes())
            if not isinstance(img, RgbImage):
                img = gray_to_rgb(img)
            return engine.analyze(img)
        except Exception as e:  # per-image errors recorded, run continues
            return ImageAnalysis(error=f"{type(e).__name__}: {e}")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]
    return {e.path: r for e, r in zip(entries, results)}


def run_eval(entries: list[ManifestEntry],
             engine: EngineConfig | None = None,
             mode: str = "pipeline",
             *,
             encodings: dict[str, tuple[str, FaceEncoding]] | None = None,
             matcher: MatcherConfig | None = None,
             base_dir: Path | str = ".",
             jobs: int = 1,
             nonface_pair_rule: str = "skip") -> Report:
    """Run the all-pairs comparison and aggregate both confusion matrices.

    pipeline mode detects and encodes every manifest image through `engine`;
    precomputed-encodings mode takes vectors from `encodings` (an entry
    missing from the file counts as face-not-found). Results are independent
    of `jobs`; records come out in pair-plan order.
    """
    if mode not in ("pipeline", "precomputed-encodings"):
        raise ValueError(f"unknown mode {mode!r}")
    if nonface_pair_rule not in ("skip", "count"):
        raise ValueError(f"unknown nonface_pair_rule {nonface_pair_rule!r}")
    by_path = {e.path: e for e in entries}
    plan = pair_plan(entries)

    if mode == "pipeline":
        if engine is None:
            raise ValueError("pipeline mode needs an engine")
        cfg = matcher or engine.matcher
        analyses = _analyze_all(entries, engine, Path(base_dir), jobs)
        provider_name = engine.provider.name
        detector_name = engine.detector
    else:
        if encodings is None:
            raise ValueError("precomputed-encodings mode needs encodings")
        cfg = matcher or MatcherConfig()
        analyses = {}
        for e in entries:
            if e.path in encodings:
                analyses[e.path] = ImageAnalysis(count=1,
                                                 encoding=encodings[e.path][1])
            else:
                analyses[e.path] = ImageAnalysis(count=0)
        provider_name = ",".join(sorted({p for p, _ in encodings.values()})) or "none"
        detector_name = "precomputed"

    det_counts = ConfusionCounts()
    match_counts = ConfusionCounts()
    skipped = errored = 0
    records: list[ComparisonRecord] = []

    for probe_path, gallery_path in plan:
        probe, gallery = by_path[probe_path], by_path[gallery_path]
        pa, ga = analyses[probe_path], analyses[gallery_path]
        truth = probe.has_face and gallery.has_face and probe.label == gallery.label

        if pa.error or ga.error:
            errored += 1
            records.append(ComparisonRecord(
                probe_path, gallery_path, "errored", None, None, None, truth,
                "errored"))
            continue

        outcome = detection_outcome(probe.has_face, pa.count)
        det_counts = det_counts.bump(_DETECTION_CELL[outcome])

        d_face = similarity = predicted = None
        if pa.encoding is not None and ga.encoding is not None:
            result = match(pa.encoding, ga.encoding, cfg)
            d_face, similarity, predicted = (result.d_face,
                                             result.similarity_pct,
                                             result.is_match)
        undetected = ((probe.has_face and pa.encoding is None)
                      or (gallery.has_face and ga.encoding is None))
        cell = classify_matching(truth, predicted, undetected)
        if cell is None and nonface_pair_rule == "count":
            cell = "tn"
        if cell is None:
            skipped += 1
            matching_cell = "skipped"
        else:
            match_counts = match_counts.bump(cell)
            matching_cell = cell
        records.append(ComparisonRecord(
            probe_path, gallery_path, outcome, d_face, similarity, predicted,
            truth, matching_cell))

    det_row = metrics(det_counts) if det_counts.total else MetricRow(
        0.0, 0.0, 0.0, 0.0, ("accuracy", "precision", "recall", "f1"))
    match_row = metrics(match_counts) if match_counts.total else MetricRow(
        0.0, 0.0, 0.0, 0.0, ("accuracy", "precision", "recall", "f1"))
    return Report(
        schema=REPORT_SCHEMA,
        mode=mode,
        detector=detector_name,
        provider=provider_name,
        comparisons=len(plan),
        errored=errored,
        skipped_matching=skipped,
        detection_counts=det_counts,
        matching_counts=match_counts,
        detection_metrics=det_row,
        matching_metrics=match_row,
        total_score_row=total_score(match_row, det_row),
        records=tuple(records),
    )


# ---------------------------------------------------------------------------
# Report emission. Byte-deterministic: fixed key order, repr floats, no
# timestamps.

def _row_dict(row: MetricRow) -> dict:
    d = {"accuracy": row.accuracy, "precision": row.precision,
         "recall": row.recall, "f1": row.f1}
    if row.zero_division:
        d["zero_division"] = list(row.zero_division)
    return d


def _counts_dict(c: ConfusionCounts) -> dict:
    return {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}


def report_to_json(report: Report) -> bytes:
    doc = {
        "schema": report.schema,
        "mode": report.mode,
        "detector": report.detector,
        "provider": report.provider,
        "comparisons": report.comparisons,
        "errored": report.errored,
        "skipped_matching": report.skipped_matching,
        "detection": {
            "counts": _counts_dict(report.detection_counts),
            "metrics": _row_dict(report.detection_metrics),
        },
        "matching": {
            "counts": _counts_dict(report.matching_counts),
            "metrics": _row_dict(report.matching_metrics),
        },
        "total_score": _row_dict(report.total_score_row),
        "records": [
            {
                "probe": r.probe,
                "gallery": r.gallery,
                "detection_outcome": r.detection_outcome,
                "d_face": r.d_face,
                "similarity_pct": r.similarity_pct,
                "predicted_match": r.predicted_match,
                "truth_match": r.truth_match,
                "matching_cell": r.matching_cell,
            }
            for r in report.records
        ],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def fmt2(x: float) -> str:
    f = round2_half_up(x)
    return f"{f.numerator / f.denominator:.2f}"


def report_to_csv(report: Report) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema", report.schema])
    w.writerow(["mode", report.mode])
    w.writerow(["detector", report.detector])
    w.writerow(["provider", report.provider])
    w.writerow(["comparisons", report.comparisons])
    w.writerow(["errored", report.errored])
    w.writerow(["skipped_matching", report.skipped_matching])
    w.writerow(["section", "tp", "fp", "tn", "fn"])
    for name, c in (("matching_counts", report.matching_counts),
                    ("detection_counts", report.detection_counts)):
        w.writerow([name, c.tp, c.fp, c.tn, c.fn])
    w.writerow(["section", "accuracy", "precision", "recall", "f1"])
    for name, row in (("matching_metrics", report.matching_metrics),
                      ("detection_metrics", report.detection_metrics),
                      ("total_score", report.total_score_row)):
        w.writerow([name, fmt2(row.accuracy), fmt2(row.precision),
                    fmt2(row.recall), fmt2(row.f1)])
    return buf.getvalue().encode("utf-8")
