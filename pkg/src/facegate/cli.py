"""Command-line front end: every pipeline stage plus the evaluation harness.

Results go to stdout as JSON (byte-identical across identical invocations);
diagnostics go to stderr. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import models
from .cascade import CascadeModel, parse_cascade_xml
from .detector import DetectParams, detect_multiscale
from .enhanced import (SelectionPolicy, SweepSchedule, default_schedule,
                       detect_enhanced)
from .evaluation import (EngineConfig, load_encodings_jsonl, load_manifest,
                         report_to_csv, report_to_json, run_eval)
from .imageio import RgbImage, decode_netpbm, gray_to_rgb, to_grayscale
from .matching import MatcherConfig, ReferenceEmbedder, match, similarity_pct
from .registry import Registry

PROVIDERS = {"reference-v1": ReferenceEmbedder}

# Every domain error (NetpbmError, CascadeFormatError, ManifestError,
# EncodingsFileError, StoreError, NoFaceError, validation failures) is a
# ValueError; they all map to exit code 2.
_DATA_ERRORS = (ValueError, FileNotFoundError, IsADirectoryError,
                PermissionError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are 1
        raise UsageError(message)


def _parse_min_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            v = int(parts[0])
            return v, v
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise UsageError(f"bad --min-size {text!r}, expected N or WxH")


def _parse_schedule(text: str) -> SweepSchedule:
    steps = []
    for part in text.split(","):
        try:
            factor, neighbors = part.split(":")
            steps.append((float(factor), int(neighbors)))
        except ValueError:
            raise UsageError(
                f"bad --schedule step {part!r}, expected factor:neighbors")
    try:
        return SweepSchedule(tuple(steps))
    except ValueError as e:
        raise UsageError(f"bad --schedule: {e}")


def _load_model(path: str | None) -> CascadeModel:
    data = models.default_cascade_bytes() if path is None else Path(path).read_bytes()
    return parse_cascade_xml(data)


def _load_rgb(path: str) -> RgbImage:
    img = decode_netpbm(Path(path).read_bytes())
    return img if isinstance(img, RgbImage) else gray_to_rgb(img)


def _emit(obj, pretty: bool) -> None:
    if pretty:
        sys.stdout.write(json.dumps(obj, indent=2) + "\n")
    else:
        sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _engine(args) -> EngineConfig:
    provider_cls = PROVIDERS.get(args.provider)
    if provider_cls is None:
        raise UsageError(f"unknown provider {args.provider!r}, "
                         f"choices: {sorted(PROVIDERS)}")
    return EngineConfig(
        model=_load_model(args.model),
        provider=provider_cls(),
        detector=getattr(args, "detector", "enhanced"),
        schedule=_parse_schedule(args.schedule) if args.schedule else None,
        policy=SelectionPolicy(args.center_radius),
        min_size=_parse_min_size(args.min_size),
        matcher=MatcherConfig(d_max=args.d_max, threshold_pct=args.threshold),
        color_crop=args.color_crop,
    )


def _rect_dict(rect) -> dict:
    return {"x": rect.x, "y": rect.y, "w": rect.w, "h": rect.h}


def _selected_dict(result) -> dict:
    face = result.face
    return {
        "rect": _rect_dict(face.rect),
        "dist_to_center": face.dist_to_center,
        "used_params": f"{face.used_params[0]:.2f}/{face.used_params[1]}",
        "candidates_at_stop": face.candidates_at_stop,
        "detections": [
            {**_rect_dict(d.rect), "neighbors": d.neighbors}
            for d in result.detections
        ],
    }


def cmd_detect(args) -> int:
    model = _load_model(args.model)
    gray = to_grayscale(_load_rgb(args.image))
    params = DetectParams(scale_factor=args.scale_factor,
                          min_neighbors=args.min_neighbors,
                          min_size=_parse_min_size(args.min_size))
    dets = detect_multiscale(model, gray, params)
    _emit([{**_rect_dict(d.rect), "neighbors": d.neighbors} for d in dets],
          args.pretty)
    return 0


def cmd_detect_enhanced(args) -> int:
    model = _load_model(args.model)
    gray = to_grayscale(_load_rgb(args.image))
    schedule = _parse_schedule(args.schedule) if args.schedule else default_schedule()
    result = detect_enhanced(model, gray, schedule,
                             SelectionPolicy(args.center_radius),
                             _parse_min_size(args.min_size))
    _emit(None if result is None else _selected_dict(result), args.pretty)
    return 0


def cmd_encode(args) -> int:
    engine = _engine(args)
    analysis = engine.analyze(_load_rgb(args.image))
    if analysis.encoding is None:
        print("no face found", file=sys.stderr)
        return 2
    _emit({"provider": engine.provider.name,
           "detections_at_stop": analysis.count,
           "vector": list(analysis.encoding.values)}, args.pretty)
    return 0


def cmd_match(args) -> int:
    engine = _engine(args)
    results = []
    for path in (args.image1, args.image2):
        analysis = engine.analyze(_load_rgb(path))
        if analysis.encoding is None:
            print(f"no face found in {path}", file=sys.stderr)
            return 2
        results.append(analysis.encoding)
    outcome = match(results[0], results[1], engine.matcher)
    _emit({"provider": engine.provider.name,
           "d_face": outcome.d_face,
           "similarity_pct": outcome.similarity_pct,
           "match": outcome.is_match}, args.pretty)
    return 0


def _sweep_section(records, thresholds, d_max):
    rows = []
    cfg0 = MatcherConfig(d_max=d_max)
    for t in thresholds:
        tp = fp = tn = fn = 0
        for r in records:
            if r.matching_cell in ("skipped", "errored"):
                continue
            if r.d_face is None:
                fp += 1  # undetected-face pairs stay FP at any threshold
                continue
            predicted = similarity_pct(r.d_face, cfg0) >= t
            if r.truth_match:
                tp, fn = (tp + 1, fn) if predicted else (tp, fn + 1)
            else:
                fp, tn = (fp + 1, tn) if predicted else (fp, tn + 1)
        rows.append({"threshold_pct": t, "tp": tp, "fp": fp, "tn": tn, "fn": fn})
    return rows


def cmd_eval(args) -> int:
    manifest_path = Path(args.manifest)
    entries = load_manifest(manifest_path.read_bytes())
    base_dir = manifest_path.parent
    matcher = MatcherConfig(d_max=args.d_max, threshold_pct=args.threshold)
    if args.encodings:
        encodings = load_encodings_jsonl(Path(args.encodings).read_bytes())
        report = run_eval(entries, mode="precomputed-encodings",
                          encodings=encodings, matcher=matcher,
                          base_dir=base_dir, jobs=args.jobs,
                          nonface_pair_rule=args.nonface_pair_rule)
    else:
        report = run_eval(entries, engine=_engine(args), mode="pipeline",
                          matcher=matcher, base_dir=base_dir, jobs=args.jobs,
                          nonface_pair_rule=args.nonface_pair_rule)
    if args.report_json:
        Path(args.report_json).write_bytes(report_to_json(report))
    if args.report_csv:
        Path(args.report_csv).write_bytes(report_to_csv(report))
    summary = json.loads(report_to_json(report).decode("utf-8"))
    del summary["records"]
    if args.threshold_sweep:
        try:
            thresholds = [float(t) for t in args.threshold_sweep.split(",")]
        except ValueError:
            raise UsageError(f"bad --threshold-sweep {args.threshold_sweep!r}")
        summary["threshold_sweep"] = _sweep_section(report.records, thresholds,
                                                    args.d_max)
    _emit(summary, args.pretty)
    return 0


def _registry(args) -> Registry:
    alert_url = args.alert_url or os.environ.get("GATEPASS_ALERT_URL") or None
    return Registry(args.store, _engine(args), alert_log_path=args.alert_log,
                    alert_url=alert_url)


def cmd_enroll(args) -> int:
    registry = _registry(args)
    info = {}
    for item in args.info or []:
        if "=" not in item:
            raise UsageError(f"bad --info {item!r}, expected key=value")
        key, value = item.split("=", 1)
        info[key] = value
    record = registry.enroll(args.name, info, _load_rgb(args.image),
                             person_id=args.id)
    _emit({"person_id": record.person_id,
           "display_name": record.display_name,
           "encodings": len(record.encodings),
           "provider": record.provider}, args.pretty)
    return 0


def cmd_identify(args) -> int:
    registry = _registry(args)
    result, _event = registry.identify(_load_rgb(args.image),
                                       frame_ref=args.image)
    _emit({"status": result.status,
           "person_id": result.person_id,
           "similarity_pct": result.similarity_pct,
           "d_face": result.d_face}, args.pretty)
    return 0


def _add_common(p: argparse.ArgumentParser, *, matcher: bool = True) -> None:
    p.add_argument("--model", help="cascade XML path (default: bundled model)")
    p.add_argument("--min-size", default="30x30", help="minimum face size, N or WxH")
    p.add_argument("--center-radius", type=float, default=0.25,
                   help="central-selection radius as a fraction of the diagonal")
    p.add_argument("--schedule",
                   help="sweep steps 'factor:neighbors,...' (default 1.10:10 .. 1.01:1)")
    p.add_argument("--provider", default="reference-v1")
    p.add_argument("--color-crop", action="store_true",
                   help="crop the original color frame instead of the "
                        "grayscale-derived RGB frame")
    if matcher:
        p.add_argument("--threshold", type=float, default=75.0,
                       help="similarity %% required for a match")
        p.add_argument("--d-max", type=float, default=1.0)


def build_parser() -> _Parser:
    parser = _Parser(prog="facegate")
    parser.add_argument("--pretty", action="store_true",
                        help="indent JSON output")
    parser.add_argument("--config", help="JSON file with default flag values "
                                         "(explicit flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="baseline multi-scale detection")
    p.add_argument("image")
    p.add_argument("--model")
    p.add_argument("--scale-factor", type=float, default=1.1)
    p.add_argument("--min-neighbors", type=int, default=3)
    p.add_argument("--min-size", default="30x30")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("detect-enhanced", help="adaptive sweep, one face")
    p.add_argument("image")
    _add_common(p, matcher=False)
    p.set_defaults(func=cmd_detect_enhanced)

    p = sub.add_parser("encode", help="detect and encode one image")
    p.add_argument("image")
    _add_common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("match", help="compare two images")
    p.add_argument("image1")
    p.add_argument("image2")
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="run the pairwise evaluation harness")
    p.add_argument("--manifest", required=True)
    p.add_argument("--encodings", help="precomputed encodings JSONL "
                                       "(skips the detection pipeline)")
    p.add_argument("--detector", choices=["enhanced", "baseline"],
                   default="enhanced")
    p.add_argument("--report-json")
    p.add_argument("--report-csv")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--nonface-pair-rule", choices=["skip", "count"],
                   default="skip")
    p.add_argument("--threshold-sweep",
                   help="extra thresholds to tabulate, e.g. '50,75,90'")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("enroll", help="register a person in the store")
    p.add_argument("image")
    p.add_argument("--store", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--id", help="existing person id to append to")
    p.add_argument("--info", action="append", metavar="KEY=VALUE")
    p.add_argument("--alert-log")
    p.add_argument("--alert-url")
    _add_common(p)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("identify", help="identify a probe frame")
    p.add_argument("image")
    p.add_argument("--store", required=True)
    p.add_argument("--alert-log")
    p.add_argument("--alert-url", help="POST alerts here "
                                       "(default: $GATEPASS_ALERT_URL)")
    _add_common(p)
    p.set_defaults(func=cmd_identify)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        probe, _ = parser.parse_known_args(argv)
        if probe.config:
            defaults = json.loads(Path(probe.config).read_text(encoding="utf-8"))
            if not isinstance(defaults, dict):
                raise UsageError("--config must hold a JSON object")
            parser.set_defaults(**{k.replace("-", "_"): v
                                   for k, v in defaults.items()})
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"error: invalid JSON: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
