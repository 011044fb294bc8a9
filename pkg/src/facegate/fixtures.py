"""Deterministic synthetic fixtures: tiny hand-built cascades, a stylized
face-proxy pattern renderer, and the 12-image corpus bundled for the
evaluation harness smoke run.

The pattern family and the detection cascades are co-designed:

* Detection stumps pair equal-sized boxes with opposite weights. Equal sizes
  round identically at every scale, so flat windows score exactly zero no
  matter how coordinates round (single rects with area-ratio weights drift
  on bright flat regions once rounding breaks the ratio).
* Two stumps compare the center box against the top-left and bottom-right
  corner boxes. A linear gradient pushes those two scores in opposite
  directions, so requiring both kills flat images, ramps and lone edges
  while a dark-ring/bright-core pattern passes both.
* The pattern's NW and SE annulus sectors are always dark so the corner
  boxes see dark content at the aligned scale; the remaining six sectors
  carry a per-identity bright/dark code (pairwise Hamming distance >= 3),
  which is what separates identities in encoding space.

Everything is seeded with `random.Random`, stable across platforms.
"""

from __future__ import annotations

import csv
import io
import math
import random
from pathlib import Path

from .cascade import CascadeModel, HaarFeature, Stage, WeakStump, WeightedRect
from .imageio import GrayImage, Rect, RgbImage, encode_netpbm, round_half_up

# Identity sector codes, one bit per coded sector (E, S, SW, W, N, NE);
# 1 = bright. mallory is the decoy planted next to eve's second shot.
SECTOR_CODES = {
    "alice": "111000",
    "bob": "000111",
    "carol": "110110",
    "dave": "101011",
    "eve": "011101",
    "mallory": "010110",
}
_FIXED_DARK_OCTANTS = (1, 5)  # SE, NW
_CODED_OCTANTS = (0, 2, 3, 4, 6, 7)  # E, S, SW, W, N, NE


def fixture_cascade(window: int = 8, threshold: float = 0.4) -> CascadeModel:
    """Single-stump center-vs-surround contrast probe (window 8).

    Meant for per-window evaluation tests on hand-built windows. Its 4:1
    area-ratio weighting is not rounding-stable across scales, so scanning
    fixtures use corpus_cascade instead.
    """
    q = window // 4
    feature = HaarFeature((
        WeightedRect(Rect(0, 0, window, window), -1.0),
        WeightedRect(Rect(q, q, 2 * q, 2 * q), 4.0),
    ))
    stump = WeakStump(feature=0, threshold=threshold, left_leaf=-1.0,
                      right_leaf=1.0)
    return CascadeModel(window, window, (feature,), (Stage(0.0, (stump,)),))


def _corner_contrast_parts() -> tuple[tuple[HaarFeature, ...], tuple[WeakStump, WeakStump]]:
    # Corner boxes are inset one pixel so their scaled extents never round
    # past the scaled window: a clipped box would lose the equal-area
    # guarantee and pick up brightness-proportional drift on flat regions.
    center = Rect(5, 5, 6, 6)
    feat_a = HaarFeature((WeightedRect(center, 4.0),
                          WeightedRect(Rect(1, 1, 6, 6), -4.0)))
    feat_b = HaarFeature((WeightedRect(center, 4.0),
                          WeightedRect(Rect(9, 9, 6, 6), -4.0)))
    stump_a = WeakStump(feature=0, threshold=0.45, left_leaf=-1.0, right_leaf=1.0)
    stump_b = WeakStump(feature=1, threshold=0.45, left_leaf=-1.0, right_leaf=1.0)
    return (feat_a, feat_b), (stump_a, stump_b)


def corpus_cascade() -> CascadeModel:
    """Window-16 blob detector: center box must outshine both the top-left
    and the bottom-right corner boxes (one stage, two stumps)."""
    features, stumps = _corner_contrast_parts()
    return CascadeModel(16, 16, features, (Stage(1.5, stumps),))


def corpus_cascade_staged() -> CascadeModel:
    """Same accept set as corpus_cascade but one stump per stage, for tests
    that need to observe multi-stage early exit."""
    features, (stump_a, stump_b) = _corner_contrast_parts()
    return CascadeModel(16, 16, features,
                        (Stage(0.0, (stump_a,)), Stage(0.0, (stump_b,))))


def render_blob(size: int, bright: int = 200, dark: int = 30) -> list[list[int]]:
    """Plain two-tone blob: dark ring (quarter thickness), bright center."""
    q = size // 4
    rows = []
    for y in range(size):
        row = []
        for x in range(size):
            inside = q <= x < size - q and q <= y < size - q
            row.append(bright if inside else dark)
        rows.append(row)
    return rows


def _octant(x: int, y: int, size: int) -> int:
    a = math.atan2(y + 0.5 - size / 2.0, x + 0.5 - size / 2.0) + math.pi / 8.0
    if a < 0:
        a += 2.0 * math.pi
    return int(a / (math.pi / 4.0)) % 8


def render_coded_pattern(size: int, code: str, bright: int, dark: int,
                         ring: int, shade: int = 0) -> list[list[int]]:
    """Dark ring, bright core, annulus sectors colored by `code` (one bit per
    coded sector, NW/SE always dark). Geometry follows the window-16 cascade
    layout scaled to `size`."""
    t = max(1, round_half_up(size * 1 / 16))
    c0 = round_half_up(size * 5 / 16)
    cs = round_half_up(size * 6 / 16)

    def clamp(v: int) -> int:
        return max(0, min(255, v + shade))

    rows = []
    for y in range(size):
        row = []
        for x in range(size):
            if x < t or y < t or x >= size - t or y >= size - t:
                v = ring
            elif c0 <= x < c0 + cs and c0 <= y < c0 + cs:
                v = bright
            else:
                oct_ = _octant(x, y, size)
                if oct_ in _FIXED_DARK_OCTANTS:
                    v = dark
                else:
                    v = bright if code[_CODED_OCTANTS.index(oct_)] == "1" else dark
            row.append(clamp(v))
        rows.append(row)
    return rows


def render_face_pattern(size: int, identity: str, shade: int = 0) -> list[list[int]]:
    """Identity-keyed pattern: the sector code plus identity-seeded levels.

    `shade` shifts every level a little so two shots of one identity are
    similar but not pixel identical.
    """
    rng = random.Random(f"face-pattern:{identity}")
    return render_coded_pattern(size, SECTOR_CODES[identity],
                                bright=rng.randint(210, 240),
                                dark=rng.randint(25, 40),
                                ring=rng.randint(15, 35),
                                shade=shade)


def paste(canvas: list[list[int]], pattern: list[list[int]], x: int, y: int):
    for dy, row in enumerate(pattern):
        canvas[y + dy][x : x + len(row)] = row


def gray_from_rows(rows: list[list[int]]) -> GrayImage:
    h, w = len(rows), len(rows[0])
    return GrayImage(w, h, bytes(v for row in rows for v in row))


def rgb_from_rows(rows: list[list[int]]) -> RgbImage:
    """Gray content in an RGB container (every channel equal)."""
    h, w = len(rows), len(rows[0])
    return RgbImage(w, h, bytes(b for row in rows for v in row for b in (v, v, v)))


def flat_canvas(w: int, h: int, value: int = 110) -> list[list[int]]:
    return [[value] * w for _ in range(h)]


def gradient_canvas(w: int, h: int, lo: int = 90, hi: int = 150) -> list[list[int]]:
    return [[lo + (hi - lo) * x // max(1, w - 1) for x in range(w)]
            for _ in range(h)]


# ---------------------------------------------------------------------------
# Bundled corpus: 5 identities x 2 shots + 2 non-face images.

CORPUS_SIZE = 120
CORPUS_FACE = 40
CORPUS_MIN_SIZE = (36, 36)  # skips sub-pattern scales; see module docstring
CORPUS_IDENTITIES = ("alice", "bob", "carol", "dave", "eve")
_PLANT_OFFSETS = {
    "alice": (-4, 2),
    "bob": (3, -3),
    "carol": (4, 4),
    "dave": (-2, -4),
    "eve": (0, 0),
}


def corpus_face_image(identity: str, shot: int) -> RgbImage:
    """One corpus photo: the identity's pattern planted near the center.

    Both shots share the placement so the selected crops align; shot 2 is
    rendered a shade brighter. eve's second shot carries an off-center decoy
    pattern, making its stopping pass report two detections.
    """
    canvas = flat_canvas(CORPUS_SIZE, CORPUS_SIZE)
    off_x, off_y = _PLANT_OFFSETS[identity]
    x = (CORPUS_SIZE - CORPUS_FACE) // 2 + off_x
    y = (CORPUS_SIZE - CORPUS_FACE) // 2 + off_y
    paste(canvas, render_face_pattern(CORPUS_FACE, identity,
                                      shade=4 if shot == 2 else 0), x, y)
    if identity == "eve" and shot == 2:
        paste(canvas, render_face_pattern(36, "mallory"), 4, 4)
    return rgb_from_rows(canvas)


def corpus_nonface_image(index: int) -> RgbImage:
    rows = (flat_canvas(CORPUS_SIZE, CORPUS_SIZE) if index == 1
            else gradient_canvas(CORPUS_SIZE, CORPUS_SIZE))
    return rgb_from_rows(rows)


def build_corpus(out_dir: Path) -> Path:
    """Write the 12 corpus images plus manifest.csv; returns the manifest path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for identity in CORPUS_IDENTITIES:
        for shot in (1, 2):
            name = f"{identity}{shot}.ppm"
            (out_dir / name).write_bytes(
                encode_netpbm(corpus_face_image(identity, shot)))
            entries.append((name, identity, "true"))
    for index in (1, 2):
        name = f"nonface{index}.ppm"
        (out_dir / name).write_bytes(encode_netpbm(corpus_nonface_image(index)))
        entries.append((name, "", "false"))

    manifest = out_dir / "manifest.csv"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "label", "has_face"])
    writer.writerows(entries)
    manifest.write_text(buf.getvalue(), encoding="utf-8")
    return manifest
