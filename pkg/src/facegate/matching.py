"""128-dimensional face encodings and the distance-to-similarity match rule.

Similarity maps Euclidean distance through (1 - d/d_max) * 100 + 25, clamped
to [0, 100]; a pair matches when the similarity reaches the threshold
(default 75%). Under the default config that is algebraically the predicate
d <= 0.5. The raw formula gives 125 at d = 0 and 25 at d = d_max, so the
clamp is what makes a perfect match read 100%; 0% is unreachable. This is a
documented quirk of the published formula, kept literal on purpose.

The deep embedding model itself is out of scope: anything satisfying
EmbeddingProvider can be plugged in. ReferenceEmbedder is the deterministic
stand-in used by the tests and the bundled corpus: nearest-resize to 32x32,
scale to [0,1], project through a fixed 128x3072 xorshift64*-seeded matrix,
L2-normalize. Sums use math.fsum, so encodings are bit-identical across
platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from operator import mul
from typing import Protocol, runtime_checkable

from .cascade import CascadeModel
from .enhanced import SelectedFace, SweepSchedule, SelectionPolicy, detect_enhanced
from .imageio import RgbImage, crop, gray_to_rgb, resize_nearest, to_grayscale

ENCODING_DIM = 128

_EMBED_SIZE = 32  # crops are resized to 32x32 before projection
_PRNG_SEED = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class FaceEncoding:
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != ENCODING_DIM:
            raise ValueError(f"encoding must have {ENCODING_DIM} values, "
                             f"got {len(self.values)}")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("encoding contains non-finite values")


@dataclass(frozen=True)
class MatcherConfig:
    d_max: float = 1.0
    threshold_pct: float = 75.0
    clamp_low: float = 0.0
    clamp_high: float = 100.0

    def __post_init__(self):
        if not self.d_max > 0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")
        if not 0.0 <= self.threshold_pct <= 100.0:
            raise ValueError(f"threshold_pct out of range: {self.threshold_pct}")


@dataclass(frozen=True)
class MatchResult:
    d_face: float
    similarity_pct: float
    is_match: bool


def euclidean_distance(e1: FaceEncoding, e2: FaceEncoding) -> float:
    """sqrt of the summed squared coordinate differences, accumulated in
    float64 left to right."""
    a, b = e1.values, e2.values
    if len(a) != len(b):
        raise ValueError(f"encoding length mismatch {len(a)} vs {len(b)}")
    acc = 0.0
    for i in range(len(a)):
        diff = a[i] - b[i]
        acc += diff * diff
    return math.sqrt(acc)


def similarity_pct(d_face: float, cfg: MatcherConfig = MatcherConfig()) -> float:
    if d_face < 0:
        raise ValueError(f"negative distance {d_face}")
    raw = (1.0 - d_face / cfg.d_max) * 100.0 + 25.0
    return min(max(raw, cfg.clamp_low), cfg.clamp_high)


def match(e1: FaceEncoding, e2: FaceEncoding,
          cfg: MatcherConfig = MatcherConfig()) -> MatchResult:
    d = euclidean_distance(e1, e2)
    sim = similarity_pct(d, cfg)
    return MatchResult(d, sim, sim >= cfg.threshold_pct)


@runtime_checkable
class EmbeddingProvider(Protocol):
    """Named, versioned, deterministic map from an RGB crop to an encoding."""

    name: str

    def embed(self, face: RgbImage) -> FaceEncoding: ...


def _xorshift64star(seed: int):
    x = seed & _MASK64
    while True:
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        yield ((x * 0x2545F4914F6CDD1D) & _MASK64)


_projection_rows: list[tuple[float, ...]] | None = None


def _projection() -> list[tuple[float, ...]]:
    """The fixed 128x3072 projection, entries in [-1, 1), generated row-major
    from one xorshift64* stream. Built once per process."""
    global _projection_rows
    if _projection_rows is None:
        gen = _xorshift64star(_PRNG_SEED)
        dim = _EMBED_SIZE * _EMBED_SIZE * 3
        _projection_rows = [
            tuple((next(gen) >> 11) * 2.0 ** -53 * 2.0 - 1.0 for _ in range(dim))
            for _ in range(ENCODING_DIM)
        ]
    return _projection_rows


def reference_embed(face: RgbImage) -> FaceEncoding:
    """Deterministic test-double embedding: resize, project, L2-normalize.

    A zero crop has no direction to normalize and maps to the zero encoding.
    """
    resized = resize_nearest(face, _EMBED_SIZE, _EMBED_SIZE)
    px = [v / 255.0 for v in resized.data]
    rows = _projection()
    raw = [math.fsum(map(mul, row, px)) for row in rows]
    norm = math.sqrt(math.fsum(v * v for v in raw))
    if norm == 0.0:
        return FaceEncoding(tuple(raw))
    return FaceEncoding(tuple(v / norm for v in raw))


class ReferenceEmbedder:
    name = "reference-v1"

    def embed(self, face: RgbImage) -> FaceEncoding:
        return reference_embed(face)


def encode_pipeline(model: CascadeModel, img: RgbImage,
                    provider: EmbeddingProvider,
                    schedule: SweepSchedule | None = None,
                    policy: SelectionPolicy | None = None,
                    min_size: tuple[int, int] = (30, 30),
                    color_crop: bool = False,
                    ) -> tuple[SelectedFace, FaceEncoding] | None:
    """Full frame-to-encoding pipeline.

    Detection always runs on the grayscale image. By default the crop is
    taken from that grayscale frame converted back to RGB; `color_crop=True`
    crops the original color frame instead. The selected rect is identical
    either way.
    """
    gray = to_grayscale(img)
    result = detect_enhanced(model, gray, schedule, policy, min_size)
    if result is None:
        return None
    frame = img if color_crop else gray_to_rgb(gray)
    face_crop = crop(frame, result.face.rect)
    return result.face, provider.embed(face_crop)
