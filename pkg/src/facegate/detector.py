"""Baseline multi-scale sliding-window cascade detection.

The scan contract is pinned tightly enough to test against per-window oracles:

* scales form the ladder 1, F, F^2, ... (F = scale_factor); a scale is used
  when the rounded window both fits the image and is at least the clamped
  minimum size (min_size smaller than the model window clamps up to it);
* the slide step at a scale is max(1, round_half_up(scale)) pixels;
* window evaluation: area = sw*sh, mean = rect_sum/area,
  var = sq_rect_sum/area - mean^2, std = sqrt(var) if var > 1 else 1;
  each feature rect is scaled with round-half-up per coordinate (extents
  clipped to the scaled window because rounding can overshoot by a pixel);
  feature value f = sum(weight_i * rect_sum_i) / area; a stump votes
  left_leaf when f < threshold * std; a stage rejects early when its summed
  votes fall below the stage threshold;
* candidates are emitted in ascending scale then row-major order.

The vectorized scan below performs, per surviving window, exactly the
float64 operations of `eval_window` in the same order, so both routes agree
bit for bit. All functions are pure over immutable inputs; a parsed model
and an integral image can be shared across threads freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cascade import CascadeModel
from .imageio import GrayImage, Rect, round_half_up

# Survivor fraction below which the dense grid evaluation switches to
# gathering over compacted window indices.
_COMPACT_THRESHOLD = 0.35


@dataclass(frozen=True)
class IntegralImage:
    """Summed-area tables (values and squared values), one extra zero row/col.

    Entries are int64, exact for 8-bit images up to 4096x4096.
    """

    width: int
    height: int
    sum: np.ndarray
    sqsum: np.ndarray

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        s = self.sum
        return int(s[y + h, x + w] - s[y, x + w] - s[y + h, x] + s[y, x])

    def rect_sqsum(self, x: int, y: int, w: int, h: int) -> int:
        s = self.sqsum
        return int(s[y + h, x + w] - s[y, x + w] - s[y + h, x] + s[y, x])


@dataclass(frozen=True)
class DetectParams:
    scale_factor: float = 1.1
    min_neighbors: int = 3
    min_size: tuple[int, int] = (30, 30)

    def __post_init__(self):
        if not self.scale_factor > 1.0:
            raise ValueError(f"scale_factor must exceed 1.0, got {self.scale_factor}")
        if self.min_neighbors < 0:
            raise ValueError(f"negative min_neighbors {self.min_neighbors}")
        if self.min_size[0] < 1 or self.min_size[1] < 1:
            raise ValueError(f"bad min_size {self.min_size}")


@dataclass(frozen=True)
class Detection:
    rect: Rect
    neighbors: int


def integral(img: GrayImage) -> IntegralImage:
    px = np.frombuffer(img.data, dtype=np.uint8).reshape(img.height, img.width)
    s = np.zeros((img.height + 1, img.width + 1), dtype=np.int64)
    q = np.zeros_like(s)
    np.cumsum(np.cumsum(px, axis=0, dtype=np.int64), axis=1, out=s[1:, 1:])
    sq = px.astype(np.int64) ** 2
    np.cumsum(np.cumsum(sq, axis=0), axis=1, out=q[1:, 1:])
    return IntegralImage(img.width, img.height, s, q)


def _scaled_window(model: CascadeModel, scale: float) -> tuple[int, int]:
    return round_half_up(model.window_w * scale), round_half_up(model.window_h * scale)


def _scaled_features(model: CascadeModel, scale: float, sw: int, sh: int):
    """Per-feature tuples of (x, y, w, h, weight) at this scale."""
    scaled = []
    for feat in model.features:
        rects = []
        for wr in feat.rects:
            r = wr.rect
            x = round_half_up(r.x * scale)
            y = round_half_up(r.y * scale)
            w = min(round_half_up(r.w * scale), sw - x)
            h = min(round_half_up(r.h * scale), sh - y)
            rects.append((x, y, w, h, wr.weight))
        scaled.append(tuple(rects))
    return scaled


def eval_window(model: CascadeModel, ii: IntegralImage, x: int, y: int,
                scale: float) -> bool:
    """Run the cascade on one window; short-circuits on the first failed stage."""
    sw, sh = _scaled_window(model, scale)
    if x < 0 or y < 0 or x + sw > ii.width or y + sh > ii.height:
        raise ValueError(f"window {sw}x{sh} at ({x},{y}) out of bounds")
    area = sw * sh
    mean = ii.rect_sum(x, y, sw, sh) / area
    var = ii.rect_sqsum(x, y, sw, sh) / area - mean * mean
    std = math.sqrt(var) if var > 1 else 1.0
    feats = _scaled_features(model, scale, sw, sh)
    for stage in model.stages:
        ssum = 0.0
        for stump in stage.stumps:
            f = None
            for rx, ry, rw, rh, weight in feats[stump.feature]:
                term = weight * ii.rect_sum(x + rx, y + ry, rw, rh)
                f = term if f is None else f + term
            f = f / area
            ssum = ssum + (stump.left_leaf if f < stump.threshold * std
                           else stump.right_leaf)
        if ssum < stage.threshold:
            return False
    return True


def _grid_view(tbl: np.ndarray, ox: int, oy: int, step: int, nx: int, ny: int):
    return tbl[oy : oy + (ny - 1) * step + 1 : step,
               ox : ox + (nx - 1) * step + 1 : step]


def _grid_rect_sum(tbl, rx, ry, rw, rh, step, nx, ny):
    return (_grid_view(tbl, rx + rw, ry + rh, step, nx, ny)
            - _grid_view(tbl, rx + rw, ry, step, nx, ny)
            - _grid_view(tbl, rx, ry + rh, step, nx, ny)
            + _grid_view(tbl, rx, ry, step, nx, ny))


def _scan_scale(model: CascadeModel, ii: IntegralImage, scale: float,
                sw: int, sh: int, step: int) -> list[tuple[int, int]]:
    """Accepted (x, y) placements for one scale, row-major order."""
    nx = (ii.width - sw) // step + 1
    ny = (ii.height - sh) // step + 1
    area = sw * sh
    feats = _scaled_features(model, scale, sw, sh)

    win = _grid_rect_sum(ii.sum, 0, 0, sw, sh, step, nx, ny)
    winsq = _grid_rect_sum(ii.sqsum, 0, 0, sw, sh, step, nx, ny)
    mean = win / area
    var = winsq / area - mean * mean
    std = np.ones_like(var)
    big = var > 1
    std[big] = np.sqrt(var[big])

    alive = np.ones((ny, nx), dtype=bool)
    n_stages = len(model.stages)
    stage_idx = 0

    # Dense phase: whole-grid strided slices while most windows survive.
    while stage_idx < n_stages:
        stage = model.stages[stage_idx]
        ssum = np.zeros((ny, nx))
        for stump in stage.stumps:
            f = None
            for rx, ry, rw, rh, weight in feats[stump.feature]:
                term = weight * _grid_rect_sum(ii.sum, rx, ry, rw, rh, step, nx, ny)
                f = term if f is None else f + term
            f = f / area
            ssum = ssum + np.where(f < stump.threshold * std,
                                   stump.left_leaf, stump.right_leaf)
        alive &= ssum >= stage.threshold
        stage_idx += 1
        frac = np.count_nonzero(alive) / alive.size
        if frac == 0.0:
            return []
        if frac < _COMPACT_THRESHOLD:
            break

    gy, gx = np.nonzero(alive)  # row-major
    if stage_idx == n_stages:
        return [(int(x) * step, int(y) * step) for y, x in zip(gy, gx)]

    # Compact phase: gather over flat indices of the survivors only.
    stride = ii.width + 1
    flat_sum = ii.sum.ravel()
    base = gy.astype(np.int64) * (step * stride) + gx.astype(np.int64) * step
    std_c = std[gy, gx]
    px = gx.astype(np.int64) * step
    py = gy.astype(np.int64) * step

    while stage_idx < n_stages:
        stage = model.stages[stage_idx]
        ssum = np.zeros(len(base))
        for stump in stage.stumps:
            f = None
            for rx, ry, rw, rh, weight in feats[stump.feature]:
                tl = ry * stride + rx
                tr = tl + rw
                bl = tl + rh * stride
                br = bl + rw
                rs = (flat_sum.take(base + br) - flat_sum.take(base + tr)
                      - flat_sum.take(base + bl) + flat_sum.take(base + tl))
                term = weight * rs
                f = term if f is None else f + term
            f = f / area
            ssum = ssum + np.where(f < stump.threshold * std_c,
                                   stump.left_leaf, stump.right_leaf)
        keep = ssum >= stage.threshold
        base, std_c, px, py = base[keep], std_c[keep], px[keep], py[keep]
        stage_idx += 1
        if len(base) == 0:
            return []
    return [(int(x), int(y)) for x, y in zip(px, py)]


def scan(model: CascadeModel, img: GrayImage, params: DetectParams) -> list[Rect]:
    """All raw accepted windows, ascending scale then row-major."""
    ii = integral(img)
    min_w = max(params.min_size[0], model.window_w)
    min_h = max(params.min_size[1], model.window_h)
    out: list[Rect] = []
    scale = 1.0
    while True:
        sw, sh = _scaled_window(model, scale)
        if sw > img.width or sh > img.height:
            break
        if sw >= min_w and sh >= min_h:
            step = max(1, round_half_up(scale))
            for x, y in _scan_scale(model, ii, scale, sw, sh, step):
                out.append(Rect(x, y, sw, sh))
        scale *= params.scale_factor
    return out


def _similar_edges(cands: list[Rect], eps: float) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, of rects similar under the grouping tolerance."""
    n = len(cands)
    x = np.array([r.x for r in cands], dtype=np.int64)
    y = np.array([r.y for r in cands], dtype=np.int64)
    w = np.array([r.w for r in cands], dtype=np.int64)
    h = np.array([r.h for r in cands], dtype=np.int64)
    x2, y2 = x + w, y + h
    edges = []
    block = 512
    cols = np.arange(n)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        delta = eps * 0.5 * (np.minimum(w[i0:i1, None], w[None, :])
                             + np.minimum(h[i0:i1, None], h[None, :]))
        ok = ((np.abs(x[i0:i1, None] - x[None, :]) <= delta)
              & (np.abs(y[i0:i1, None] - y[None, :]) <= delta)
              & (np.abs(x2[i0:i1, None] - x2[None, :]) <= delta)
              & (np.abs(y2[i0:i1, None] - y2[None, :]) <= delta)
              & (cols[None, :] > (i0 + np.arange(i1 - i0))[:, None]))
        bi, bj = np.nonzero(ok)
        edges.extend(zip((bi + i0).tolist(), bj.tolist()))
    return edges


def group_rects(cands: list[Rect], min_neighbors: int,
                eps: float = 0.2) -> list[Detection]:
    """Merge similar candidates (transitive closure) into averaged detections.

    Classes smaller than max(1, min_neighbors) are dropped; min_neighbors = 0
    passes every candidate through ungrouped.
    """
    if min_neighbors == 0:
        return [Detection(r, 1) for r in cands]
    if not cands:
        return []

    parent = list(range(len(cands)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in _similar_edges(cands, eps):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    classes: dict[int, list[Rect]] = {}
    order: list[int] = []
    for i, r in enumerate(cands):
        root = find(i)
        if root not in classes:
            classes[root] = []
            order.append(root)
        classes[root].append(r)

    out = []
    threshold = max(1, min_neighbors)
    for root in order:
        members = classes[root]
        if len(members) < threshold:
            continue
        k = len(members)
        out.append(Detection(
            Rect(round_half_up(sum(r.x for r in members) / k),
                 round_half_up(sum(r.y for r in members) / k),
                 round_half_up(sum(r.w for r in members) / k),
                 round_half_up(sum(r.h for r in members) / k)),
            k,
        ))
    return out


def detect_multiscale(model: CascadeModel, img: GrayImage,
                      params: DetectParams) -> list[Detection]:
    """scan + group_rects, sorted by descending area then row-major position."""
    dets = group_rects(scan(model, img, params), params.min_neighbors)
    dets.sort(key=lambda d: (-d.rect.area, d.rect.y, d.rect.x, d.rect.w))
    return dets
