#!/usr/bin/env python3
"""Train the bundled frontal cascade on the synthetic face-proxy family.

The pre-trained cascade files that usually ship with CV toolkits cannot be
redistributed from this environment, so the default model is a boosted stump
cascade trained here from scratch: positives are coded blob patterns (the
same family the fixtures render), negatives are flat patches, ramps, edges
and block textures. The feature pool only uses sets of equal-sized boxes
with zero-sum weights, which keeps every feature exactly zero on flat input
at every scale (unequal boxes drift once rounding breaks their area ratio).

Deterministic: fixed seeds, fixed iteration order. Output goes to
src/facegate/models/frontal-synth.xml. Takes a few minutes.

Usage: python scripts/train_bundled_cascade.py [out.xml]
"""

from __future__ import annotations

import random
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from facegate.cascade import (CascadeModel, HaarFeature, Stage, WeakStump,
                              WeightedRect, dump_cascade_xml, parse_cascade_xml)
from facegate.fixtures import render_coded_pattern
from facegate.imageio import Rect

WINDOW = 24
N_POS = 2500
N_NEG = 4000
MAX_STAGES = 12
STAGE_MAX_FPR = 0.40
STAGE_MIN_DET = 0.995
MAX_STUMPS_PER_STAGE = 40
TARGET_FPR = 1e-4

rng = random.Random("bundled-cascade-train")
np_rng = np.random.default_rng(20240615)


# ---------------------------------------------------------------------------
# Feature pool: k equal-sized boxes, zero-sum weights.

def build_feature_pool() -> list[tuple[tuple[int, int, int, int, float], ...]]:
    pool = []
    sizes = [4, 6, 8, 10, 12]
    for bw in sizes:
        for bh in sizes:
            step = max(2, min(bw, bh) // 2)
            xs = list(range(0, WINDOW - bw + 1, step))
            ys = list(range(0, WINDOW - bh + 1, step))
            for y in ys:
                for x in xs:
                    # horizontal pair
                    if x + 2 * bw <= WINDOW:
                        pool.append(((x, y, bw, bh, 1.0),
                                     (x + bw, y, bw, bh, -1.0)))
                    # vertical pair
                    if y + 2 * bh <= WINDOW:
                        pool.append(((x, y, bw, bh, 1.0),
                                     (x, y + bh, bw, bh, -1.0)))
                    # horizontal triple (line)
                    if x + 3 * bw <= WINDOW:
                        pool.append(((x, y, bw, bh, -1.0),
                                     (x + bw, y, bw, bh, 2.0),
                                     (x + 2 * bw, y, bw, bh, -1.0)))
                    # vertical triple
                    if y + 3 * bh <= WINDOW:
                        pool.append(((x, y, bw, bh, -1.0),
                                     (x, y + bh, bw, bh, 2.0),
                                     (x, y + 2 * bh, bw, bh, -1.0)))
                    # diagonal pair
                    if x + 2 * bw <= WINDOW and y + 2 * bh <= WINDOW:
                        pool.append(((x, y, bw, bh, 1.0),
                                     (x + bw, y + bh, bw, bh, -1.0)))
                        pool.append(((x + bw, y, bw, bh, 1.0),
                                     (x, y + bh, bw, bh, -1.0)))
    rng.shuffle(pool)
    return pool[:3000]


# ---------------------------------------------------------------------------
# Sample generators.

def _noisy(win: np.ndarray, amp: int) -> np.ndarray:
    noise = np_rng.integers(-amp, amp + 1, size=win.shape)
    return np.clip(win.astype(np.int64) + noise, 0, 255).astype(np.uint8)


def sample_positive() -> np.ndarray:
    code = "".join(rng.choice("01") for _ in range(6))
    size = rng.randint(18, 24)
    pat = render_coded_pattern(size, code,
                               bright=rng.randint(185, 245),
                               dark=rng.randint(20, 70),
                               ring=rng.randint(10, 60),
                               shade=rng.randint(-8, 8))
    win = np.full((WINDOW, WINDOW), rng.randint(50, 170), dtype=np.uint8)
    ox = rng.randint(0, WINDOW - size)
    oy = rng.randint(0, WINDOW - size)
    win[oy:oy + size, ox:ox + size] = np.array(pat, dtype=np.uint8)
    if rng.random() < 0.25:  # partial occlusion bar
        bar = rng.randint(2, 4)
        v = rng.randint(0, 255)
        if rng.random() < 0.5:
            win[rng.randint(0, WINDOW - bar):][:bar] = v
        else:
            win[:, rng.randint(0, WINDOW - bar):][:, :bar] = v
    return _noisy(win, rng.randint(2, 14))


def sample_negative() -> np.ndarray:
    kind = rng.randrange(9)
    if kind == 0:  # flat
        win = np.full((WINDOW, WINDOW), rng.randint(0, 255), dtype=np.uint8)
    elif kind == 1:  # linear ramp, arbitrary direction
        gx, gy = rng.uniform(-4, 4), rng.uniform(-4, 4)
        base = rng.uniform(30, 220)
        yy, xx = np.mgrid[0:WINDOW, 0:WINDOW]
        win = np.clip(base + gx * xx + gy * yy, 0, 255).astype(np.uint8)
    elif kind == 2:  # hard two-tone edge
        a, b = rng.randint(0, 255), rng.randint(0, 255)
        pos = rng.randint(4, WINDOW - 4)
        win = np.full((WINDOW, WINDOW), a, dtype=np.uint8)
        if rng.random() < 0.5:
            win[:, pos:] = b
        else:
            win[pos:, :] = b
    elif kind == 3:  # block texture
        block = rng.choice([4, 6, 8, 12])
        n = (WINDOW + block - 1) // block
        vals = np_rng.integers(0, 256, size=(n, n), dtype=np.uint8)
        win = np.kron(vals, np.ones((block, block), dtype=np.uint8))[:WINDOW, :WINDOW]
    elif kind == 4:  # uniform noise
        win = np_rng.integers(0, 256, size=(WINDOW, WINDOW), dtype=np.uint8)
    elif kind == 5:  # inverse blob: dark center on bright surround
        size = rng.randint(18, 24)
        pat = render_coded_pattern(size, "000000",
                                   bright=rng.randint(20, 70),
                                   dark=rng.randint(180, 240),
                                   ring=rng.randint(180, 240))
        win = np.full((WINDOW, WINDOW), rng.randint(150, 230), dtype=np.uint8)
        ox = rng.randint(0, WINDOW - size)
        oy = rng.randint(0, WINDOW - size)
        win[oy:oy + size, ox:ox + size] = np.array(pat, dtype=np.uint8)
    elif kind == 6:  # near-miss: pattern with bright corners (code violated)
        size = rng.randint(18, 24)
        pat = np.array(render_coded_pattern(size, "111111",
                                            bright=rng.randint(185, 245),
                                            dark=rng.randint(160, 230),
                                            ring=rng.randint(150, 230)),
                       dtype=np.uint8)
        win = np.full((WINDOW, WINDOW), rng.randint(50, 170), dtype=np.uint8)
        ox = rng.randint(0, WINDOW - size)
        oy = rng.randint(0, WINDOW - size)
        win[oy:oy + size, ox:ox + size] = pat
    elif kind == 7:  # half pattern slid off the window edge
        size = rng.randint(18, 24)
        pat = np.array(render_coded_pattern(size, "010101",
                                            bright=rng.randint(185, 245),
                                            dark=rng.randint(20, 70),
                                            ring=rng.randint(10, 60)),
                       dtype=np.uint8)
        win = np.full((WINDOW, WINDOW), rng.randint(50, 170), dtype=np.uint8)
        shift = rng.randint(size // 2, size - 4)
        if rng.random() < 0.5:
            win[:size - shift, :size] = pat[shift:, :]
        else:
            win[:size, :size - shift] = pat[:, shift:]
    else:  # bright disc without the dark corner structure
        yy, xx = np.mgrid[0:WINDOW, 0:WINDOW]
        cx, cy = rng.uniform(8, 16), rng.uniform(8, 16)
        r = rng.uniform(5, 10)
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        lo, hi = rng.randint(20, 110), rng.randint(150, 245)
        win = np.where(inside, hi, lo).astype(np.uint8)
    return _noisy(win, rng.randint(0, 12))


# ---------------------------------------------------------------------------
# Window evaluation exactly matching the runtime detector at scale 1.

def integrals(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = windows.shape[0]
    ii = np.zeros((n, WINDOW + 1, WINDOW + 1), dtype=np.int64)
    sq = np.zeros_like(ii)
    ii[:, 1:, 1:] = windows.astype(np.int64).cumsum(axis=1).cumsum(axis=2)
    sq[:, 1:, 1:] = (windows.astype(np.int64) ** 2).cumsum(axis=1).cumsum(axis=2)
    return ii, sq


def window_std(ii: np.ndarray, sq: np.ndarray) -> np.ndarray:
    area = WINDOW * WINDOW
    total = ii[:, WINDOW, WINDOW]
    total_sq = sq[:, WINDOW, WINDOW]
    mean = total / area
    var = total_sq / area - mean * mean
    std = np.ones(len(ii))
    big = var > 1
    std[big] = np.sqrt(var[big])
    return std


def box_sums(ii: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    return (ii[:, y + h, x + w] - ii[:, y, x + w]
            - ii[:, y + h, x] + ii[:, y, x])


def feature_matrix(pool, ii, std) -> np.ndarray:
    """X[feat, sample] = (sum w_i * box_i / window_area) / std."""
    area = WINDOW * WINDOW
    X = np.empty((len(pool), len(ii)), dtype=np.float32)
    for fi, boxes in enumerate(pool):
        acc = None
        for x, y, w, h, weight in boxes:
            term = weight * box_sums(ii, x, y, w, h)
            acc = term if acc is None else acc + term
        X[fi] = (acc / area) / std
    return X


# ---------------------------------------------------------------------------
# AdaBoost stage training.

def best_stump(X, order, pos_mask_sorted, weights):
    """Exhaustive weighted-error stump search over all features.

    `order` presorts X along samples (computed once per stage; only the
    weights change between boosting rounds). Returns (feature_idx,
    threshold, polarity, error); polarity +1 votes positive when
    x >= threshold, -1 when x < threshold.
    """
    n_feats, n = X.shape
    sorted_w = weights.astype(np.float32)[order]
    w_pos = np.where(pos_mask_sorted, sorted_w, np.float32(0.0))
    w_neg = sorted_w - w_pos
    # error when threshold splits after position i (x <= x_i => left)
    left_pos = np.cumsum(w_pos, axis=1)
    left_neg = np.cumsum(w_neg, axis=1)
    total_pos = left_pos[:, -1:]
    total_neg = left_neg[:, -1:]
    # polarity +1: left votes -1, so error = pos on left + neg on right
    err_plus = left_pos + (total_neg - left_neg)
    # polarity -1: left votes +1
    err_minus = left_neg + (total_pos - left_pos)
    errs = np.minimum(err_plus, err_minus)
    flat = np.argmin(errs)
    fi, si = divmod(int(flat), n)
    xs = X[fi][order[fi]]
    thr = float(xs[si]) + 1e-7 if si == n - 1 else float((xs[si] + xs[si + 1]) / 2.0)
    polarity = 1 if err_plus[fi, si] <= err_minus[fi, si] else -1
    return fi, thr, polarity, float(errs[fi, si])


def train_stage(pool, X_pos, X_neg):
    """Add stumps until the stage reaches the FPR target at >= min detection.

    Returns (stumps [(feat, thr, left, right)], stage_threshold, keep_neg_mask).
    """
    n_pos, n_neg = X_pos.shape[1], X_neg.shape[1]
    X = np.concatenate([X_pos, X_neg], axis=1)
    labels = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    order = np.argsort(X, axis=1, kind="stable").astype(np.int32)
    pos_mask_sorted = labels[order] > 0
    weights = np.concatenate([np.full(n_pos, 0.5 / n_pos),
                              np.full(n_neg, 0.5 / n_neg)])
    margins = np.zeros(n_pos + n_neg)
    stumps = []
    for _ in range(MAX_STUMPS_PER_STAGE):
        weights = weights / weights.sum()
        fi, thr, polarity, err = best_stump(X, order, pos_mask_sorted, weights)
        err = min(max(err, 1e-10), 1 - 1e-10)
        alpha = 0.5 * float(np.log((1 - err) / err))
        votes = np.where(X[fi] >= thr, polarity, -polarity).astype(np.float64)
        weights = weights * np.exp(-alpha * labels * votes)
        margins = margins + alpha * votes
        left = -alpha * polarity   # vote when x < thr
        right = alpha * polarity
        stumps.append((fi, thr, left, right))

        pos_margins = np.sort(margins[:n_pos])
        cut = int(np.floor((1.0 - STAGE_MIN_DET) * n_pos))
        stage_thr = float(pos_margins[cut]) - 1e-9
        fpr = float(np.mean(margins[n_pos:] >= stage_thr))
        if fpr <= STAGE_MAX_FPR:
            keep = margins[n_pos:] >= stage_thr
            return stumps, stage_thr, keep
    keep = margins[n_pos:] >= stage_thr
    return stumps, stage_thr, keep


def cascade_pass_mask(stages_sofar, pool, wins: np.ndarray) -> np.ndarray:
    ii, sq = integrals(wins)
    std = window_std(ii, sq)
    area = WINDOW * WINDOW
    alive = np.ones(len(wins), dtype=bool)
    for stumps, stage_thr in stages_sofar:
        totals = np.zeros(len(wins))
        for fi, thr, left, right in stumps:
            acc = None
            for x, y, w, h, weight in pool[fi]:
                term = weight * box_sums(ii, x, y, w, h)
                acc = term if acc is None else acc + term
            val = (acc / area) / std
            totals += np.where(val < thr, left, right)
        alive &= totals >= stage_thr
        if not alive.any():
            break
    return alive


def mine_negatives(stages_sofar, pool, count, max_attempts) -> tuple[list[np.ndarray], int]:
    out: list[np.ndarray] = []
    attempts = 0
    batch = 4096
    while len(out) < count and attempts < max_attempts:
        wins = np.stack([sample_negative() for _ in range(batch)])
        attempts += batch
        mask = cascade_pass_mask(stages_sofar, pool, wins)
        out.extend(wins[mask])
    return out[:count], attempts


def main() -> None:
    out_path = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent
        / "src" / "facegate" / "models" / "frontal-synth.xml")
    t0 = time.time()
    pool = build_feature_pool()[:2000]
    print(f"feature pool: {len(pool)}")

    pos = np.stack([sample_positive() for _ in range(N_POS)])
    neg = np.stack([sample_negative() for _ in range(N_NEG)])
    ii_p, sq_p = integrals(pos)
    std_p = window_std(ii_p, sq_p)
    X_pos = feature_matrix(pool, ii_p, std_p)

    stages = []
    overall_fpr = 1.0
    for stage_idx in range(MAX_STAGES):
        ii_n, sq_n = integrals(neg)
        std_n = window_std(ii_n, sq_n)
        X_neg = feature_matrix(pool, ii_n, std_n)
        stumps, stage_thr, keep = train_stage(pool, X_pos, X_neg)
        stages.append((stumps, stage_thr))
        stage_fpr = float(np.mean(keep))
        overall_fpr *= max(stage_fpr, 1e-6)
        print(f"stage {stage_idx}: {len(stumps)} stumps, "
              f"stage fpr {stage_fpr:.3f}, cascade fpr ~{overall_fpr:.2e}, "
              f"{time.time() - t0:.0f}s")
        if overall_fpr <= TARGET_FPR:
            break
        survivors = [w for w, k in zip(neg, keep) if k]
        mined, attempts = mine_negatives(stages, pool, N_NEG - len(survivors),
                                         max_attempts=250_000)
        print(f"  mined {len(mined)} hard negatives in {attempts} attempts")
        if len(survivors) + len(mined) < N_NEG // 4:
            print("  negative mining exhausted, stopping")
            break
        neg = np.stack(survivors + mined)

    # Emit only the used features, reindexed.
    used = sorted({fi for stumps, _ in stages for fi, *_ in stumps})
    remap = {fi: i for i, fi in enumerate(used)}
    features = tuple(
        HaarFeature(tuple(WeightedRect(Rect(x, y, w, h), weight)
                          for x, y, w, h, weight in pool[fi]))
        for fi in used)
    model_stages = tuple(
        Stage(stage_thr, tuple(
            WeakStump(remap[fi], thr, left, right)
            for fi, thr, left, right in stumps))
        for stumps, stage_thr in stages)
    model = CascadeModel(WINDOW, WINDOW, features, model_stages)

    xml = dump_cascade_xml(model)
    assert parse_cascade_xml(xml) == model
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(xml)
    print(f"wrote {out_path}: {len(model.stages)} stages, "
          f"{model.stump_count} stumps, {len(model.features)} features, "
          f"{len(xml)} bytes, {time.time() - t0:.0f}s total")


if __name__ == "__main__":
    main()
