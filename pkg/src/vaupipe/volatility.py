"""Relational volatility curves and weakly supervised sample mining.

For each transition between consecutive sampled frames the volatility is
the largest L2 change of a relation feature over object pairs tracked in
both frames. Smoothed curves are scanned for peaks (positives, abnormal
videos only) and valleys (negatives, together with transitions drawn from
normal videos).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyInput, EmptyMiningResult, SchemaViolation, ValueOutOfRange


@dataclass(frozen=True)
class MiningConfig:
    sigma: float = 2.0
    top_k_percent: float = 5.0
    # negatives per positive; None keeps every candidate
    negative_ratio: float | None = 1.0
    topk_scope: str = "video"
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueOutOfRange("sigma must be positive")
        if not 0 < self.top_k_percent <= 100:
            raise ValueOutOfRange("top_k_percent must lie in (0, 100]")
        if self.negative_ratio is not None and self.negative_ratio < 0:
            raise ValueOutOfRange("negative_ratio must be non-negative")
        if self.topk_scope not in ("video", "global"):
            raise ValueOutOfRange("topk_scope must be 'video' or 'global'")


@dataclass(frozen=True)
class VolatilityCurve:
    """One entry per transition ``frames[k] -> frames[k+1]``.

    ``before``/``after`` hold the argmax pair's relation vectors, or ``None``
    where no pair was tracked across the transition.
    """

    frames: tuple
    raw: np.ndarray
    smoothed: np.ndarray
    argmax_pair: tuple
    before: tuple
    after: tuple

    def __len__(self):
        return len(self.raw)


@dataclass(frozen=True)
class RelationChangePair:
    vec: np.ndarray
    label: str
    source: dict

    def to_json(self):
        return {"vec": self.vec.tolist(), "label": self.label, "source": self.source}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["vec"], dtype=np.float64), obj["label"], obj["source"])


def pair_relations(frame, det_to_track):
    """Relation features of a frame keyed by ``(track_i, track_j)``; untracked detections drop out."""
    out = {}
    for rel in frame.relations:
        ti = det_to_track.get(rel.subject_index)
        tj = det_to_track.get(rel.object_index)
        if ti is not None and tj is not None:
            out[(ti, tj)] = np.asarray(rel.feat, dtype=np.float64)
    return out


def frame_volatility(prev, cur):
    """Max L2 change over pairs present in both frames; ties go to the smallest pair key."""
    best, arg = 0.0, None
    for key in sorted(prev.keys() & cur.keys()):
        a, b = prev[key], cur[key]
        if a.shape != b.shape:
            raise SchemaViolation(f"relation dimension mismatch for pair {key}")
        d = float(np.linalg.norm(b - a))
        if arg is None or d > best:
            best, arg = d, key
    return best, arg


def gaussian_kernel(sigma):
    radius = math.ceil(4 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(curve, sigma):
    """Normalized Gaussian filter (radius ``ceil(4 sigma)``) with reflect padding."""
    if not sigma > 0:
        raise ValueOutOfRange("sigma must be positive")
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise EmptyInput("cannot smooth an empty curve")
    return kernels.convolve_reflect(curve, gaussian_kernel(sigma))


def find_peaks(curve):
    return kernels.local_extrema(np.asarray(curve, dtype=np.float64))[0]


def find_valleys(curve):
    return kernels.local_extrema(np.asarray(curve, dtype=np.float64))[1]


def volatility_curve(frames, tracking, sigma=2.0):
    """Volatility over the tracked frame sequence of one video."""
    seq = list(tracking.frames)
    rel = [pair_relations(frames[t], tracking.assignments.get(t, {})) for t in seq]
    raw, pairs, before, after = [], [], [], []
    for k in range(1, len(seq)):
        v, key = frame_volatility(rel[k - 1], rel[k])
        raw.append(v)
        pairs.append(key)
        before.append(None if key is None else rel[k - 1][key])
        after.append(None if key is None else rel[k][key])
    raw = np.asarray(raw, dtype=np.float64)
    smoothed = gaussian_smooth(raw, sigma) if raw.size else raw.copy()
    return VolatilityCurve(tuple(seq), raw, smoothed, tuple(pairs), tuple(before), tuple(after))


def resmooth(curve, sigma):
    sm = gaussian_smooth(curve.raw, sigma) if len(curve) else curve.raw.copy()
    return VolatilityCurve(curve.frames, curve.raw, sm, curve.argmax_pair, curve.before, curve.after)


def _sample(video_id, curve, k, label):
    pair = curve.argmax_pair[k]
    return RelationChangePair(
        np.concatenate([curve.before[k], curve.after[k]]),
        label,
        {"video_id": video_id, "t_prev": int(curve.frames[k]), "t": int(curve.frames[k + 1]), "pair": [int(pair[0]), int(pair[1])]},
    )


def _top_count(n, pct):
    return max(1, math.ceil(n * pct / 100.0 - 1e-9)) if n else 0


def mine_samples(videos, config=None, allow_empty=False):
    """Label relation-change pairs from a corpus.

    ``videos`` is a sequence of ``(video_id, VolatilityCurve, is_normal)``;
    curves must already be smoothed with ``config.sigma``.
    """
    config = config or MiningConfig()
    ranked = []
    negatives = []
    for order, (vid, curve, is_normal) in enumerate(videos):
        if is_normal:
            negatives.extend((vid, curve, k) for k in range(len(curve)) if curve.argmax_pair[k] is not None)
            continue
        peaks = [int(k) for k in find_peaks(curve.smoothed) if curve.argmax_pair[k] is not None]
        peaks.sort(key=lambda k: (-curve.smoothed[k], k))
        if config.topk_scope == "video":
            ranked.extend((vid, curve, k) for k in peaks[: _top_count(len(peaks), config.top_k_percent)])
        else:
            ranked.extend((-curve.smoothed[k], order, k, vid, curve) for k in peaks)
        negatives.extend((vid, curve, int(k)) for k in find_valleys(curve.smoothed) if curve.argmax_pair[k] is not None)

    if config.topk_scope == "global":
        ranked.sort(key=lambda e: e[:3])
        ranked = [(vid, curve, k) for _, _, k, vid, curve in ranked[: _top_count(len(ranked), config.top_k_percent)]]

    positives = [_sample(vid, curve, k, "positive") for vid, curve, k in ranked]
    if not positives and not allow_empty:
        raise EmptyMiningResult("no abnormal video produced a usable volatility peak")

    if config.negative_ratio is None:
        chosen = range(len(negatives))
    else:
        want = min(len(negatives), int(round(config.negative_ratio * len(positives))))
        rng = np.random.default_rng(config.seed)
        chosen = sorted(rng.choice(len(negatives), size=want, replace=False).tolist())
    return positives + [_sample(vid, curve, k, "negative") for vid, curve, k in (negatives[i] for i in chosen)]
