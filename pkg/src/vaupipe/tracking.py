"""Object identity across sampled frames.

Detections are matched to live tracks with an appearance + IoU similarity
and an optimal assignment. Tracks that go unmatched for more than
``max_age`` sampled frames are retired; unmatched detections open new
tracks. No motion model is used.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import SchemaViolation, ValueOutOfRange


@dataclass(frozen=True)
class AssocConfig:
    appearance_weight: float = 0.8
    iou_weight: float = 0.2
    min_similarity: float = 0.3
    max_age: int = 15

    def __post_init__(self):
        if self.appearance_weight < 0 or self.iou_weight < 0:
            raise ValueOutOfRange("association weights must be non-negative")
        if abs(self.appearance_weight + self.iou_weight - 1.0) > 1e-9:
            raise ValueOutOfRange("association weights must sum to 1")
        if not 0.0 <= self.min_similarity <= 1.0:
            raise ValueOutOfRange("min_similarity must lie in [0, 1]")
        if self.max_age < 0:
            raise ValueOutOfRange("max_age must be non-negative")


@dataclass
class Track:
    track_id: int
    observations: dict
    last_appearance: np.ndarray
    last_bbox: tuple
    misses: int = 0


@dataclass(frozen=True)
class Matching:
    pairs: tuple
    unmatched_rows: tuple
    unmatched_cols: tuple
    total: float


@dataclass
class TrackingResult:
    """All tracks of one video plus the per-frame detection -> track map."""

    frames: list
    tracks: list
    assignments: dict = field(default_factory=dict)

    def to_json(self, video_id=None):
        return {
            "video_id": video_id,
            "frames": list(self.frames),
            "tracks": {str(tr.track_id): [[t, d] for t, d in sorted(tr.observations.items())] for tr in self.tracks},
        }

    @classmethod
    def from_json(cls, obj):
        tracks = []
        assignments = {int(t): {} for t in obj["frames"]}
        for tid, obs in obj["tracks"].items():
            observations = {int(t): int(d) for t, d in obs}
            tracks.append(Track(int(tid), observations, None, None))
            for t, d in observations.items():
                assignments.setdefault(t, {})[d] = int(tid)
        tracks.sort(key=lambda tr: tr.track_id)
        return cls([int(t) for t in obj["frames"]], tracks, assignments)


def _check_box(b):
    x1, y1, x2, y2 = b
    if not (x1 < x2 and y1 < y2):
        raise ValueOutOfRange(f"degenerate box {list(b)}")


def iou(a, b):
    _check_box(a)
    _check_box(b)
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SchemaViolation(f"appearance dimensions differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueOutOfRange("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def association_cost(tracks, detections, config):
    """``1 - similarity`` per (track, detection); gated entries are ``inf``."""
    cost = np.full((len(tracks), len(detections)), np.inf)
    for r, tr in enumerate(tracks):
        for c, det in enumerate(detections):
            app = min(max((cosine_similarity(tr.last_appearance, det.appearance) + 1.0) / 2.0, 0.0), 1.0)
            sim = config.appearance_weight * app + config.iou_weight * iou(tr.last_bbox, det.bbox)
            if sim >= config.min_similarity:
                cost[r, c] = 1.0 - sim
    return cost


def assign(cost):
    """Maximum-cardinality minimum-cost matching over the finite entries of ``cost``."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise SchemaViolation("cost matrix must be two-dimensional")
    n, m = cost.shape
    allowed = np.isfinite(cost)
    row_to_col = kernels.solve_assignment(np.where(allowed, cost, 0.0), allowed)
    pairs = tuple((r, int(c)) for r, c in enumerate(row_to_col) if c >= 0)
    total = 0.0
    for r, c in pairs:
        total += cost[r, c]
    matched_cols = {c for _, c in pairs}
    return Matching(
        pairs,
        tuple(r for r in range(n) if row_to_col[r] < 0),
        tuple(c for c in range(m) if c not in matched_cols),
        float(total),
    )


def update_tracks(tracks, detections, matching, t, config, next_id):
    """Apply one frame's matching. Returns ``(active, retired, next_id)``."""
    matched = dict(matching.pairs)
    active, retired = [], []
    for r, tr in enumerate(tracks):
        if r in matched:
            det = detections[matched[r]]
            tr.observations[t] = matched[r]
            tr.last_appearance = np.asarray(det.appearance, dtype=np.float64)
            tr.last_bbox = tuple(det.bbox)
            tr.misses = 0
            active.append(tr)
        else:
            tr.misses += 1
            (retired if tr.misses > config.max_age else active).append(tr)
    for c in matching.unmatched_cols:
        det = detections[c]
        active.append(Track(next_id, {t: c}, np.asarray(det.appearance, dtype=np.float64), tuple(det.bbox)))
        next_id += 1
    return active, retired, next_id


def track_frames(frames, indices, config=None):
    """Track objects over ``frames[t]`` for each sampled ``t`` in ascending order."""
    config = config or AssocConfig()
    indices = sorted(indices)
    active, finished = [], []
    next_id = 0
    assignments = {}
    for t in indices:
        dets = frames[t].detections
        matching = assign(association_cost(active, dets, config))
        active, retired, next_id = update_tracks(active, dets, matching, t, config, next_id)
        finished.extend(retired)
        assignments[t] = {tr.observations[t]: tr.track_id for tr in active if t in tr.observations}
    tracks = sorted(finished + active, key=lambda tr: tr.track_id)
    return TrackingResult(indices, tracks, assignments)
