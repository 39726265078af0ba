"""Seeded synthetic feature bundles with known ground truth.

A scenario has Gaussian bumps in its anomaly-probability curve, objects
moving at constant velocity (reflected at the image border) with stable
appearance vectors, and relation features that are constant per object
pair except for step changes at chosen transitions.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoError, ValueOutOfRange
from .ingest import Bundle, BundleManifest, Detection, FrameRecord, RelationFeature, frozen_array, write_bundle
from .scoring import ScoreSeries

FEATURE_SCALE = 6.0


@dataclass(frozen=True)
class ScenarioSpec:
    video_id: str = "synth"
    num_frames: int = 200
    num_objects: int = 3
    d_app: int = 16
    d_rel: int = 8
    anomaly_events: tuple = ()  # (center, width, peak)
    relation_events: tuple = ()  # (transition, (i, j), magnitude)
    noise_std: float = 0.0
    is_normal: bool = False
    seed: int = 0
    baseline: float = 0.05
    d_feat: int = 16
    num_classes: int = 3
    # corpus-wide seed for the normal feature mean plus the class and event directions
    world_seed: int = 0
    num_event_types: int = 3
    # per-event deviation from its event type's jump direction
    event_spread: float = 0.3
    fps: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "anomaly_events", tuple(tuple(e) for e in self.anomaly_events))
        object.__setattr__(
            self, "relation_events", tuple((int(t), tuple(p), float(m)) for t, p, m in self.relation_events)
        )
        if self.num_frames < 1 or self.num_objects < 0 or self.d_app < 1 or self.d_rel < 1:
            raise ValueOutOfRange("num_frames, d_app, d_rel must be >= 1 and num_objects >= 0")
        if self.d_feat < 0 or self.num_classes < 1 or self.noise_std < 0:
            raise ValueOutOfRange("d_feat and noise_std must be >= 0, num_classes >= 1")
        for c, w, peak in self.anomaly_events:
            if not 0 <= c < self.num_frames:
                raise ValueOutOfRange(f"anomaly event center {c} outside the video")
            if not 0 < peak <= 1 or not w > 0:
                raise ValueOutOfRange("anomaly event peak must lie in (0, 1] and width be positive")
        if self.is_normal and self.relation_events:
            raise ValueOutOfRange("normal scenarios cannot carry relation events")
        for t, (i, j), mag in self.relation_events:
            if not 1 <= t < self.num_frames:
                raise ValueOutOfRange(f"relation event transition {t} outside [1, {self.num_frames})")
            if i == j or not (0 <= i < self.num_objects and 0 <= j < self.num_objects):
                raise ValueOutOfRange(f"relation event pair {(i, j)} invalid")
            if not mag > 0:
                raise ValueOutOfRange("relation event magnitude must be positive")

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)

    def to_json(self):
        d = asdict(self)
        d["anomaly_events"] = [list(e) for e in self.anomaly_events]
        d["relation_events"] = [[t, list(p), m] for t, p, m in self.relation_events]
        return d


@dataclass
class GroundTruth:
    video_id: str
    is_normal: bool
    events: list = field(default_factory=list)
    positives: list = field(default_factory=list)
    identity: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)


def _rng(spec, stream):
    return np.random.default_rng([spec.seed, stream])


def _bumps(spec, t):
    out = np.zeros((len(spec.anomaly_events), len(t)))
    for k, (c, w, peak) in enumerate(spec.anomaly_events):
        out[k] = peak * np.exp(-0.5 * ((t - c) / w) ** 2)
    return out


def generate_score_curve(spec):
    """Baseline plus one Gaussian bump per anomaly event, plus noise, clipped to [0, 1]."""
    t = np.arange(spec.num_frames, dtype=np.float64)
    p = spec.baseline + _bumps(spec, t).sum(axis=0)
    if spec.noise_std > 0:
        p = p + spec.noise_std * _rng(spec, 0).standard_normal(spec.num_frames)
    return ScoreSeries(np.clip(p, 0.0, 1.0))


def _reflect(x, lo, hi):
    span = hi - lo
    if span <= 0:
        return np.full_like(x, lo)
    y = np.mod(x - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _trajectories(spec, rng):
    n = spec.num_frames
    t = np.arange(n, dtype=np.float64)
    boxes = np.empty((spec.num_objects, n, 4))
    for o in range(spec.num_objects):
        w, h = rng.uniform(0.08, 0.18, size=2)
        cx0 = rng.uniform(w / 2, 1 - w / 2)
        cy0 = rng.uniform(h / 2, 1 - h / 2)
        vx, vy = rng.uniform(-0.01, 0.01, size=2)
        cx = _reflect(cx0 + vx * t, w / 2, 1 - w / 2)
        cy = _reflect(cy0 + vy * t, h / 2, 1 - h / 2)
        boxes[o] = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    return np.clip(boxes, 0.0, 1.0)


def world_features(world_seed, d_feat, num_classes):
    """Normal-frame feature mean and per-class unit directions shared by a corpus."""
    rng = np.random.default_rng([world_seed, 99])
    base = rng.standard_normal(d_feat)
    dirs = _unit(rng.standard_normal((num_classes, d_feat)))
    return base, dirs


def event_directions(world_seed, d_rel, num_types):
    """Unit jump directions of the relation-change event types shared by a corpus."""
    rng = np.random.default_rng([world_seed, 98])
    return _unit(rng.standard_normal((max(num_types, 1), d_rel)))


def generate_scenario(spec):
    """Build ``(Bundle, GroundTruth)`` for one scenario."""
    n, n_obj = spec.num_frames, spec.num_objects
    scores = generate_score_curve(spec)

    rng = _rng(spec, 1)
    boxes = _trajectories(spec, rng)
    appearance = _unit(rng.standard_normal((n_obj, spec.d_app))) if n_obj else np.zeros((0, spec.d_app))

    rng_rel = _rng(spec, 2)
    pairs = [(i, j) for i in range(n_obj) for j in range(n_obj) if i != j]
    base_rel = {p: rng_rel.standard_normal(spec.d_rel) for p in pairs}
    event_dirs = event_directions(spec.world_seed, spec.d_rel, spec.num_event_types)
    jumps = {}
    for t_ev, p, mag in spec.relation_events:
        kind = event_dirs[rng_rel.integers(len(event_dirs))]
        direction = _unit(kind + spec.event_spread * rng_rel.standard_normal(spec.d_rel))
        jumps.setdefault(p, []).append((t_ev, mag * direction))

    rng_noise = _rng(spec, 3)
    frames = []
    identity = []
    for t in range(n):
        order = rng_noise.permutation(n_obj)  # detection k shows object order[k]
        pos = {int(o): k for k, o in enumerate(order)}
        dets = []
        for o in order:
            app = appearance[o]
            if spec.noise_std > 0:
                app = _unit(app + spec.noise_std * rng_noise.standard_normal(spec.d_app))
            dets.append(Detection(tuple(float(v) for v in boxes[o, t]), frozen_array(app), f"obj{o}"))
        rels = []
        for i, j in sorted(pairs, key=lambda p: (pos[p[0]], pos[p[1]])):
            r = base_rel[(i, j)].copy()
            for t_ev, jump in jumps.get((i, j), []):
                if t >= t_ev:
                    r += jump
            if spec.noise_std > 0:
                r += spec.noise_std * rng_noise.standard_normal(spec.d_rel)
            rels.append(RelationFeature(pos[i], pos[j], frozen_array(r)))
        frames.append(FrameRecord(t, tuple(dets), tuple(rels)))
        identity.append([int(o) for o in order])

    class_names = class_emb = feats = None
    num_classes = 1
    if spec.d_feat > 0:
        num_classes = spec.num_classes
        base, dirs = world_features(spec.world_seed, spec.d_feat, spec.num_classes)
        t_axis = np.arange(n, dtype=np.float64)
        bumps = _bumps(spec, t_axis)
        feats = np.tile(base, (n, 1))
        for k in range(len(spec.anomaly_events)):
            feats += FEATURE_SCALE * bumps[k][:, None] * dirs[k % spec.num_classes]
        if spec.noise_std > 0:
            feats += spec.noise_std * _rng(spec, 4).standard_normal(feats.shape)
        class_names = tuple(f"class{c}" for c in range(spec.num_classes))
        class_emb = frozen_array(base + dirs)
        feats = frozen_array(feats)

    manifest = BundleManifest(spec.video_id, n, spec.is_normal, spec.d_app, spec.d_rel, num_classes, float(spec.fps))
    bundle = Bundle(manifest, scores, tuple(frames), class_names, class_emb, feats)

    events = []
    for c, w, peak in spec.anomaly_events:
        lo, hi = max(0, int(round(c - w))), min(n - 1, int(round(c + w)))
        events.append({
            "center": c, "width": w, "peak": peak,
            "on": [lo, hi],
            "pre": [max(0, lo - int(round(2 * w))), lo - 1],
            "post": [hi + 1, min(n - 1, hi + int(round(2 * w)))],
        })
    positives = [{"t": t_ev, "pair": list(p), "magnitude": mag} for t_ev, p, mag in spec.relation_events]
    return bundle, GroundTruth(spec.video_id, spec.is_normal, events, positives, identity)


def write_scenario(spec, out):
    bundle, truth = generate_scenario(spec)
    out = Path(out)
    write_bundle(bundle, out)
    try:
        (out / "truth.json").write_text(json.dumps(truth.to_json()) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write truth.json to {out}: {exc}") from exc
    return bundle, truth


def make_corpus(n_abnormal=10, n_normal=10, num_frames=200, seed=0, noise_std=0.05,
                num_objects=3, d_app=16, d_rel=8, events_per_video=3, event_spacing=30):
    """ScenarioSpecs for a mixed corpus.

    Each abnormal video gets one anomaly bump and ``events_per_video``
    relation events, the first at the bump center and the rest spread
    ``event_spacing`` frames apart.
    """
    rng = np.random.default_rng([seed, 7])
    specs = []
    for v in range(n_abnormal + n_normal):
        normal = v >= n_abnormal
        vid = f"{'normal' if normal else 'abnormal'}_{v if not normal else v - n_abnormal:03d}"
        vseed = int(rng.integers(2**31))
        anomaly, relation = (), ()
        if not normal:
            span = max(1, (events_per_video - 1) * event_spacing)
            lo = max(1, int(0.15 * num_frames))
            hi = max(lo + 1, num_frames - span - int(0.15 * num_frames))
            center = int(rng.integers(lo, hi))
            width = float(rng.uniform(6, 10))
            anomaly = ((center, width, float(rng.uniform(0.75, 0.95))),)
            events = []
            for e in range(events_per_video):
                t_ev = min(num_frames - 1, center + e * event_spacing)
                i, j = rng.choice(num_objects, size=2, replace=False)
                events.append((t_ev, (int(i), int(j)), float(rng.uniform(6.0, 10.0))))
            relation = tuple(events)
        specs.append(ScenarioSpec(
            video_id=vid, num_frames=num_frames, num_objects=num_objects, d_app=d_app, d_rel=d_rel,
            anomaly_events=anomaly, relation_events=relation, noise_std=noise_std, is_normal=normal,
            seed=vseed, world_seed=seed,
        ))
    return specs
