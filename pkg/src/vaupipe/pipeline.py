"""End-to-end orchestration: score -> sample -> track -> volatility -> mine -> train -> encode."""

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .caes import CaesConfig, KeyframeSet, caes, slope_series
from .encoder import EncoderParams, TrainConfig, encode_batch, train
from .errors import IoError, VaupipeError
from .evaluate import embedding_separation
from .ingest import find_bundles, load_bundle
from .scoring import ScoreSeries, compute_prototype, prepare_directions, score_frames
from .tracking import AssocConfig, TrackingResult, track_frames
from .volatility import MiningConfig, VolatilityCurve, mine_samples, volatility_curve

log = logging.getLogger(__name__)

ARTIFACTS = ("keyframes.json", "tracks.json", "volatility.csv", "samples.jsonl", "model.json", "tokens.jsonl", "report.json")


class StageError(VaupipeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    caes: CaesConfig = field(default_factory=CaesConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: list = field(default_factory=list)
    out: str = "vaupipe_out"
    seed: int | None = None
    holdout: float = 0.3
    temperature: float = 1.0
    workers: int = 1

    NESTED = {"caes": CaesConfig, "assoc": AssocConfig, "mining": MiningConfig, "train": TrainConfig}

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, typ in cls.NESTED.items():
            if key in obj:
                obj[key] = typ(**obj[key])
        return cls(**obj).resolved()

    def resolved(self):
        """Propagate the global seed into the seeded stages."""
        if self.seed is None:
            return self
        return replace(
            self,
            mining=replace(self.mining, seed=self.seed),
            train=replace(self.train, seed=self.seed),
        )

    def to_json(self):
        d = asdict(self)
        d["corpus"] = [str(p) for p in self.corpus]
        return d


@dataclass
class VideoArtifacts:
    video_id: str
    is_normal: bool
    scores: ScoreSeries
    keyframes: KeyframeSet
    tracking: TrackingResult
    curve: VolatilityCurve
    frames: tuple = ()


def corpus_prototype(bundles):
    """Normality prototype from every normal bundle that carries frame features."""
    feats = [b.frame_feats for b in bundles if b.manifest.is_normal and b.frame_feats is not None]
    if not feats:
        return None
    return compute_prototype(np.vstack(feats))


def fused_scores(bundle, proto, temperature=1.0):
    if bundle.scores is not None and bundle.scores.fused is not None:
        return bundle.scores
    if proto is not None and bundle.frame_feats is not None and bundle.class_embeddings is not None:
        dirs = prepare_directions(bundle.class_names, bundle.class_embeddings, proto)
        p = bundle.scores.p_anomaly if bundle.scores is not None else np.ones(bundle.manifest.num_frames)
        return score_frames(p, bundle.frame_feats, dirs, proto, temperature)
    return ScoreSeries.from_curve(bundle.scores.p_anomaly)


def process_video(bundle, config, proto=None):
    scores = fused_scores(bundle, proto, config.temperature)
    keyframes = caes(scores, config.caes)
    tracking = track_frames(bundle.frames, keyframes.indices, config.assoc)
    curve = volatility_curve(bundle.frames, tracking, config.mining.sigma)
    return VideoArtifacts(bundle.video_id, bundle.manifest.is_normal, scores, keyframes, tracking, curve, bundle.frames)


def _process_path(args):
    path, config, proto = args
    art = process_video(load_bundle(path), config, proto)
    art.frames = ()
    return art


def process_corpus(config):
    """Load every bundle in ``config.corpus`` and run the per-video stages."""
    paths = find_bundles(config.corpus)
    if config.workers > 1:
        # the prototype needs the normal bundles first; load them in the parent
        proto = corpus_prototype([b for b in map(load_bundle, paths) if b.manifest.is_normal])
        with ProcessPoolExecutor(config.workers) as pool:
            return list(pool.map(_process_path, [(p, config, proto) for p in paths]))
    bundles = [load_bundle(p) for p in paths]
    proto = corpus_prototype(bundles)
    return [process_video(b, config, proto) for b in bundles]


def evaluation_set(videos, held, mining):
    """Labelled samples from the held-out videos, keeping every negative candidate.

    Returns ``(samples, "holdout")``, or ``([], "train")`` when the held-out
    videos do not yield both labels.
    """
    eval_videos = [(v.video_id, v.curve, v.is_normal) for v in videos if v.video_id in held]
    if not eval_videos:
        return [], "train"
    samples = mine_samples(eval_videos, replace(mining, negative_ratio=None), allow_empty=True)
    if {s.label for s in samples} != {"positive", "negative"}:
        return [], "train"
    return samples, "holdout"


def split_videos(ids_normal, seed, holdout):
    """Deterministic per-class holdout. Returns the set of held-out ids."""
    rng = np.random.default_rng([0 if seed is None else seed, 11])
    held = set()
    for normal in (False, True):
        ids = sorted(v for v, n in ids_normal if n == normal)
        k = int(round(holdout * len(ids)))
        k = min(k, len(ids) - 1)
        if k > 0:
            held.update(ids[i] for i in sorted(rng.choice(len(ids), size=k, replace=False).tolist()))
    return held


def volatility_csv(curve, video_id=None):
    head = "t,raw,smoothed,pair_i,pair_j" if video_id is None else "video_id,t,raw,smoothed,pair_i,pair_j"
    lines = [head]
    for k in range(len(curve)):
        pair = curve.argmax_pair[k]
        pi, pj = ("", "") if pair is None else (str(pair[0]), str(pair[1]))
        row = [str(curve.frames[k + 1]), repr(float(curve.raw[k])), repr(float(curve.smoothed[k])), pi, pj]
        lines.append(",".join(row if video_id is None else [video_id, *row]))
    return "\n".join(lines) + "\n"


def dump_jsonl(records):
    return "".join(json.dumps(r) + "\n" for r in records)


def model_json(params, config, history):
    return {"d_in": params.d_in, "config": config.to_json(), "history": history, "params": params.to_json()}


def load_model(obj):
    return EncoderParams.from_json(obj["params"])


def _write(path, text):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def run_pipeline(config):
    """Run every stage over ``config.corpus`` and write the artifacts to ``config.out``."""
    config = config.resolved()
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    timings = {}
    stage = "score/sample/track/volatility"
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    try:
        videos = process_corpus(config)
        lap("per_video")

        _write(out / "keyframes.json", json.dumps({"videos": [v.keyframes.to_json(v.video_id) for v in videos]}) + "\n")
        _write(out / "tracks.json", json.dumps({"videos": [v.tracking.to_json(v.video_id) for v in videos]}) + "\n")
        vol_lines = ["video_id,t,raw,smoothed,pair_i,pair_j"]
        for v in videos:
            vol_lines.extend(volatility_csv(v.curve, v.video_id).splitlines()[1:])
        _write(out / "volatility.csv", "\n".join(vol_lines) + "\n")
        emit_curves(videos, out / "curves", config.caes.slope_window)

        stage = "mine"
        held = split_videos([(v.video_id, v.is_normal) for v in videos], config.seed, config.holdout)
        train_videos = [(v.video_id, v.curve, v.is_normal) for v in videos if v.video_id not in held]
        samples = mine_samples(train_videos, config.mining)
        eval_samples, eval_split = evaluation_set(videos, held, config.mining)
        if eval_split == "train":
            eval_samples = samples
        _write(out / "samples.jsonl", dump_jsonl(s.to_json() for s in samples))
        lap("mine")

        stage = "train"
        params, history = train(samples, config.train)
        _write(out / "model.json", json.dumps(model_json(params, config.train, history)) + "\n")
        lap("train")

        stage = "encode"
        records = [(s, "train") for s in samples]
        if eval_split == "holdout":
            records += [(s, "holdout") for s in eval_samples]
        tokens = encode_batch(params, np.array([s.vec for s, _ in records]))
        _write(out / "tokens.jsonl", dump_jsonl(
            {"source": s.source, "label": s.label, "split": split, "token": tok.tolist()}
            for (s, split), tok in zip(records, tokens)
        ))
        eval_tokens = tokens[[i for i, (_, sp) in enumerate(records) if sp == eval_split]]
        separation = embedding_separation(eval_tokens, [s.label == "positive" for s in eval_samples])
        lap("encode")
    except VaupipeError as exc:
        if isinstance(exc, IoError):
            raise
        raise StageError(stage, exc) from exc

    report = {
        "config": config.to_json(),
        "videos": len(videos),
        "held_out": sorted(held),
        "eval_split": eval_split,
        "counts": {
            "keyframes.json": sum(len(v.keyframes.frames) for v in videos),
            "tracks.json": sum(len(v.tracking.tracks) for v in videos),
            "volatility.csv": sum(len(v.curve) for v in videos),
            "samples.jsonl": len(samples),
            "model.json": int(sum(getattr(params, k).size for k in ("W1", "b1", "W2", "b2"))),
            "tokens.jsonl": len(records),
            "report.json": 1,
        },
        "positives": sum(s.label == "positive" for s in samples),
        "negatives": sum(s.label == "negative" for s in samples),
        "eval_samples": len(eval_samples),
        "final_loss": history[-1] if history else None,
        "separation": separation,
        "artifacts": list(ARTIFACTS),
    }
    _write(out / "report.json", json.dumps(report, indent=2) + "\n")
    _write(out / "timings.json", json.dumps(timings, indent=2) + "\n")
    return report


# --- curve plots ---------------------------------------------------------

SEGMENT_COLORS = {"pre": "#4176b6", "on": "#e6b422", "post": "#3a9d5d", "background": "#dddddd"}


def curve_rows(art, slope_window=5):
    s = art.scores
    slopes = slope_series(s.curve, slope_window)
    tag = {t: g for t, g in art.keyframes.frames}
    vol = {art.curve.frames[k + 1]: art.curve.raw[k] for k in range(len(art.curve))}
    rows = ["t,p_anomaly,fused,slope,selected,tag,volatility"]
    for t in range(len(s)):
        rows.append(",".join([
            str(t), repr(float(s.p_anomaly[t])), repr(float(s.curve[t])), repr(float(slopes[t])),
            "1" if t in tag else "0", tag.get(t, ""), repr(float(vol[t])) if t in vol else "",
        ]))
    return "\n".join(rows) + "\n"


def curve_svg(art, width=800, height=240, pad=20):
    n = len(art.scores)
    sx = (width - 2 * pad) / max(n - 1, 1)
    h = height - 2 * pad

    def x(t):
        return pad + t * sx

    def y(v):
        return pad + h * (1.0 - v)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">']
    regions = []
    for iv in art.keyframes.intervals:
        if iv.start > iv.pre_start:
            regions.append(("pre", iv.pre_start, iv.start - 1))
        regions.append(("on", iv.start, iv.end))
        if iv.post_end > iv.end:
            regions.append(("post", iv.end + 1, iv.post_end))
    if not regions:
        regions.append(("background", 0, n - 1))
    for tag, a, b in regions:
        parts.append(
            f'<rect class="{tag}" x="{x(a - 0.5):.2f}" y="{pad}" width="{(b - a + 1) * sx:.2f}" height="{h}" '
            f'fill="{SEGMENT_COLORS[tag]}" fill-opacity="0.3"/>'
        )
    pts = " ".join(f"{x(t):.2f},{y(float(v)):.2f}" for t, v in enumerate(art.scores.curve))
    parts.append(f'<polyline class="score" fill="none" stroke="black" stroke-width="1" points="{pts}"/>')
    if len(art.curve) and art.curve.raw.max() > 0:
        top = art.curve.raw.max()
        pts = " ".join(f"{x(art.curve.frames[k + 1]):.2f},{y(art.curve.raw[k] / top):.2f}" for k in range(len(art.curve)))
        parts.append(f'<polyline class="volatility" fill="none" stroke="#c0392b" stroke-width="1" points="{pts}"/>')
    thr = art.keyframes.threshold
    if np.isfinite(thr):
        parts.append(f'<line class="threshold" x1="{pad}" x2="{width - pad}" y1="{y(thr):.2f}" y2="{y(thr):.2f}" stroke="red" stroke-dasharray="4 2"/>')
    for t, _ in art.keyframes.frames:
        parts.append(f'<circle class="keyframe" cx="{x(t):.2f}" cy="{y(float(art.scores.curve[t])):.2f}" r="1.5" fill="#4176b6"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_curves(videos, out, slope_window=5):
    """Write a CSV table and an SVG plot of the per-frame curves for every video."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    for art in videos:
        _write(out / f"{art.video_id}.csv", curve_rows(art, slope_window))
        _write(out / f"{art.video_id}.svg", curve_svg(art))
