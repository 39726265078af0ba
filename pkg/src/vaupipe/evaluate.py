"""Metrics and comparison harnesses."""

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from . import caes as caes_mod
from .encoder import encode_batch, train
from .errors import DegenerateLabels, SchemaViolation
from .volatility import mine_samples, resmooth


@dataclass
class AblationGrid:
    sigmas: list
    topks: list
    auc: np.ndarray

    def __post_init__(self):
        self.auc = np.asarray(self.auc, dtype=np.float64)
        if self.auc.shape != (len(self.sigmas), len(self.topks)):
            raise SchemaViolation("grid shape does not match its axes")

    def to_csv(self):
        lines = ["sigma,topk,auc"]
        for a, s in enumerate(self.sigmas):
            for b, k in enumerate(self.topks):
                lines.append(f"{s!r},{k!r},{float(self.auc[a, b])!r}")
        return "\n".join(lines) + "\n"

    def table(self):
        head = "sigma \\ top-k " + " ".join(f"{k:>8.1f}%" for k in self.topks)
        rows = [f"{s:>13.1f} " + " ".join(f"{v:>9.2f}" for v in self.auc[a]) for a, s in enumerate(self.sigmas)]
        return "\n".join([head, *rows])


def roc_auc(scores, labels):
    """Probability that a random positive outranks a random negative (ties count 1/2).

    Computed from mid-ranks; equals the pairwise statistic exactly since
    every partial sum is a multiple of 1/2.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def embedding_separation(tokens, labels):
    """AUC of ``-distance`` to the positive-token centroid."""
    tokens = np.asarray(tokens, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise DegenerateLabels("separation needs positive and negative tokens")
    centroid = tokens[labels].mean(axis=0)
    return roc_auc(-np.linalg.norm(tokens - centroid, axis=1), labels)


def _coverage(selected, span):
    lo, hi = span
    if hi < lo:
        return None
    frames = set(range(lo, hi + 1))
    return len(frames & selected) / len(frames)


def sampler_compare(videos, config=None):
    """Fraction of ground-truth pre/on/post frames hit by each sampler.

    ``videos`` is a sequence of ``(scores, truth)`` where ``truth`` is a
    GroundTruth (or its JSON form). Returns ``{strategy: {segment: mean
    coverage or None}}``; ``None`` marks "not applicable" (no events).
    """
    config = config or caes_mod.CaesConfig()
    acc = {s: {"pre": [], "on": [], "post": []} for s in ("uniform", "top-k", "caes")}
    for scores, truth in videos:
        events = truth["events"] if isinstance(truth, dict) else truth.events
        n = len(scores)
        picks = {
            "uniform": set(caes_mod.uniform_sample(n, config.budget)),
            "top-k": set(caes_mod.topk_sample(scores, config.budget)),
            "caes": set(caes_mod.caes(scores, config).indices),
        }
        for ev in events:
            for strategy, sel in picks.items():
                for seg in ("pre", "on", "post"):
                    cov = _coverage(sel, ev[seg])
                    if cov is not None:
                        acc[strategy][seg].append(cov)
    return {
        s: {seg: (float(np.mean(v)) if v else None) for seg, v in segs.items()}
        for s, segs in acc.items()
    }


def ablation_grid(train_videos, eval_samples, sigmas, topks, mining, train_config, seed=0):
    """Re-mine and re-train for every (sigma, top-k) cell.

    ``train_videos`` holds ``(video_id, VolatilityCurve, is_normal)`` with
    raw curves; ``eval_samples`` is a fixed labelled evaluation set. Each
    cell reports embedding separation in percent.
    """
    X = np.array([s.vec for s in eval_samples])
    y = np.array([s.label == "positive" for s in eval_samples])
    grid = np.zeros((len(sigmas), len(topks)))
    for a, sigma in enumerate(sigmas):
        videos = [(vid, resmooth(curve, sigma), normal) for vid, curve, normal in train_videos]
        for b, k in enumerate(topks):
            cfg = replace(mining, sigma=float(sigma), top_k_percent=float(k), seed=seed)
            samples = mine_samples(videos, cfg)
            params, _ = train(samples, replace(train_config, seed=seed))
            grid[a, b] = 100.0 * embedding_separation(encode_batch(params, X), y)
    return AblationGrid(list(map(float, sigmas)), list(map(float, topks)), grid)

