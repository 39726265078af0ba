"""Context-aware keyframe sampling.

Anomalous intervals are runs of frames whose fused score reaches a
per-video percentile threshold. Each interval is widened backwards over the
rising flank of the score curve and forwards until the curve calms down,
both limited to ``max_context`` frames. A fixed number of frames is then
drawn evenly from each of these segments and the rest of the budget is
filled with evenly spaced background frames.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyInput, ValueOutOfRange
from .scoring import ScoreSeries

TAGS = ("pre", "on", "post", "background")


@dataclass(frozen=True)
class CaesConfig:
    threshold_percentile: float = 97.0
    slope_window: int = 5
    rise_percentile: float = 95.0
    calm_percentile: float = 85.0
    max_context: int = 30
    n_pre: int = 4
    n_on: int = 8
    n_post: int = 4
    budget: int = 64
    # absolute floor on the adaptive threshold; keeps flat normal videos event-free
    min_score: float = 0.2

    def __post_init__(self):
        for name in ("threshold_percentile", "rise_percentile", "calm_percentile"):
            if not 0 < getattr(self, name) < 100:
                raise ValueOutOfRange(f"{name} must lie in (0, 100)")
        if self.slope_window < 2:
            raise ValueOutOfRange("slope_window must be >= 2")
        if min(self.n_pre, self.n_on, self.n_post, self.max_context) < 0:
            raise ValueOutOfRange("sample counts and max_context must be non-negative")
        if self.budget < 1 or self.n_pre + self.n_on + self.n_post > self.budget:
            raise ValueOutOfRange("n_pre + n_on + n_post must not exceed budget")


@dataclass(frozen=True)
class EventInterval:
    start: int
    end: int
    pre_start: int
    post_end: int


@dataclass(frozen=True)
class KeyframeSet:
    frames: tuple
    budget: int
    threshold: float = float("nan")
    rise_threshold: float = float("nan")
    calm_threshold: float = float("nan")
    intervals: tuple = field(default_factory=tuple)

    @property
    def indices(self):
        return [t for t, _ in self.frames]

    def tagged(self, tag):
        return [t for t, g in self.frames if g == tag]

    def to_json(self, video_id=None):
        return {
            "video_id": video_id,
            "budget": self.budget,
            "threshold": self.threshold,
            "rise_threshold": _json_real(self.rise_threshold),
            "calm_threshold": self.calm_threshold,
            "intervals": [asdict(iv) for iv in self.intervals],
            "frames": [[t, g] for t, g in self.frames],
        }

    @classmethod
    def from_json(cls, obj):
        rise = obj["rise_threshold"]
        return cls(
            tuple((int(t), str(g)) for t, g in obj["frames"]),
            int(obj["budget"]),
            float(obj["threshold"]),
            float("inf") if rise is None else float(rise),
            float(obj["calm_threshold"]),
            tuple(EventInterval(**iv) for iv in obj["intervals"]),
        )


def _json_real(x):
    return None if not np.isfinite(x) else float(x)


def _curve(scores):
    if isinstance(scores, ScoreSeries):
        return np.asarray(scores.curve, dtype=np.float64)
    return np.asarray(scores, dtype=np.float64)


def adaptive_threshold(scores, percentile):
    """Linear-interpolation percentile of the fused scores."""
    s = _curve(scores)
    if s.size == 0:
        raise EmptyInput("empty score series")
    return float(np.percentile(s, percentile))


def slope_series(scores, window):
    """Trailing finite difference ``(S[t] - S[t-w+1]) / (w-1)``; zero for the first ``w-1`` frames."""
    if window < 2:
        raise ValueOutOfRange("slope window must be >= 2")
    s = _curve(scores)
    out = np.zeros_like(s)
    lag = window - 1
    if s.size > lag:
        out[lag:] = (s[lag:] - s[:-lag]) / lag
    return out


def detect_intervals(scores, threshold, merge_gap=5):
    """Maximal runs with score >= threshold; runs fewer than ``merge_gap`` frames apart are joined."""
    s = _curve(scores)
    above = s >= threshold
    runs = []
    t = 0
    n = len(s)
    while t < n:
        if above[t]:
            start = t
            while t + 1 < n and above[t + 1]:
                t += 1
            if runs and start - runs[-1][1] - 1 < merge_gap:
                runs[-1] = (runs[-1][0], t)
            else:
                runs.append((start, t))
        t += 1
    return runs


def context_thresholds(slopes, rise_percentile, calm_percentile):
    """Rise threshold from the positive slopes, calm threshold from absolute slopes."""
    slopes = np.asarray(slopes, dtype=np.float64)
    pos = slopes[slopes > 0]
    rise = float(np.percentile(pos, rise_percentile)) if pos.size else float("inf")
    calm = float(np.percentile(np.abs(slopes), calm_percentile)) if slopes.size else 0.0
    return rise, calm


def expand_context(interval, slopes, rise_threshold, calm_threshold, max_context, lower=0, upper=None):
    """Widen a raw ``(start, end)`` run into an EventInterval.

    ``lower``/``upper`` are the first and last frames the context may reach;
    callers pass the neighbouring intervals' bounds so contexts never overlap.
    """
    start, end = interval
    if upper is None:
        upper = len(slopes) - 1
    pre = start
    while pre - 1 >= lower and start - (pre - 1) <= max_context and slopes[pre - 1] >= rise_threshold:
        pre -= 1
    post = end
    while post + 1 <= upper and (post + 1) - end <= max_context and abs(slopes[post + 1]) >= calm_threshold:
        post += 1
    return EventInterval(start, end, pre, post)


def even_sample(pool, k):
    """``k`` evenly spaced members of ``pool`` including both ends (all of it if short)."""
    pool = list(pool)
    if k <= 0:
        return []
    n = len(pool)
    if n <= k:
        return pool
    if k == 1:
        return [pool[(n - 1) // 2]]
    return [pool[(i * (n - 1) + (k - 1) // 2) // (k - 1)] for i in range(k)]


def segment_tags(intervals, scores, threshold):
    """Per-frame segment label implied by the expanded intervals."""
    s = _curve(scores)
    tags = np.array(["background"] * len(s), dtype=object)
    for iv in intervals:
        tags[iv.pre_start:iv.start] = "pre"
        tags[iv.end + 1:iv.post_end + 1] = "post"
        for t in range(iv.start, iv.end + 1):
            if s[t] >= threshold:
                tags[t] = "on"
    return tags


def sample_keyframes(intervals, scores, config, threshold):
    s = _curve(scores)
    n = len(s)
    tags = segment_tags(intervals, s, threshold)
    if n <= config.budget:
        return tuple((t, tags[t]) for t in range(n))

    chosen = set()
    for iv in intervals:
        chosen.update(even_sample(range(iv.pre_start, iv.start), config.n_pre))
        chosen.update(even_sample([t for t in range(iv.start, iv.end + 1) if s[t] >= threshold], config.n_on))
        chosen.update(even_sample(range(iv.end + 1, iv.post_end + 1), config.n_post))
    if len(chosen) > config.budget:
        chosen = set(sorted(chosen, key=lambda t: (-s[t], t))[: config.budget])

    covered = np.zeros(n, dtype=bool)
    for iv in intervals:
        covered[iv.pre_start:iv.post_end + 1] = True
    need = config.budget - len(chosen)
    chosen.update(even_sample([t for t in range(n) if not covered[t] and t not in chosen], need))
    need = config.budget - len(chosen)
    chosen.update(even_sample([t for t in range(n) if t not in chosen], need))
    return tuple((t, tags[t]) for t in sorted(chosen))


def caes(scores, config=None):
    """Select a budgeted, segment-tagged keyframe set from a score curve."""
    config = config or CaesConfig()
    s = _curve(scores)
    thr = max(adaptive_threshold(s, config.threshold_percentile), config.min_score)
    slopes = slope_series(s, config.slope_window)
    rise, calm = context_thresholds(slopes, config.rise_percentile, config.calm_percentile)
    runs = detect_intervals(s, thr, merge_gap=config.slope_window)
    intervals = []
    for k, run in enumerate(runs):
        lower = intervals[-1].post_end + 1 if intervals else 0
        upper = runs[k + 1][0] - 1 if k + 1 < len(runs) else len(s) - 1
        intervals.append(expand_context(run, slopes, rise, calm, config.max_context, lower, upper))
    frames = sample_keyframes(intervals, s, config, thr)
    return KeyframeSet(frames, config.budget, thr, rise, calm, tuple(intervals))


def uniform_sample(num_frames, budget):
    return even_sample(range(num_frames), budget)


def topk_sample(scores, budget):
    s = _curve(scores)
    return sorted(sorted(range(len(s)), key=lambda t: (-s[t], t))[:budget])
