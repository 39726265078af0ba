"""Normality-prototype re-centering and fused per-frame anomaly scores.

Frame features are shifted so that the mean normal frame sits at the
origin, projected onto per-class text directions, and turned into a class
distribution by a softmax. The fused score of a frame is the largest joint
probability ``p_anomaly * p(class | anomaly)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, SchemaViolation, ValueOutOfRange


@dataclass(frozen=True)
class ScoreSeries:
    """Per-frame anomaly probabilities, optionally with fused scores.

    ``fused`` and ``argmax_class`` are ``None`` until the series has been
    scored against class directions; ``curve`` then falls back to the raw
    probabilities.
    """

    p_anomaly: np.ndarray
    fused: np.ndarray | None = None
    argmax_class: np.ndarray | None = None

    def __post_init__(self):
        p = _frozen(self.p_anomaly, np.float64)
        object.__setattr__(self, "p_anomaly", p)
        if (self.fused is None) != (self.argmax_class is None):
            raise SchemaViolation("fused and argmax_class must be given together")
        if self.fused is not None:
            fused = _frozen(self.fused, np.float64)
            arg = _frozen(self.argmax_class, np.int64)
            if fused.shape != p.shape or arg.shape != p.shape:
                raise SchemaViolation("score columns differ in length")
            object.__setattr__(self, "fused", fused)
            object.__setattr__(self, "argmax_class", arg)

    def __len__(self):
        return len(self.p_anomaly)

    @property
    def curve(self):
        return self.fused if self.fused is not None else self.p_anomaly

    @classmethod
    def from_curve(cls, values):
        """Series whose fused score is the given curve (single-class case)."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, values.copy(), np.zeros(len(values), dtype=np.int64))


@dataclass(frozen=True)
class NormalityPrototype:
    m: np.ndarray


@dataclass(frozen=True)
class ClassDirections:
    classes: tuple
    dirs: np.ndarray


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _as_matrix(features, what):
    try:
        arr = np.asarray(features, dtype=np.float64)
    except ValueError as exc:
        raise SchemaViolation(f"{what}: ragged feature dimensions") from exc
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise SchemaViolation(f"{what}: expected a list of vectors")
    return arr


def compute_prototype(normal_features):
    """Component-wise mean of the normal frame features."""
    if len(normal_features) == 0:
        raise EmptyInput("no normal features to average")
    feats = _as_matrix(normal_features, "normal features")
    return NormalityPrototype(_frozen(feats.mean(axis=0), np.float64))


def recenter(features, proto):
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[-1] != proto.m.shape[0]:
        raise SchemaViolation(
            f"feature dimension {feats.shape[-1]} does not match prototype dimension {proto.m.shape[0]}"
        )
    return feats - proto.m


def prepare_directions(classes, text_embeddings, proto):
    """Re-center class text embeddings by the prototype and unit-normalize them."""
    emb = _as_matrix(text_embeddings, "class embeddings")
    if len(classes) != emb.shape[0]:
        raise SchemaViolation(f"{len(classes)} class names but {emb.shape[0]} embeddings")
    dirs = recenter(emb, proto)
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms <= 0.0):
        bad = int(np.argmin(norms))
        raise ValueOutOfRange(f"class {classes[bad]!r} coincides with the normality prototype")
    return ClassDirections(tuple(classes), _frozen(dirs / norms[:, None], np.float64))


def class_conditional(recentered_frame, dirs, temperature=1.0):
    """Softmax over the projections of a re-centered frame onto each class direction."""
    if not temperature > 0:
        raise ValueOutOfRange(f"temperature must be positive, got {temperature}")
    x = np.asarray(recentered_frame, dtype=np.float64)
    if x.shape != (dirs.dirs.shape[1],):
        raise SchemaViolation(f"frame dimension {x.shape} does not match directions {dirs.dirs.shape[1]}")
    logits = dirs.dirs @ x / temperature
    z = np.exp(logits - logits.max())
    return z / z.sum()


def fuse_score(p_a, class_dist):
    """Return ``(max_c p_a * dist[c], argmax)``; ties go to the smallest class index."""
    if not 0.0 <= p_a <= 1.0:
        raise ValueOutOfRange(f"p_anomaly {p_a} outside [0, 1]")
    dist = np.asarray(class_dist, dtype=np.float64)
    if dist.size == 0 or abs(dist.sum() - 1.0) > 1e-9:
        raise ValueOutOfRange("class distribution does not sum to 1")
    joint = p_a * dist
    c = int(np.argmax(joint))
    return float(joint[c]), c


def score_frames(p_anomaly, frame_feats, dirs, proto, temperature=1.0):
    """Fused ScoreSeries for a whole video."""
    p = np.asarray(p_anomaly, dtype=np.float64)
    feats = recenter(_as_matrix(frame_feats, "frame features"), proto)
    if len(feats) != len(p):
        raise SchemaViolation(f"{len(feats)} feature rows for {len(p)} frames")
    fused = np.empty(len(p))
    arg = np.empty(len(p), dtype=np.int64)
    for t in range(len(p)):
        fused[t], arg[t] = fuse_score(float(p[t]), class_conditional(feats[t], dirs, temperature))
    return ScoreSeries(p, fused, arg)
