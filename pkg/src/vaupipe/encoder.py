"""Contrastive relation encoder.

A two-layer perceptron maps a concatenated before/after relation vector to
a unit-norm token. Training minimises a triplet hinge loss with semi-hard
negatives drawn from a random pool, using Adam with a step-decay schedule.
Gradients are written out by hand so they can be checked against finite
differences.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateToken, EmptyMiningResult, SchemaViolation, ValueOutOfRange

TOKEN_EPS = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class EncoderParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[1] != h or self.b2.shape != (self.W2.shape[0],):
            raise SchemaViolation("encoder parameter shapes are inconsistent")

    @property
    def d_in(self):
        return self.W1.shape[1]

    def copy(self):
        return EncoderParams(*(getattr(self, k).copy() for k in PARAM_NAMES))

    def to_json(self):
        return {k: getattr(self, k).tolist() for k in PARAM_NAMES}

    @classmethod
    def from_json(cls, obj):
        return cls(*(np.asarray(obj[k], dtype=np.float64) for k in PARAM_NAMES))


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    pool_size: int = 30
    learning_rate: float = 1e-4
    epochs: int = 50
    lr_step: int = 20
    lr_gamma: float = 0.5
    batch_size: int = 64
    hidden: int = 256
    token_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueOutOfRange("margin must be positive")
        if self.pool_size < 1 or self.batch_size < 1 or self.hidden < 1 or self.token_dim < 1:
            raise ValueOutOfRange("pool_size, batch_size, hidden and token_dim must be >= 1")
        if not self.learning_rate > 0:
            raise ValueOutOfRange("learning_rate must be positive")
        if self.epochs < 0 or self.lr_step < 1:
            raise ValueOutOfRange("epochs must be >= 0 and lr_step >= 1")

    def to_json(self):
        return asdict(self)


def init_params(d_in, hidden, token_dim, rng):
    """Glorot-uniform weights, zero biases."""
    def glorot(fan_out, fan_in):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    return EncoderParams(glorot(hidden, d_in), np.zeros(hidden), glorot(token_dim, hidden), np.zeros(token_dim))


def _forward(params, X):
    pre = X @ params.W1.T + params.b1
    H = np.maximum(pre, 0.0)
    Z = H @ params.W2.T + params.b2
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms < TOKEN_EPS):
        raise DegenerateToken("encoder output has (near) zero norm")
    return pre, H, Z, norms, Z / norms[:, None]


def encode_batch(params, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.d_in:
        raise SchemaViolation(f"pair dimension {X.shape[1]} does not match encoder input {params.d_in}")
    return _forward(params, X)[4]


def encode(params, pair):
    return encode_batch(params, pair)[0]


def triplet_loss(f_a, f_p, f_n, margin):
    d_ap = float(np.linalg.norm(np.asarray(f_a) - np.asarray(f_p)))
    d_an = float(np.linalg.norm(np.asarray(f_a) - np.asarray(f_n)))
    return max(0.0, d_ap - d_an + margin)


def semi_hard_mine(anchor, positive, pool, margin):
    """Closest negative inside ``d(a,p) < d(a,n) < d(a,p) + margin``; else the farthest one."""
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    d_ap = np.linalg.norm(np.asarray(anchor) - np.asarray(positive))
    d = np.linalg.norm(pool - np.asarray(anchor), axis=1)
    band = (d > d_ap) & (d < d_ap + margin)
    if band.any():
        idx = np.flatnonzero(band)
        return int(idx[np.argmin(d[idx])])
    return int(np.argmax(d))


def _unit_diff(u, v):
    diff = u - v
    dist = np.linalg.norm(diff, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    return dist, np.where(dist[:, None] > 0, diff / safe[:, None], 0.0)


def loss_gradients(params, anchors, positives, negatives, margin):
    """Summed triplet loss over a batch and its gradient w.r.t. every parameter.

    The hinge subgradient at exactly zero is taken as zero.
    """
    A = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    B = len(A)
    X = np.vstack([A, np.atleast_2d(positives), np.atleast_2d(negatives)])
    pre, H, Z, norms, Y = _forward(params, X)
    ya, yp, yn = Y[:B], Y[B:2 * B], Y[2 * B:]
    d_ap, u_ap = _unit_diff(ya, yp)
    d_an, u_an = _unit_diff(ya, yn)
    hinge = d_ap - d_an + margin
    active = (hinge > 0).astype(np.float64)[:, None]
    loss = float(np.sum(np.maximum(hinge, 0.0)))

    dY = np.vstack([(u_ap - u_an) * active, -u_ap * active, u_an * active])
    dZ = (dY - Y * np.sum(Y * dY, axis=1, keepdims=True)) / norms[:, None]
    dH = dZ @ params.W2
    dpre = dH * (pre > 0)
    grads = {
        "W1": dpre.T @ X,
        "b1": dpre.sum(axis=0),
        "W2": dZ.T @ H,
        "b2": dZ.sum(axis=0),
    }
    return loss, grads


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(getattr(params, k)) for k in PARAM_NAMES}
        self.v = {k: np.zeros_like(getattr(params, k)) for k in PARAM_NAMES}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            step = lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            setattr(params, k, getattr(params, k) - step)


def _anchor_pairs(n_pos):
    if n_pos < 2:
        return np.zeros((1, 2), dtype=np.int64)
    a, p = np.meshgrid(np.arange(n_pos), np.arange(n_pos), indexing="ij")
    keep = a != p
    return np.stack([a[keep], p[keep]], axis=1)


def train(samples, config=None, log=None):
    """Fit the encoder on labelled relation-change pairs.

    One epoch visits every ordered (anchor, positive) pair of distinct
    positives once, in a seeded random order. Returns ``(params, history)``
    where ``history`` holds the mean loss of each epoch.
    """
    config = config or TrainConfig()
    pos = np.array([s.vec for s in samples if s.label == "positive"], dtype=np.float64)
    neg = np.array([s.vec for s in samples if s.label == "negative"], dtype=np.float64)
    if len(pos) == 0:
        raise EmptyMiningResult("no positive samples to train on")
    if len(neg) == 0:
        raise EmptyMiningResult("no negative samples to train on")

    rng = np.random.default_rng(config.seed)
    params = init_params(pos.shape[1], config.hidden, config.token_dim, rng)
    history = []
    if config.epochs == 0:
        return params, history

    opt = Adam(params)
    pairs = _anchor_pairs(len(pos))
    pool_k = min(config.pool_size, len(neg))
    for epoch in range(config.epochs):
        lr = config.learning_rate * config.lr_gamma ** (epoch // config.lr_step)
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = pairs[order[start:start + config.batch_size]]
            A, P = pos[batch[:, 0]], pos[batch[:, 1]]
            pools = np.stack([rng.choice(len(neg), size=pool_k, replace=False) for _ in range(len(batch))])
            ya = encode_batch(params, A)
            yp = encode_batch(params, P)
            yn = encode_batch(params, neg[pools.ravel()]).reshape(len(batch), pool_k, -1)
            chosen = [pools[b, semi_hard_mine(ya[b], yp[b], yn[b], config.margin)] for b in range(len(batch))]
            loss, grads = loss_gradients(params, A, P, neg[chosen], config.margin)
            total += loss
            opt.step(params, {k: g / len(batch) for k, g in grads.items()}, lr)
        history.append(total / len(pairs))
        if log is not None:
            log(epoch, history[-1], lr)
    return params, history
