"""Central finite-difference check of the encoder loss gradients."""

import numpy as np

from vaupipe.encoder import EncoderParams, _forward, init_params, loss_gradients

STEP = 1e-5
KINK_EPS = 1e-6


def hinge_values(params, A, P, N, margin):
    Y = _forward(params, np.vstack([A, P, N]))[4]
    b = len(A)
    ya, yp, yn = Y[:b], Y[b:2 * b], Y[2 * b:]
    return np.linalg.norm(ya - yp, axis=1) - np.linalg.norm(ya - yn, axis=1) + margin


def summed_loss(params, A, P, N, margin):
    return float(np.sum(np.maximum(hinge_values(params, A, P, N, margin), 0.0)))


def random_instance(rng, margin=0.5):
    d_in, hidden, token, batch = (int(v) for v in rng.integers([2, 2, 2, 1], [7, 7, 5, 4]))
    params = init_params(d_in, hidden, token, rng)
    params.b1 = rng.normal(0, 0.3, hidden)
    params.b2 = rng.normal(0, 0.3, token)
    A, P, N = (rng.standard_normal((batch, d_in)) for _ in range(3))
    return params, A, P, N, margin


def near_kink(params, A, P, N, margin):
    """True when a hinge or a relu pre-activation is too close to its kink for differencing."""
    h = hinge_values(params, A, P, N, margin)
    pre = _forward(params, np.vstack([A, P, N]))[0]
    return bool(np.any(np.abs(h) < KINK_EPS) or np.any(np.abs(pre) < 10 * STEP * (1 + np.abs(pre).max())))


def max_relative_error(params, A, P, N, margin):
    _, grads = loss_gradients(params, A, P, N, margin)
    worst = 0.0
    for name in ("W1", "b1", "W2", "b2"):
        theta = getattr(params, name)
        for idx in np.ndindex(theta.shape):
            orig = theta[idx]
            theta[idx] = orig + STEP
            up = summed_loss(params, A, P, N, margin)
            theta[idx] = orig - STEP
            down = summed_loss(params, A, P, N, margin)
            theta[idx] = orig
            fd = (up - down) / (2 * STEP)
            an = grads[name][idx]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-7)
            worst = max(worst, err)
    return worst


def run(n_instances, seed=0):
    """Return (checked, skipped, worst relative error)."""
    rng = np.random.default_rng(seed)
    checked = skipped = 0
    worst = 0.0
    while checked < n_instances:
        inst = random_instance(rng)
        if near_kink(*inst):
            skipped += 1
            continue
        worst = max(worst, max_relative_error(*inst))
        checked += 1
    return checked, skipped, worst


__all__ = ["EncoderParams", "run", "max_relative_error", "random_instance", "near_kink", "summed_loss"]
