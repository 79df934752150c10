"""Independent reference implementations used to check the package."""

import math
from fractions import Fraction

import numpy as np


def brute_force_segments(ref, hyp, names, seg_len: str, clip: str):
    """Exact rational enumeration: segment i is active when an interval overlaps [iL, (i+1)L)."""
    L, T = Fraction(seg_len), Fraction(clip)
    n_seg = math.ceil(T / L)
    tp = fp = fn = 0
    for name in names:
        def active(s, i):
            lo, hi = i * L, (i + 1) * L
            return any(Fraction(str(a)) < hi and Fraction(str(b)) > lo for a, b in s.entries.get(name, []))
        for i in range(n_seg):
            r, h = active(ref, i), active(hyp, i)
            tp += r and h
            fp += h and not r
            fn += r and not h
    return tp, fp, fn


def denman_beavers_sqrt(m: np.ndarray, iters: int = 100) -> np.ndarray:
    y, z = m.copy(), np.eye(len(m))
    for _ in range(iters):
        y, z = 0.5 * (y + np.linalg.inv(z)), 0.5 * (z + np.linalg.inv(y))
    return y


def frechet_oracle(mu_a, cov_a, mu_b, cov_b) -> float:
    cross = denman_beavers_sqrt(cov_a @ cov_b)
    d = mu_a - mu_b
    return float(d @ d + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(cross))


def recount_l1(specs, dets, names):
    total = 0
    for spec, det in zip(specs, dets):
        for name in names:
            want = spec.counts[name] if name in spec.counts else 0
            got = len(det.events[name]) if name in det.events else 0
            total += abs(want - got)
    return total / (len(specs) * len(names))


def oracle_eps(p_n, p0, n, schedule):
    """The exact noise that maps ``p0`` to ``p_n`` at step ``n``."""
    ab = np.prod([1.0 - b for b in schedule.beta[:n]])
    return (p_n - np.sqrt(ab) * p0) / np.sqrt(1.0 - ab)


def finite_difference_check(loss_of, params, grads, h=1e-4):
    """Worst relative error between ``grads`` and central differences over every weight."""
    worst = 0.0
    for key, w in params.weights.items():
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            up = loss_of(params)
            w[idx] = orig - h
            down = loss_of(params)
            w[idx] = orig
            fd, an = (up - down) / (2 * h), grads[key][idx]
            scale = max(abs(fd), abs(an))
            if scale > 1e-7:
                worst = max(worst, abs(fd - an) / scale)
            elif abs(fd - an) > 1e-9:
                return math.inf
    return worst
