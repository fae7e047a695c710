"""Compiled inner loops for coalescent simulation.

Symmetric events are drawn by thinning: a power-law body k^-beta is
dominated by an envelope that integrates in closed form, and a proposal k
is kept with probability (true effective rate) / (envelope density).  The
effective rate of k boxes with b blocks is k^-beta * P(collision).
"""
import math

import numpy as np
from numba import njit

BODY_NONE = 0
BODY_EXPLICIT = 1
BODY_POWER = 2


@njit(cache=True)
def log_no_collision(k, b):
    """log P(b balls in k boxes land in distinct boxes), k a float."""
    if b <= 1:
        return 0.0
    if b > k:
        return -np.inf
    if b <= 64:
        acc = 0.0
        for i in range(1, b):
            acc += math.log1p(-i / k)
        return acc
    if k >= 16.0 * b * b:
        m = float(b - 1)
        x = 1.0 / k
        s1 = m * (m + 1) / 2
        s2 = m * (m + 1) * (2 * m + 1) / 6
        s3 = s1 * s1
        s4 = m * (m + 1) * (2 * m + 1) * (3 * m * m + 3 * m - 1) / 30
        return -x * (s1 + x * (s2 / 2 + x * (s3 / 3 + x * s4 / 4)))
    return math.lgamma(k + 1) - math.lgamma(k - b + 1) - b * math.log(k)


@njit(cache=True)
def collision_prob(k, b):
    return -math.expm1(log_no_collision(k, b))


@njit(cache=True)
def _cell(k, s):
    # integral of y^-s over [k-1, k], for k >= 2
    L = -math.log1p(-1.0 / k)
    if s == 1.0:
        return L
    return k ** (1 - s) * math.expm1((s - 1) * L) / (s - 1)


@njit(cache=True)
def _power_integral(lo, hi, s):
    # integral of y^-s over [lo, hi]
    if hi <= lo:
        return 0.0
    if s == 1.0:
        return math.log(hi / lo)
    if math.isinf(hi):
        return lo ** (1 - s) / (s - 1)
    return (hi ** (1 - s) - lo ** (1 - s)) / (1 - s)


@njit(cache=True)
def power_envelope(b, beta, kmax):
    """Masses of the three envelope pieces: k = 1, the head 2..H, the tail > H."""
    M = b * (b - 1) / 2.0
    m1 = 1.0 if kmax >= 1 else 0.0
    H = min(math.floor(M), kmax)
    mh = _power_integral(1.0, H, beta) if H >= 2 else 0.0
    if H < 1:
        H = 1.0
    mt = M * _power_integral(H, kmax, beta + 1) if kmax > H else 0.0
    return m1, mh, mt, H


@njit(cache=True)
def draw_power_k(rng, b, beta, kmax, m1, mh, mt, H):
    """One envelope proposal; returns the accepted k (as float) or 0.0 if rejected."""
    M = b * (b - 1) / 2.0
    u = rng.random() * (m1 + mh + mt)
    if u < m1:
        return 1.0
    if u < m1 + mh:
        v = rng.random()
        if beta == 1.0:
            y = H ** v
        else:
            y = (1.0 + v * (H ** (1 - beta) - 1.0)) ** (1.0 / (1 - beta))
        k = max(2.0, min(math.ceil(y), H))
        accept = k ** -beta * collision_prob(k, b) / _cell(k, beta)
    else:
        v = rng.random()
        ratio = 0.0 if math.isinf(kmax) else (H / kmax) ** beta
        w = 1.0 - v * (1.0 - ratio)
        if w <= 0.0:
            return 0.0
        y = H * w ** (-1.0 / beta)
        if y > 1e300:
            y = 1e300
        k = max(H + 1.0, min(math.ceil(y), kmax))
        accept = k ** -beta * collision_prob(k, b) / (M * _cell(k, beta + 1))
    if rng.random() < accept:
        return k
    return 0.0


@njit(cache=True)
def first_collision(k, b, u):
    """Smallest m with P(collision among m balls) >= u * P(collision among b balls).

    m is the index of the first ball landing in an occupied box, conditioned
    on some collision happening among b balls."""
    target = u * collision_prob(k, b)
    lp = 0.0
    for m in range(2, b + 1):
        lp += math.log1p(-(m - 1) / k) if m - 1 < k else -np.inf
        if -math.expm1(lp) >= target:
            return m
    return b


@njit(cache=True)
def merged_count(rng, k, b):
    """Number of occupied boxes after dropping b balls into k boxes, given a collision."""
    m = first_collision(k, b, rng.random())
    occ = m - 1
    for _ in range(b - m):
        if rng.random() * k >= occ:
            occ += 1
    return occ


@njit(cache=True)
def explicit_weights(b, ks, ws, out):
    total = 0.0
    for i in range(ks.shape[0]):
        out[i] = ws[i] * collision_prob(ks[i], b)
        total += out[i]
    return total


@njit(cache=True)
def pick(weights, total, u):
    target = u * total
    acc = 0.0
    for i in range(weights.shape[0]):
        acc += weights[i]
        if acc >= target:
            return i
    return weights.shape[0] - 1


@njit(cache=True)
def block_count_runs(n, a, body, beta, kmax, ks, ws, reps, rng):
    """Simulate reps block-counting chains from n to 1.

    Returns arrays (tree length, time to the most recent common ancestor,
    number of mergers)."""
    lengths = np.empty(reps)
    tmrcas = np.empty(reps)
    events = np.empty(reps, dtype=np.int64)
    w = np.empty(ks.shape[0])
    for r in range(reps):
        b = n
        t = 0.0
        L = 0.0
        ev = 0
        while b > 1:
            king = a * b * (b - 1) / 2.0
            m1 = mh = mt = H = 0.0
            bodyrate = 0.0
            if body == BODY_EXPLICIT:
                bodyrate = explicit_weights(b, ks, ws, w)
            elif body == BODY_POWER:
                m1, mh, mt, H = power_envelope(b, beta, kmax)
                bodyrate = m1 + mh + mt
            total = king + bodyrate
            if total <= 0.0:
                raise ValueError("no merger can ever happen")
            dt = rng.standard_exponential() / total
            t += dt
            L += b * dt
            if rng.random() * total < king:
                b -= 1
                ev += 1
                continue
            if body == BODY_EXPLICIT:
                k = ks[pick(w, bodyrate, rng.random())]
            else:
                k = draw_power_k(rng, b, beta, kmax, m1, mh, mt, H)
                if k == 0.0:
                    continue
            b = merged_count(rng, k, b)
            ev += 1
        lengths[r] = L
        tmrcas[r] = t
        events[r] = ev
    return lengths, tmrcas, events
