"""Limiting jump diffusions of Wright-Fisher frequencies under bottlenecks.

All three jump kernels have the form x <- sum_i w_i 1{u_i <= x} with u_i iid
uniform and weights w summing to one:
  SDE1: w = (1/k, ..., 1/k), k ~ F0;
  SDE2: w = a / k, a the founder family sizes after g-1 Wright-Fisher
        generations at size k, (k, g) ~ F0 x L;
  SDE3: w = sorted Dirichlet(1..1) of dimension j, j ~ K_sigma, sigma ~ Lgamma.
Between jumps X follows dX = sqrt(X(1-X)) dB when alpha = 1 (Euler-Maruyama,
clamped to [0, 1]) and stays constant otherwise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

from .forward import family_sizes
from .measures import DiscreteLaw, PositiveLaw


# Kingman lineage counts from infinity

def _log_term(j: int, m: int, sigma: float) -> float:
    # log |e^{-m(m-1)sigma/2} (2m-1) j(j+1)..(j+m-2) / (j! (m-j)!)|
    return (-m * (m - 1) * sigma / 2 + math.log(2 * m - 1)
            + math.lgamma(j + m - 1) - math.lgamma(j) - math.lgamma(j + 1) - math.lgamma(m - j + 1))


@lru_cache(maxsize=4096)
def _lineage_pmf(sigma: float, tail_cut: float) -> tuple:
    log_cut = math.log(tail_cut) - 5.0
    # largest term magnitude sets the cancellation in the alternating sums
    peak = -math.inf
    m_hi = 2
    m = 1
    while True:
        lt = max(_log_term(j, m, sigma) for j in range(1, m + 1))
        peak = max(peak, lt)
        if lt < log_cut and m > 2 and lt < peak:
            m_hi = m
            break
        m += 1
    digits = peak / math.log(10)
    exact = digits > 2
    probs = []
    with mpmath.workdps(int(25 + max(digits, 0))):
        for j in range(1, m_hi + 1):
            terms = []
            for mm in range(j, m_hi + 1):
                sign = -1 if (mm - j) % 2 else 1
                if exact:
                    lg = (mpmath.loggamma(j + mm - 1) - mpmath.loggamma(j) - mpmath.loggamma(j + 1)
                          - mpmath.loggamma(mm - j + 1))
                    terms.append(sign * (2 * mm - 1) * mpmath.exp(lg - mpmath.mpf(mm * (mm - 1)) * sigma / 2))
                else:
                    terms.append(sign * math.exp(_log_term(j, mm, sigma)))
            p = float(mpmath.fsum(terms)) if exact else math.fsum(terms)
            probs.append(max(p, 0.0))
            # stop in the upper tail, past the bulk of the mass
            if p < tail_cut and math.fsum(probs) > 0.5:
                break
    while len(probs) > 1 and probs[-1] < tail_cut:
        probs.pop()
    return tuple(probs)


def kingman_lineages_pmf(sigma: float, tail_cut: float = 1e-14) -> np.ndarray:
    """P(K_sigma = j), j = 1, 2, ..., for the Kingman coalescent started from
    infinitely many lineages.  Entry j-1 holds P(K_sigma = j).

    Uses the alternating series sum_{m>=j} e^{-m(m-1)sigma/2} (2m-1) (-1)^{m-j}
    j(j+1)..(j+m-2) / (j! (m-j)!), in extended precision whenever the
    largest term would cost double-precision digits."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return np.array(_lineage_pmf(float(sigma), float(tail_cut)))


def sorted_dirichlet(j: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Dirichlet(1, ..., 1) of dimension j sorted in decreasing order."""
    if j < 1:
        raise ValueError("j must be positive")
    shape = (j,) if size is None else (size, j)
    e = rng.standard_exponential(shape)
    z = e / e.sum(axis=-1, keepdims=True)
    return -np.sort(-z, axis=-1)


# model variants

@dataclass(frozen=True)
class SDE1:
    """Short drastic bottlenecks: jumps at rate 1 with k ~ F0."""

    F0: DiscreteLaw
    alpha: float

    @property
    def rate(self) -> float:
        return 1.0

    def weights(self, rng: np.random.Generator, m: int) -> np.ndarray:
        ks = np.asarray(self.F0.sample(rng, m), dtype=np.int64)
        K = int(ks.max())
        cols = np.arange(K)
        return np.where(cols[None, :] < ks[:, None], 1.0 / ks[:, None], 0.0)


@dataclass(frozen=True)
class SDE2:
    """Long drastic bottlenecks: jumps at rate eta, bottleneck size k ~ F0
    lasting g ~ L generations."""

    F0: DiscreteLaw
    L: DiscreteLaw
    eta: float
    alpha: float

    @property
    def rate(self) -> float:
        return self.eta

    def weights(self, rng: np.random.Generator, m: int) -> np.ndarray:
        ks = np.asarray(self.F0.sample(rng, m), dtype=np.int64)
        gs = np.asarray(self.L.sample(rng, m), dtype=np.int64)
        W = np.zeros((m, int(ks.max())))
        for k, g in set(zip(ks.tolist(), gs.tolist())):
            sel = np.flatnonzero((ks == k) & (gs == g))
            W[sel, :k] = family_sizes(k, g - 1, rng, size=sel.size) / k
        return W


@dataclass(frozen=True)
class SDE3:
    """Long soft bottlenecks: jumps at rate eta, each a Kingman run of
    duration sigma ~ Lgamma from infinitely many lineages."""

    Lgamma: PositiveLaw
    eta: float
    alpha: float

    @property
    def rate(self) -> float:
        return self.eta

    def weights(self, rng: np.random.Generator, m: int) -> np.ndarray:
        sig = np.asarray(self.Lgamma.sample(rng, m), dtype=float)
        js = np.empty(m, dtype=np.int64)
        for s in np.unique(sig):
            sel = np.flatnonzero(sig == s)
            p = kingman_lineages_pmf(float(s))
            js[sel] = 1 + rng.choice(len(p), size=sel.size, p=p / p.sum())
        W = np.zeros((m, int(js.max())))
        for j in np.unique(js):
            sel = np.flatnonzero(js == j)
            W[sel, :j] = sorted_dirichlet(int(j), rng, size=sel.size)
        return W


@dataclass(frozen=True)
class JumpDiffusionSpec:
    model: SDE1 | SDE2 | SDE3
    x0: float
    T: float
    dt: float = 1e-3

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.x0 <= 1:
            raise ValueError("x0 must lie in [0, 1]")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0 < self.model.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    @property
    def diffusive(self) -> bool:
        return self.model.alpha == 1


def _apply_jump(x, W, U):
    # weights sum to one up to rounding
    return np.minimum((W * (U <= x[:, None])).sum(axis=1), 1.0)


# single paths

@dataclass
class SDEPath:
    """Values after each step (times[i], values[i]) and the jump times."""

    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray

    def value_at(self, t: float) -> float:
        i = np.searchsorted(self.times, t, side="right") - 1
        return float(self.values[i])

    def to_jsonl(self, dt_out: float | None = None) -> str:
        """(t, x) at every jump time and at checkpoints spaced dt_out apart."""
        T = float(self.times[-1])
        pts = set(self.jump_times.tolist())
        if dt_out:
            pts.update((np.arange(0, T + dt_out / 2, dt_out)).tolist())
        else:
            pts.update(self.times.tolist())
        lines = []
        for t in sorted(pts):
            if t <= T:
                lines.append(json.dumps({"t": t, "x": self.value_at(t)}))
        return "\n".join(lines) + "\n"


def simulate_sde(spec: JumpDiffusionSpec, rng: np.random.Generator) -> SDEPath:
    """One path on [0, T]; diffusion steps are cut at jump times."""
    model = spec.model
    t, x = 0.0, float(spec.x0)
    times, values, jumps = [0.0], [x], []
    next_jump = rng.exponential(1.0 / model.rate) if model.rate > 0 else math.inf
    while t < spec.T:
        stop = min(next_jump, spec.T)
        if spec.diffusive:
            h = min(spec.dt, stop - t)
            x += math.sqrt(max(x * (1 - x), 0.0) * h) * rng.standard_normal()
            x = min(max(x, 0.0), 1.0)
            t = stop if h == stop - t else t + h
        else:
            t = stop
        if t == next_jump:
            W = model.weights(rng, 1)
            x = float(_apply_jump(np.array([x]), W, rng.random(W.shape))[0])
            jumps.append(t)
            next_jump = t + rng.exponential(1.0 / model.rate)
        times.append(t)
        values.append(x)
    return SDEPath(np.array(times), np.array(values), np.array(jumps))


# ensembles

@dataclass
class Ensemble:
    """Values of reps independent paths at the checkpoint times."""

    times: np.ndarray
    X: np.ndarray
    dt: float

    def column(self, t: float) -> np.ndarray:
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if hit.size == 0:
            raise ValueError(f"t={t} is not a checkpoint")
        return self.X[:, hit[0]]


def _grid(checkpoints, dt):
    cps = np.asarray(sorted(set(float(c) for c in checkpoints)))
    if cps[0] < 0:
        raise ValueError("checkpoints must be non-negative")
    steps = np.rint(cps / dt).astype(np.int64)
    if np.any(np.abs(steps * dt - cps) > 1e-9 * max(1.0, cps.max())):
        raise ValueError("checkpoints must be multiples of dt")
    return cps, steps


def _run(spec: JumpDiffusionSpec, reps: int, rng: np.random.Generator, checkpoints, coupled: bool):
    """Vectorized paths; with coupled=True a second ensemble at step dt/2
    shares Brownian increments and jumps with the step-dt ensemble."""
    model = spec.model
    cps, steps = _grid(checkpoints, spec.dt)
    if cps[-1] > spec.T + 1e-12:
        raise ValueError("checkpoint beyond horizon")
    x = np.full(reps, float(spec.x0))
    xf = x.copy() if coupled else None
    out = np.empty((reps, cps.size))
    outf = np.empty((reps, cps.size)) if coupled else None
    sub = 2 if coupled else 1
    h = spec.dt / sub

    def jumps(intensity, targets):
        # Poisson(intensity) jumps per path applied in order; returns the draws
        n = rng.poisson(intensity, reps)
        draws = []
        r = 0
        while True:
            idx = np.flatnonzero(n > r)
            if idx.size == 0:
                break
            W = model.weights(rng, idx.size)
            U = rng.random(W.shape)
            for arr in targets:
                arr[idx] = _apply_jump(arr[idx], W, U)
            draws.append((idx, W, U))
            r += 1
        return draws

    done = 0
    for c, s in enumerate(steps):
        if not spec.diffusive:
            # X is constant between jumps: exact in law at checkpoints
            if s > done:
                jumps(model.rate * (s - done) * spec.dt, [x] + ([xf] if coupled else []))
            done = s
        while done < s:
            dB = np.zeros(reps)
            pending = []
            for _ in range(sub):
                z = rng.standard_normal(reps) * math.sqrt(h)
                dB += z
                if coupled:
                    xf += np.sqrt(np.clip(xf * (1 - xf), 0, None)) * z
                    np.clip(xf, 0.0, 1.0, out=xf)
                    pending += jumps(model.rate * h, [xf])
                else:
                    pending += [None]
            x += np.sqrt(np.clip(x * (1 - x), 0, None)) * dB
            np.clip(x, 0.0, 1.0, out=x)
            if coupled:
                for idx, W, U in pending:
                    x[idx] = _apply_jump(x[idx], W, U)
            else:
                jumps(model.rate * spec.dt, [x])
            done += 1
        out[:, c] = x
        if coupled:
            outf[:, c] = xf
    if np.any((x < 0) | (x > 1)):
        raise AssertionError("path left [0, 1]")
    coarse = Ensemble(cps, out, spec.dt)
    return (coarse, Ensemble(cps, outf, h)) if coupled else coarse


def simulate_ensemble(spec: JumpDiffusionSpec, reps: int, rng: np.random.Generator,
                      checkpoints=None) -> Ensemble:
    """reps independent paths observed at the checkpoints (default: T).

    Jumps falling in a diffusion step are applied at its end; without
    diffusion the values at checkpoints are exact in law."""
    return _run(spec, reps, rng, [spec.T] if checkpoints is None else checkpoints, False)


def coupled_ensembles(spec: JumpDiffusionSpec, reps: int, rng: np.random.Generator,
                      checkpoints=None) -> tuple[Ensemble, Ensemble]:
    """Ensembles at step dt and dt/2 driven by the same noise and jumps."""
    return _run(spec, reps, rng, [spec.T] if checkpoints is None else checkpoints, True)


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    se: float
    reps: int


def moment_estimate(paths, n: int, t: float) -> MomentEstimate:
    """Monte Carlo mean of X_t^n with its standard error.

    paths is an Ensemble or a sequence of SDEPath."""
    if isinstance(paths, Ensemble):
        v = paths.column(t)
    else:
        v = np.array([p.value_at(t) for p in paths])
    if v.size < 2:
        raise ValueError("need at least two paths")
    m = v ** n
    return MomentEstimate(float(m.mean()), float(m.std(ddof=1) / math.sqrt(v.size)), int(v.size))
