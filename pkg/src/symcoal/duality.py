"""Moment duality between the frequency processes and block-counting chains.

E[X_t^n | X_0 = x] = E[x^{N_t} | N_0 = n], where N is the block-counting
chain of the matching coalescent.  The chain side is computed exactly by
uniformization; the diffusion side by Monte Carlo.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .coalescent import ancestral_count_matrix
from .measures import DiscreteLaw, PositiveLaw
from .rates import GeneratorMatrix, block_counting_generator, occupancy_table
from .sde import SDE1, SDE2, SDE3, JumpDiffusionSpec, coupled_ensembles, moment_estimate, simulate_ensemble

# bias allowance of the Euler-Maruyama moments at dt = 1e-3, linear in dt
BIAS_ALLOWANCE = 0.005
BIAS_DT = 1e-3


# uniformization

def _poisson_window(mean: float, tol: float) -> tuple[np.ndarray, float]:
    """Poisson(mean) weights for k = 0..K with tail mass beyond K below tol."""
    K = int(stats.poisson.isf(tol, mean)) + 1
    w = stats.poisson.pmf(np.arange(K + 1), mean)
    return w, float(stats.poisson.sf(K, mean))


def transition_matrix(Q: GeneratorMatrix, t: float, tol: float = 1e-12) -> np.ndarray:
    """exp(t Q) by uniformization; entries accurate to tol."""
    Q.check()
    lam = float(np.max(-np.diag(Q.Q)))
    if t == 0 or lam == 0:
        return np.eye(Q.n)
    P = np.eye(Q.n) + Q.Q / lam
    w, _ = _poisson_window(lam * t, tol)
    out = np.zeros_like(P)
    term = np.eye(Q.n)
    for wk in w:
        out += wk * term
        term = term @ P
    return out


@dataclass(frozen=True)
class ChainMoment:
    value: float
    error_bound: float

    def __float__(self):
        return self.value


def exact_chain_moment(Q: GeneratorMatrix, n: int, x: float, t: float,
                       tol: float = 1e-10) -> ChainMoment:
    """E[x^{N_t} | N_0 = n] for the chain with generator Q on {1..Q.n}.

    Sums Poisson(lam t)-weighted powers of the uniformized jump matrix
    applied to (x, x^2, ..); the neglected Poisson tail bounds the error."""
    Q.check()
    if not 1 <= n <= Q.n:
        raise ValueError(f"n must lie in 1..{Q.n}")
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if t < 0:
        raise ValueError("t must be non-negative")
    v = float(x) ** np.arange(1, Q.n + 1)
    lam = float(np.max(-np.diag(Q.Q)))
    if t == 0 or lam == 0:
        return ChainMoment(float(v[n - 1]), 0.0)
    P = np.eye(Q.n) + Q.Q / lam
    w, tail = _poisson_window(lam * t, tol)
    acc = []
    for wk in w:
        acc.append(wk * v[n - 1])
        v = P @ v
    return ChainMoment(math.fsum(acc), tail)


# dual generators

def short_drastic_generator(F0: DiscreteLaw, alpha: float, n: int) -> GeneratorMatrix:
    """Generator of the coalescent dual to SDE1: F = 1{alpha=1} delta_0 + F0."""
    return block_counting_generator(F0.as_measure(a=1.0 if alpha == 1 else 0.0), n)


def drastic_generator(F0: DiscreteLaw, L: DiscreteLaw, eta: float, a: float, n: int) -> GeneratorMatrix:
    """q_ij = a C(i,2) 1{j=i-1} + eta sum_k F0(k) sum_g L(g) P(K^{k,g-1,W^{k,i}} = j).

    W^{k,i} is the occupancy of i balls in k boxes; K^{k,g-1,.} runs g-1
    further Wright-Fisher generations at size k, the identity when g = 1."""
    off = np.zeros((n, n))
    for i in range(2, n + 1):
        off[i - 1, i - 2] += a * i * (i - 1) / 2
    for k, pk in F0.items():
        W = occupancy_table(k, n)[:, 1:]          # rows i = 0..n, columns j = 1..n
        A = ancestral_count_matrix(k, n)
        for g, pg in L.items():
            M = W @ np.linalg.matrix_power(A, g - 1)
            for i in range(2, n + 1):
                off[i - 1, :i - 1] += eta * pk * pg * M[i, :i - 1]
    return GeneratorMatrix.from_offdiagonal(off)


def kingman_death_generator(n: int) -> GeneratorMatrix:
    """Block-counting generator of the standard Kingman coalescent on {1..n}."""
    off = np.zeros((n, n))
    for i in range(2, n + 1):
        off[i - 1, i - 2] = i * (i - 1) / 2
    return GeneratorMatrix.from_offdiagonal(off)


def soft_generator(Lgamma: PositiveLaw, eta: float, a: float, n: int) -> GeneratorMatrix:
    """q_ij = a C(i,2) 1{j=i-1} + eta sum_sigma Lgamma(sigma) P(Kingman from i has j blocks at sigma)."""
    if not Lgamma.is_atomic:
        raise ValueError("Lgamma must have finitely many atoms")
    off = np.zeros((n, n))
    for i in range(2, n + 1):
        off[i - 1, i - 2] += a * i * (i - 1) / 2
    K = kingman_death_generator(n)
    for sigma, p in Lgamma.items():
        P = transition_matrix(K, sigma)
        off += eta * p * np.tril(P, -1)
    return GeneratorMatrix.from_offdiagonal(off)


# Monte Carlo comparison

MODELS = ("short_drastic", "long_drastic", "long_soft")


def model_pair(model: str, params: dict, n: int):
    """The diffusion variant and the dual generator on {1..n} for a model.

    params: short_drastic {F0, alpha}; long_drastic {F0, L, eta, alpha};
    long_soft {Lgamma, eta, alpha}.  The Kingman coefficient a is 1 when
    alpha = 1 and 0 otherwise; an explicit 'a' must agree."""
    alpha = float(params["alpha"])
    a = 1.0 if alpha == 1 else 0.0
    if "a" in params and float(params["a"]) != a:
        raise ValueError(f"a={params['a']} does not match alpha={alpha} (diffusion present iff alpha = 1)")
    if model == "short_drastic":
        return SDE1(params["F0"], alpha), short_drastic_generator(params["F0"], alpha, n)
    if model == "long_drastic":
        eta = float(params["eta"])
        return (SDE2(params["F0"], params["L"], eta, alpha),
                drastic_generator(params["F0"], params["L"], eta, a, n))
    if model == "long_soft":
        eta = float(params["eta"])
        return SDE3(params["Lgamma"], eta, alpha), soft_generator(params["Lgamma"], eta, a, n)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def bias_allowance(dt: float, diffusive: bool) -> float:
    """Discretization allowance: 0.005 at dt = 1e-3, halving with dt; none without diffusion."""
    return BIAS_ALLOWANCE * dt / BIAS_DT if diffusive else 0.0


@dataclass(frozen=True)
class DualityReport:
    model: str
    x: float
    n: int
    t: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    rhs_error_bound: float
    z_raw: float
    allowance: float
    z: float
    dt: float
    reps: int

    def passed(self, threshold: float = 3.0) -> bool:
        return self.z <= threshold

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def compare_moments(model, x, n, t, est, chain, allowance, dt) -> DualityReport:
    """Report for a Monte Carlo estimate against an exact chain moment."""
    diff = abs(est.mean - chain.value)
    se = est.se
    if se > 0:
        z_raw = diff / se
        z = max(0.0, diff - allowance - chain.error_bound) / se
    else:
        z_raw = z = 0.0 if diff <= allowance + chain.error_bound + 1e-12 else math.inf
    return DualityReport(model, x, n, t, est.mean, se, chain.value, 0.0, chain.error_bound,
                         z_raw, allowance, z, dt, est.reps)


def duality_reports(model: str, params: dict, x: float, ns, t: float, reps: int,
                    rng: np.random.Generator, dt: float = 1e-3) -> list[DualityReport]:
    """Duality comparisons for several n sharing one ensemble of paths."""
    ns = [int(k) for k in ns]
    variant, Q = model_pair(model, params, max(ns))
    spec = JumpDiffusionSpec(variant, x, t, dt)
    ens = simulate_ensemble(spec, reps, rng, [t])
    allowance = bias_allowance(dt, spec.diffusive)
    return [compare_moments(model, x, k, t, moment_estimate(ens, k, t), exact_chain_moment(Q, k, x, t),
                    allowance, dt) for k in ns]


def duality_check(model: str, params: dict, x: float, n: int, t: float, reps: int,
                  rng: np.random.Generator, dt: float = 1e-3) -> DualityReport:
    """Compare E[X_t^n] by Monte Carlo with the exact dual chain moment."""
    return duality_reports(model, params, x, [n], t, reps, rng, dt)[0]


@dataclass(frozen=True)
class RichardsonReport:
    """Moments at step dt and dt/2 from coupled paths.  With bias linear in
    dt, the step-dt bias is about twice their difference."""

    coarse: float
    fine: float
    diff_se: float
    bias_estimate: float
    allowance: float

    @property
    def within_allowance(self) -> bool:
        return self.bias_estimate <= self.allowance + 3 * 2 * self.diff_se


def richardson_check(model: str, params: dict, x: float, n: int, t: float, reps: int,
                     rng: np.random.Generator, dt: float = 1e-3) -> RichardsonReport:
    variant, _ = model_pair(model, params, n)
    spec = JumpDiffusionSpec(variant, x, t, dt)
    c, f = coupled_ensembles(spec, reps, rng, [t])
    vc, vf = c.column(t) ** n, f.column(t) ** n
    d = vc - vf
    se = float(d.std(ddof=1) / math.sqrt(reps))
    return RichardsonReport(float(vc.mean()), float(vf.mean()), se, 2 * abs(float(d.mean())),
                            bias_allowance(dt, spec.diffusive))
