"""Exact rate computations for symmetric coalescents.

Balls-in-boxes occupancy laws, collision rates of [b, (k1..kr)]-mergers,
the generator of the block-counting chain and the total coalescence rate
with its large-n asymptotics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy import integrate, special

from .measures import CoagulationMeasure, Explicit

# partition_sum enumerates integer partitions; p(40) = 37338
PARTITION_SUM_MAX_N = 40
# number of terms summed one by one before switching to Euler-Maclaurin
DIRECT_CAP = 4_000_000


@dataclass(frozen=True)
class CollisionSignature:
    """A [b, (k1..kr)] collision: b blocks merge into r groups of sizes k_i."""

    b: int
    parts: tuple

    def __post_init__(self):
        parts = tuple(sorted((int(p) for p in self.parts), reverse=True))
        if not parts or min(parts) < 1:
            raise ValueError("parts must be positive integers")
        if sum(parts) != self.b:
            raise ValueError(f"parts {parts} do not sum to b={self.b}")
        object.__setattr__(self, "parts", parts)

    @property
    def r(self) -> int:
        return len(self.parts)

    @property
    def is_kingman(self) -> bool:
        return self.r == self.b - 1 and self.parts[0] == 2


@dataclass(frozen=True)
class GeneratorMatrix:
    """Generator of a block-counting chain on {1..n}; Q[i-1, j-1] = q_ij."""

    n: int
    Q: np.ndarray

    def rate(self, i: int, j: int) -> float:
        return float(self.Q[i - 1, j - 1])

    def check(self, tol: float = 1e-10) -> "GeneratorMatrix":
        Q = self.Q
        if Q.shape != (self.n, self.n):
            raise ValueError("generator has the wrong shape")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("negative off-diagonal rate")
        if np.any(np.triu(off) != 0):
            raise ValueError("block-counting generator must be lower triangular")
        scale = max(1.0, float(np.max(np.abs(Q))))
        if np.any(np.abs(Q.sum(axis=1)) > tol * scale):
            raise ValueError("generator rows do not sum to zero")
        return self

    @classmethod
    def from_offdiagonal(cls, off: np.ndarray) -> "GeneratorMatrix":
        off = np.tril(np.asarray(off, dtype=float), -1)
        Q = off.copy()
        for i in range(Q.shape[0]):
            Q[i, i] = -math.fsum(off[i])
        return cls(Q.shape[0], Q)


# occupancy

def occupancy_table(k: int, n: int) -> np.ndarray:
    """P(W^{k,i} = j) for 0 <= i, j <= n as an (n+1, n+1) array.

    W^{k,i} is the number of occupied boxes after i balls are dropped
    uniformly into k boxes.  Built ball by ball; all terms are positive so
    there is no cancellation."""
    T = np.zeros((n + 1, n + 1))
    T[0, 0] = 1.0
    kf = float(k)
    j = np.arange(n + 1, dtype=float)
    stay = j / kf
    new = np.clip((kf - j + 1) / kf, 0.0, None)
    for i in range(1, n + 1):
        T[i, 1:] = T[i - 1, 1:] * stay[1:] + T[i - 1, :-1] * new[1:]
        T[i, 0] = 0.0
    return T


def occupancy_pmf(k: int, i: int, exact: bool = False):
    """Law of the number of occupied boxes, over j = 1..min(k, i).

    exact=True evaluates C(k,j)(j/k)^i sum_r (-1)^r C(j,r)(1-r/j)^i in
    rational arithmetic and returns Fractions."""
    if k < 1 or i < 1:
        raise ValueError("k and i must be positive")
    m = min(k, i)
    if exact:
        out = []
        for j in range(1, m + 1):
            # (j/k)^i sum_r (-1)^r C(j,r) (1-r/j)^i = sum_r (-1)^r C(j,r) (j-r)^i / k^i
            alt = sum((-1) ** r * math.comb(j, r) * (j - r) ** i for r in range(j + 1))
            out.append(Fraction(math.comb(k, j) * alt, k ** i))
        return out
    return occupancy_table(k, i)[i, 1:m + 1].copy()


# collision probability

@lru_cache(maxsize=256)
def _normalized_power_sums(n: int, P: int) -> np.ndarray:
    # sigma_p = sum_{i<n} (i/n)^p for p = 1..P
    x = np.arange(1, n, dtype=float) / n
    out = np.empty(P)
    acc = np.ones_like(x)
    for p in range(P):
        acc = acc * x
        out[p] = math.fsum(acc)
    return out


_SERIES_TERMS = 20


def log_no_collision(k, n: int):
    """log P(n balls in k boxes are all in distinct boxes).

    Equals sum_{i<n} log(1 - i/k); -inf when n > k.  Vectorized in k."""
    k_arr = np.asarray(k, dtype=float)
    scalar = k_arr.ndim == 0
    k_arr = np.atleast_1d(k_arr)
    out = np.full(k_arr.shape, -np.inf)
    if n <= 1:
        out[:] = 0.0
        return float(out[0]) if scalar else out
    ok = k_arr >= n
    big = ok & (k_arr >= 8.0 * n)
    small = ok & ~big
    if np.any(big):
        # -sum_p sigma_p (n/k)^p / p, every term of one sign; ratio <= 1/8
        sig = _normalized_power_sums(n, _SERIES_TERMS)
        x = n / k_arr[big]
        acc = np.zeros_like(x)
        for p in range(_SERIES_TERMS, 0, -1):
            acc = (acc + sig[p - 1] / p) * x
        out[big] = -acc
    if np.any(small):
        ks = k_arr[small]
        if n <= 1024:
            acc = np.zeros_like(ks)
            for i in range(1, n):
                acc += np.log1p(-i / ks)
            out[small] = acc
        else:
            # values here are below exp(-n/16); log-gamma precision is ample
            out[small] = special.gammaln(ks + 1) - special.gammaln(ks - n + 1) - n * np.log(ks)
    return float(out[0]) if scalar else out


def collision_prob(k, n: int):
    """P(at least two of n balls share a box among k boxes)."""
    val = -np.expm1(log_no_collision(k, n))
    return np.clip(val, 0.0, 1.0) if np.ndim(val) else float(min(max(val, 0.0), 1.0))


# collision rates

@lru_cache(maxsize=None)
def _falling_coefficients(r: int) -> tuple:
    """Integer coefficients c_j with prod_{i<r} (1 - i x) = sum_j c_j x^j."""
    c = [1]
    for i in range(1, r):
        nxt = c + [0]
        for j in range(1, len(nxt)):
            nxt[j] -= i * c[j - 1]
        c = nxt
    return tuple(c)


def _hurwitz_tail(coeffs, shift: float, lo: int, hi: int | None) -> float:
    """sum_{k=lo}^{hi} sum_j c_j k^-(shift+j), via Hurwitz zeta, until terms vanish."""
    total = 0.0
    for j, c in enumerate(coeffs):
        if c == 0:
            continue
        s = shift + j
        z = special.zeta(s, lo)
        if hi is not None:
            z -= special.zeta(s, hi + 1)
        term = float(c) * z
        total += term
        if j >= 1 and abs(term) < 1e-20 * abs(total):
            break
    return total


@lru_cache(maxsize=4096)
def body_rate(F: CoagulationMeasure, b: int, r: int) -> float:
    """sum_{k>=r} F(k) k!/(k-r)! / k^b, the body part of any [b, r]-collision rate."""
    body = F.body
    if isinstance(body, Explicit):
        terms = []
        for k, m in body.masses:
            if k >= r and m != 0:
                terms.append(m * float(Fraction(math.perm(k, r), k ** b)))
        return math.fsum(terms)
    beta, K = body.beta, body.truncation
    kstar = max(64, 4 * r * r)
    head_end = kstar if K is None else min(K, kstar)
    if head_end < r:
        return 0.0
    k = np.arange(r, head_end + 1, dtype=float)
    logt = (r - b - beta) * np.log(k) + log_no_collision(k, r)
    total = math.fsum(np.exp(logt))
    if K is None or K > head_end:
        # k_(r)/k^b k^-beta = sum_j c_j k^-(beta + b - r + j)
        total += _hurwitz_tail(_falling_coefficients(r), beta + b - r, head_end + 1, K)
    return total


def collision_rate(F: CoagulationMeasure, sig: CollisionSignature) -> float:
    """Rate of one specific [b, (k1..kr)]-collision."""
    if sig.r == sig.b:
        raise ValueError("signature with r = b is not a merger")
    rate = body_rate(F, sig.b, sig.r)
    if sig.is_kingman:
        rate += F.kingman_atom
    return rate


def arrangements_count(n: int, parts) -> int:
    """Number of set partitions of [n] whose block sizes are the multiset parts."""
    parts = tuple(parts)
    if sum(parts) != n:
        raise ValueError(f"parts {parts} do not sum to {n}")
    denom = 1
    for p in parts:
        denom *= math.factorial(p)
    for p in set(parts):
        denom *= math.factorial(parts.count(p))
    return math.factorial(n) // denom


def integer_partitions(n: int, r: int | None = None, largest: int | None = None) -> Iterator[tuple]:
    """Partitions of n into non-increasing parts, optionally with exactly r parts."""
    if largest is None:
        largest = n
    if n == 0:
        if r is None or r == 0:
            yield ()
        return
    if r is not None and (r <= 0 or r > n or r * largest < n):
        return
    for first in range(min(n, largest), 0, -1):
        for rest in integer_partitions(n - first, None if r is None else r - 1, first):
            yield (first,) + rest


@lru_cache(maxsize=None)
def stirling2_row(n: int) -> tuple:
    """Stirling numbers of the second kind S(n, j), j = 0..n, as exact integers."""
    if n == 0:
        return (1,)
    prev = stirling2_row(n - 1)
    row = [0] * (n + 1)
    for j in range(1, n + 1):
        row[j] = j * (prev[j] if j < n else 0) + prev[j - 1]
    return tuple(row)


def block_counting_generator(F: CoagulationMeasure, n: int) -> GeneratorMatrix:
    """Generator q_ij = a C(i,2) 1{j=i-1} + sum_k F(k) P(W^{k,i} = j)."""
    if n < 1:
        raise ValueError("n must be positive")
    off = np.zeros((n, n))
    a = F.kingman_atom
    for i in range(2, n + 1):
        off[i - 1, i - 2] += a * i * (i - 1) / 2
    body = F.body
    if isinstance(body, Explicit):
        for k, m in body.masses:
            if m == 0:
                continue
            T = occupancy_table(k, n)
            for i in range(2, n + 1):
                off[i - 1, :i - 1] += m * T[i, 1:i]
    else:
        for i in range(2, n + 1):
            s2 = stirling2_row(i)
            for j in range(1, i):
                rate = body_rate(F, i, j)
                if rate > 0:
                    off[i - 1, j - 1] += math.exp(math.log(s2[j]) + math.log(rate))
    return GeneratorMatrix.from_offdiagonal(off)


# total rate

@dataclass(frozen=True)
class TotalRate:
    value: float
    error_bound: float
    method: str

    def __float__(self):
        return self.value


def total_rate(F: CoagulationMeasure, n: int, method: str = "collision_prob_sum",
               c: float = 50.0, tail: str = "series") -> TotalRate:
    """Total rate at which n blocks undergo some merger.

    method="partition_sum" sums N(n, parts) * rate over all signatures
    (n <= 40).  method="collision_prob_sum" uses a C(n,2) + sum_k F(k)
    P(collision among n balls in k boxes); an unbounded power-law body is
    summed directly up to K0 = c n^2 and the remainder is closed form:
    tail="series" expands the product in 1/k against Hurwitz zeta values,
    tail="integral" uses the integral of x^-beta (1 - exp(-n(n-1)/2x))."""
    if n < 1:
        raise ValueError("n must be positive")
    if method == "partition_sum":
        if n > PARTITION_SUM_MAX_N:
            raise ValueError(f"partition_sum is limited to n <= {PARTITION_SUM_MAX_N}")
        terms = []
        for parts in integer_partitions(n):
            if len(parts) == n:
                continue
            sig = CollisionSignature(n, parts)
            terms.append(arrangements_count(n, parts) * collision_rate(F, sig))
        return TotalRate(math.fsum(terms), 0.0, method)
    if method != "collision_prob_sum":
        raise ValueError(f"unknown method {method!r}")
    kingman = F.kingman_atom * n * (n - 1) / 2
    body = F.body
    if isinstance(body, Explicit):
        val = math.fsum(m * collision_prob(k, n) for k, m in body.masses)
        return TotalRate(kingman + val, 0.0, method)
    val, err = _power_law_collision_sum(body.beta, body.truncation, n, c, tail)
    return TotalRate(kingman + val, err, method)


def _power_law_collision_sum(beta, K, n, c, tail):
    if n <= 1:
        return 0.0, 0.0
    kmax = math.inf if K is None else K
    low_end = int(min(n - 1, kmax))
    parts = [math.fsum(np.arange(1, low_end + 1, dtype=float) ** -beta)]
    err = 0.0
    if kmax < n:
        return parts[0], 0.0
    K0 = max(int(math.ceil(c * n * n)), n + 1)
    mid_end = int(min(kmax, K0 - 1))

    def g(x):
        return x ** -beta * -np.expm1(log_no_collision(x, n))

    direct_end = min(mid_end, n + DIRECT_CAP - 1)
    for lo in range(n, direct_end + 1, 1_000_000):
        hi = min(direct_end, lo + 999_999)
        parts.append(math.fsum(g(np.arange(lo, hi + 1, dtype=float))))
    if mid_end > direct_end:
        val, e = _euler_maclaurin(g, direct_end + 1, mid_end, n)
        parts.append(val)
        err += e
    if kmax >= K0:
        if tail == "series":
            val, e = _series_tail(beta, n, K0, K)
        elif tail == "integral":
            if K is not None:
                raise ValueError("integral tail applies to an unbounded body")
            val, e = _integral_tail(beta, n, K0)
        else:
            raise ValueError(f"unknown tail scheme {tail!r}")
        parts.append(val)
        err += e
    total = math.fsum(parts)
    return total, err + 1e-15 * abs(total)


def _euler_maclaurin(g, A: int, B: int, n: int):
    """sum_{k=A}^{B} g(k) for a smooth slowly varying g."""
    def gs(x):
        return float(g(np.array([x]))[0])

    lo, hi = math.log(A), math.log(B)
    integral, qerr = integrate.quad(lambda u: gs(math.exp(u)) * math.exp(u), lo, hi,
                                    epsabs=0.0, epsrel=1e-13, limit=500)

    def deriv(x, order):
        h = 1e-3 * x
        if order == 1:
            return (gs(x + h) - gs(x - h)) / (2 * h)
        h = 0.05 * x
        return (gs(x + 2 * h) - 2 * gs(x + h) + 2 * gs(x - h) - gs(x - 2 * h)) / (2 * h ** 3)

    d1 = (deriv(B, 1) - deriv(A, 1)) / 12.0
    d3 = (deriv(B, 3) - deriv(A, 3)) / 720.0
    val = integral + 0.5 * (gs(A) + gs(B)) + d1 - d3
    return val, qerr + 10 * abs(d3)


@lru_cache(maxsize=64)
def _elementary_coefficients(n: int, J: int) -> np.ndarray:
    # first J+1 coefficients of prod_{i<n} (1 - i x) in floating point
    c = np.zeros(J + 1)
    c[0] = 1.0
    for i in range(1, n):
        c[1:] = c[1:] - i * c[:-1]
    return c


def _series_tail(beta, n, K0, K):
    """sum_{k>=K0} k^-beta (1 - prod_{i<n}(1 - i/k)), truncated at K if given."""
    J = min(n - 1, 30)
    coeffs = _elementary_coefficients(n, J)
    total, last = 0.0, 0.0
    for j in range(1, J + 1):
        z = special.zeta(beta + j, K0)
        if K is not None:
            z -= special.zeta(beta + j, K + 1)
        last = -coeffs[j] * z
        total += last
        if abs(last) < 1e-18 * abs(total):
            break
    err = abs(last) if J < n - 1 else 0.0
    return total, err


def _integral_tail(beta, n, K0):
    """Closed form of int_{K0}^inf x^-beta (1 - exp(-m/x)) dx, m = n(n-1)/2."""
    m = n * (n - 1) / 2.0
    Y = m / K0
    # substitute y = m/x: m^(1-beta) int_0^Y y^(beta-2) (1 - e^-y) dy
    if beta == 1.0:
        inner = special.exp1(Y) + math.log(Y) + np.euler_gamma
    else:
        inner = (Y ** (beta - 1) * -math.expm1(-Y) / (beta - 1)
                 + special.gamma(beta) * special.gammainc(beta, Y) / (1 - beta))
    val = m ** (1 - beta) * inner
    # sum versus integral of a decreasing function, and the exponential
    # replacing the product: |prod - e^{-m/x}| <= sum i^2 / (2 x^2)
    s2 = (n - 1) * n * (2 * n - 1) / 6.0
    f0 = K0 ** -beta * -math.expm1(-m / K0)
    err = f0 + 0.5 * s2 * K0 ** (-1 - beta) / (1 + beta)
    return val, err


def total_rate_asymptotic(beta: float, n: float) -> float:
    """Large-n prediction of the total rate for the body k^-beta, beta in (0, 1]."""
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    if beta == 1:
        return 2.0 * math.log(n)
    return 2 ** (beta - 1) * math.gamma(beta) / (1 - beta) * n ** (2 * (1 - beta))
