"""Forward Wright-Fisher simulation under bottleneck demographies.

Each generation g draws its size R_g from the demography; every individual
picks a parent uniformly from generation g-1, so the type-1 count is
Binomial(R_g, X_{g-1}).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measures import DiscreteLaw, PositiveLaw
from .metric import IntervalSet, StepPath, TimeChange, Witness


@dataclass(frozen=True)
class ShortDrastic:
    """One-generation bottlenecks with probability k^(N)/N^alpha per generation.

    k^(N) is the mass of F0 on {1..floor(N^gamma)}; the bottleneck size is
    min(N, F) with F drawn from F0 restricted to that range."""

    alpha: float
    F0: DiscreteLaw
    gamma: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        g = self.gamma_value
        if not 0 < g < self.alpha / 2:
            raise ValueError("gamma must lie in (0, alpha/2)")

    @property
    def gamma_value(self) -> float:
        return 0.45 * self.alpha if self.gamma is None else self.gamma

    def truncated_law(self, N: int) -> tuple[float, np.ndarray, np.ndarray]:
        """k^(N) and the renormalized law of F0 on {1..floor(N^gamma)}."""
        cut = math.floor(N ** self.gamma_value)
        vals = np.array([v for v, _ in self.F0.items() if v <= cut])
        probs = np.array([p for v, p in self.F0.items() if v <= cut])
        kN = math.fsum(probs)
        if kN <= 0:
            raise ValueError(f"F0 puts no mass on 1..{cut}; increase N")
        return kN, vals, probs / kN

    def bottleneck_prob(self, N: int) -> float:
        return self.truncated_law(N)[0] / N ** self.alpha

    def sizes(self, N: int, generations: int, rng: np.random.Generator):
        kN, vals, probs = self.truncated_law(N)
        p = kN / N ** self.alpha
        flags = rng.random(generations) < p
        flags = np.concatenate([[False], flags])
        sizes = np.full(generations + 1, N, dtype=np.int64)
        nb = int(flags.sum())
        if nb:
            sizes[flags] = np.minimum(N, rng.choice(vals, size=nb, p=probs))
        return sizes, flags


def _renewal_sizes(N, generations, rng, rate, draw):
    # gap ~ Geometric(rate) normal generations, then a bottleneck block
    sizes = np.full(generations + 1, N, dtype=np.int64)
    flags = np.zeros(generations + 1, dtype=bool)
    g = 0
    while True:
        g += int(rng.geometric(rate))
        if g >= generations:
            break
        size, length = draw()
        end = min(g + length, generations)
        sizes[g + 1:end + 1] = size
        flags[g + 1:end + 1] = True
        g = end
    return sizes, flags


@dataclass(frozen=True)
class LongDrastic:
    """Bottlenecks of size min(F, N), F ~ F0, lasting l ~ L generations,
    separated by Geometric(eta/N^alpha) gaps."""

    alpha: float
    eta: float
    F0: DiscreteLaw
    L: DiscreteLaw

    def bottleneck_prob(self, N: int) -> float:
        return self.eta / N ** self.alpha

    def sizes(self, N: int, generations: int, rng: np.random.Generator):
        def draw():
            return min(int(self.F0.sample(rng)), N), int(self.L.sample(rng))
        return _renewal_sizes(N, generations, rng, self.bottleneck_prob(N), draw)


@dataclass(frozen=True)
class LongSoft:
    """Bottlenecks of size b N lasting l = round(gamma N b) generations,
    gamma ~ Lgamma, separated by Geometric(eta/N^alpha) gaps.

    The default b = N^(-1/2) satisfies b -> 0 and N b -> inf."""

    alpha: float
    eta: float
    Lgamma: PositiveLaw
    b_exponent: float = 0.5

    def bottleneck_prob(self, N: int) -> float:
        return self.eta / N ** self.alpha

    def sizes(self, N: int, generations: int, rng: np.random.Generator):
        b = N ** -self.b_exponent
        size = max(1, round(b * N))

        def draw():
            gamma = float(self.Lgamma.sample(rng))
            return size, max(1, round(gamma * N * b))
        return _renewal_sizes(N, generations, rng, self.bottleneck_prob(N), draw)


@dataclass(frozen=True)
class IIDSizes:
    """Sizes R_g = floor(N r_g) + 1 with r_g iid from a law on [0, 1).

    sampler(rng, size) draws the r_g."""

    sampler: Callable

    def sizes(self, N: int, generations: int, rng: np.random.Generator):
        r = np.asarray(self.sampler(rng, generations), dtype=float)
        sizes = np.concatenate([[N], np.floor(N * r).astype(np.int64) + 1])
        return np.minimum(sizes, N), np.zeros(generations + 1, dtype=bool)


Demography = ShortDrastic | LongDrastic | LongSoft | IIDSizes


@dataclass
class ForwardTrajectory:
    """Per-generation sizes R_g, type-1 counts and bottleneck flags, g = 0..G."""

    sizes: np.ndarray
    counts: np.ndarray
    in_bottleneck: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.sizes

    def __len__(self) -> int:
        return len(self.sizes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "size", "count", "in_bottleneck"])
        for g, (s, c, b) in enumerate(zip(self.sizes, self.counts, self.in_bottleneck)):
            w.writerow([g, int(s), int(c), int(b)])
        return buf.getvalue()


def simulate_forward(d, N: int, x0: float, generations: int,
                     rng: np.random.Generator) -> ForwardTrajectory:
    """Type-1 counts under demography d, starting from round(x0 N) of N."""
    if N < 2:
        raise ValueError("N must be at least 2")
    if not 0 <= x0 <= 1:
        raise ValueError("x0 must lie in [0, 1]")
    sizes, flags = d.sizes(N, generations, rng)
    sizes[0] = N
    flags[0] = False
    counts = np.empty(generations + 1, dtype=np.int64)
    counts[0] = round(x0 * N)
    x = counts[0] / N
    for g in range(1, generations + 1):
        # numpy's binomial is exact: inversion for small n p, BTPE otherwise
        c = rng.binomial(sizes[g], x)
        counts[g] = c
        x = c / sizes[g]
    return ForwardTrajectory(sizes.astype(np.int32), counts.astype(np.int32), flags)


def frequency_ensemble(d, N: int, x0: float, generations: int, reps: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Frequencies of reps independent trajectories, shape (reps, generations+1)."""
    sizes = np.empty((reps, generations + 1), dtype=np.int64)
    for r in range(reps):
        sizes[r] = d.sizes(N, generations, rng)[0]
    sizes[:, 0] = N
    X = np.empty((reps, generations + 1))
    X[:, 0] = round(x0 * N) / N
    for g in range(1, generations + 1):
        X[:, g] = rng.binomial(sizes[:, g], X[:, g - 1]) / sizes[:, g]
    return X


def family_sizes(k: int, generations: int, rng: np.random.Generator, size: int | None = None):
    """Descendant counts of the k founders after `generations` Wright-Fisher
    generations at constant size k.  Shape (k,) or (size, k)."""
    shape = (k,) if size is None else (size, k)
    a = np.ones(shape, dtype=np.int64)
    for _ in range(generations):
        a = rng.multinomial(k, a / k)
    return a


@dataclass
class Collapsed:
    """A trajectory with its bottleneck generations removed.

    kept[i] is the raw generation of the i-th retained generation;
    bottlenecks lists (first, last) raw generations of each bottleneck."""

    frequencies: np.ndarray
    kept: np.ndarray
    bottlenecks: list


def bottleneck_intervals(flags: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of flagged generations as (first, last) pairs."""
    f = np.concatenate([[False], np.asarray(flags, dtype=bool), [False]])
    d = np.diff(f.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def collapse_bottlenecks(t: ForwardTrajectory) -> Collapsed:
    """Keep only non-bottleneck generations: V_i = X_{g_i}."""
    kept = np.flatnonzero(~np.asarray(t.in_bottleneck, dtype=bool))
    return Collapsed(t.frequencies[kept], kept, bottleneck_intervals(t.in_bottleneck))


def rescale_time(values, alpha: float, N: int, T: float) -> StepPath:
    """Step path t -> values[floor(N^alpha t)] on [0, T]."""
    values = np.asarray(values, dtype=float)
    scale = N ** alpha
    G = math.floor(scale * T)
    if len(values) < G + 1:
        raise ValueError(f"trajectory has {len(values)} generations, need {G + 1}")
    v = values[:G + 1]
    times = np.arange(G + 1) / scale
    keep = np.concatenate([[True], v[1:] != v[:-1]])
    return StepPath(T, times[keep], v[keep])


def collapse_witness(c: Collapsed, alpha: float, N: int, T: float, squeeze: float = 1e-9) -> Witness:
    """Witness (A, f) comparing the rescaled raw path x with the collapsed path y.

    f follows the raw clock outside bottlenecks and nearly stops on them
    (slope `squeeze`), then catches up linearly at the end so that f(T) = T.
    A is [0, T) minus the rescaled bottleneck intervals."""
    scale = N ** alpha
    xs, ys, excluded = [0.0], [0.0], []
    lag = 0.0
    for first, last in c.bottlenecks:
        s0, s1 = first / scale, (last + 1) / scale
        if s0 >= T:
            break
        s1 = min(s1, T)
        xs.append(s0)
        ys.append(s0 - lag)
        lag += (s1 - s0) * (1 - squeeze)
        xs.append(s1)
        ys.append(s1 - lag)
        excluded.append((s0, s1))
    if xs[-1] >= T:
        ys[-1] = T
    else:
        # catch up over a stretch as long as the accumulated lag
        start = max(xs[-1], T - max(lag, 1.0 / scale))
        if start > xs[-1] and start - lag > ys[-1]:
            xs.append(start)
            ys.append(start - lag)
        xs.append(T)
        ys.append(T)
    kept, prev = [], 0.0
    for a, b in excluded:
        kept.append((prev, a))
        prev = b
    kept.append((prev, T))
    return Witness(IntervalSet(tuple(kept)), TimeChange(np.array(xs), np.array(ys)), "xy")


def sample_ancestry(t: ForwardTrajectory, sample_size: int, rng: np.random.Generator) -> np.ndarray:
    """Number of distinct ancestors of a sample from the last generation,
    for each generation going back.  Entry h is the count h generations back."""
    G = len(t) - 1
    if sample_size > t.sizes[G]:
        raise ValueError("sample larger than the final generation")
    out = np.ones(G + 1, dtype=np.int64)
    b = sample_size
    out[0] = b
    for h in range(1, G + 1):
        if b > 1:
            parents = rng.integers(0, t.sizes[G - h], size=b)
            b = len(np.unique(parents))
        out[h] = b
    return out


def pair_coalescence_times(d, N: int, reps: int, rng: np.random.Generator,
                           max_generations: int | None = None, chunk: int = 4096) -> np.ndarray:
    """Generations back until two sampled lineages share a parent.

    Two lineages in generation g pick the same parent with probability
    1/R_{g-1}.  Uses the stationary iid size law of ShortDrastic or IIDSizes;
    returns -1 where no merger occurred within max_generations."""
    if not isinstance(d, (ShortDrastic, IIDSizes)):
        raise ValueError("needs a demography with iid generation sizes")
    if max_generations is None:
        max_generations = 200 * N
    out = np.full(reps, -1, dtype=np.int64)
    active = np.arange(reps)
    done = 0
    while active.size and done < max_generations:
        m = min(chunk, max_generations - done)
        sizes = d.sizes(N, active.size * m, rng)[0][1:].reshape(active.size, m)
        hit = rng.random((active.size, m)) * sizes < 1.0
        any_hit = hit.any(axis=1)
        out[active[any_hit]] = done + 1 + hit[any_hit].argmax(axis=1)
        active = active[~any_hit]
        done += m
    return out


def discretize_size_law(cdf: Callable, N: int) -> np.ndarray:
    """P(R^N = i) for i = 1..N where R^N = floor(N r) + 1 and r has cdf on [0, 1)."""
    edges = cdf(np.arange(N + 1) / N)
    p = np.diff(edges)
    p[-1] += 1.0 - edges[-1]
    return np.clip(p, 0.0, None)


@dataclass(frozen=True)
class Mohle:
    C: float
    D: float

    @property
    def ratio(self) -> float:
        return self.D / self.C


def mohle_coefficients(law: np.ndarray, N: int | None = None) -> Mohle:
    """C_N = sum_i P(R=i)/i and D_N = sum_i P(R=i)/i^2 for a law on {1..N}."""
    law = np.asarray(law, dtype=float)
    if N is not None and len(law) != N:
        raise ValueError("law must have N entries")
    if abs(math.fsum(law) - 1.0) > 1e-9:
        raise ValueError("law must sum to 1")
    i = np.arange(1, len(law) + 1, dtype=float)
    return Mohle(math.fsum(law / i), math.fsum(law / i ** 2))
