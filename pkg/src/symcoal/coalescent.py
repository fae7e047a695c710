"""Backward-in-time simulation of symmetric, drastic-bottleneck and
subordinated Kingman coalescents, with the Wright-Fisher ancestral
machinery they are built from.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .measures import CoagulationMeasure, DiscreteLaw, Explicit, PositiveLaw
from .rates import occupancy_table


@dataclass(frozen=True)
class LabeledPartition:
    """Partition of the sample labels {1..n}, blocks ordered by least element."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(sorted((tuple(sorted(b)) for b in self.blocks), key=lambda b: b[0]))
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def singletons(cls, n: int) -> "LabeledPartition":
        return cls(tuple((i,) for i in range(1, n + 1)))

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    def merge(self, groups) -> "LabeledPartition":
        """Merge blocks carrying the same group label (one label per block)."""
        merged: dict = {}
        for block, g in zip(self.blocks, groups):
            merged.setdefault(int(g), []).extend(block)
        return LabeledPartition(tuple(merged.values()))

    def sizes(self) -> list[int]:
        return sorted((len(b) for b in self.blocks), reverse=True)


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    partition_after: LabeledPartition
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"t": self.time, "kind": self.kind,
             "blocks": [list(b) for b in self.partition_after.blocks]}
        d.update(self.params)
        return d


@dataclass(frozen=True)
class TreeStats:
    length: float
    tmrca: float
    n_events: int


@dataclass
class Genealogy:
    """Events of one simulated coalescent, from n singletons to one block."""

    n: int
    events: list
    stats: TreeStats

    def block_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Event times (starting at 0) and block counts after each event."""
        times = [0.0] + [e.time for e in self.events]
        counts = [self.n] + [len(e.partition_after) for e in self.events]
        return np.array(times), np.array(counts)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.events)


def tree_stats(n: int, events) -> TreeStats:
    """Total branch length, tmrca and event count from an event list."""
    t_prev, b, length = 0.0, n, 0.0
    for e in events:
        length += b * (e.time - t_prev)
        t_prev, b = e.time, len(e.partition_after)
    return TreeStats(length, t_prev, len(events))


# Wright-Fisher ancestry

def paintbox_merge(p: LabeledPartition, k: int, rng: np.random.Generator,
                   return_occupancy: bool = False):
    """Drop every block into one of k boxes uniformly; blocks sharing a box merge.

    With return_occupancy, also returns the number of blocks in each occupied box."""
    boxes = rng.integers(0, k, size=len(p))
    out = p.merge(boxes)
    if return_occupancy:
        _, occ = np.unique(boxes, return_counts=True)
        return out, occ
    return out


def wf_ancestral_step(p: LabeledPartition, k: int, rng: np.random.Generator) -> LabeledPartition:
    """One generation back in a Wright-Fisher population of size k: each
    lineage picks a uniform parent and lineages with a common parent merge."""
    return paintbox_merge(p, k, rng)


def ancestral_count_matrix(k: int, n: int) -> np.ndarray:
    """One-generation law of the number of ancestors in a population of size k.

    Entry [j-1, i-1] is P(j lineages have i distinct parents), j, i in 1..n."""
    return occupancy_table(k, n)[1:, 1:].copy()


# symmetric coalescent

def _body_arrays(F: CoagulationMeasure):
    body = F.body
    if isinstance(body, Explicit):
        ks = np.array([k for k, m in body.masses if m > 0], dtype=float)
        ws = np.array([m for k, m in body.masses if m > 0], dtype=float)
        code = K.BODY_EXPLICIT if ks.size else K.BODY_NONE
        return code, 0.0, 0.0, ks, ws
    kmax = math.inf if body.truncation is None else float(body.truncation)
    return K.BODY_POWER, float(body.beta), kmax, np.zeros(0), np.zeros(0)


def _check_absorbing(F: CoagulationMeasure):
    F.check()
    code, _, _, _, ws = _body_arrays(F)
    if F.kingman_atom == 0 and code == K.BODY_NONE:
        raise ValueError("measure has no Kingman atom and an empty body; no merger ever happens")


def _random_pair(b: int, rng: np.random.Generator) -> np.ndarray:
    i, j = rng.choice(b, size=2, replace=False)
    groups = np.arange(b)
    groups[j] = i
    return groups


def _conditioned_allocation(b: int, k: float, rng: np.random.Generator) -> np.ndarray:
    """Box labels for b blocks in k boxes, conditioned on at least one shared box.

    The index m of the first block to hit an occupied box is drawn from its
    exact law; later blocks then fall freely."""
    order = rng.permutation(b)
    m = K.first_collision(float(k), b, rng.random())
    boxes = np.empty(b, dtype=np.int64)
    boxes[order[:m - 1]] = np.arange(m - 1)
    boxes[order[m - 1]] = rng.integers(m - 1)
    occ = m - 1
    for idx in order[m:]:
        if rng.random() * k < occ:
            boxes[idx] = rng.integers(occ)
        else:
            boxes[idx] = occ
            occ += 1
    return boxes


def _as_label(k: float):
    return int(k) if k < 2 ** 53 else float(k)


def simulate_s_coalescent(F: CoagulationMeasure, n: int, rng: np.random.Generator) -> Genealogy:
    """Simulate the symmetric coalescent of F from n singletons to one block.

    Kingman pairs occur at rate a C(b,2).  Symmetric events run at the
    collision-inclusive rate sum_k F(k) P(collision among b blocks); events
    that would merge nothing are never generated or recorded."""
    if n < 2:
        raise ValueError("n must be at least 2")
    _check_absorbing(F)
    code, beta, kmax, ks, ws = _body_arrays(F)
    a = F.kingman_atom
    w = np.empty(ks.size)
    p = LabeledPartition.singletons(n)
    t = 0.0
    events = []
    while len(p) > 1:
        b = len(p)
        king = a * b * (b - 1) / 2
        if code == K.BODY_EXPLICIT:
            bodyrate = K.explicit_weights(b, ks, ws, w)
        elif code == K.BODY_POWER:
            env = K.power_envelope(b, beta, kmax)
            bodyrate = env[0] + env[1] + env[2]
        else:
            bodyrate = 0.0
        total = king + bodyrate
        t += rng.standard_exponential() / total
        if rng.random() * total < king:
            p = p.merge(_random_pair(b, rng))
            events.append(EventRecord(t, "kingman_pair", p))
            continue
        if code == K.BODY_EXPLICIT:
            k = ks[K.pick(w, bodyrate, rng.random())]
        else:
            k = K.draw_power_k(rng, b, beta, kmax, *env)
            if k == 0.0:
                continue
        p = p.merge(_conditioned_allocation(b, k, rng))
        events.append(EventRecord(t, "symmetric", p, {"k": _as_label(k)}))
    return Genealogy(n, events, tree_stats(n, events))


def simulate_drastic_bottleneck_coalescent(F0: DiscreteLaw, L: DiscreteLaw, eta: float,
                                           a: float, n: int,
                                           rng: np.random.Generator) -> Genealogy:
    """Drastic bottleneck coalescent: Kingman pairs at rate a, and at rate eta
    a bottleneck of size k ~ F0 lasting g ~ L generations, during which the
    lineages follow a Wright-Fisher population of size k."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if a == 0 and eta == 0:
        raise ValueError("a and eta cannot both vanish")
    p = LabeledPartition.singletons(n)
    t = 0.0
    events = []
    while len(p) > 1:
        b = len(p)
        king = a * b * (b - 1) / 2
        total = king + eta
        t += rng.standard_exponential() / total
        if rng.random() * total < king:
            p = p.merge(_random_pair(b, rng))
            events.append(EventRecord(t, "kingman_pair", p))
            continue
        k = int(F0.sample(rng))
        g = int(L.sample(rng))
        q = paintbox_merge(p, k, rng)
        for _ in range(g - 1):
            if len(q) == 1:
                break
            q = wf_ancestral_step(q, k, rng)
        if len(q) < b:
            p = q
            events.append(EventRecord(t, "drastic", p, {"k": k, "g": g}))
    return Genealogy(n, events, tree_stats(n, events))


def kingman_run(p: LabeledPartition, sigma: float, rng: np.random.Generator) -> LabeledPartition:
    """Run a standard Kingman coalescent on the blocks of p for time sigma."""
    s = 0.0
    while len(p) > 1:
        b = len(p)
        s += rng.standard_exponential() / (b * (b - 1) / 2)
        if s > sigma:
            break
        p = p.merge(_random_pair(b, rng))
    return p


def simulate_subordinated_kingman(Lgamma: PositiveLaw, eta: float, a: float, n: int,
                                  rng: np.random.Generator) -> Genealogy:
    """Kingman coalescent run on the clock t + (compound Poisson jumps of law
    Lgamma at rate eta); each jump is an instantaneous Kingman run."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if a == 0 and eta == 0:
        raise ValueError("a and eta cannot both vanish")
    p = LabeledPartition.singletons(n)
    t = 0.0
    events = []
    while len(p) > 1:
        b = len(p)
        king = a * b * (b - 1) / 2
        total = king + eta
        t += rng.standard_exponential() / total
        if rng.random() * total < king:
            p = p.merge(_random_pair(b, rng))
            events.append(EventRecord(t, "kingman_pair", p))
            continue
        sigma = float(Lgamma.sample(rng))
        q = kingman_run(p, sigma, rng)
        if len(q) < b:
            p = q
            events.append(EventRecord(t, "soft", p, {"sigma": sigma}))
    return Genealogy(n, events, tree_stats(n, events))


# tree statistics

@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    reps: int


def tree_stats_samples(F: CoagulationMeasure, n: int, reps: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tree length, tmrca and event count of reps independent block-counting runs."""
    if n < 2:
        raise ValueError("n must be at least 2")
    _check_absorbing(F)
    code, beta, kmax, ks, ws = _body_arrays(F)
    return K.block_count_runs(n, F.kingman_atom, code, beta, kmax, ks, ws, reps, rng)


def estimate_tree_length(F: CoagulationMeasure, n: int, reps: int,
                         rng: np.random.Generator) -> Estimate:
    """Monte Carlo mean and standard error of the total branch length L_n."""
    if reps < 2:
        raise ValueError("reps must be at least 2")
    lengths, _, _ = tree_stats_samples(F, n, reps, rng)
    return Estimate(float(lengths.mean()), float(lengths.std(ddof=1) / math.sqrt(reps)), reps)


def estimate_rates(genealogies, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Empirical q_ij: transitions i -> j divided by total time spent at i.

    Returns (rates, counts) as (n+1, n+1) arrays indexed by block count."""
    counts = np.zeros((n + 1, n + 1))
    occupation = np.zeros(n + 1)
    for gen in genealogies:
        times, sizes = gen.block_counts()
        for i in range(1, len(times)):
            occupation[sizes[i - 1]] += times[i] - times[i - 1]
            counts[sizes[i - 1], sizes[i]] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(occupation[:, None] > 0, counts / occupation[:, None], 0.0)
    return rates, counts
