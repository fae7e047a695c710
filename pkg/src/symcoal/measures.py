"""Measures characterizing symmetric coalescents, plus the auxiliary laws
used by the bottleneck models (bottleneck size, duration, soft duration).

A symmetric coalescent is described by a measure F on the non-negative
integers.  F(0) = a is the Kingman atom; the body F(k), k >= 1, gives the
rate at which all current blocks are thrown into k boxes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import special


@dataclass(frozen=True)
class Explicit:
    """Finitely supported body: mapping k -> F(k)."""

    masses: tuple = ()

    def __post_init__(self):
        items = self.masses
        if isinstance(items, dict):
            items = items.items()
        pairs = tuple(sorted((int(k), float(m)) for k, m in items))
        object.__setattr__(self, "masses", pairs)

    def support(self) -> list[int]:
        return [k for k, _ in self.masses]

    def weights(self) -> np.ndarray:
        return np.array([m for _, m in self.masses], dtype=float)


@dataclass(frozen=True)
class PowerLaw:
    """Body F(k) = k^(-beta) for 1 <= k <= truncation (unbounded if None)."""

    beta: float
    truncation: int | None = None


@dataclass(frozen=True)
class CoagulationMeasure:
    """Measure F = a * delta_0 + body on the non-negative integers."""

    kingman_atom: float = 0.0
    body: Explicit | PowerLaw = field(default_factory=Explicit)

    @classmethod
    def kingman(cls, a: float = 1.0) -> "CoagulationMeasure":
        return cls(float(a), Explicit())

    @classmethod
    def explicit(cls, masses: dict, a: float = 0.0) -> "CoagulationMeasure":
        return cls(float(a), Explicit(masses))

    @classmethod
    def power_law(cls, beta: float, truncation: int | None = None,
                  a: float = 0.0) -> "CoagulationMeasure":
        return cls(float(a), PowerLaw(float(beta), truncation))

    @property
    def a(self) -> float:
        return self.kingman_atom

    def mass(self, k: int) -> float:
        """F(k) for k >= 0."""
        if k == 0:
            return self.kingman_atom
        body = self.body
        if isinstance(body, Explicit):
            return dict(body.masses).get(int(k), 0.0)
        if body.truncation is not None and k > body.truncation:
            return 0.0
        return float(k) ** (-body.beta)

    def is_finite_body(self) -> bool:
        """True when the body has finite support."""
        return isinstance(self.body, Explicit) or self.body.truncation is not None

    def body_items(self) -> Iterator[tuple[int, float]]:
        """Iterate (k, F(k)) over a finite body."""
        body = self.body
        if isinstance(body, Explicit):
            yield from body.masses
            return
        if body.truncation is None:
            raise ValueError("unbounded power-law body has infinite support")
        for k in range(1, body.truncation + 1):
            yield k, float(k) ** (-body.beta)

    def body_total(self) -> float:
        """Total mass of the body, math.inf when it diverges."""
        body = self.body
        if isinstance(body, Explicit):
            return math.fsum(body.weights())
        if body.truncation is None:
            return math.inf if body.beta <= 1 else float(special.zeta(body.beta))
        return _power_sum(body.beta, body.truncation)

    def check(self) -> "CoagulationMeasure":
        """Raise ValueError unless the measure is valid."""
        report = validate(self)
        if not report.ok:
            raise ValueError("invalid coagulation measure: " + "; ".join(report.problems))
        return self

    def with_kingman(self, a: float) -> "CoagulationMeasure":
        return CoagulationMeasure(float(a), self.body)

    # serialization

    def to_dict(self) -> dict:
        body = self.body
        if isinstance(body, Explicit):
            b = {"type": "explicit", "masses": {str(k): m for k, m in body.masses}}
        else:
            b = {"type": "powerlaw", "beta": body.beta, "truncation": body.truncation}
        return {"a": self.kingman_atom, "body": b}

    @classmethod
    def from_dict(cls, d: dict) -> "CoagulationMeasure":
        body = d.get("body") or {"type": "explicit", "masses": {}}
        kind = body.get("type")
        if kind == "explicit":
            b = Explicit({int(k): float(m) for k, m in body.get("masses", {}).items()})
        elif kind == "powerlaw":
            trunc = body.get("truncation")
            b = PowerLaw(float(body["beta"]), None if trunc is None else int(trunc))
        else:
            raise ValueError(f"unknown body type {kind!r}")
        return cls(float(d.get("a", 0.0)), b)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CoagulationMeasure":
        return cls.from_dict(json.loads(text))


def _power_sum(s: float, K: int) -> float:
    """sum_{k=1}^K k^-s."""
    if K <= 100000:
        return math.fsum(np.arange(1, K + 1, dtype=float) ** (-s))
    if s > 1:
        return float(special.zeta(s) - special.zeta(s, K + 1))
    head = math.fsum(np.arange(1, 100001, dtype=float) ** (-s))
    return head + _tail_power_sum(s, 100001, K)


def _tail_power_sum(s: float, lo: int, hi: int) -> float:
    # Euler-Maclaurin for sum_{k=lo}^{hi} k^-s, accurate far beyond double
    # precision once lo ~ 1e5.
    if s == 1.0:
        integral = math.log(hi / lo)
    else:
        integral = (hi ** (1 - s) - lo ** (1 - s)) / (1 - s)
    ends = 0.5 * (lo ** -s + hi ** -s)
    d1 = -s * (hi ** (-s - 1) - lo ** (-s - 1)) / 12.0
    return integral + ends + d1


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    weighted_sum: float
    symbolic: str
    problems: tuple = ()


def validate(F: CoagulationMeasure) -> ValidationReport:
    """Check F(0) < inf and sum_k F(k)/k < inf, plus non-negativity.

    weighted_sum is sum_{k>=1} F(k)/k (inf when divergent)."""
    problems = []
    a = F.kingman_atom
    if not (math.isfinite(a) and a >= 0):
        problems.append(f"kingman atom must be finite and >= 0, got {a}")
    body = F.body
    if isinstance(body, Explicit):
        total = 0.0
        for k, m in body.masses:
            if k < 1:
                problems.append(f"body support must be positive integers, got {k}")
            if not math.isfinite(m):
                problems.append(f"mass at {k} is not finite")
            elif m < 0:
                problems.append(f"negative mass {m} at {k}")
        finite = [m / k for k, m in body.masses if k >= 1 and math.isfinite(m)]
        total = math.fsum(finite) if len(finite) == len(body.masses) else math.inf
        symbolic = "finite support"
    else:
        beta, K = body.beta, body.truncation
        if K is not None and K < 1:
            problems.append(f"truncation must be >= 1, got {K}")
        if not math.isfinite(beta):
            problems.append("beta must be finite")
            total, symbolic = math.inf, "undefined"
        elif K is None:
            if beta <= 0:
                problems.append(f"sum k^(-beta-1) diverges for beta={beta}")
                total, symbolic = math.inf, "divergent"
            else:
                total, symbolic = float(special.zeta(beta + 1)), f"zeta({beta + 1:g})"
        else:
            if beta <= 0:
                problems.append(f"beta must be positive, got {beta}")
            total = _power_sum(beta + 1, K) if K >= 1 else 0.0
            symbolic = f"truncated at {K}"
    return ValidationReport(not problems, total, symbolic, tuple(problems))


def s_view(F: CoagulationMeasure, kmax: int | None = None) -> list[tuple[int, float]]:
    """Pairs (k, S(xi^k)) with S(xi^0) = F(0) and S(xi^k) = F(k)/k.

    An unbounded power-law body is listed up to kmax (default 20)."""
    F.check()
    out = []
    if F.kingman_atom > 0:
        out.append((0, F.kingman_atom))
    body = F.body
    if isinstance(body, Explicit):
        out.extend((k, m / k) for k, m in body.masses if m != 0)
        return out
    K = body.truncation if body.truncation is not None else (kmax or 20)
    if kmax is not None:
        K = min(K, kmax)
    out.extend((k, float(k) ** (-body.beta - 1)) for k in range(1, K + 1))
    return out


def cdi_check(F: CoagulationMeasure) -> bool:
    """Whether the coalescent comes down from infinity: a > 0 or sum F(k) = inf."""
    if F.kingman_atom > 0:
        return True
    body = F.body
    if isinstance(body, PowerLaw) and body.truncation is None:
        return body.beta <= 1
    return False


@dataclass(frozen=True)
class DiscreteLaw:
    """Probability law on the positive integers with finite support."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = tuple(int(x) for x in self.values)
        p = tuple(float(x) for x in self.probs)
        if len(v) != len(p) or not v:
            raise ValueError("values and probs must be non-empty and of equal length")
        if len(set(v)) != len(v):
            raise ValueError("values must be distinct")
        if min(v) < 1:
            raise ValueError("values must be positive integers")
        if min(p) < 0 or abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        order = np.argsort(v)
        object.__setattr__(self, "values", tuple(v[i] for i in order))
        object.__setattr__(self, "probs", tuple(p[i] for i in order))

    @classmethod
    def point(cls, k: int) -> "DiscreteLaw":
        return cls((k,), (1.0,))

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteLaw":
        return cls(tuple(int(k) for k in d), tuple(float(v) for v in d.values()))

    def to_dict(self) -> dict:
        return {str(k): p for k, p in zip(self.values, self.probs)}

    def items(self):
        return zip(self.values, self.probs)

    def sample(self, rng: np.random.Generator, size=None):
        idx = rng.choice(len(self.values), size=size, p=np.asarray(self.probs))
        return np.asarray(self.values)[idx]

    def mean(self) -> float:
        return math.fsum(v * p for v, p in self.items())

    def as_measure(self, a: float = 0.0, scale: float = 1.0) -> CoagulationMeasure:
        """The coagulation measure a*delta_0 + scale*law."""
        return CoagulationMeasure.explicit({k: scale * p for k, p in self.items()}, a=a)


@dataclass(frozen=True)
class PositiveLaw:
    """Law on (0, inf): a point mass, an exponential, or finitely many atoms."""

    kind: str
    values: tuple = ()
    probs: tuple = ()
    mean_value: float = 0.0

    @classmethod
    def point(cls, sigma: float) -> "PositiveLaw":
        return cls.atoms([sigma], [1.0])

    @classmethod
    def exponential(cls, mean: float) -> "PositiveLaw":
        if mean <= 0:
            raise ValueError("mean must be positive")
        return cls("exponential", mean_value=float(mean))

    @classmethod
    def atoms(cls, values, probs) -> "PositiveLaw":
        v = tuple(float(x) for x in values)
        p = tuple(float(x) for x in probs)
        if not v or len(v) != len(p):
            raise ValueError("values and probs must be non-empty and of equal length")
        if min(v) <= 0:
            raise ValueError("all mass must lie on (0, inf)")
        if min(p) < 0 or abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        return cls("atoms", v, p)

    @property
    def is_atomic(self) -> bool:
        return self.kind == "atoms"

    def items(self):
        if not self.is_atomic:
            raise ValueError("exponential law has no finite atoms")
        return zip(self.values, self.probs)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "exponential":
            return rng.exponential(self.mean_value, size=size)
        idx = rng.choice(len(self.values), size=size, p=np.asarray(self.probs))
        return np.asarray(self.values)[idx]

    def to_dict(self) -> dict:
        if self.kind == "exponential":
            return {"type": "exponential", "mean": self.mean_value}
        if len(self.values) == 1:
            return {"type": "point", "sigma": self.values[0]}
        return {"type": "atoms", "atoms": {repr(v): p for v, p in zip(self.values, self.probs)}}

    @classmethod
    def from_dict(cls, d: dict) -> "PositiveLaw":
        kind = d.get("type")
        if kind == "point":
            return cls.point(float(d["sigma"]))
        if kind == "exponential":
            return cls.exponential(float(d["mean"]))
        if kind == "atoms":
            atoms = d["atoms"]
            return cls.atoms([float(k) for k in atoms], list(atoms.values()))
        raise ValueError(f"unknown positive law type {kind!r}")
