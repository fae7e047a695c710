"""Step paths on [0, T], the Skorokhod J1 distance, a certified upper bound
on the d_lambda distance, and integral statistics for convergence in measure.

d_lambda(x, y) = inf over A (finite union of [a, b) intervals) and time
changes f of
    max( sup_{s in A} |x(s) - y(f(s))|, sup |f(s) - s|, Leb([0,T] \\ A), |x(T) - y(T)| ).
For a fixed f the best A is found exactly by sorting the segment-wise
mismatches, so the search only has to range over time changes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass(frozen=True)
class StepPath:
    """Right-continuous step path: value values[i] on [times[i], times[i+1])."""

    T: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be 1-d arrays of equal non-zero length")
        if t[0] != 0.0:
            raise ValueError("first time must be 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if t[-1] > self.T:
            raise ValueError("jump times must lie in [0, T]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, T: float, c: float) -> "StepPath":
        return cls(T, np.array([0.0]), np.array([float(c)]))

    def __call__(self, s):
        idx = np.searchsorted(self.times, s, side="right") - 1
        return self.values[idx]

    @property
    def final(self) -> float:
        return float(self.values[-1])

    @property
    def boundaries(self) -> np.ndarray:
        """Segment boundaries: jump times followed by T (repeated T gives a point segment)."""
        return np.append(self.times, self.T)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# T={self.T!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "value"])
        for t, v in zip(self.times, self.values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "StepPath":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# T="):
            raise ValueError("missing '# T=' header")
        T = float(lines[0][4:])
        rows = list(csv.reader(lines[2:]))
        return cls(T, np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


@dataclass(frozen=True)
class TimeChange:
    """Piecewise-linear increasing bijection of [0, T] through the knots (xs, ys)."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.shape != ys.shape or xs.size < 2:
            raise ValueError("need at least two knots")
        if xs[0] != 0 or ys[0] != 0 or xs[-1] != ys[-1]:
            raise ValueError("time change must fix 0 and T")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ValueError("time change must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @classmethod
    def identity(cls, T: float) -> "TimeChange":
        return cls(np.array([0.0, T]), np.array([0.0, T]))

    def __call__(self, s):
        return np.interp(s, self.xs, self.ys)

    def inverse(self) -> "TimeChange":
        return TimeChange(self.ys, self.xs)

    def inverse_at(self, u):
        return np.interp(u, self.ys, self.xs)

    @property
    def sup_shift(self) -> float:
        # f - Id is linear between knots, so its sup norm sits at a knot
        return float(np.max(np.abs(self.ys - self.xs)))


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint half-open intervals [a, b) in [0, T]."""

    intervals: tuple

    def __post_init__(self):
        iv = sorted((float(a), float(b)) for a, b in self.intervals if b > a)
        merged = []
        for a, b in iv:
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        object.__setattr__(self, "intervals", tuple(merged))

    def measure(self) -> float:
        return math.fsum(b - a for a, b in self.intervals)

    def image(self, f: TimeChange) -> "IntervalSet":
        return IntervalSet(tuple((float(f(a)), float(f(b))) for a, b in self.intervals))


@dataclass(frozen=True)
class Terms:
    sup: float
    shift: float
    excluded: float
    final: float

    @property
    def value(self) -> float:
        return max(self.sup, self.shift, self.excluded, self.final)


@dataclass(frozen=True)
class Witness:
    """A = kept set, f = time change; direction 'xy' compares x with y o f,
    'yx' compares y with x o f."""

    A: IntervalSet
    f: TimeChange
    direction: str = "xy"


def composed(y: StepPath, f: TimeChange) -> StepPath:
    """The step path s -> y(f(s))."""
    t = np.clip(f.inverse_at(y.times), 0.0, y.T)
    t[0] = 0.0
    keep = np.concatenate([[True], np.diff(t) > 0])
    # when rounding merges two jump times, the later value wins
    idx = np.flatnonzero(keep)
    vals = y.values[np.append(idx[1:] - 1, len(t) - 1)]
    return StepPath(y.T, t[keep], vals)


def _segments(x: StepPath, z: StepPath):
    """Common refinement of two step paths: left ends, right ends, |x - z|."""
    pts = np.union1d(x.times, z.times)
    right = np.append(pts[1:], x.T)
    diff = np.abs(x(pts) - z(pts))
    return pts, right, diff


def evaluate(x: StepPath, y: StepPath, w: Witness) -> Terms:
    """The four terms of the d_lambda objective for a given witness."""
    if w.direction == "yx":
        x, y = y, x
    z = composed(y, w.f)
    left, right, diff = _segments(x, z)
    sup = 0.0
    for a, b in w.A.intervals:
        hit = (np.maximum(left, a) < np.minimum(right, b))
        if np.any(hit):
            sup = max(sup, float(diff[hit].max()))
    return Terms(sup, w.f.sup_shift, max(0.0, x.T - w.A.measure()), abs(x.final - y.final))


def best_kept_set(x: StepPath, y: StepPath, f: TimeChange) -> tuple[Terms, IntervalSet]:
    """Optimal A for a fixed f: keep every segment whose mismatch is at most a
    threshold, with the threshold chosen to balance sup against excluded length."""
    z = composed(y, f)
    left, right, diff = _segments(x, z)
    length = right - left
    pos = length > 0
    left, right, diff, length = left[pos], right[pos], diff[pos], length[pos]
    order = np.argsort(diff, kind="stable")
    d_sorted = diff[order]
    # excluded length when keeping the first m segments in sorted order
    excl_after = np.concatenate([np.cumsum(length[order][::-1])[::-1], [0.0]])
    # keep m = 0..len segments; sup = d_sorted[m-1], excluded = excl_after[m]
    sups = np.concatenate([[0.0], d_sorted])
    costs = np.maximum(sups, excl_after)
    # only cut between distinct mismatch levels
    valid = np.ones(len(costs), dtype=bool)
    valid[1:-1] = d_sorted[1:] != d_sorted[:-1]
    costs = np.where(valid, costs, np.inf)
    m = int(np.argmin(costs))
    kept = order[:m]
    A = IntervalSet(tuple(zip(left[kept], right[kept])))
    terms = Terms(float(sups[m]), f.sup_shift, max(0.0, x.T - A.measure()), abs(x.final - y.final))
    return terms, A


# J1 distance

@njit(cache=True)
def _free_space(S, U, v, w, eps, keep_path, path_s, path_p):
    """Reachability of (T, T) in the free space of two step paths at level eps.

    Cell (i, j) pairs x-segment i with y-segment j and is free when
    |v_i - w_j| <= eps.  Entries carry the lowest reachable crossing point
    for exits to the right and for exits upward.  Returns the number of
    path points written (0 when unreachable).

    A jump exactly at T leaves a final point segment.  Moving along the other
    path while at s = T is realised just before T, so such cells are tested
    with the value preceding the jump; only the goal corner (T, T) itself
    uses the final values, which the caller bounds separately."""
    nx, ny = v.shape[0], w.shape[0]
    INF = np.inf
    T = S[nx]
    v = v.copy()
    w = w.copy()
    if S[nx - 1] == T:
        v[nx - 1] = v[nx - 2]
    if U[ny - 1] == T:
        w[ny - 1] = w[ny - 2]
    # per cell: lowest phi entry (s, phi) and lowest s entry (s, phi), with predecessor
    ephi = np.full((nx, ny, 2), INF)
    es = np.full((nx, ny, 2), INF)
    pred_phi = np.full((nx, ny, 3), -1, dtype=np.int64)   # (pi, pj, which entry of pred)
    pred_s = np.full((nx, ny, 3), -1, dtype=np.int64)
    ephi[0, 0, 0] = 0.0
    ephi[0, 0, 1] = 0.0
    es[0, 0, 0] = 0.0
    es[0, 0, 1] = 0.0
    for i in range(nx):
        for j in range(ny):
            if ephi[i, j, 0] == INF:
                continue
            if abs(v[i] - w[j]) > eps:
                if i == nx - 1 and j == ny - 1:
                    if ephi[i, j, 0] == T and ephi[i, j, 1] == T:
                        continue
                    if es[i, j, 0] == T and es[i, j, 1] == T:
                        ephi[i, j, 0] = T
                        ephi[i, j, 1] = T
                        for q in range(3):
                            pred_phi[i, j, q] = pred_s[i, j, q]
                        continue
                ephi[i, j, 0] = INF
                continue
            min_phi = ephi[i, j, 1]
            min_s = es[i, j, 0]
            if i + 1 < nx:
                lo = max(min_phi, S[i + 1] - eps, U[j])
                hi = min(U[j + 1], S[i + 1] + eps)
                if lo <= hi and lo < ephi[i + 1, j, 1]:
                    ephi[i + 1, j, 0] = S[i + 1]
                    ephi[i + 1, j, 1] = lo
                    pred_phi[i + 1, j, 0] = i
                    pred_phi[i + 1, j, 1] = j
                    pred_phi[i + 1, j, 2] = 0
                    if S[i + 1] < es[i + 1, j, 0] or (S[i + 1] == es[i + 1, j, 0] and lo < es[i + 1, j, 1]):
                        es[i + 1, j, 0] = S[i + 1]
                        es[i + 1, j, 1] = lo
                        pred_s[i + 1, j, 0] = i
                        pred_s[i + 1, j, 1] = j
                        pred_s[i + 1, j, 2] = 0
            if j + 1 < ny:
                lo = max(min_s, U[j + 1] - eps, S[i])
                hi = min(S[i + 1], U[j + 1] + eps)
                if lo <= hi and lo < es[i, j + 1, 0]:
                    es[i, j + 1, 0] = lo
                    es[i, j + 1, 1] = U[j + 1]
                    pred_s[i, j + 1, 0] = i
                    pred_s[i, j + 1, 1] = j
                    pred_s[i, j + 1, 2] = 1
                    if U[j + 1] < ephi[i, j + 1, 1] or (U[j + 1] == ephi[i, j + 1, 1] and lo < ephi[i, j + 1, 0]):
                        ephi[i, j + 1, 0] = lo
                        ephi[i, j + 1, 1] = U[j + 1]
                        pred_phi[i, j + 1, 0] = i
                        pred_phi[i, j + 1, 1] = j
                        pred_phi[i, j + 1, 2] = 1
            if i + 1 < nx and j + 1 < ny and abs(S[i + 1] - U[j + 1]) <= eps:
                # a corner entry is the lowest possible in both coordinates
                ephi[i + 1, j + 1, 0] = S[i + 1]
                ephi[i + 1, j + 1, 1] = U[j + 1]
                es[i + 1, j + 1, 0] = S[i + 1]
                es[i + 1, j + 1, 1] = U[j + 1]
                for q in range(2):
                    pp = pred_phi if q == 0 else pred_s
                    pp[i + 1, j + 1, 0] = i
                    pp[i + 1, j + 1, 1] = j
                    pp[i + 1, j + 1, 2] = 0
    if ephi[nx - 1, ny - 1, 0] == INF:
        return 0
    if not keep_path:
        return 1
    # walk back: right exits were built from the lowest-phi entry, upward exits
    # from the lowest-s entry, corners from the lowest-phi entry
    n = 0
    i, j, which = nx - 1, ny - 1, 0
    while i >= 0:
        if which == 0:
            path_s[n] = ephi[i, j, 0]
            path_p[n] = ephi[i, j, 1]
            pi, pj = pred_phi[i, j, 0], pred_phi[i, j, 1]
            kind = pred_phi[i, j, 2]
        else:
            path_s[n] = es[i, j, 0]
            path_p[n] = es[i, j, 1]
            pi, pj = pred_s[i, j, 0], pred_s[i, j, 1]
            kind = pred_s[i, j, 2]
        n += 1
        if pi < 0:
            break
        # the predecessor exit used its lowest-phi entry (right or corner) or lowest-s entry (up)
        which = 1 if (kind == 1 and pj == j - 1 and pi == i) else 0
        i, j = pi, pj
    return n


@dataclass(frozen=True)
class J1Result:
    """J1 value, the level found by the free-space search, and the time change
    that attains the value.  exact is True when the two agree to 1e-12."""

    value: float
    level: float
    f: TimeChange
    exact: bool


def _strictly_increasing_knots(px, py, T, delta=None, collapse=False):
    xs = np.concatenate([[0.0], px, [T]])
    ys = np.concatenate([[0.0], py, [T]])
    keep = np.ones(len(xs), dtype=bool)
    keep[1:] = (np.diff(xs) != 0) | (np.diff(ys) != 0)
    xs, ys = xs[keep], ys[keep]
    if xs[-1] != T or ys[-1] != T:
        xs = np.append(xs, T)
        ys = np.append(ys, T)
    if collapse:
        # replace each vertical or horizontal move by a diagonal to the next knot
        keep = np.ones(len(xs), dtype=bool)
        keep[1:-1] = (np.diff(xs)[:-1] > 0) & (np.diff(ys)[:-1] > 0)
        xs, ys = xs[keep], ys[keep]
    # vertical or horizontal moves get an infinitesimal slope
    for arr in (xs, ys):
        for k in range(1, len(arr) - 1):
            if arr[k] <= arr[k - 1]:
                arr[k] = arr[k - 1] + delta if delta else np.nextafter(arr[k - 1], np.inf)
        for k in range(len(arr) - 2, 0, -1):
            if arr[k] >= arr[k + 1]:
                arr[k] = arr[k + 1] - delta if delta else np.nextafter(arr[k + 1], -np.inf)
    keep = np.ones(len(xs), dtype=bool)
    keep[1:-1] = (np.diff(xs)[:-1] > 0) & (np.diff(ys)[:-1] > 0)
    return xs[keep], ys[keep]


def _j1_objective(x: StepPath, y: StepPath, f: TimeChange) -> float:
    z = composed(y, f)
    _, _, diff = _segments(x, z)
    return max(float(diff.max()), abs(x.final - y.final), f.sup_shift)


def j1_alignment(x: StepPath, y: StepPath, max_cells: int = 4_000_000) -> J1Result:
    """Skorokhod J1 distance between step paths with an attaining time change.

    Feasibility at a level eps is decided by propagating reachable crossing
    points through the grid of segment pairs; the smallest feasible level is
    found by bisection over the finite set of candidate values (value
    differences and jump-time differences)."""
    if x.T != y.T:
        raise ValueError("paths must share the horizon T")
    S, U = x.boundaries, y.boundaries
    nx, ny = len(x.values), len(y.values)
    if nx * ny > max_cells:
        raise ValueError(f"{nx} x {ny} segments exceed max_cells={max_cells}")
    cand = np.unique(np.concatenate([
        np.abs(x.values[:, None] - y.values[None, :]).ravel(),
        np.abs(S[:, None] - U[None, :]).ravel(), [0.0]]))
    cand = cand[cand >= abs(x.final - y.final)]
    dummy = np.empty(0)
    lo, hi = 0, len(cand) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _free_space(S, U, x.values, y.values, cand[mid], False, dummy, dummy):
            hi = mid
        else:
            lo = mid + 1
    level = float(cand[lo])
    ps = np.empty(nx + ny + 2)
    pp = np.empty(nx + ny + 2)
    n = _free_space(S, U, x.values, y.values, level, True, ps, pp)
    # segments one ulp wide leave no room for a nudge, so try a few realisations
    best = None
    for delta, collapse in ((1e-13 * x.T, False), (None, False), (None, True)):
        xs, ys = _strictly_increasing_knots(ps[:n][::-1], pp[:n][::-1], x.T, delta, collapse)
        f = TimeChange(xs, ys)
        obj = _j1_objective(x, y, f)
        if best is None or obj < best[0]:
            best = (obj, f)
        if obj <= level + 1e-12:
            break
    value, f = best
    return J1Result(value, level, f, value <= level + 1e-12)


def j1_distance(x: StepPath, y: StepPath) -> float:
    """Skorokhod J1 distance between two step paths on [0, T]."""
    return j1_alignment(x, y).value


# d_lambda upper bound

@dataclass(frozen=True)
class DLambdaBound:
    """Upper bound on d_lambda(x, y) with the witness that attains it."""

    value: float
    witness: Witness
    terms: Terms
    candidates: int


def _matchings(x: StepPath, y: StepPath, budget: int):
    """Monotone matchings of jump times at several tolerance levels."""
    sx, sy = x.times[1:], y.times[1:]
    jx, jy = np.diff(x.values), np.diff(y.values)
    if sx.size == 0 or sy.size == 0 or sx.size * sy.size > budget:
        return []
    gaps = np.abs(sx[:, None] - sy[None, :])
    levels = np.unique(gaps)
    if levels.size > 12:
        levels = np.unique(np.quantile(levels, np.linspace(0, 1, 12), method="nearest"))
    out = []
    for tol in levels:
        # maximize the number of matched pairs, preferring similar jumps
        wgt = np.where(gaps <= tol, 1.0 + 1.0 / (1.0 + np.abs(jx[:, None] - jy[None, :])), -np.inf)
        m, n = wgt.shape
        D = np.zeros((m + 1, n + 1))
        for i in range(1, m + 1):
            for j in range(1, n + 1):
                D[i, j] = max(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1] + wgt[i - 1, j - 1])
        pairs = []
        i, j = m, n
        while i > 0 and j > 0:
            if D[i, j] == D[i - 1, j]:
                i -= 1
            elif D[i, j] == D[i, j - 1]:
                j -= 1
            else:
                pairs.append((sx[i - 1], sy[j - 1]))
                i, j = i - 1, j - 1
        pairs = [(a, b) for a, b in reversed(pairs) if (a < x.T and b < x.T)]
        if pairs and pairs not in out:
            out.append(pairs)
    return out


def _blend(pairs, theta: float, T: float) -> TimeChange:
    # knot u + theta (s - u) -> u: theta = 1 matches the jumps, 0 is the identity
    xs = [0.0] + [b + theta * (a - b) for a, b in pairs] + [T]
    ys = [0.0] + [b for _, b in pairs] + [T]
    xs, ys = np.array(xs), np.array(ys)
    keep = np.concatenate([[True], (np.diff(xs) > 0) & (np.diff(ys) > 0)])
    if not keep[-1]:
        keep[-1] = True
        keep[-2] = False
    return TimeChange(xs[keep], ys[keep])


def _search(x: StepPath, y: StepPath, budget: int, hints, direction: str, refine: bool):
    best = None
    count = 0

    def consider(f, A=None):
        nonlocal best, count
        count += 1
        terms, kept = best_kept_set(x, y, f)
        cands = [(terms, kept)]
        if A is not None:
            cands.append((evaluate(x, y, Witness(A, f)), A))
        for t, a in cands:
            if best is None or t.value < best[0].value:
                best = (t, Witness(a, f, direction))
        return terms.value

    T = x.T
    consider(TimeChange.identity(T))
    nseg = len(x.values) * len(y.values)
    if nseg <= budget * 100:
        consider(j1_alignment(x, y).f)
    for pairs in _matchings(x, y, budget):
        if count >= budget:
            break
        shift = max(abs(a - b) for a, b in pairs)

        def h(th):
            return consider(_blend(pairs, th, T))

        def gap(th):
            terms, _ = best_kept_set(x, y, _blend(pairs, th, T))
            return th * shift - max(terms.sup, terms.excluded)

        h(1.0)
        if not refine:
            continue
        # balance the growing shift against the shrinking mismatch
        lo, hi = 0.0, 1.0
        if gap(lo) < 0 < gap(hi):
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if gap(mid) < 0:
                    lo = mid
                else:
                    hi = mid
            h(lo)
            h(hi)
        # golden-section pass for non-monotone cases
        a, b = 0.0, 1.0
        g = (math.sqrt(5) - 1) / 2
        c, d = b - g * (b - a), a + g * (b - a)
        hc, hd = h(c), h(d)
        for _ in range(30):
            if hc <= hd:
                b, d, hd = d, c, hc
                c = b - g * (b - a)
                hc = h(c)
            else:
                a, c, hc = c, d, hd
                d = a + g * (b - a)
                hd = h(d)
    for w in hints:
        if w.direction == direction:
            consider(w.f, w.A)
        else:
            consider(w.f.inverse(), w.A.image(w.f))
    return best, count


def d_lambda_upper(x: StepPath, y: StepPath, budget: int = 10_000, hints=(),
                   refine: bool = False) -> DLambdaBound:
    """Upper bound on d_lambda(x, y) with an attaining witness (A, f).

    Candidate time changes: the identity, the J1-optimal map and monotone
    matchings of jump times, each paired with its optimal kept set; extra
    witnesses may be supplied as hints.  With refine=True each matching is
    also blended toward the identity, splitting a time shift between the
    shift term and the excluded length; this can halve the bound (a single
    jump moved by delta drops from min(delta, h) to min(delta/2, h)).  Both
    orientations are searched and the smaller bound is returned, so the
    result is symmetric."""
    if x.T != y.T:
        raise ValueError("paths must share the horizon T")
    hints = tuple(hints)
    fwd, n1 = _search(x, y, budget, hints, "xy", refine)
    bwd, n2 = _search(y, x, budget, hints, "yx", refine)
    if bwd[0].value < fwd[0].value:
        terms, w = bwd
    else:
        terms, w = fwd
    return DLambdaBound(terms.value, w, terms, n1 + n2)


def uniform_distance(x: StepPath, y: StepPath) -> float:
    """sup over [0, T] of |x - y|."""
    _, _, diff = _segments(x, y)
    return float(diff.max())


# convergence in measure

@dataclass(frozen=True)
class TestFunction:
    """Bounded continuous g(s, v) with closed-form integrals over segments.

    kind 'poly': s^p clip(v)^q;  kind 'sin': sin(2 pi m s / T) clip(v)."""

    kind: str
    p: int = 0
    q: int = 0
    m: int = 1
    clip: float = 1.0

    def segment_integrals(self, left, right, v, T):
        cv = np.clip(v, -self.clip, self.clip)
        if self.kind == "poly":
            return cv ** self.q * (right ** (self.p + 1) - left ** (self.p + 1)) / (self.p + 1)
        if self.kind == "sin":
            om = 2 * math.pi * self.m / T
            return cv * (np.cos(om * left) - np.cos(om * right)) / om
        raise ValueError(f"unknown test function kind {self.kind!r}")


def default_test_functions() -> list[TestFunction]:
    out = [TestFunction("poly", p, q) for p in range(4) for q in range(1, 4) if p + q <= 3]
    out += [TestFunction("sin", m=m) for m in (1, 2, 3)]
    return out


def path_integral(x: StepPath, g: TestFunction) -> float:
    return math.fsum(g.segment_integrals(x.times, np.append(x.times[1:], x.T), x.values, x.T))


def convergence_in_measure_stat(x: StepPath, y: StepPath, test_functions=None) -> np.ndarray:
    """|int g(s, x(s)) ds - int g(s, y(s)) ds| for each test function, then |x(T) - y(T)|."""
    if x.T != y.T:
        raise ValueError("paths must share the horizon T")
    fns = default_test_functions() if test_functions is None else test_functions
    stats = [abs(path_integral(x, g) - path_integral(y, g)) for g in fns]
    stats.append(abs(x.final - y.final))
    return np.array(stats)
