import math

import numpy as np
import pytest

from symcoal.forward import (IIDSizes, LongDrastic, LongSoft, ShortDrastic, bottleneck_intervals,
                             collapse_bottlenecks, collapse_witness, discretize_size_law, family_sizes,
                             frequency_ensemble, mohle_coefficients, pair_coalescence_times, rescale_time,
                             sample_ancestry, simulate_forward)
from symcoal.measures import DiscreteLaw, PositiveLaw
from symcoal.metric import evaluate

D2 = DiscreteLaw.point(2)


def test_frequency_martingale():
    d = LongDrastic(1.0, 2.0, DiscreteLaw.point(5), DiscreteLaw.point(3))
    X = frequency_ensemble(d, 200, 0.3, 400, 4000, np.random.default_rng(1))
    for g in (50, 200, 400):
        se = X[:, g].std(ddof=1) / math.sqrt(4000)
        assert abs(X[:, g].mean() - 0.3) < 4 * se


def test_absorption_is_permanent():
    d = ShortDrastic(1.0, D2)
    for seed in range(20):
        tr = simulate_forward(d, 50, 0.5, 500, np.random.default_rng(seed))
        x = tr.frequencies
        for edge in (0.0, 1.0):
            hit = np.flatnonzero(x == edge)
            if hit.size:
                assert np.all(x[hit[0]:] == edge)


def test_constant_trajectory():
    d = ShortDrastic(1.0, D2)
    tr = simulate_forward(d, 100, 1.0, 300, np.random.default_rng(0))
    p = rescale_time(tr.frequencies, 1.0, 100, 1.0)
    assert p.values.tolist() == [1.0]


def test_rescaled_path_shape():
    tr = simulate_forward(ShortDrastic(1.0, D2), 100, 0.5, 150, np.random.default_rng(2))
    p = rescale_time(tr.frequencies, 1.0, 100, 1.0)
    assert len(p.times) <= 101
    assert p.final == tr.frequencies[100]


def test_short_drastic_gamma_bounds():
    with pytest.raises(ValueError):
        ShortDrastic(1.0, D2, gamma=0.6)
    assert ShortDrastic(0.8, D2).gamma_value == pytest.approx(0.36)


@pytest.mark.parametrize("d,mean_gap", [
    (LongDrastic(1.0, 2.0, D2, DiscreteLaw.point(3)), 1000 / 2.0),
    (LongSoft(0.5, 1.0, PositiveLaw.point(0.5)), 1000 ** 0.5 / 1.0),
])
def test_geometric_gap_mean(d, mean_gap):
    N = 1000
    sizes, flags = d.sizes(N, 400_000, np.random.default_rng(3))
    runs = bottleneck_intervals(flags)
    gaps = np.diff([0] + [a for a, _ in runs]) - np.array([0] + [b - a + 1 for a, b in runs[:-1]])
    gaps = gaps[1:]
    se = gaps.std(ddof=1) / math.sqrt(len(gaps))
    assert abs(gaps.mean() - mean_gap) < 4 * se


def test_short_drastic_bottleneck_frequency():
    d = ShortDrastic(0.5, D2)
    N = 10_000
    p = d.bottleneck_prob(N)
    assert p == pytest.approx(1 / 100)
    _, flags = d.sizes(N, 200_000, np.random.default_rng(4))
    assert abs(flags[1:].mean() - p) < 4 * math.sqrt(p * (1 - p) / 200_000)


def test_long_soft_sizes():
    d = LongSoft(1.0, 5.0, PositiveLaw.point(0.5))
    N = 400
    sizes, flags = d.sizes(N, 20_000, np.random.default_rng(5))
    assert set(sizes[flags].tolist()) == {20}
    lengths = [b - a + 1 for a, b in bottleneck_intervals(flags)][:-1]
    assert set(lengths) == {10}


def test_family_sizes_sum_and_mean():
    a = family_sizes(5, 3, np.random.default_rng(6), size=20000)
    assert np.all(a.sum(axis=1) == 5)
    assert abs(a[:, 0].mean() - 1.0) < 4 * a[:, 0].std() / math.sqrt(20000)
    assert np.all(family_sizes(4, 0, np.random.default_rng(0)) == 1)


def test_sample_ancestry_single_lineage():
    tr = simulate_forward(ShortDrastic(1.0, D2), 30, 0.5, 40, np.random.default_rng(7))
    assert np.all(sample_ancestry(tr, 1, np.random.default_rng(0)) == 1)


def test_sample_ancestry_pair_merge_probability():
    N, reps = 20, 20000
    tr = simulate_forward(IIDSizes(lambda rng, n: np.full(n, 0.999)), N, 0.5, 1, np.random.default_rng(8))
    assert tr.sizes[0] == N
    rng = np.random.default_rng(9)
    merged = sum(sample_ancestry(tr, 2, rng)[1] == 1 for _ in range(reps))
    p = 1 / N
    assert abs(merged / reps - p) < 4 * math.sqrt(p * (1 - p) / reps)


def test_pair_coalescence_constant_size():
    # iid sizes that are always N: geometric with parameter 1/N
    N = 50
    d = IIDSizes(lambda rng, n: np.full(n, 0.999))
    t = pair_coalescence_times(d, N, 20000, np.random.default_rng(10))
    assert np.all(t > 0)
    assert abs(t.mean() - N) < 4 * N / math.sqrt(20000)


def test_collapse_removes_bottlenecks():
    d = LongDrastic(1.0, 3.0, DiscreteLaw.point(4), DiscreteLaw.point(2))
    tr = simulate_forward(d, 100, 0.5, 300, np.random.default_rng(11))
    c = collapse_bottlenecks(tr)
    assert len(c.kept) == (~tr.in_bottleneck).sum()
    assert np.all(tr.sizes[c.kept] == 100)


def test_collapse_witness_is_consistent():
    d = LongDrastic(1.0, 3.0, DiscreteLaw.point(10), DiscreteLaw.point(10))
    N = 200
    tr = simulate_forward(d, N, 0.5, 2 * N, np.random.default_rng(12))
    c = collapse_bottlenecks(tr)
    x = rescale_time(tr.frequencies, 1.0, N, 1.0)
    y = rescale_time(c.frequencies, 1.0, N, 1.0)
    w = collapse_witness(c, 1.0, N, 1.0)
    terms = evaluate(x, y, w)
    excluded = sum(min(b, N) - a + 1 for a, b in c.bottlenecks if a <= N) / N
    assert terms.excluded <= excluded + 1e-9
    assert terms.shift <= excluded + 1e-9


def test_mohle_uniform_harmonic():
    N = 100
    m = mohle_coefficients(discretize_size_law(lambda u: np.clip(u, 0, 1), N), N)
    assert m.C == pytest.approx(math.fsum(1 / i for i in range(1, N + 1)) / N, rel=1e-14)
    assert m.C == pytest.approx(0.0518738, abs=1e-7)


def test_mohle_point_mass_at_N():
    law = np.zeros(10)
    law[-1] = 1.0
    m = mohle_coefficients(law, 10)
    assert m.C == pytest.approx(0.1) and m.D == pytest.approx(0.01)


def test_mohle_rejects_improper_law():
    with pytest.raises(ValueError):
        mohle_coefficients(np.array([0.5, 0.4]))
