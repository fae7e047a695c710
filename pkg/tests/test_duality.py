import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from symcoal.duality import (bias_allowance, compare_moments, drastic_generator, duality_check,
                             duality_reports, exact_chain_moment, kingman_death_generator, model_pair,
                             richardson_check, short_drastic_generator, soft_generator, transition_matrix)
from symcoal.measures import CoagulationMeasure, DiscreteLaw, PositiveLaw
from symcoal.rates import GeneratorMatrix, block_counting_generator
from symcoal.sde import MomentEstimate


def star(n):
    off = np.zeros((n, n))
    off[n - 1, 0] = 1.0
    return GeneratorMatrix.from_offdiagonal(off)


@st.composite
def generators(draw):
    n = draw(st.integers(1, 7))
    off = np.zeros((n, n))
    for i in range(1, n):
        for j in range(i):
            off[i, j] = draw(st.floats(0, 5))
    return GeneratorMatrix.from_offdiagonal(off)


@given(generators(), st.floats(0, 1), st.floats(0, 3))
@settings(max_examples=60, deadline=None)
def test_chain_moment_matches_expm(Q, x, t):
    v = x ** np.arange(1, Q.n + 1)
    ref = linalg.expm(t * Q.Q) @ v
    for n in range(1, Q.n + 1):
        m = exact_chain_moment(Q, n, x, t)
        assert m.error_bound < 1e-10
        assert abs(m.value - ref[n - 1]) < 1e-9


def test_absorbing_state():
    Q = block_counting_generator(CoagulationMeasure.kingman(), 6)
    assert exact_chain_moment(Q, 1, 0.37, 4.2).value == pytest.approx(0.37, abs=1e-10)


def test_time_zero_exact():
    Q = block_counting_generator(CoagulationMeasure.kingman(), 6)
    assert exact_chain_moment(Q, 5, 0.3, 0.0).value == 0.3 ** 5


@pytest.mark.parametrize("n,x,t", [(3, 0.4, 0.7), (8, 0.9, 2.0), (2, 0.1, 0.01)])
def test_star_chain(n, x, t):
    exact = math.exp(-t) * x ** n + (1 - math.exp(-t)) * x
    assert exact_chain_moment(star(n), n, x, t).value == pytest.approx(exact, abs=1e-10)


def test_full_moment_at_one():
    Q = drastic_generator(DiscreteLaw.point(3), DiscreteLaw.point(2), 1.5, 1.0, 6)
    assert exact_chain_moment(Q, 6, 1.0, 1.3).value == pytest.approx(1.0, abs=1e-10)


def test_rejects_bad_inputs():
    Q = kingman_death_generator(4)
    with pytest.raises(ValueError):
        exact_chain_moment(Q, 5, 0.5, 1.0)
    with pytest.raises(ValueError):
        exact_chain_moment(Q, 2, 1.5, 1.0)
    bad = GeneratorMatrix(2, np.array([[0.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        exact_chain_moment(bad, 2, 0.5, 1.0)


def test_transition_matrix_rows():
    P = transition_matrix(kingman_death_generator(10), 0.3)
    assert np.allclose(P.sum(axis=1), 1, atol=1e-12)
    assert np.allclose(np.triu(P, 1), 0)


def test_drastic_reduces_to_short_for_single_generation():
    for a in (0.0, 1.0):
        F0 = DiscreteLaw.from_dict({"2": 0.5, "3": 0.5})
        G = drastic_generator(F0, DiscreteLaw.point(1), 1.0, a, 8)
        S = block_counting_generator(F0.as_measure(a=a), 8)
        assert np.max(np.abs(G.Q - S.Q)) < 1e-12
        if a == 1.0:
            assert np.max(np.abs(G.Q - short_drastic_generator(F0, 1.0, 8).Q)) < 1e-12


def test_drastic_total_collapse():
    G = drastic_generator(DiscreteLaw.point(1), DiscreteLaw.point(3), 2.5, 0.0, 6)
    for i in range(2, 7):
        assert G.rate(i, 1) == pytest.approx(2.5)
        assert all(G.rate(i, j) == 0 for j in range(2, i))


@pytest.mark.parametrize("a", [0.0, 1.0])
def test_drastic_two_generation_pair(a):
    G = drastic_generator(DiscreteLaw.point(2), DiscreteLaw.point(2), 1.0, a, 2)
    assert G.rate(2, 1) == pytest.approx(a + 0.75, abs=1e-14)


@pytest.mark.parametrize("a,sigma,eta", [(0.0, 0.5, 1.0), (1.0, 0.5, 1.0), (1.0, 2.0, 0.3)])
def test_soft_pair_rate(a, sigma, eta):
    G = soft_generator(PositiveLaw.point(sigma), eta, a, 5)
    assert G.rate(2, 1) == pytest.approx(a + eta * (1 - math.exp(-sigma)), abs=1e-12)
    assert np.allclose(G.Q.sum(axis=1), 0, atol=1e-10)


def test_soft_vanishes_for_short_runs():
    G = soft_generator(PositiveLaw.point(1e-9), 1.0, 0.0, 6)
    assert np.max(np.abs(G.Q)) < 1e-6


def test_soft_rejects_continuous_law():
    with pytest.raises(ValueError):
        soft_generator(PositiveLaw.exponential(1.0), 1.0, 0.0, 4)


def test_mismatched_kingman_coefficient():
    with pytest.raises(ValueError):
        model_pair("short_drastic", {"F0": DiscreteLaw.point(2), "alpha": 0.5, "a": 1}, 3)
    with pytest.raises(ValueError):
        model_pair("nope", {"alpha": 1.0}, 3)


def test_bias_allowance():
    assert bias_allowance(1e-3, True) == pytest.approx(0.005)
    assert bias_allowance(5e-4, True) == pytest.approx(0.0025)
    assert bias_allowance(1e-3, False) == 0.0


def test_compare_moments_z():
    from symcoal.duality import ChainMoment
    r = compare_moments("short_drastic", 0.5, 2, 1.0, MomentEstimate(0.31, 0.01, 100),
                        ChainMoment(0.3, 0.0), 0.004, 1e-3)
    assert r.z_raw == pytest.approx(1.0)
    assert r.z == pytest.approx(0.6)
    assert r.passed()


def test_first_moment_is_martingale():
    params = {"F0": DiscreteLaw.point(2), "alpha": 1.0}
    r = duality_check("short_drastic", params, 0.3, 1, 0.5, 2000, np.random.default_rng(0), dt=1e-2)
    assert r.rhs == pytest.approx(0.3, abs=1e-12)
    assert r.passed()


@pytest.mark.parametrize("model,params", [
    ("short_drastic", {"F0": DiscreteLaw.point(3), "alpha": 0.5}),
    ("long_drastic", {"F0": DiscreteLaw.point(2), "L": DiscreteLaw.point(3), "eta": 2.0, "alpha": 0.5}),
    ("long_soft", {"Lgamma": PositiveLaw.point(0.5), "eta": 2.0, "alpha": 0.5}),
])
def test_pure_jump_duality(model, params):
    # no diffusion, so the ensemble is exact and no allowance applies
    reps = duality_reports(model, params, 0.6, [2, 3, 4], 1.0, 20000, np.random.default_rng(1))
    for r in reps:
        assert r.allowance == 0
        assert r.z_raw <= 4


def test_richardson_small_bias():
    params = {"F0": DiscreteLaw.point(2), "alpha": 1.0}
    r = richardson_check("short_drastic", params, 0.3, 2, 0.5, 20000, np.random.default_rng(2))
    assert r.allowance == pytest.approx(0.005)
    assert r.within_allowance
