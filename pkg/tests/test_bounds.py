import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaymargin.bounds import (
    TRAJECTORY_KINDS, delta_apply, empirical_gain, f_of_p, gain_ratio, kernel_K,
    kernel_sup, margin_multiplier, random_test_signal, random_trajectory,
    remark1_pair, remark3_pair,
)
from delaymargin.core import (INF, DelayCase, DelayTrajectory, DelayUncertainty, InvalidInput,
                              Segment, Signal, l2_norm_sq)


# -- F(p) ------------------------------------------------------------------

@pytest.mark.parametrize("p, F", [
    (0.1, Fraction(12, 11)), (0.5, Fraction(4, 3)), (1, Fraction(3, 2)), (2, Fraction(13, 8)),
    (INF, Fraction(7, 4)), (math.inf, Fraction(7, 4)), (-0.5, 1), (-1, 1), (0, 1),
])
def test_f_table(p, F):
    assert f_of_p(p) == F


def test_f_is_continuous_at_one():
    assert f_of_p(Fraction(1)) == (2 * 1 + 1) / Fraction(2)
    assert abs(float(f_of_p(1 - 1e-12)) - 1.5) < 1e-11


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-1, 1e6), b=st.floats(-1, 1e6))
def test_f_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert f_of_p(lo) <= f_of_p(hi)
    assert 1 <= f_of_p(hi) < Fraction(7, 4)


def test_f_rejects_out_of_domain():
    with pytest.raises(ValueError):
        f_of_p(-1.5)
    with pytest.raises(ValueError):
        f_of_p(float("nan"))


def test_multipliers():
    got = [round(margin_multiplier(p), 4) for p in (0.1, 0.5, 1, INF)]
    assert got == [0.9574, 0.8660, 0.8165, 0.7559]


# -- the operator, against an independent matrix oracle ---------------------------

def _hat_integral(j, n, dt, a, b):
    """Integral over [a, b] of the j-th hat function on the grid k*dt, k < n.

    The first hat has only its right half (signals vanish for s < 0) and the
    last only its left half (signals vanish past the end).
    """
    def prim(s):
        c = j * dt
        total = 0.0
        if j > 0:  # rising half on [c - dt, c]
            lo, hi = c - dt, min(max(s, c - dt), c)
            total += ((hi - lo) ** 2) / (2 * dt)
        if j < n - 1 and s > c:  # falling half on [c, c + dt]
            u = min(s, c + dt) - c
            total += u - u * u / (2 * dt)
        return total
    return prim(b) - prim(a)


def _delta_matrix(n, dt, traj, h):
    D = np.zeros((n, n))
    for i in range(n):
        t = i * dt
        e = float(traj.eta(np.array([t]))[0])
        a, b = t - h - e, t - h
        for j in range(n):
            D[i, j] = _hat_integral(j, n, dt, a, b)
    return D


@pytest.mark.parametrize("seed", range(6))
def test_delta_matches_hat_matrix(seed):
    rng = np.random.default_rng(seed)
    n, dt, h, mu = 160, 0.05, 1.3, 0.7
    y = rng.standard_normal(n)
    case = ["B", "C", "A"][seed % 3]
    p = {"B": INF, "C": 0.5, "A": -0.5}[case]
    traj = random_trajectory(rng, case, p, mu, (n - 1) * dt)
    z = delta_apply(Signal(dt, y), traj, h).samples[:, 0]
    np.testing.assert_allclose(z, _delta_matrix(n, dt, traj, h) @ y, atol=1e-10, rtol=0)


def test_delta_constant_delay_of_constant_signal():
    dt, h, mu = 1e-3, 1.0, 0.25
    y = Signal(dt, np.ones(5001))
    z = delta_apply(y, DelayTrajectory.constant(mu, 5.0, mu), h).samples[:, 0]
    t = y.times
    inside = (t > h + mu + dt) & (t < 4.0)
    np.testing.assert_allclose(z[inside], mu, atol=1e-12)
    assert np.all(z[t < h - 1e-12] == 0)


def test_delta_is_linear(rng):
    traj = random_trajectory(rng, "B", INF, 0.5, 6.0)
    a, b = rng.standard_normal((2, 601))
    za = delta_apply(Signal(0.01, a), traj, 1.0).samples
    zb = delta_apply(Signal(0.01, b), traj, 1.0).samples
    zab = delta_apply(Signal(0.01, 2 * a - 3 * b), traj, 1.0).samples
    np.testing.assert_allclose(zab, 2 * za - 3 * zb, atol=1e-12)


def test_delta_rejects_short_trajectory():
    with pytest.raises(InvalidInput):
        delta_apply(Signal(0.1, np.ones(50)), DelayTrajectory.constant(0.0, 1.0, 0.1), 1.0)


# -- extremal constructions ---------------------------------------------------------

def test_step_pair_ratio_matches_exact_closed_form():
    theta, mu = 100.0, 1.0
    y, traj = remark1_pair(theta, mu, 1e-3)
    assert abs(l2_norm_sq(y) - theta) < 2e-3
    ratio = gain_ratio(y, traj, mu) / mu ** 2
    # ||Delta y||^2 = theta - mu/3 for the unit step: ramp-in and ramp-out each lose mu/6
    assert ratio == pytest.approx((theta - mu / 3) / theta, rel=1e-6)


@pytest.mark.parametrize("mu, h", [(1.0, 1.0), (0.5, 2.0), (2.0, 3.0)])
def test_switching_pair_reaches_three_halves(mu, h):
    y, traj = remark3_pair(mu, h, 1e-4)
    assert l2_norm_sq(y) == pytest.approx(2 * mu ** 3 / 3, rel=1e-6)
    assert gain_ratio(y, traj, h) == pytest.approx(1.5 * mu ** 2, rel=1e-5)


def test_switching_pair_is_case_b_only():
    _, traj = remark3_pair(1.0, 1.0, 1e-3)
    assert traj.declared_case is DelayCase.B
    with pytest.raises(InvalidInput):
        DelayTrajectory(traj.breakpoints, traj.segments, 1.0, "C", 5.0)


# -- random generators ------------------------------------------------------

@pytest.mark.parametrize("case, p", [("A", -0.5), ("C", 0.0), ("C", 1.0), ("C", 3.0), ("B", INF)])
def test_random_trajectories_are_admissible(case, p):
    for i in range(40):
        rng = np.random.default_rng([7, i])
        tr = random_trajectory(rng, case, p, 0.4, 5.0)  # validated on construction
        assert tr.declared_case is DelayCase(case)
        assert np.all(np.abs(tr.sample(1e-3)) <= 0.4 + 1e-12)


def test_random_trajectory_kind_selection(rng):
    for kind in TRAJECTORY_KINDS:
        case = "B" if kind == "switching" else "C"
        p = INF if case == "B" else 0.5
        assert random_trajectory(rng, case, p, 0.3, 4.0, kind=kind).label == kind
    with pytest.raises(InvalidInput):
        random_trajectory(rng, "C", 0.5, 0.3, 4.0, kind="switching")


def test_test_signal_starts_at_zero(rng):
    s = random_test_signal(rng, 0.01, 5.0, 8.0)
    assert s.samples[0, 0] == 0.0 and s.t0 == 0.0
    assert s.t_end >= 8.0 - 1e-9


# -- empirical gain --------------------------------------------------------------

@pytest.mark.parametrize("case, p", [("C", 0), ("C", 0.5), ("C", 2.0), ("A", -0.5), ("B", INF)])
def test_empirical_gain_respects_bound(case, p):
    rep = empirical_gain(1.0, DelayUncertainty(0.5, case, p), 60, seed=3)
    assert rep.ok, rep.counterexample
    assert rep.gain_ratio_observed <= rep.bound_value * (1 + rep.tol_quadrature)


def test_empirical_gain_is_deterministic():
    unc = DelayUncertainty(0.3, "B")
    a = empirical_gain(1.0, unc, 30, seed=11)
    b = empirical_gain(1.0, unc, 30, seed=11)
    assert a.ratios == b.ratios
    assert a.to_json() == b.to_json()


def test_empirical_gain_flags_a_false_bound():
    # the case B construction exceeds the bound of a slowly varying class
    unc = DelayUncertainty(1.0, "B")
    rep = empirical_gain(1.0, unc, 1, seed=0, dt=1e-3)
    assert rep.gain_ratio_observed > 1.0 * (1 + 5e-3)


# -- kernel, against a 2-D area count ---------------------------------------------

def _area_count(traj, h, t, step):
    """Grid count of {(t', s): 0 <= t' <= T, s >= 0, s in W(t) and s in W(t')}."""
    e = float(traj.eta(np.array([t]))[0])
    a, b = max(min(t - h, t - h - e), 0.0), max(t - h, t - h - e, 0.0)
    if b <= a:
        return 0.0
    s = np.arange(a + step / 2, b, step)
    tp = np.arange(step / 2, traj.T, step)
    ep = traj.eta(tp)
    lo = np.minimum(tp - h, tp - h - ep)
    hi = np.maximum(tp - h, tp - h - ep)
    inside = (s[:, None] >= lo[None, :]) & (s[:, None] <= hi[None, :])
    return inside.sum() * step * step


@pytest.mark.parametrize("seed", range(3))
def test_kernel_matches_area_count(seed):
    rng = np.random.default_rng(seed)
    traj = random_trajectory(rng, "B", INF, 1.0, 6.0)
    for t in (2.5, 3.7, 4.9):
        assert kernel_K(t, traj, 1.0, dt=1e-3) == pytest.approx(_area_count(traj, 1.0, t, 2e-3), abs=2e-2)


def test_kernel_on_switching_pair():
    _, traj = remark3_pair(1.0, 1.0, 1e-3)
    sup, _ = kernel_sup(traj, 1.0, dt=1e-3)
    assert 1.5 * (1 - 1e-2) <= sup <= 1.75 * (1 + 1e-2)


def test_kernel_constant_delay_is_mu_squared():
    traj = DelayTrajectory.constant(0.5, 5.0, 0.5)
    sup, _ = kernel_sup(traj, 1.0, dt=1e-3)
    assert sup == pytest.approx(0.25, rel=1e-2)
