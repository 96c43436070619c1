import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import lambertw

from delaymargin.core import INF, DelayUncertainty, InvalidInput, LtiDelaySystem, example_system
from delaymargin.frequency import (
    ScalingMatrix, SingularityError, freq_margin, hinf_norm, k_margin, nominal_stable,
    scaled_freq_margin, small_gain_check, transfer_G,
)


def _lambert_rightmost(a0, a1, h):
    # s - a0 = a1 exp(-h s)  =>  s = a0 + W(a1 h exp(-a0 h)) / h
    return a0 + lambertw(a1 * h * math.exp(-a0 * h), 0) / h


@pytest.mark.parametrize("a0, a1, h", [
    (0.0, -1.0, 1.0), (0.0, -1.0, 1.5), (0.0, -1.0, 1.6), (-1.0, 0.5, 2.0),
    (-2.0, -1.5, 0.7), (0.5, -1.0, 0.3), (-1.0, -3.0, 0.4),
])
def test_scalar_rightmost_root_matches_lambert_w(a0, a1, h):
    res = nominal_stable(LtiDelaySystem([[a0]], [[a1]], h))
    ref = _lambert_rightmost(a0, a1, h)
    assert abs(res.rightmost.real - ref.real) < 1e-9
    assert abs(abs(res.rightmost.imag) - abs(ref.imag)) < 1e-9
    assert res.stable == (ref.real < 0)


def test_scalar_delay_margin_is_half_pi():
    assert nominal_stable(LtiDelaySystem([[0.0]], [[-1.0]], math.pi / 2 - 1e-3)).stable
    assert not nominal_stable(LtiDelaySystem([[0.0]], [[-1.0]], math.pi / 2 + 1e-3)).stable


def test_example_nominally_stable(example):
    stable, root = nominal_stable(example)
    assert stable
    # root satisfies the characteristic equation
    M = root * np.eye(2) - example.A0 - np.exp(-root) * example.A1
    assert abs(np.linalg.det(M)) < 1e-10


def test_unstable_without_delay_term():
    assert not nominal_stable(LtiDelaySystem(np.eye(2), np.zeros((2, 2)), 1.0)).stable


def test_k_matches_brute_force_golden(example, golden_k):
    assert k_margin(example) == pytest.approx(golden_k["k"], rel=1e-6)


def test_grid_doubling_stability(example):
    unc = DelayUncertainty(1.0, "B")
    n1, s1 = hinf_norm(example, unc, 1, density=1)
    n2, _ = hinf_norm(example, unc, 1, density=2)
    assert abs(n1 - n2) <= 1e-4 * n1
    assert s1.refined and s1.peak_omega == pytest.approx(0.9058, abs=1e-3)


def test_high_frequency_limit(example):
    unc = DelayUncertainty(0.3, "B")
    G = transfer_G(np.array([1e6]), example, unc, 1.75)[0]
    asym = math.sqrt(1.75) * 0.3 * np.linalg.norm(example.A1, 2)
    assert np.linalg.norm(G, 2) == pytest.approx(asym, rel=1e-4)
    _, sweep = hinf_norm(example, unc, 1.75)
    assert sweep.asymptote == pytest.approx(asym)


def test_singularity_on_imaginary_axis():
    sys_ = LtiDelaySystem([[0.0]], [[-1.0]], math.pi / 2)  # roots at +- i
    with pytest.raises(SingularityError):
        transfer_G(np.array([1.0]), sys_, DelayUncertainty(0.1, "B"), 1.0)


def test_zero_delay_term_has_infinite_margin():
    sys_ = LtiDelaySystem(-np.eye(2), np.zeros((2, 2)), 1.0)
    assert k_margin(sys_) == math.inf


def test_margin_formula(example):
    k = k_margin(example)
    assert freq_margin(example, "C", 1, k=k) == pytest.approx(k / math.sqrt(1.5))
    assert freq_margin(example, "A", -0.5, k=k) == pytest.approx(k)
    assert freq_margin(example, "B", k=k) == pytest.approx(k / math.sqrt(1.75))


@settings(max_examples=30, deadline=None)
@given(p1=st.floats(0, 50), p2=st.floats(0, 50))
def test_freq_margin_non_increasing_in_p(p1, p2):
    sys_, _ = example_system()
    lo, hi = sorted((p1, p2))
    k = 0.2738
    assert freq_margin(sys_, "C", lo, k=k) >= freq_margin(sys_, "C", hi, k=k)


def test_small_gain_at_interior_point(example):
    res = small_gain_check(example, DelayUncertainty(0.2, "B"))
    assert res.stable and res.best_norm < 1
    res = small_gain_check(example, DelayUncertainty(0.25, "B"))
    assert not res.stable and "inconclusive" in res.note


def test_diagonal_scaling_never_hurts(example):
    base = freq_margin(example, "C", 0.5)
    scaled, X = scaled_freq_margin(example, "C", 0.5)
    assert scaled >= base * (1 - 1e-9)
    assert X.kind.value == "diagonal"


def test_scaling_invariance_under_similarity(example):
    # a similarity of the plant combined with the matching scaling leaves the norm unchanged
    T = np.array([[2.0, 1.0], [0.0, 1.0]])
    Ti = np.linalg.inv(T)
    sys2 = LtiDelaySystem(T @ example.A0 @ Ti, T @ example.A1 @ Ti, example.h)
    unc = DelayUncertainty(1.0, "B")
    n1, _ = hinf_norm(example, unc, 1)
    n2, _ = hinf_norm(sys2, unc, 1, ScalingMatrix(Ti))
    assert n1 == pytest.approx(n2, rel=1e-6)


def test_singular_scaling_rejected():
    with pytest.raises(InvalidInput):
        ScalingMatrix(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_sweep_csv(example):
    _, sweep = hinf_norm(example, DelayUncertainty(0.2, "B"), 1.75)
    lines = sweep.to_csv().splitlines()
    assert lines[0] == "omega,gain" and len(lines) == len(sweep.omegas) + 1
