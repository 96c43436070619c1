import math

import numpy as np
import pytest

from delaymargin.core import (DelayTrajectory, DelayUncertainty, InvalidInput, LtiDelaySystem,
                              Segment, Signal, example_system)
from delaymargin.frequency import nominal_stable
from delaymargin.sim import decay_estimate, dde_integrate, margin_probe, random_history


def _const_history(value, t0, dt, n=None):
    n = n or int(round(-t0 / dt)) + 1
    return Signal(dt, np.full((n, np.size(value)), value), t0)


def test_pure_ode_exact():
    sys_ = LtiDelaySystem([[-1.0]], [[0.0]], 1.0)
    run = dde_integrate(sys_, DelayTrajectory.constant(0.0, 1.0, 0.0), _const_history(1.0, -1.0, 1e-3),
                        1e-3, 1.0)
    assert abs(run.x_final[0] - math.exp(-1.0)) < 1e-8


def test_scalar_decay_matches_rightmost_root():
    sys_ = LtiDelaySystem([[0.0]], [[-1.0]], 0.1)
    run = dde_integrate(sys_, DelayTrajectory.constant(0.0, 5.0, 0.0), _const_history(1.0, -0.1, 0.005),
                        0.005, 5.0)
    root = nominal_stable(sys_).rightmost
    assert run.decay_estimate < 0
    assert run.decay_estimate == pytest.approx(root.real, rel=1e-3)


def test_example_nominal_decay(example, rng):
    hist = random_history(rng, example, 0.0, 0.025)
    run = dde_integrate(example, DelayTrajectory.constant(0.0, 50.0, 0.0), hist, 0.025)
    root = nominal_stable(example).rightmost.real
    assert run.decay_estimate < 0
    # oscillation of the dominant pair biases the fit only slightly
    assert run.decay_estimate == pytest.approx(root, abs=0.02)


def _smooth_history(dt):
    k = np.arange(-int(round(1 / dt)), 1)
    t = k * dt
    return Signal(dt, np.column_stack([np.sin(2 * t), np.cos(t)]), t[0])


def test_fourth_order_convergence(example):
    traj = DelayTrajectory.constant(0.0, 10.0, 0.0)
    xs = [dde_integrate(example, traj, _smooth_history(dt), dt, 10.0).x_final
          for dt in (0.05, 0.025, 0.0125)]
    ratio = np.linalg.norm(xs[0] - xs[1]) / np.linalg.norm(xs[1] - xs[2])
    assert 8 <= ratio <= 32


def test_linearity_in_history(example, rng):
    traj = DelayTrajectory((0.0, 20.0), (Segment("sine", (0.0, 0.2, 3.0, 0.0)),), 0.2, "B")
    h1 = random_history(rng, example, 0.2, 0.02)
    h2 = random_history(rng, example, 0.2, 0.02)
    h12 = Signal(h1.dt, h1.samples + h2.samples, h1.t0)
    a, b, ab = (dde_integrate(example, traj, h, 0.02, 20.0).trajectory_out.samples for h in (h1, h2, h12))
    assert np.max(np.abs(ab - (a + b))) <= 1e-8 * np.max(np.abs(ab))


def test_time_invariance(example, rng):
    dt, shift = 0.02, 0.6
    segs = (Segment("linear", (0.0, 0.2)), Segment("linear", (0.2, -0.2)), Segment("constant", (-0.2,)))
    traj = DelayTrajectory((0.0, 1.0, 1.3, 8.0), segs, 0.2, "C", 0.5)
    shifted = DelayTrajectory((0.0, shift, 1.0 + shift, 1.3 + shift, 8.0 + shift),
                              (Segment("constant", (0.0,)),) + segs, 0.2, "C", 0.5)
    hist = random_history(rng, example, 0.2, dt)
    hist_s = Signal(dt, hist.samples, hist.t0 + shift)
    a = dde_integrate(example, traj, hist, dt, 8.0)
    b = dde_integrate(example, shifted, hist_s, dt, 8.0, t0=shift)
    np.testing.assert_allclose(b.trajectory_out.samples, a.trajectory_out.samples, atol=1e-10)
    np.testing.assert_allclose(b.trajectory_out.times, a.trajectory_out.times + shift, atol=1e-12)


def test_divergence_aborts_with_time():
    sys_ = LtiDelaySystem(np.eye(2), np.zeros((2, 2)), 1.0)
    run = dde_integrate(sys_, DelayTrajectory.constant(0.0, 50.0, 0.0),
                        _const_history([1.0, 1.0], -1.0, 0.05), 0.05)
    assert run.diverged
    assert run.blowup_time == pytest.approx(math.log(1e12 / math.sqrt(2)), abs=0.1)
    assert np.all(np.isfinite(run.trajectory_out.samples))
    assert run.decay_estimate == pytest.approx(1.0, abs=1e-3)


def test_input_checks(example):
    traj = DelayTrajectory.constant(0.0, 5.0, 0.2, "B")
    short = _const_history([1.0, 1.0], -0.5, 0.01)
    with pytest.raises(InvalidInput):
        dde_integrate(example, traj, short, 0.01, 5.0)
    with pytest.raises(InvalidInput):
        dde_integrate(example, traj, _const_history([1.0, 1.0], -1.5, 0.01), 0.2, 5.0)


def test_csv_export(example, rng):
    traj = DelayTrajectory.constant(0.1, 1.0, 0.1, "B")
    run = dde_integrate(example, traj, random_history(rng, example, 0.1, 0.05), 0.05, 1.0)
    lines = run.to_csv().splitlines()
    assert lines[0] == "t,x1,x2,tau"
    assert len(lines) == 22
    assert float(lines[1].split(",")[-1]) == pytest.approx(1.1)


def test_decay_estimate_of_exponential():
    t = np.linspace(0, 10, 101)
    assert decay_estimate(t, np.exp(-0.3 * t)) == pytest.approx(-0.3)


def test_probe_decays_below_margin(example):
    rep = margin_probe(example, DelayUncertainty(0.0, "B"), [0.0, 0.25], 5, seed=1)
    assert rep.all_decay
    assert all(r.worst_rate < 0 for r in rep.rows)
    assert '"decayed": 5' in rep.to_json()


def test_probe_unstable_plant_diverges():
    sys_ = LtiDelaySystem(np.eye(2), np.zeros((2, 2)), 1.0)
    rep = margin_probe(sys_, DelayUncertainty(0.0, "B"), [0.0, 0.5], 3, seed=0)
    assert all(r.diverged == r.trials for r in rep.rows)
