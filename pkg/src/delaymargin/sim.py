"""Time-domain simulation of the delayed plant under admissible delay trajectories.

Runs here corroborate computed margins empirically. A decaying run is
evidence, not proof; a diverging run at some ``mu`` is a counterexample to
stability at that ``mu``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import random_bandlimited, random_trajectory
from .core import DelayTrajectory, DelayUncertainty, InvalidInput, LtiDelaySystem, Signal

__all__ = ["DdeRun", "ProbeRow", "ProbeReport", "dde_integrate", "decay_estimate",
           "random_history", "margin_probe", "BLOWUP"]

BLOWUP = 1e12


def _lagrange_weights(u, m):
    """Weights of the ``m``-point Lagrange interpolant at nodes ``0..m-1``."""
    w = np.ones(m)
    for j in range(m):
        for k in range(m):
            if k != j:
                w[j] *= (u - k) / (j - k)
    return w


class _Store:
    """Uniform samples ``data[i]`` at ``t0 + i*dt`` for ``i < count``."""

    def __init__(self, t0, dt, data, count):
        self.t0, self.dt, self.data, self.count = t0, dt, data, count

    def __call__(self, s):
        c = self.count
        m = min(4, c)
        u = (s - self.t0) / self.dt
        start = min(max(int(math.floor(u)) - 1, 0), c - m)
        return _lagrange_weights(u - start, m) @ self.data[start:start + m]


@dataclass
class DdeRun:
    sys: LtiDelaySystem
    traj: DelayTrajectory
    initial_history: Signal
    dt: float
    T: float
    trajectory_out: Signal
    tau: np.ndarray
    decay_estimate: float
    diverged: bool = False
    blowup_time: float | None = None

    @property
    def x_final(self) -> np.ndarray:
        return self.trajectory_out.samples[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.sys.n
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["tau"])
        for t, x, tau in zip(self.trajectory_out.times, self.trajectory_out.samples, self.tau):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(tau))])
        return buf.getvalue()


def decay_estimate(times, x) -> float:
    """Least-squares slope of ``log |x(t)|`` over the final half of the run."""
    times = np.asarray(times, dtype=float)
    norms = np.linalg.norm(np.asarray(x, dtype=float).reshape(len(times), -1), axis=1)
    sel = times >= times[0] + 0.5 * (times[-1] - times[0])
    if sel.sum() < 2:
        return float("nan")
    logs = np.log(np.maximum(norms[sel], 1e-300))
    return float(np.polyfit(times[sel], logs, 1)[0])


def dde_integrate(sys: LtiDelaySystem, traj: DelayTrajectory, history: Signal,
                  dt: float, T: float | None = None, t0: float = 0.0) -> DdeRun:
    """Integrate ``x' = A0 x + A1 x(t - tau(t))`` on ``[t0, t0 + T]`` with RK4.

    The delayed state comes from 4-point Lagrange interpolation of the stored
    trajectory, or of ``history`` for arguments at or before ``t0``; stencils
    never straddle ``t0``. Arguments past the last stored point are
    extrapolated from the most recent samples. ``T`` defaults to ``50 h``.
    """
    h, n = sys.h, sys.n
    mu = traj.declared_mu
    if T is None:
        T = 50.0 * h
    if not (dt > 0 and dt <= h / 20 * (1 + 1e-12)):
        raise InvalidInput(f"dt must lie in (0, h/20], got {dt}")
    if history.m != n:
        raise InvalidInput(f"history has {history.m} channels, system has {n}")
    tol = 1e-9 * max(1.0, h)
    if history.t0 > t0 - h - mu + tol or history.t_end < t0 - tol:
        raise InvalidInput(f"history must cover [{t0 - h - mu}, {t0}], "
                           f"got [{history.t0}, {history.t_end}]")
    if mu > h:
        raise InvalidInput("mu exceeds h")
    steps = int(round(T / dt))
    past = _Store(history.t0, history.dt, history.samples, len(history))
    X = np.zeros((steps + 1, n))
    X[0] = past(t0)
    now = _Store(t0, dt, X, 1)

    def delayed(s):
        return past(s) if s <= t0 else now(s)

    stage_t = t0 + 0.5 * dt * np.arange(2 * steps + 1)
    args = stage_t - traj.tau(stage_t, h)
    A0, A1 = sys.A0, sys.A1
    diverged, blow_t = False, None
    k = 0
    for k in range(steps):
        x = X[k]
        d0 = delayed(args[2 * k])
        dm = delayed(args[2 * k + 1])
        d1 = delayed(args[2 * k + 2])
        k1 = A0 @ x + A1 @ d0
        k2 = A0 @ (x + 0.5 * dt * k1) + A1 @ dm
        k3 = A0 @ (x + 0.5 * dt * k2) + A1 @ dm
        k4 = A0 @ (x + dt * k3) + A1 @ d1
        X[k + 1] = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        now.count = k + 2
        if not np.all(np.isfinite(X[k + 1])) or np.linalg.norm(X[k + 1]) > BLOWUP:
            diverged, blow_t = True, t0 + (k + 1) * dt
            break
    last = now.count
    if diverged and not np.all(np.isfinite(X[last - 1])):
        last -= 1
    out = Signal(dt, X[:last], t0)
    tau = traj.tau(out.times, h)
    rate = decay_estimate(out.times, out.samples)
    return DdeRun(sys, traj, history, dt, T, out, tau, rate, diverged, blow_t)


def random_history(rng, sys: LtiDelaySystem, mu: float, dt: float, t0: float = 0.0) -> Signal:
    """Band-limited initial function on ``[t0 - h - mu, t0]``."""
    span = sys.h + mu
    N = int(math.ceil(span / dt)) + 1
    start = t0 - (N - 1) * dt
    t = start + dt * np.arange(N)
    samples = random_bandlimited(rng, t - start, sys.n, max_freq=2.0 / sys.h)
    return Signal(dt, samples, start)


@dataclass
class ProbeRow:
    mu: float
    trials: int
    decayed: int
    diverged: int
    worst_rate: float
    blowup_times: list = field(default_factory=list)

    def to_dict(self):
        return {"mu": self.mu, "trials": self.trials, "decayed": self.decayed,
                "diverged": self.diverged, "worst_rate": self.worst_rate,
                "blowup_times": self.blowup_times}


@dataclass
class ProbeReport:
    rows: list
    seed: int
    case: str
    p: object
    dt: float
    T: float
    note: str = ("decay in every trial is evidence of stability, not proof; "
                 "a diverging run is a counterexample at that mu")

    @property
    def all_decay(self) -> bool:
        return all(r.decayed == r.trials for r in self.rows)

    def to_dict(self):
        return {"seed": self.seed, "case": self.case,
                "p": "inf" if str(self.p) == "inf" else float(self.p),
                "dt": self.dt, "T": self.T, "note": self.note,
                "grid": [r.to_dict() for r in self.rows]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def margin_probe(sys: LtiDelaySystem, unc: DelayUncertainty, mu_grid, trials_per_mu: int = 20,
                 seed: int = 0, dt: float | None = None, T: float | None = None) -> ProbeReport:
    """Simulate random admissible delays and histories at each ``mu`` in the grid.

    A run counts as decaying when it did not blow up and its decay estimate
    is negative.
    """
    dt = sys.h / 40 if dt is None else dt
    T = 50.0 * sys.h if T is None else T
    rows = []
    for i, mu in enumerate(mu_grid):
        mu = float(mu)
        u = unc.with_mu(mu)
        u.check_system(sys)
        decayed = diverged = 0
        worst = -math.inf
        blow = []
        for j in range(trials_per_mu):
            rng = np.random.default_rng([seed, i, j])
            traj = random_trajectory(rng, u.case, u.p, mu, T)
            hist = random_history(rng, sys, mu, dt)
            run = dde_integrate(sys, traj, hist, dt, T)
            worst = max(worst, run.decay_estimate)
            if run.diverged:
                diverged += 1
                blow.append(run.blowup_time)
            elif run.decay_estimate < 0:
                decayed += 1
        rows.append(ProbeRow(mu, trials_per_mu, decayed, diverged, worst, blow))
    return ProbeReport(rows, seed, unc.case.value, unc.p, dt, T)
