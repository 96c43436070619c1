"""Operator bound F(p), the delay integral operator and its numeric oracles.

The operator maps ``y`` (zero on ``t <= 0``) to

    z(t) = integral of y(s) over s in [t - h - eta(t), t - h]

and the bound function ``F`` guarantees ``||z||^2 <= mu^2 F(p) ||y||^2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .core import (
    INF, DelayCase, DelayTrajectory, DelayUncertainty, Extended, InvalidInput,
    Segment, Signal, l2_norm_sq, _p_to_json,
)

__all__ = [
    "f_of_p", "margin_multiplier", "delta_apply", "remark1_pair", "remark3_pair",
    "random_trajectory", "random_bandlimited", "random_test_signal",
    "gain_ratio", "empirical_gain", "BoundReport", "kernel_K", "kernel_sup",
    "PRIOR_F_MODERATE", "TRAJECTORY_KINDS",
]

# Bound used for every p > 0 before the derivative-dependent refinement.
PRIOR_F_MODERATE = Fraction(2)


def f_of_p(p):
    """Bound function F(p).

    Returns a :class:`~fractions.Fraction` when ``p`` is rational (ints,
    Fractions, Decimals, and Python floats read by their shortest decimal
    representation, so ``f_of_p(0.1) == Fraction(12, 11)``). Other numeric
    types fall back to float arithmetic.

    >>> f_of_p(1)
    Fraction(3, 2)
    >>> f_of_p(INF)
    Fraction(7, 4)
    """
    if p is INF or (isinstance(p, float) and math.isinf(p) and p > 0):
        return Fraction(7, 4)
    if isinstance(p, bool):
        raise TypeError("p must be numeric")
    if isinstance(p, (int, Fraction)):
        q = Fraction(p)
    elif isinstance(p, Decimal):
        q = Fraction(p)
    elif isinstance(p, float):
        if math.isnan(p):
            raise ValueError("p is NaN")
        q = Fraction(repr(p)) if math.isfinite(p) else None
        if q is None:
            raise ValueError(f"p out of domain: {p}")
    else:
        q = float(p)
    if q < -1:
        raise ValueError(f"F(p) is defined for p >= -1, got p={p}")
    if q < 0:
        return Fraction(1) if isinstance(q, Fraction) else 1.0
    if q < 1:
        return (2 * q + 1) / (q + 1)
    return (7 * q - 1) / (4 * q)


def margin_multiplier(p) -> float:
    """``1/sqrt(F(p))``: the fraction of ``k`` that remains admissible."""
    return 1.0 / math.sqrt(float(f_of_p(p)))


# -- the integral operator -------------------------------------------------

def _antiderivative(y: np.ndarray, dt: float):
    """Exact antiderivative of the piecewise-linear interpolant of ``y``.

    ``y`` is zero for ``s <= 0`` and held at zero past the last sample.
    """
    cum = np.zeros_like(y)
    cum[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)
    n = y.shape[0]
    slope = np.zeros_like(y)
    slope[:-1] = (y[1:] - y[:-1]) / dt

    def Y(s):
        s = np.asarray(s, dtype=float)
        k = np.floor(s / dt).astype(int)
        k = np.clip(k, 0, n - 1)
        delta = np.clip(s - k * dt, 0.0, dt)
        delta = np.where(k == n - 1, 0.0, delta)
        val = cum[k] + y[k] * delta[:, None] + 0.5 * slope[k] * (delta ** 2)[:, None]
        val[s <= 0] = 0.0
        return val

    return Y


def delta_apply(y: Signal, traj: DelayTrajectory, h: float) -> Signal:
    """Apply the delay integral operator to ``y`` on ``y``'s own grid.

    The moving endpoints are handled by integrating the linear interpolant
    of ``y`` exactly, so the only error is the interpolation error of ``y``.
    """
    if y.t0 != 0.0:
        raise InvalidInput("y must start at t = 0")
    if traj.T < y.t_end - 1e-9 * max(1.0, y.t_end):
        raise InvalidInput(f"trajectory horizon {traj.T} does not cover signal end {y.t_end}")
    if h <= 0:
        raise InvalidInput("h must be positive")
    t = y.times
    Y = _antiderivative(np.asarray(y.samples), y.dt)
    upper = t - h
    lower = t - h - traj.eta(t)
    z = Y(upper) - Y(lower)
    return Signal(y.dt, z, 0.0)


def gain_ratio(y: Signal, traj: DelayTrajectory, h: float) -> float:
    """``||Delta y||^2 / ||y||^2`` with the zero-signal convention 0/0 = 0."""
    ny = l2_norm_sq(y)
    if ny == 0.0:
        return 0.0
    return l2_norm_sq(delta_apply(y, traj, h)) / ny


# -- extremal constructions ---------------------------------------------------

def _grid(T, dt):
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        n = int(math.ceil(T / dt))
    return dt * np.arange(n + 1)


def remark1_pair(theta: float, mu: float, dt: float, h: Optional[float] = None):
    """Unit step on ``[0, theta]`` and the constant delay ``eta = mu``.

    The sampling horizon is ``theta + h + mu`` (``h`` defaults to ``mu``) so
    the operator output is captured completely.
    """
    if not (mu > 0 and theta > mu):
        raise InvalidInput(f"need theta > mu > 0, got theta={theta}, mu={mu}")
    h = mu if h is None else h
    if h < mu:
        raise InvalidInput("need h >= mu")
    t = _grid(theta + h + mu + dt, dt)
    y = np.where(t <= theta + 1e-12 * theta, 1.0, 0.0)
    traj = DelayTrajectory.constant(mu, float(t[-1]), mu, DelayCase.C, 0, label="remark1")
    return Signal(dt, y), traj


def remark3_pair(mu: float, h: float, dt: float):
    """Tent signal and two-level switching delay reaching the ratio 3/2.

    ``y`` rises with slope 1 on ``[0, mu]`` and falls back to zero on
    ``[mu, 2mu]``; ``eta = -mu`` before ``t = h + mu`` and ``+mu`` after, so
    the switch happens when the delayed window reaches ``s = mu``. Only
    admissible for case B.
    """
    if not mu > 0:
        raise InvalidInput("need mu > 0")
    if h < mu:
        raise InvalidInput(f"need h >= mu, got h={h}, mu={mu}")
    t = _grid(h + 4 * mu, dt)
    y = np.where(t <= mu, t, np.where(t <= 2 * mu, 2 * mu - t, 0.0))
    T = float(t[-1])
    traj = DelayTrajectory(
        (0.0, h + mu, T),
        (Segment("constant", (-mu,)), Segment("constant", (mu,))),
        mu, DelayCase.B, INF, label="remark3",
    )
    return Signal(dt, y), traj


# -- random generators ----------------------------------------------------------

def random_bandlimited(rng: np.random.Generator, t: np.ndarray, m: int = 1,
                       max_freq: float = 1.0, min_freq: float = 0.0,
                       n_terms: Optional[int] = None) -> np.ndarray:
    """Sum of at most 8 sinusoids per channel with random phase and amplitude.

    Frequencies (cycles per time unit) are log-uniform in
    ``[min_freq, max_freq]`` when ``min_freq > 0``, else uniform.
    """
    out = np.zeros((t.size, m))
    for j in range(m):
        k = n_terms or int(rng.integers(1, 9))
        if min_freq > 0:
            freqs = np.exp(rng.uniform(np.log(min_freq), np.log(max_freq), k))
        else:
            freqs = rng.uniform(0.0, max_freq, k)
        amps = rng.uniform(0.2, 1.0, k)
        phases = rng.uniform(0.0, 2 * np.pi, k)
        out[:, j] = (amps[None, :] * np.sin(2 * np.pi * freqs[None, :] * t[:, None] + phases)).sum(axis=1)
    return out


def random_test_signal(rng: np.random.Generator, dt: float, duration: float,
                       total: float, m: int = 1) -> Signal:
    """Band-limited signal on ``[0, duration]`` that starts at zero.

    A Tukey window with random taper forces ``y(0) = 0``; the samples are
    zero-padded up to ``total``.
    """
    t = _grid(total, dt)
    active = t <= duration
    tt = t[active]
    x = random_bandlimited(rng, tt, m, max_freq=1.0 / (4 * dt), min_freq=1.0 / (4 * duration))
    if rng.random() < 0.3:
        x = x + rng.normal(size=(1, m))
    taper = rng.uniform(0.02, 0.5) * duration
    w = np.ones_like(tt)
    ramp = tt < taper
    w[ramp] = np.sin(0.5 * np.pi * tt[ramp] / taper) ** 2
    tail = tt > duration - taper
    w[tail] = np.sin(0.5 * np.pi * (duration - tt[tail]) / taper) ** 2
    y = np.zeros((t.size, m))
    y[active] = x * w[:, None]
    return Signal(dt, y)


def _sawtooth(rng, mu, T, up, down, case, p, label):
    a = mu * rng.uniform(0.3, 1.0)
    level = float(rng.uniform(-a, a))
    rising = bool(rng.random() < 0.5)
    bp, segs = [0.0], []
    while bp[-1] < T:
        target = a if rising else -a
        rate = up if rising else down
        span = abs(target - level) / rate
        if span > 0:
            end = min(bp[-1] + span, T)
            v1 = level + (rate if rising else -rate) * (end - bp[-1])
            segs.append(Segment("linear", (level, v1)))
            bp.append(end)
            level = v1
        rising = not rising
    return DelayTrajectory(tuple(bp), tuple(segs), mu, case, p, label=label)


def _switching(rng, mu, T, label):
    n = int(rng.integers(2, 30))
    cuts = np.sort(rng.uniform(0.0, T, n))
    cuts = cuts[(cuts > 1e-6) & (cuts < T - 1e-6)]
    cuts = np.unique(cuts)
    bp = (0.0, *cuts.tolist(), T)
    if rng.random() < 0.5:
        levels = rng.choice([-mu, mu], size=len(bp) - 1)
    else:
        levels = rng.uniform(-mu, mu, len(bp) - 1)
    segs = tuple(Segment("constant", (float(v),)) for v in levels)
    return DelayTrajectory(bp, segs, mu, DelayCase.B, INF, label=label)


TRAJECTORY_KINDS = ("constant", "sine", "sawtooth", "switching")


def random_trajectory(rng: np.random.Generator, case, p, mu: float, T: float,
                      kind: Optional[str] = None) -> DelayTrajectory:
    """Draw an admissible delay trajectory for the given class.

    Shapes: constants, sinusoids with ``mu*omega <= 1 + p``, sawtooths whose
    rising slope is at most ``1 + p`` (falling slope capped at ten times
    that for cases A and C) and, for case B, piecewise-constant switching.
    ``kind`` picks one shape instead of drawing it at random.
    """
    case = DelayCase(case)
    if case is DelayCase.B:
        p = INF
        d = None
    else:
        d = float(1 + p)
    kinds = ["constant", "sine", "sawtooth"]
    if case is DelayCase.B:
        kinds.append("switching")
        kinds.append("switching")
    if kind is None:
        kind = kinds[int(rng.integers(len(kinds)))]
    elif kind not in TRAJECTORY_KINDS:
        raise InvalidInput(f"unknown trajectory kind {kind!r}")
    elif kind == "switching" and case is not DelayCase.B:
        raise InvalidInput("switching delays are only admissible for case B")
    if mu == 0:
        return DelayTrajectory.constant(0.0, T, 0.0, case, p, label="constant")
    if d is not None and d <= 0 and kind in ("sine", "sawtooth"):
        kind = "constant"
    if kind == "constant":
        v = float(rng.choice([-mu, mu])) if rng.random() < 0.6 else float(rng.uniform(-mu, mu))
        return DelayTrajectory.constant(v, T, mu, case, p, label="constant")
    if kind == "sine":
        top = d / mu if d is not None else 20.0 / mu
        omega = float(rng.uniform(0.05, 1.0)) * top
        amp = mu if d is not None else mu * float(rng.uniform(0.3, 1.0))
        if d is not None:
            amp = min(mu, d / omega) * (1 - 1e-9)
        phase = float(rng.uniform(0, 2 * np.pi))
        return DelayTrajectory((0.0, T), (Segment("sine", (0.0, amp, omega, phase)),), mu, case, p,
                               label="sine")
    if kind == "sawtooth":
        if d is None:
            up = float(rng.uniform(0.1, 20.0))
            down = float(rng.uniform(0.1, 50.0))
        else:
            up = d * float(rng.uniform(0.3, 1.0))
            down = d * float(rng.uniform(0.3, 10.0))
        return _sawtooth(rng, mu, T, up, down, case, p, "sawtooth")
    return _switching(rng, mu, T, "switching")


# -- Monte Carlo gain oracle --------------------------------------------------------

@dataclass
class BoundReport:
    p: object
    f_value: float
    gain_ratio_observed: float
    bound_value: float
    trials: int
    seed: int
    mu: float
    tol_quadrature: float
    worst_trial: int = -1
    counterexample: Optional[dict] = None
    ratios: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.counterexample is None

    def to_dict(self) -> dict:
        return {
            "p": _p_to_json(self.p),
            "F": self.f_value,
            "mu": self.mu,
            "bound": self.bound_value,
            "observed_sup": self.gain_ratio_observed,
            "tol_quadrature": self.tol_quadrature,
            "trials": self.trials,
            "seed": self.seed,
            "worst_trial": self.worst_trial,
            "counterexample": self.counterexample,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def empirical_gain(sys_h: float, unc: DelayUncertainty, trials: int, seed: int, *,
                   dt: float = 0.01, duration: Optional[float] = None,
                   include_extremal: bool = True,
                   signal_fn: Optional[Callable[[np.random.Generator, float, float, float], Signal]] = None,
                   ) -> BoundReport:
    """Randomized check of ``||Delta y||^2 <= mu^2 F(p) ||y||^2``.

    Trial ``i`` draws from ``np.random.default_rng([seed, i])``, so results do
    not depend on evaluation order. With ``include_extremal`` trial 0 is the
    switching-delay construction (case B) or the long step with constant
    delay (cases A and C).
    """
    if trials < 1:
        raise InvalidInput("trials must be >= 1")
    mu = unc.mu
    if mu <= 0:
        raise InvalidInput("mu must be positive for a gain experiment")
    if mu > sys_h:
        raise InvalidInput("mu exceeds h")
    F = f_of_p(unc.p)
    bound = mu * mu * float(F)
    tol = 5 * dt / mu
    duration = duration or max(10 * mu, 4 * sys_h)
    total = duration + sys_h + mu + dt
    best, best_i, counter = 0.0, -1, None
    ratios = []
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        if i == 0 and include_extremal and signal_fn is None:
            if unc.case is DelayCase.B:
                y, traj = remark3_pair(mu, sys_h, dt)
            else:
                y, traj = remark1_pair(10 * mu, mu, dt, h=sys_h)
                traj = DelayTrajectory.constant(mu, traj.T, mu, unc.case, unc.p, label="remark1")
        else:
            if signal_fn is not None:
                y = signal_fn(rng, dt, duration, total)
            else:
                y = random_test_signal(rng, dt, duration, total)
            traj = random_trajectory(rng, unc.case, unc.p, mu, y.t_end)
        r = gain_ratio(y, traj, sys_h)
        ratios.append(r)
        if r > best:
            best, best_i = r, i
        if r > bound * (1 + tol) and counter is None:
            counter = {"trial": i, "ratio": r, "trajectory": traj.to_dict(),
                       "signal": {"dt": y.dt, "samples": len(y), "l2_norm_sq": l2_norm_sq(y)}}
    return BoundReport(unc.p, float(F), best, bound, trials, seed, mu, tol, best_i, counter, ratios)


# -- kernel oracle ---------------------------------------------------------------

def _windows(traj: DelayTrajectory, h: float, t):
    e = traj.eta(t)
    a = np.minimum(t - h, t - h - e)
    b = np.maximum(t - h, t - h - e)
    return a, b


class _KernelTable:
    """Precomputed window-coverage function for one trajectory."""

    def __init__(self, traj, h, dt):
        tp = np.arange(0.0, traj.T + 0.5 * dt, dt)
        a, b = _windows(traj, h, tp)
        a = np.maximum(a, 0.0)
        b = np.maximum(b, 0.0)
        self.sa, self.sb = np.sort(a), np.sort(b)
        ds = dt / 2
        self.s = np.arange(0.0, max(traj.T, ds) + ds, ds)
        # c(s): measure of times t' whose window contains s
        c = dt * (np.searchsorted(self.sa, self.s, side="right")
                  - np.searchsorted(self.sb, self.s, side="left"))
        self.C = np.concatenate([[0.0], np.cumsum(0.5 * (c[1:] + c[:-1]) * ds)])
        self.traj, self.h = traj, h

    def area(self, t):
        a, b = _windows(self.traj, self.h, np.asarray(t, dtype=float))
        a, b = np.maximum(a, 0.0), np.maximum(b, 0.0)
        return np.interp(b, self.s, self.C) - np.interp(a, self.s, self.C)


def kernel_K(t, traj: DelayTrajectory, h: float, dt: float = 1e-3):
    """Row integral of the window-overlap kernel at time ``t``.

    Equals the area of the part of the domain ``{(t', s): s in W(t')}``
    (``W(t')`` the integration window at ``t'``, ``s >= 0``) lying in the
    strip ``s in W(t)``. The Schur test bounds ``||Delta||^2`` by its
    supremum over ``t``.
    """
    table = _KernelTable(traj, h, dt)
    out = table.area(np.atleast_1d(np.asarray(t, dtype=float)))
    return float(out[0]) if np.ndim(t) == 0 else out


def kernel_sup(traj: DelayTrajectory, h: float, dt: float = 1e-3):
    """Supremum of :func:`kernel_K` over a grid of spacing ``dt/2``.

    Returns ``(sup, argmax_t)``.
    """
    table = _KernelTable(traj, h, dt)
    t = np.arange(0.0, traj.T + dt / 4, dt / 2)
    vals = table.area(t)
    k = int(np.argmax(vals))
    return float(vals[k]), float(t[k])
