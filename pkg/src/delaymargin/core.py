"""Domain types and shared numeric primitives.

The plant is ``x'(t) = A0 x(t) + A1 x(t - tau(t))`` with
``tau(t) = h + eta(t)`` and ``|eta(t)| <= mu <= h``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Union

import numpy as np

__all__ = [
    "InvalidInput", "SchemaError", "MuExceedsH", "DimensionMismatch",
    "CaseParameterError", "InadmissibleTrajectory",
    "DelayCase", "Extended", "INF", "LtiDelaySystem", "DelayUncertainty",
    "Signal", "Segment", "DelayTrajectory", "l2_norm_sq", "parse_system",
    "serialize_system", "load_system", "as_matrix", "example_system",
    "case_for_d",
]


class InvalidInput(ValueError):
    """Base class for every input-validation failure."""


class SchemaError(InvalidInput):
    pass


class MuExceedsH(InvalidInput):
    pass


class DimensionMismatch(InvalidInput):
    pass


class CaseParameterError(InvalidInput):
    pass


class InadmissibleTrajectory(InvalidInput):
    pass


class DelayCase(str, enum.Enum):
    """Delay classes: A slowly varying, B fast varying, C moderately varying."""

    A = "A"
    B = "B"
    C = "C"


class Extended(enum.Enum):
    """Explicit +infinity for the derivative parameter (case B)."""

    INF = "inf"

    def __repr__(self):
        return "INF"

    def __str__(self):
        return "inf"


INF = Extended.INF

Real = Union[int, float, Fraction]
ExtendedReal = Union[int, float, Fraction, Extended]


def as_matrix(value, name="matrix") -> np.ndarray:
    """Convert nested lists to a real square float matrix, or raise."""
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{name}: entries must be real numbers") from exc
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DimensionMismatch(f"{name}: expected a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{name}: entries must be finite")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LtiDelaySystem:
    """Matrices ``A0``, ``A1`` and nominal delay ``h`` of the delayed plant."""

    A0: np.ndarray
    A1: np.ndarray
    h: float

    def __post_init__(self):
        A0 = as_matrix(self.A0, "A0")
        A1 = as_matrix(self.A1, "A1")
        if A0.shape != A1.shape:
            raise DimensionMismatch(f"A0 is {A0.shape} but A1 is {A1.shape}")
        h = float(self.h)
        if not (math.isfinite(h) and h > 0):
            raise InvalidInput(f"nominal delay h must be positive, got {self.h!r}")
        object.__setattr__(self, "A0", _frozen(A0))
        object.__setattr__(self, "A1", _frozen(A1))
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    def scaled(self, alpha: float) -> "LtiDelaySystem":
        """Time-rescaled system ``(alpha*A0, alpha*A1, h/alpha)``."""
        return LtiDelaySystem(alpha * self.A0, alpha * self.A1, self.h / alpha)


def _check_case_p(case: DelayCase, p) -> None:
    if case is DelayCase.B:
        if p is not INF:
            raise CaseParameterError("p out of range for case: case B requires p = inf")
        return
    if p is INF or isinstance(p, bool) or not isinstance(p, (int, float, Fraction)):
        raise CaseParameterError(f"p out of range for case: case {case.value} needs a finite real p, got {p!r}")
    if not math.isfinite(float(p)):
        raise CaseParameterError("p out of range for case: infinite p is case B")
    if case is DelayCase.A and not (-1 <= p < 0):
        raise CaseParameterError(f"p out of range for case: case A requires -1 <= p < 0, got {p}")
    if case is DelayCase.C and not p >= 0:
        raise CaseParameterError(f"p out of range for case: case C requires p >= 0, got {p}")


@dataclass(frozen=True)
class DelayUncertainty:
    """Uncertainty radius ``mu`` and delay-derivative class.

    ``p`` is the derivative parameter (``tau' <= 1 + p``); case B carries
    ``p = INF``. Use :meth:`check_system` to enforce ``mu <= h``.
    """

    mu: float
    case: DelayCase
    p: ExtendedReal = INF

    def __post_init__(self):
        case = DelayCase(self.case)
        object.__setattr__(self, "case", case)
        mu = float(self.mu)
        if not (math.isfinite(mu) and mu >= 0):
            raise InvalidInput(f"mu must be a nonnegative real, got {self.mu!r}")
        object.__setattr__(self, "mu", mu)
        p = self.p
        if isinstance(p, float) and math.isinf(p) and p > 0:
            p = INF
        if isinstance(p, str) and p.lower() == "inf":
            p = INF
        object.__setattr__(self, "p", p)
        _check_case_p(case, p)

    @property
    def d(self):
        """Upper bound on the delay derivative, or ``None`` for case B."""
        return None if self.p is INF else 1 + self.p

    def check_system(self, system: LtiDelaySystem) -> None:
        if self.mu > system.h:
            raise MuExceedsH(f"mu exceeds h: mu={self.mu} > h={system.h}")

    def with_mu(self, mu: float) -> "DelayUncertainty":
        return DelayUncertainty(mu, self.case, self.p)


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled vector signal; ``samples`` has shape ``(N, m)``."""

    dt: float
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise InvalidInput("a signal needs at least 2 samples")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidInput(f"dt must be positive, got {self.dt!r}")
        object.__setattr__(self, "samples", _frozen(arr))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self) - 1)

    def scaled(self, c: float) -> "Signal":
        return Signal(self.dt, c * self.samples, self.t0)


def l2_norm_sq(s: Signal) -> float:
    """Trapezoidal approximation of the squared L2 norm over the horizon."""
    if s is None or len(s.samples) == 0:
        raise InvalidInput("empty signal")
    e = np.einsum("ij,ij->i", s.samples, s.samples)
    return float(s.dt * (e.sum() - 0.5 * (e[0] + e[-1])))


SEGMENT_KINDS = ("constant", "linear", "sine")


@dataclass(frozen=True)
class Segment:
    """One piece of a delay trajectory.

    ``constant``: ``params = (value,)``.
    ``linear``: ``params = (value_at_start, value_at_end)``.
    ``sine``: ``params = (offset, amplitude, omega, phase)`` giving
    ``offset + amplitude*sin(omega*t + phase)`` in absolute time.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise InvalidInput(f"unknown segment kind {self.kind!r}")
        need = {"constant": 1, "linear": 2, "sine": 4}[self.kind]
        if len(self.params) != need:
            raise InvalidInput(f"{self.kind} segment needs {need} parameters")
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))

    def value(self, t, a, b):
        if self.kind == "constant":
            return np.full_like(t, self.params[0])
        if self.kind == "linear":
            v0, v1 = self.params
            return v0 + (v1 - v0) * (t - a) / (b - a)
        off, amp, om, ph = self.params
        return off + amp * np.sin(om * t + ph)

    def slope(self, t, a, b):
        if self.kind == "constant":
            return np.zeros_like(t)
        if self.kind == "linear":
            v0, v1 = self.params
            return np.full_like(t, (v1 - v0) / (b - a))
        _, amp, om, ph = self.params
        return amp * om * np.cos(om * t + ph)

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}


@dataclass(frozen=True)
class DelayTrajectory:
    """Piecewise-analytic delay perturbation ``eta(t)`` on ``[0, T]``.

    Segment ``i`` covers ``[breakpoints[i], breakpoints[i+1])``. Outside the
    horizon ``eta`` is held at its boundary values, so ``tau(t)`` is defined
    for every simulated time. Admissibility is checked on construction.
    """

    breakpoints: tuple
    segments: tuple
    declared_mu: float
    declared_case: DelayCase
    declared_p: ExtendedReal = INF
    label: str = ""
    tol_slope: float = 1e-6
    check_dt: float | None = field(default=None, compare=False)

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        segs = tuple(self.segments)
        if len(bp) != len(segs) + 1 or len(segs) < 1:
            raise InvalidInput("need len(breakpoints) == len(segments) + 1 >= 2")
        if bp[0] != 0.0 or any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise InvalidInput("breakpoints must start at 0 and increase strictly")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "declared_case", DelayCase(self.declared_case))
        object.__setattr__(self, "declared_mu", float(self.declared_mu))
        p = self.declared_p
        if isinstance(p, float) and math.isinf(p):
            p = INF
        object.__setattr__(self, "declared_p", p)
        _check_case_p(self.declared_case, p)
        self._validate()

    @property
    def T(self) -> float:
        return self.breakpoints[-1]

    @property
    def d(self):
        return None if self.declared_p is INF else 1 + self.declared_p

    def _locate(self, t):
        bp = np.asarray(self.breakpoints)
        tc = np.clip(t, 0.0, self.T)
        idx = np.clip(np.searchsorted(bp, tc, side="right") - 1, 0, len(self.segments) - 1)
        return tc, idx

    def eta(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tc, idx = self._locate(t)
        out = np.empty_like(tc)
        bp = self.breakpoints
        for i, seg in enumerate(self.segments):
            sel = idx == i
            if np.any(sel):
                out[sel] = seg.value(tc[sel], bp[i], bp[i + 1])
        return out

    def eta_dot(self, t) -> np.ndarray:
        """Segment-interior derivative (right derivative at breakpoints)."""
        t = np.asarray(t, dtype=float)
        tc, idx = self._locate(t)
        out = np.empty_like(tc)
        bp = self.breakpoints
        for i, seg in enumerate(self.segments):
            sel = idx == i
            if np.any(sel):
                out[sel] = seg.slope(tc[sel], bp[i], bp[i + 1])
        out[(t < 0) | (t > self.T)] = 0.0
        return out

    def tau(self, t, h: float) -> np.ndarray:
        return h + self.eta(t)

    def _validate(self):
        dt = self.check_dt or min(1e-3, self.T / 2000)
        grid = np.linspace(0.0, self.T, max(int(math.ceil(self.T / dt)) + 1, 2001))
        grid = np.union1d(grid, np.asarray(self.breakpoints))
        vals = self.eta(grid)
        mu = self.declared_mu
        if np.max(np.abs(vals)) > mu * (1 + 1e-12) + 1e-12:
            raise InadmissibleTrajectory(
                f"|eta| reaches {np.max(np.abs(vals)):.6g} > declared mu={mu}")
        d = self.d
        if d is None:
            return
        quot = np.diff(vals) / np.diff(grid)
        slope_tol = self.tol_slope * max(1.0, float(d))
        if np.max(quot) > float(d) + slope_tol:
            k = int(np.argmax(quot))
            raise InadmissibleTrajectory(
                f"difference quotient {quot[k]:.6g} near t={grid[k]:.6g} exceeds d={float(d)}")
        interior = self.eta_dot(grid[:-1])
        if np.max(interior) > float(d) + slope_tol:
            raise InadmissibleTrajectory(f"segment slope {np.max(interior):.6g} exceeds d={float(d)}")

    def sample(self, dt: float) -> np.ndarray:
        n = int(round(self.T / dt)) + 1
        return self.eta(dt * np.arange(n))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "breakpoints": list(self.breakpoints),
            "segments": [s.to_dict() for s in self.segments],
            "mu": self.declared_mu,
            "case": self.declared_case.value,
            "p": _p_to_json(self.declared_p),
        }

    @classmethod
    def constant(cls, value, T, mu, case=DelayCase.C, p=0, label="constant"):
        if DelayCase(case) is DelayCase.B:
            p = INF
        return cls((0.0, T), (Segment("constant", (value,)),), mu, case, p, label)


def _p_to_json(p):
    if p is INF:
        return "inf"
    if isinstance(p, Fraction):
        return float(p)
    return p


# -- system documents ----------------------------------------------------

_KEYS = {"A0", "A1", "h", "mu", "case", "p"}


def _real(doc, key):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"field {key!r} must be a real number, got {v!r}")
    if not math.isfinite(v):
        raise SchemaError(f"field {key!r} must be finite")
    return v


def _matrix_field(doc, key):
    v = doc[key]
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise SchemaError(f"field {key!r} must be a non-empty list of rows")
    for row in v:
        for x in row:
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise SchemaError(f"field {key!r} contains a non-numeric entry {x!r}")
    widths = {len(r) for r in v}
    if len(widths) != 1:
        raise DimensionMismatch(f"field {key!r} has ragged rows")
    return as_matrix(v, key)


def parse_system(document: Union[str, bytes, Mapping[str, Any]]):
    """Parse and validate a system document.

    Parameters
    ----------
    document : str, bytes or mapping
        JSON text (UTF-8) or an already-decoded mapping with keys
        ``A0, A1, h, mu, case`` and ``p`` (required for cases A and C,
        forbidden for case B).

    Returns
    -------
    (LtiDelaySystem, DelayUncertainty)
    """
    if isinstance(document, (bytes, bytearray)):
        document = document.decode("utf-8")
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        raise SchemaError("system document must be a JSON object")
    unknown = set(doc) - _KEYS
    if unknown:
        raise SchemaError(f"unknown fields: {sorted(unknown)}")
    missing = {"A0", "A1", "h", "mu", "case"} - set(doc)
    if missing:
        raise SchemaError(f"missing fields: {sorted(missing)}")
    A0 = _matrix_field(doc, "A0")
    A1 = _matrix_field(doc, "A1")
    if A0.shape != A1.shape:
        raise DimensionMismatch(f"dimension mismatch: A0 is {A0.shape}, A1 is {A1.shape}")
    h = _real(doc, "h")
    if h <= 0:
        raise InvalidInput(f"h must be positive, got {h}")
    mu = _real(doc, "mu")
    if mu < 0:
        raise InvalidInput(f"mu must be nonnegative, got {mu}")
    if mu > h:
        raise MuExceedsH(f"mu exceeds h: mu={mu} > h={h}")
    case = doc["case"]
    if case not in ("A", "B", "C"):
        raise SchemaError(f"field 'case' must be one of A, B, C, got {case!r}")
    case = DelayCase(case)
    if case is DelayCase.B:
        if "p" in doc:
            raise CaseParameterError("field 'p' is forbidden for case B")
        p = INF
    else:
        if "p" not in doc:
            raise CaseParameterError(f"field 'p' is required for case {case.value}")
        if doc["p"] == "inf":
            raise CaseParameterError("p out of range for case: p = inf only for case B")
        p = _real(doc, "p")
    unc = DelayUncertainty(mu, case, p)
    return LtiDelaySystem(A0, A1, h), unc


def serialize_system(system: LtiDelaySystem, unc: DelayUncertainty) -> str:
    doc = {
        "A0": system.A0.tolist(),
        "A1": system.A1.tolist(),
        "h": system.h,
        "mu": unc.mu,
        "case": unc.case.value,
    }
    if unc.case is not DelayCase.B:
        doc["p"] = _p_to_json(unc.p)
    return json.dumps(doc)


def load_system(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_system(fh.read())


def example_system(mu: float = 0.2, case: str = "C", p: ExtendedReal = 0):
    """The two-state benchmark plant with ``h = 1`` used throughout the docs."""
    sys_ = LtiDelaySystem([[0.0, 1.0], [-1.0, -2.0]], [[0.0, 0.0], [-1.0, 1.0]], 1.0)
    return sys_, DelayUncertainty(mu, DelayCase(case), INF if case == "B" else p)


def case_for_d(d) -> tuple[DelayCase, ExtendedReal]:
    """Map a derivative bound ``d = 1 + p`` (``inf`` for no bound) to ``(case, p)``."""
    if d is INF or (isinstance(d, str) and d.lower() == "inf"):
        return DelayCase.B, INF
    d = float(d)
    if math.isinf(d) and d > 0:
        return DelayCase.B, INF
    if not math.isfinite(d) or d < 0:
        raise CaseParameterError(f"d must be a nonnegative real or inf, got {d!r}")
    p = Fraction(repr(d)) - 1
    return (DelayCase.A if p < 0 else DelayCase.C), p
