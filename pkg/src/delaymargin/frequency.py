"""Frequency-domain analysis: nominal stability, G(s), H-infinity norm, margins."""

from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bounds import f_of_p
from .core import INF, DelayCase, DelayUncertainty, InvalidInput, LtiDelaySystem

__all__ = [
    "SingularityError", "StabilityResult", "FrequencySweep", "ScalingMatrix",
    "SmallGainResult", "char_matrix", "nominal_stable", "transfer_G",
    "hinf_norm", "k_margin", "freq_margin", "scaled_freq_margin",
    "small_gain_check", "PRIOR_MULTIPLIER",
]

# 1/sqrt(2): margin multiplier from the derivative-independent bound F = 2.
PRIOR_MULTIPLIER = 1.0 / math.sqrt(2.0)


class SingularityError(ArithmeticError):
    """The characteristic matrix is singular on the imaginary axis."""

    def __init__(self, omega):
        super().__init__(f"characteristic matrix singular at omega={omega:.12g}: "
                         "root on the imaginary axis, nominal system not asymptotically stable")
        self.omega = omega


def char_matrix(s, sys: LtiDelaySystem) -> np.ndarray:
    """``s I - A0 - A1 exp(-h s)``; vectorized over an array of ``s``."""
    s = np.asarray(s, dtype=complex)
    eye = np.eye(sys.n)
    return (s[..., None, None] * eye - sys.A0
            - np.exp(-sys.h * s)[..., None, None] * sys.A1)


# -- nominal stability ----------------------------------------------------------

def _cheb(N):
    """Chebyshev differentiation matrix and nodes on [-1, 1] (Trefethen)."""
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D = D - np.diag(D.sum(axis=1))
    return D, x


def _generator_eigs(sys: LtiDelaySystem, N: int) -> np.ndarray:
    """Eigenvalues of the collocated infinitesimal generator on [-h, 0]."""
    n = sys.n
    D, _ = _cheb(N)
    D = D * (2.0 / sys.h)  # theta = h (x - 1) / 2
    A = np.zeros((n * (N + 1), n * (N + 1)))
    A[n:, :] = np.kron(D[1:], np.eye(n))
    A[:n, :n] = sys.A0
    A[:n, n * N:] += sys.A1
    return np.linalg.eigvals(A)


def _newton(sys, s0, maxit=60, tol=1e-13):
    s = complex(s0)
    eye = np.eye(sys.n)
    for _ in range(maxit):
        M = char_matrix(s, sys)
        dM = eye + sys.h * np.exp(-sys.h * s) * sys.A1
        try:
            step = 1.0 / np.trace(np.linalg.solve(M, dM))
        except np.linalg.LinAlgError:
            return s, True  # exact root
        s -= step
        if not np.isfinite(s):
            return s0, False
        if abs(step) <= tol * max(1.0, abs(s)):
            return s, True
    return s, False


@dataclass(frozen=True)
class StabilityResult:
    stable: bool
    rightmost: complex
    refined: bool
    nodes: int

    def __iter__(self):
        yield self.stable
        yield self.rightmost


def nominal_stable(sys: LtiDelaySystem, tol_stab: float = 1e-9, n_nodes: int = 20,
                   max_nodes: int = 320, n_refine: int = 6) -> StabilityResult:
    """Rightmost characteristic root of the constant-delay system.

    The generator is collocated on Chebyshev nodes, the node count doubled
    until the rightmost estimate moves by less than 1e-8, and the leading
    candidates refined with Newton's method on ``det(char_matrix(s))``.
    Unpacks as ``(stable, rightmost)``.
    """
    N = n_nodes
    prev = None
    while True:
        eigs = _generator_eigs(sys, N)
        eigs = eigs[np.isfinite(eigs)]
        est = eigs[np.argmax(eigs.real)]
        if prev is not None and abs(est - prev) < 1e-8 * max(1.0, abs(est)):
            break
        if N >= max_nodes:
            break
        prev = est
        N *= 2
    order = np.argsort(-eigs.real)
    refined = []
    seen = []
    for lam in eigs[order[: 3 * n_refine]]:
        if lam.imag < -1e-9:
            continue  # conjugate of one already considered
        root, ok = _newton(sys, lam)
        if ok and abs(root - lam) < 0.1 * max(1.0, abs(lam)):
            if not any(abs(root - r) < 1e-8 * max(1.0, abs(r)) for r in seen):
                seen.append(root)
                refined.append(root)
        if len(refined) >= n_refine:
            break
    if refined:
        best = max(refined, key=lambda r: r.real)
        ok = True
    else:
        warnings.warn("Newton refinement did not converge; reporting the collocation estimate")
        best, ok = complex(est), False
    if abs(best.imag) < 1e-12:
        best = complex(best.real, 0.0)
    elif best.imag < 0:
        best = best.conjugate()
    return StabilityResult(bool(best.real < -tol_stab), complex(best), ok, N)


# -- transfer function and H-infinity norm ------------------------------------

def _singular_check(M, omegas, sys):
    det = np.abs(np.linalg.det(M))
    scale = (np.abs(omegas) + np.linalg.norm(sys.A0, 2) + np.linalg.norm(sys.A1, 2) + 1.0) ** sys.n
    bad = det < 1e-12 * scale
    if np.any(bad):
        raise SingularityError(float(np.asarray(omegas)[bad][0]))


def transfer_G(omega, sys: LtiDelaySystem, unc: DelayUncertainty, f) -> np.ndarray:
    """``sqrt(f) * (i w) * char_matrix(i w)^{-1} * mu * A1``."""
    om = np.asarray(omega, dtype=float)
    s = 1j * om
    M = char_matrix(s, sys)
    _singular_check(M, np.atleast_1d(om), sys)
    rhs = np.broadcast_to(unc.mu * sys.A1.astype(complex), M.shape)
    G = math.sqrt(float(f)) * s[..., None, None] * np.linalg.solve(M, rhs)
    return G


class ScalingKind(str, enum.Enum):
    identity = "identity"
    diagonal = "diagonal"
    general = "general"


@dataclass(frozen=True)
class ScalingMatrix:
    """Similarity ``G -> X G X^{-1}``; nonsingular, finite condition number."""

    X: np.ndarray
    kind: ScalingKind = ScalingKind.general

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise InvalidInput("scaling must be square")
        cond = np.linalg.cond(X)
        if not np.isfinite(cond) or cond > 1e14:
            raise InvalidInput("scaling matrix is singular")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "kind", ScalingKind(self.kind))

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), ScalingKind.identity)

    @classmethod
    def diagonal(cls, d):
        return cls(np.diag(np.asarray(d, dtype=float)), ScalingKind.diagonal)

    @property
    def inv(self):
        return np.linalg.inv(self.X)


@dataclass
class FrequencySweep:
    omegas: np.ndarray
    gains: np.ndarray
    refined: bool
    asymptote: float
    peak_omega: float = float("nan")
    norm: float = float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["omega", "gain"])
        for om, g in zip(self.omegas, self.gains):
            w.writerow([repr(float(om)), repr(float(g))])
        return buf.getvalue()


def _gains(omegas, sys, mu, f, X, Xi):
    s = 1j * np.asarray(omegas, dtype=float)
    M = char_matrix(s, sys)
    _singular_check(M, omegas, sys)
    rhs = np.broadcast_to((mu * sys.A1).astype(complex), M.shape)
    G = math.sqrt(float(f)) * s[:, None, None] * np.linalg.solve(M, rhs)
    G = X @ G @ Xi
    return np.linalg.norm(G, ord=2, axis=(1, 2))


def _seed_grid(sys, density=1.0, grid_points=400):
    scale = np.linalg.norm(sys.A0, 2) + np.linalg.norm(sys.A1, 2) + 1.0 / sys.h
    w_max = 100.0 * scale
    n_log = int(math.ceil(grid_points * density))
    logs = np.logspace(math.log10(w_max) - 8, math.log10(w_max), n_log)
    # the delay factor oscillates with period 2 pi / h in omega
    spacing = math.pi / (4.0 * sys.h) / density
    n_lin = min(int(math.ceil(w_max / spacing)), int(8000 * density))
    lin = np.linspace(0.0, w_max, n_lin + 1)[1:]
    return np.union1d(logs, lin), w_max


def _golden_refine(func, lo, hi, rel_tol=1e-4):
    """Vectorized golden-section maximization on independent brackets."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = func(c), func(d)
    xs, fs = [c, d], [fc, fd]
    while np.any(b - a > rel_tol * np.maximum(np.abs(a + b) / 2, 1e-300)):
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - invphi * (b - a)
        new_d = a + invphi * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        probe = np.where(left, c_next, d_next)
        fp = func(probe)
        fc_next = np.where(left, fp, fd)
        fd_next = np.where(left, fc, fp)
        c, d, fc, fd = c_next, d_next, fc_next, fd_next
        xs.append(probe)
        fs.append(fp)
    return np.concatenate(xs), np.concatenate(fs)


def hinf_norm(sys: LtiDelaySystem, unc: DelayUncertainty, f, scaling: ScalingMatrix | None = None,
              density: float = 1.0, grid_points: int = 400, peak_fraction: float = 0.9):
    """H-infinity norm of ``X G X^{-1}`` by adaptive frequency sweep.

    A log-spaced seed grid (plus a linear grid resolving the ``exp(-i w h)``
    ripple) up to ``100 (|A0| + |A1| + 1/h)`` is scanned, every local maximum
    within ``peak_fraction`` of the largest sampled gain is refined by golden
    section to 1e-4 relative bracket width, and the result is combined with
    the high-frequency limit ``sqrt(f) mu |X A1 X^{-1}|``.

    Returns
    -------
    (norm, FrequencySweep)
    """
    n = sys.n
    if scaling is None:
        scaling = ScalingMatrix.identity(n)
    X, Xi = scaling.X, scaling.inv
    mu = unc.mu
    asym = math.sqrt(float(f)) * mu * float(np.linalg.norm(X @ sys.A1 @ Xi, 2))
    omegas, _ = _seed_grid(sys, density, grid_points)
    if mu == 0.0 or not np.any(sys.A1):
        gains = np.zeros_like(omegas)
        return 0.0, FrequencySweep(omegas, gains, False, 0.0, 0.0, 0.0)
    gains = _gains(omegas, sys, mu, f, X, Xi)
    interior = np.r_[False, (gains[1:-1] >= gains[:-2]) & (gains[1:-1] >= gains[2:]), False]
    peaks = np.flatnonzero(interior & (gains >= peak_fraction * gains.max()))
    refined = False
    if peaks.size:
        lo, hi = omegas[peaks - 1], omegas[peaks + 1]
        xs, fs = _golden_refine(lambda w: _gains(w, sys, mu, f, X, Xi), lo, hi)
        omegas = np.concatenate([omegas, xs])
        gains = np.concatenate([gains, fs])
        omegas, idx = np.unique(omegas, return_index=True)
        gains = gains[idx]
        refined = True
    k = int(np.argmax(gains))
    norm = max(float(gains[k]), asym)
    peak = float(omegas[k]) if gains[k] >= asym else float("inf")
    return norm, FrequencySweep(omegas, gains, refined, asym, peak, norm)


def k_margin(sys: LtiDelaySystem, **kw) -> float:
    """``1 / || s (sI - A0 - A1 e^{-hs})^{-1} A1 ||_inf``; ``inf`` when A1 = 0."""
    unit = DelayUncertainty(1.0, DelayCase.B, INF)
    norm, _ = hinf_norm(sys, unit, 1, None, **kw)
    return math.inf if norm == 0.0 else 1.0 / norm


def freq_margin(sys: LtiDelaySystem, case, p=INF, k: float | None = None) -> float:
    """Largest admissible ``mu`` from the unscaled small-gain test: ``k / sqrt(F(p))``."""
    case = DelayCase(case)
    F = f_of_p(INF if case is DelayCase.B else p)
    k = k_margin(sys) if k is None else k
    return k / math.sqrt(float(F))


@dataclass
class SmallGainResult:
    stable: bool
    best_norm: float
    X: ScalingMatrix
    iterations: int = 0
    note: str = ""


def _diag_search(sys, unc, F, max_outer=50, tol=1e-4):
    from scipy.optimize import minimize_scalar

    n = sys.n
    v = np.zeros(n)

    def norm_at(vec):
        return hinf_norm(sys, unc, F, ScalingMatrix.diagonal(np.exp(vec)))[0]

    best = norm_at(v)
    it = 0
    for it in range(1, max_outer + 1):
        start = best
        for i in range(1, n):  # the first entry fixes the overall scale
            def obj(x, i=i):
                w = v.copy()
                w[i] = x
                return norm_at(w)
            res = minimize_scalar(obj, bounds=(v[i] - 8.0, v[i] + 8.0), method="bounded",
                                  options={"xatol": 1e-5})
            if res.fun < best:
                best = float(res.fun)
                v[i] = res.x
        if start - best < tol * max(start, 1e-300):
            break
    return best, ScalingMatrix.diagonal(np.exp(v)), it


def small_gain_check(sys: LtiDelaySystem, unc: DelayUncertainty, scaling_search="identity") -> SmallGainResult:
    """Scaled small-gain test. ``True`` certifies stability; ``False`` is inconclusive."""
    F = f_of_p(unc.p)
    unc.check_system(sys)
    if scaling_search == "identity":
        norm, _ = hinf_norm(sys, unc, F)
        X = ScalingMatrix.identity(sys.n)
        it = 0
    elif scaling_search == "diagonal":
        norm, X, it = _diag_search(sys, unc, F)
    else:
        raise InvalidInput(f"unknown scaling search {scaling_search!r}")
    note = "" if norm < 1 else "sufficient condition not met (inconclusive)"
    return SmallGainResult(bool(norm < 1), float(norm), X, it, note)


def scaled_freq_margin(sys: LtiDelaySystem, case, p=INF) -> tuple[float, ScalingMatrix]:
    """Margin with the best diagonal scaling; ``G`` is linear in ``mu``."""
    case = DelayCase(case)
    unit = DelayUncertainty(1.0, DelayCase.B, INF)
    norm1, X, _ = _diag_search(sys, unit, 1)
    F = f_of_p(INF if case is DelayCase.B else p)
    margin = math.inf if norm1 == 0 else 1.0 / (norm1 * math.sqrt(float(F)))
    return margin, X
