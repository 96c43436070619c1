"""Delay-dependent LMI stability test and margin bisection.

The LMI is stated over the descriptor variables ``P = [[P1, 0], [P2, P3]]``,
``Y = [Y1, Y2]``, ``S``, ``T``, ``R`` and ``Ra``. All constraints are linear
in the decision vector, so a problem is stored as an affine basis
``C + sum_k x_k B_k`` per block and solved by minimizing a smoothed maximum
eigenvalue with L-BFGS-B.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .bounds import f_of_p
from .core import INF, DelayCase, DimensionMismatch, InvalidInput, LtiDelaySystem, case_for_d

__all__ = [
    "VARIABLE_ORDER", "LmiVariables", "LmiBlock", "LmiProblem", "Verdict",
    "FeasibilityCertificate", "MarginResult", "assemble_lmi", "build_problem",
    "feasibility_solve", "mu_max_bisect", "table1", "TABLE1_REFERENCE", "table1_csv",
    "EPS0", "FEAS_TOL",
]

EPS0 = 1e-6
FEAS_TOL = -1e-7
TEMPERATURES = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)

# (name, symmetric); symmetric blocks contribute their upper triangle, row-major
VARIABLE_ORDER = (
    ("P1", True), ("P2", False), ("P3", False), ("S", True), ("Y1", False),
    ("Y2", False), ("T", False), ("R", True), ("Ra", True),
)
_SYM = dict(VARIABLE_ORDER)

TABLE1_REFERENCE = ((1.0, 0.384), (1.1, 0.367), (1.5, 0.331), (2.0, 0.313), (math.inf, 0.289))


def _slots(n):
    out = []
    for name, sym in VARIABLE_ORDER:
        for i in range(n):
            for j in range(i if sym else 0, n):
                out.append((name, i, j))
    return out


@dataclass
class LmiVariables:
    """Decision matrices, packed as ``P1, P2, P3, S, Y1, Y2, T, R, Ra``.

    Symmetric matrices (P1, S, R, Ra) contribute only their upper triangle.
    """

    P1: np.ndarray
    P2: np.ndarray
    P3: np.ndarray
    S: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    T: np.ndarray
    R: np.ndarray
    Ra: np.ndarray

    @property
    def n(self) -> int:
        return np.asarray(self.P1).shape[0]

    @staticmethod
    def size(n: int) -> int:
        return 5 * n * n + 4 * n * (n + 1) // 2

    def pack(self) -> np.ndarray:
        n = self.n
        out = []
        for name, i, j in _slots(n):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.shape != (n, n):
                raise DimensionMismatch(f"dimension mismatch: {name} has shape {M.shape}")
            out.append(M[i, j])
        return np.array(out)

    @classmethod
    def unpack(cls, x, n: int) -> "LmiVariables":
        x = np.asarray(x, dtype=float)
        if x.shape != (cls.size(n),):
            raise DimensionMismatch(f"dimension mismatch: expected {cls.size(n)} entries, got {x.shape}")
        mats = {name: np.zeros((n, n)) for name, _ in VARIABLE_ORDER}
        for v, (name, i, j) in zip(x, _slots(n)):
            mats[name][i, j] = v
            if _SYM[name]:
                mats[name][j, i] = v
        return cls(**mats)

    def to_dict(self):
        return {name: np.asarray(getattr(self, name)).tolist() for name, _ in VARIABLE_ORDER}


class Form(str, enum.Enum):
    corrected = "corrected"
    typeset = "typeset"


def assemble_lmi(sys: LtiDelaySystem, mu: float, f, vars: LmiVariables, form="corrected"):
    """Assemble the ``6n x 6n`` stability LMI and the three side constraints.

    Returns ``(M, positives)`` where ``M`` must be negative definite and each
    of ``positives = [P1, S, Ra]`` positive definite. The ``mu`` column
    ``[mu P2' A1; mu P3' A1; 0; 0]`` and the ``f Ra`` column (aligned with the
    second half of the ``Psi`` block) are appended against the diagonal
    blocks ``-Ra`` and ``-f Ra``.

    ``form="typeset"`` uses the sign pattern ``-hT`` in the off-diagonal
    ``Gamma`` entries and ``-mu Ra`` on the diagonal. That pattern admits
    certificates beyond the exact constant-delay margin of scalar plants, so
    it is kept only for comparison.
    """
    form = Form(form)
    n = sys.n
    if vars.n != n:
        raise DimensionMismatch(f"dimension mismatch: variables are {vars.n}x{vars.n}, system is {n}x{n}")
    f = float(f)
    h = sys.h
    A0, A1 = sys.A0, sys.A1
    Z, I = np.zeros((n, n)), np.eye(n)
    P = np.block([[vars.P1, Z], [vars.P2, vars.P3]])
    Y = np.hstack([vars.Y1, vars.Y2])
    M1 = np.block([[Z, I], [A0, -I]])
    Yb = np.vstack([Y, np.zeros((n, 2 * n))])
    Psi = P.T @ M1 + M1.T @ P + np.block([[vars.S, Z], [Z, h * vars.R]]) + Yb + Yb.T
    c12 = P.T @ np.vstack([Z, A1]) - Y.T + np.vstack([vars.T, Z])
    hT = h * vars.T if form is Form.corrected else -h * vars.T
    Gamma = np.block([
        [Psi, c12, h * Y.T],
        [c12.T, -vars.S - vars.T - vars.T.T, hT.T if form is Form.corrected else hT],
        [h * Y, hT if form is Form.corrected else hT.T, -h * vars.R],
    ])
    c5 = np.vstack([mu * vars.P2.T @ A1, mu * vars.P3.T @ A1, Z, Z])
    c6 = np.vstack([Z, f * vars.Ra, Z, Z])
    ra_diag = -vars.Ra if form is Form.corrected else -mu * vars.Ra
    M = np.block([
        [Gamma, c5, c6],
        [c5.T, ra_diag, Z],
        [c6.T, Z, -f * vars.Ra],
    ])
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    scale = max(1.0, float(np.max(np.abs(M))))
    if form is Form.corrected:
        assert asym < 1e-12 * scale, f"asymmetric LMI block: {asym}"
    M = (M + M.T) / 2
    return M, [np.asarray(vars.P1, float), np.asarray(vars.S, float), np.asarray(vars.Ra, float)]


@dataclass
class LmiBlock:
    """Affine symmetric block ``const + sum_k x_k coeffs[k]``.

    ``kind="neg"`` requires ``<= t I``; ``kind="pos"`` requires ``>= (EPS0 - t) I``.
    """

    name: str
    const: np.ndarray
    coeffs: np.ndarray
    kind: str = "neg"

    def __post_init__(self):
        self.const = np.atleast_2d(np.asarray(self.const, dtype=float))
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, *self.const.shape)
        if self.kind not in ("neg", "pos"):
            raise InvalidInput(f"block kind must be 'neg' or 'pos', got {self.kind!r}")

    def value(self, x):
        return self.const + np.tensordot(x, self.coeffs, 1)

    def oriented(self):
        """``(C, B)`` with the block rewritten as a required-``<= t I`` matrix."""
        if self.kind == "neg":
            return self.const, self.coeffs
        m = self.const.shape[0]
        return EPS0 * np.eye(m) - self.const, -self.coeffs


@dataclass
class LmiProblem:
    """List of affine blocks over ``n_vars`` decision variables.

    ``box`` bounds every decision variable in absolute value; for the
    homogeneous stability LMI it only fixes the scale of the solution.
    """

    blocks: list
    n_vars: int
    box: float | None = 1.0
    params: dict = field(default_factory=dict)
    n: int | None = None

    def __post_init__(self):
        C, B = [], []
        for blk in self.blocks:
            if blk.coeffs.shape[0] != self.n_vars:
                raise DimensionMismatch(f"dimension mismatch in block {blk.name}")
            c, b = blk.oriented()
            C.append(c)
            B.append(b)
        self._oriented = list(zip(C, B))

    def block_values(self, x):
        return [blk.value(x) for blk in self.blocks]

    def margin(self, x) -> float:
        """``t(x)``: largest violation over all blocks (negative means strictly feasible)."""
        return max(float(np.linalg.eigvalsh(C + np.tensordot(x, B, 1))[-1]) for C, B in self._oriented)

    def smoothed(self, x, temp):
        """Log-sum-exp of all oriented eigenvalues and its gradient."""
        eigs = []
        for C, B in self._oriented:
            w, V = np.linalg.eigh(C + np.tensordot(x, B, 1))
            eigs.append((w, V, B))
        top = max(w[-1] for w, _, _ in eigs)
        total = sum(np.exp((w - top) / temp).sum() for w, _, _ in eigs)
        grad = np.zeros(self.n_vars)
        for w, V, B in eigs:
            pw = np.exp((w - top) / temp) / total
            W = (V * pw) @ V.T
            grad += np.einsum("kij,ij->k", B, W)
        return top + temp * math.log(total), grad


def build_problem(sys: LtiDelaySystem, mu: float, f, form="corrected", box: float = 1.0) -> LmiProblem:
    """Affine basis of the LMI at fixed ``(mu, f)``; the constant term is zero."""
    n = sys.n
    N = LmiVariables.size(n)
    basis = []
    for k in range(N):
        e = np.zeros(N)
        e[k] = 1.0
        M, pos = assemble_lmi(sys, mu, f, LmiVariables.unpack(e, n), form)
        basis.append([M] + pos)
    blocks = [LmiBlock("lmi", np.zeros_like(basis[0][0]), np.array([b[0] for b in basis]), "neg")]
    for idx, name in enumerate(("P1", "S", "Ra"), start=1):
        blocks.append(LmiBlock(name, np.zeros((n, n)), np.array([b[idx] for b in basis]), "pos"))
    params = {"mu": float(mu), "F": float(f), "h": sys.h, "form": Form(form).value,
              "alignment": "f*Ra in second half of Psi rows"}
    return LmiProblem(blocks, N, box, params, n)


class Verdict(str, enum.Enum):
    feasible = "feasible"
    infeasible = "infeasible"
    inconclusive = "inconclusive"


@dataclass
class FeasibilityCertificate:
    verdict: Verdict
    margin: float
    x: np.ndarray
    iterations: int
    starts: int = 1
    variables: LmiVariables | None = None

    @property
    def feasible(self) -> bool:
        return self.verdict is Verdict.feasible

    def replay(self, problem: LmiProblem) -> float:
        """Absolute difference between the stored and recomputed margin."""
        return abs(problem.margin(self.x) - self.margin)


def _descend(problem, x, max_iters, stop_when_feasible):
    bounds = None if problem.box is None else [(-problem.box, problem.box)] * problem.n_vars
    iters = 0
    status = 0
    best_x, best_t = x, problem.margin(x)
    for temp in TEMPERATURES:
        res = minimize(problem.smoothed, x, args=(temp,), jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": max_iters, "ftol": 1e-15, "gtol": 1e-12})
        iters += int(res.nit)
        x = res.x
        status = int(res.status)
        t = problem.margin(x)
        if t < best_t:
            best_x, best_t = x, t
        if stop_when_feasible and best_t < FEAS_TOL:
            break
    return best_x, best_t, iters, status == 1


def feasibility_solve(problem: LmiProblem, max_iters: int = 1000, seed: int = 0,
                      x0=None, n_starts: int = 5, stop_when_feasible: bool = True,
                      band: float = 1e-5) -> FeasibilityCertificate:
    """Minimize the largest oriented eigenvalue ``t`` over the decision vector.

    Each start runs L-BFGS-B through a decreasing temperature schedule with
    at most ``max_iters`` iterations per stage. Strict feasibility is
    declared when ``t < -1e-7``. Otherwise ``n_starts`` random starts (plus
    the warm start ``x0``) are exhausted; the verdict is ``inconclusive``
    when the best start stopped on the iteration limit with ``t`` still
    within ``band`` of the threshold, and ``infeasible`` otherwise.
    """
    rng = np.random.default_rng(seed)
    scale = 0.5 if problem.box is None else 0.5 * problem.box
    starts = []
    if x0 is not None:
        starts.append(np.asarray(x0, dtype=float))
    starts += [rng.uniform(-scale, scale, problem.n_vars) for _ in range(max(n_starts, 1))]
    total = 0
    best = None
    used = 0
    for x in starts:
        xs, t, it, hit = _descend(problem, x, max_iters, stop_when_feasible)
        total += it
        used += 1
        if best is None or t < best[1]:
            best = (xs, t, hit)
        if best[1] < FEAS_TOL and stop_when_feasible:
            break
    xs, t, hit = best
    if t < FEAS_TOL:
        verdict = Verdict.feasible
    elif hit and t < FEAS_TOL + band:
        verdict = Verdict.inconclusive
    else:
        verdict = Verdict.infeasible
    variables = LmiVariables.unpack(xs, problem.n) if problem.n is not None else None
    return FeasibilityCertificate(verdict, float(t), xs, total, used, variables)


@dataclass
class MarginResult:
    mu_max: float
    d: float
    F: float
    tol: float
    steps: int
    inconclusive: int
    certificate: FeasibilityCertificate | None
    history: list = field(default_factory=list)
    form: str = "corrected"

    def to_dict(self):
        cert = self.certificate
        return {
            "method": "lmi",
            "d": "inf" if math.isinf(self.d) else self.d,
            "F": self.F,
            "mu_max": self.mu_max,
            "tol": self.tol,
            "bisection_steps": self.steps,
            "inconclusive_verdicts": self.inconclusive,
            "form": self.form,
            "alignment": "f*Ra in second half of Psi rows",
            "solver": {
                "iterations": None if cert is None else cert.iterations,
                "final_margin": None if cert is None else cert.margin,
            },
            "history": [{"mu": m, "verdict": v, "margin": t} for m, v, t in self.history],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def mu_max_bisect(sys: LtiDelaySystem, case, p=INF, tol_mu: float = 1e-3, seed: int = 0,
                  max_iters: int = 1000, n_starts: int = 5, form="corrected") -> MarginResult:
    """Largest ``mu`` in ``[0, h]`` certified by the LMI, by bisection.

    Inconclusive verdicts count as infeasible. Each solve is warm-started
    from the last feasible point.
    """
    case = DelayCase(case)
    if case is DelayCase.B:
        p = INF
    F = f_of_p(p)
    d = math.inf if p is INF else float(1 + p)
    history = []
    inconclusive = 0

    def solve(mu, x0):
        nonlocal inconclusive
        prob = build_problem(sys, mu, F, form)
        cert = feasibility_solve(prob, max_iters, seed, x0, n_starts)
        if cert.verdict is Verdict.inconclusive:
            inconclusive += 1
        history.append((float(mu), cert.verdict.value, cert.margin))
        return cert

    cert0 = solve(0.0, None)
    result = MarginResult(0.0, d, float(F), tol_mu, 1, inconclusive, cert0, history, Form(form).value)
    if not cert0.feasible:
        result.inconclusive = inconclusive
        return result
    best = cert0
    cert_h = solve(sys.h, cert0.x)
    steps = 2
    if cert_h.feasible:
        result.mu_max, result.certificate, result.steps = sys.h, cert_h, steps
        result.inconclusive = inconclusive
        return result
    lo, hi = 0.0, sys.h
    while hi - lo > tol_mu:
        mid = 0.5 * (lo + hi)
        cert = solve(mid, best.x)
        steps += 1
        if cert.feasible:
            lo, best = mid, cert
        else:
            hi = mid
    result.mu_max, result.certificate, result.steps = lo, best, steps
    result.inconclusive = inconclusive
    return result


def table1(sys: LtiDelaySystem, tol_mu: float = 1e-3, seed: int = 0, **kw) -> list[dict]:
    """Margins for ``d`` in ``1, 1.1, 1.5, 2, inf`` beside the published values."""
    rows = []
    for d, ref in TABLE1_REFERENCE:
        case, p = case_for_d(d)
        res = mu_max_bisect(sys, case, p, tol_mu, seed, **kw)
        rows.append({"d": d, "mu_max": res.mu_max, "paper_value": ref,
                     "abs_error": abs(res.mu_max - ref), "result": res})
    return rows


def table1_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "mu_max", "paper_value", "abs_error"])
    for r in rows:
        d = "inf" if math.isinf(r["d"]) else f"{r['d']:g}"
        w.writerow([d, f"{r['mu_max']:.6f}", f"{r['paper_value']:.3f}", f"{r['abs_error']:.6f}"])
    return buf.getvalue()
