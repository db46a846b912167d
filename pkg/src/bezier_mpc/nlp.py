"""Nonlinear programs over control-point decision vectors.

A problem is a weighted sum of squared residual terms, equality constraints
``h(x) = 0``, inequality constraints ``g(x) <= 0`` and box bounds. Derivatives
come from one forward-mode pass with :class:`bezier_mpc.ad.Dual` seeds.

:func:`solve` runs an augmented-Lagrangian outer loop. Because every cost is
a residual list, the augmented merit is itself a sum of squares, and the
inner bound-constrained subproblem is handed to a trust-region Gauss-Newton
solver (``scipy.optimize.least_squares``). Large problems use a projected
Levenberg-Marquardt iteration on sparse normal equations instead; L-BFGS-B
is available as an option.
Variables with ``lb == ub`` are eliminated before the inner solve.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.sparse import csr_matrix, diags
from scipy.sparse.linalg import spsolve

from .ad import Dual

log = logging.getLogger(__name__)


class DimensionMismatchError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class CostTerm:
    """Contributes ``sum(weight * fn(ctx)**2)`` to the objective."""

    name: str
    fn: Callable
    weight: float | np.ndarray = 1.0
    n_in: int | None = None


@dataclass(frozen=True)
class Constraint:
    """``fn(ctx) == 0`` (kind="eq") or ``fn(ctx) <= 0`` (kind="ineq")."""

    name: str
    fn: Callable
    kind: str = "eq"
    n_in: int | None = None


@dataclass
class Evaluation:
    x: np.ndarray
    r: np.ndarray
    h: np.ndarray
    g: np.ndarray
    Jr: np.ndarray | None = None
    Jh: np.ndarray | None = None
    Jg: np.ndarray | None = None

    @property
    def cost(self) -> float:
        return float(self.r @ self.r)


@dataclass(frozen=True)
class NlpProblem:
    n: int
    costs: tuple[CostTerm, ...]
    equalities: tuple[Constraint, ...]
    inequalities: tuple[Constraint, ...]
    lb: np.ndarray
    ub: np.ndarray
    x0: np.ndarray
    prepare: Callable | None = None
    sizes: dict = field(default_factory=dict)

    @property
    def n_eq(self) -> int:
        return self.sizes["eq"]

    @property
    def n_ineq(self) -> int:
        return self.sizes["ineq"]

    def constraint_sizes(self) -> dict[str, int]:
        return dict(self.sizes["by_name"])

    def _context(self, x):
        return self.prepare(x) if self.prepare is not None else x

    def evaluate(self, x, derivatives: bool = False) -> Evaluation:
        x = np.asarray(x, dtype=float)
        xin = Dual.seed(x) if derivatives else x
        ctx = self._context(xin)
        parts = {}
        for group, terms in (("r", self.costs), ("h", self.equalities), ("g", self.inequalities)):
            vals, jacs = [], []
            for term in terms:
                out = term.fn(ctx)
                if isinstance(out, Dual):
                    v = out.val.ravel()
                    J = out.der.reshape(v.size, self.n) if derivatives else None
                else:
                    v = np.asarray(out, dtype=float).ravel()
                    J = np.zeros((v.size, self.n)) if derivatives else None
                if not np.all(np.isfinite(v)):
                    raise NonFiniteError(f"term {term.name!r} is not finite at the current iterate")
                if group == "r":
                    sw = np.sqrt(np.broadcast_to(np.asarray(term.weight, dtype=float), v.shape))
                    v = sw * v
                    J = J * sw[:, None] if derivatives else None
                vals.append(v)
                jacs.append(J)
            parts[group] = np.concatenate(vals) if vals else np.zeros(0)
            parts["J" + group] = (np.concatenate(jacs, axis=0) if jacs else np.zeros((0, self.n))) \
                if derivatives else None
        return Evaluation(x=x, **parts)


def assemble(costs: Sequence[CostTerm], constraints: Sequence[Constraint] = (),
             bounds=None, x0=None, prepare=None, n: int | None = None) -> NlpProblem:
    """Validate terms against ``x0`` and freeze them into an :class:`NlpProblem`."""
    if x0 is None:
        if n is None:
            raise ValueError("either x0 or n is required")
        x0 = np.zeros(n)
    x0 = np.array(x0, dtype=float).ravel()
    n = x0.size
    for term in list(costs) + list(constraints):
        if term.n_in is not None and term.n_in != n:
            raise DimensionMismatchError(
                f"term {term.name!r} expects {term.n_in} inputs, problem has {n}")
    if bounds is None:
        lb, ub = np.full(n, -np.inf), np.full(n, np.inf)
    else:
        lb = np.broadcast_to(np.asarray(bounds[0], dtype=float), (n,)).copy()
        ub = np.broadcast_to(np.asarray(bounds[1], dtype=float), (n,)).copy()
        if np.any(lb > ub):
            raise ValueError("lower bounds exceed upper bounds")
    for c in constraints:
        if c.kind not in ("eq", "ineq"):
            raise ValueError(f"constraint {c.name!r}: unknown kind {c.kind!r}")
    eqs = tuple(c for c in constraints if c.kind == "eq")
    ineqs = tuple(c for c in constraints if c.kind == "ineq")
    problem = NlpProblem(n=n, costs=tuple(costs), equalities=eqs, inequalities=ineqs,
                         lb=lb, ub=ub, x0=x0, prepare=prepare)
    x_start = np.clip(x0, lb, ub)
    ctx = problem._context(x_start)
    by_name = {}
    for term in list(costs) + list(constraints):
        try:
            out = np.asarray(term.fn(ctx), dtype=float)
        except (ValueError, IndexError) as exc:
            raise DimensionMismatchError(f"term {term.name!r} failed on x0: {exc}") from exc
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"term {term.name!r} is not finite at x0")
        if isinstance(term, CostTerm):
            w = np.asarray(term.weight, dtype=float)
            if np.any(w < 0):
                raise ValueError(f"cost {term.name!r} has a negative weight")
            try:
                np.broadcast_to(w, out.ravel().shape)
            except ValueError as exc:
                raise DimensionMismatchError(f"cost {term.name!r}: weight shape {w.shape}") from exc
        by_name[term.name] = out.size
    sizes = {"eq": sum(by_name[c.name] for c in eqs), "ineq": sum(by_name[c.name] for c in ineqs),
             "by_name": by_name}
    object.__setattr__(problem, "sizes", sizes)
    return problem


@dataclass(frozen=True)
class SolverOptions:
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-6
    max_outer: int = 30
    max_inner: int = 200
    inner: str = "gauss-newton"  # or "lm", "lbfgs"
    rho0: float = 100.0
    rho_max: float = 1e10
    inner_ftol: float = 1e-12
    inner_gtol: float = 1e-9
    # above this many free variables the inner solve switches to sparse projected LM
    sparse_above: int = 300
    log_iterations: bool = False


@dataclass
class NlpSolution:
    x: np.ndarray
    converged: bool
    kkt_residual: float
    max_constraint_violation: float
    iterations: int
    solve_time: float
    cost: float
    multipliers: tuple[np.ndarray, np.ndarray] = (np.zeros(0), np.zeros(0))
    penalty: float = 10.0
    inner_iterations: int = 0
    message: str = ""
    history: list = field(default_factory=list)


def differentiate(problem: NlpProblem, x):
    """Cost gradient and constraint Jacobians at ``x``."""
    ev = problem.evaluate(x, derivatives=True)
    return 2.0 * ev.Jr.T @ ev.r, ev.Jh, ev.Jg


def constraint_violation(ev: Evaluation) -> float:
    v = 0.0
    if ev.h.size:
        v = max(v, float(np.max(np.abs(ev.h))))
    if ev.g.size:
        v = max(v, float(np.max(ev.g)))
    return max(v, 0.0)


def kkt_residual(problem: NlpProblem, ev: Evaluation, lam, mu) -> float:
    """Projected-gradient stationarity of the Lagrangian plus complementarity."""
    grad = 2.0 * ev.Jr.T @ ev.r
    if lam.size:
        grad = grad + ev.Jh.T @ lam
    if mu.size:
        grad = grad + ev.Jg.T @ mu
    x = ev.x
    proj = np.clip(x - grad, problem.lb, problem.ub) - x
    res = float(np.max(np.abs(proj))) if proj.size else 0.0
    if mu.size:
        res = max(res, float(np.max(np.abs(np.minimum(mu, -ev.g)))))
    return res


class _Merit:
    """Sum-of-squares augmented Lagrangian restricted to the free variables."""

    def __init__(self, problem, x_full, free, lam, mu, rho):
        self.p = problem
        self.x_full = x_full.copy()
        self.free = free
        self.lam, self.mu, self.rho = lam, mu, rho
        self._cache = {}
        self.nfev = 0

    def _eval(self, z, derivatives):
        key = (z.tobytes(), derivatives)
        hit = self._cache.get(key) or (self._cache.get((z.tobytes(), True)) if not derivatives else None)
        if hit is not None:
            return hit
        x = self.x_full.copy()
        x[self.free] = z
        ev = self.p.evaluate(x, derivatives)
        self.nfev += 1
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[key] = ev
        return ev

    def residual(self, z):
        ev = self._eval(z, False)
        sr = np.sqrt(self.rho)
        parts = [np.sqrt(2.0) * ev.r]
        if ev.h.size:
            parts.append(sr * (ev.h + self.lam / self.rho))
        if ev.g.size:
            parts.append(sr * np.maximum(0.0, ev.g + self.mu / self.rho))
        return np.concatenate(parts)

    def jacobian(self, z):
        ev = self._eval(z, True)
        sr = np.sqrt(self.rho)
        blocks = [np.sqrt(2.0) * ev.Jr[:, self.free]]
        if ev.h.size:
            blocks.append(sr * ev.Jh[:, self.free])
        if ev.g.size:
            active = (ev.g + self.mu / self.rho) > 0.0
            blocks.append(sr * ev.Jg[:, self.free] * active[:, None])
        return np.concatenate(blocks, axis=0)

    def value_and_grad(self, z):
        F = self.residual(z)
        J = self.jacobian(z)
        return 0.5 * float(F @ F), J.T @ F


def solve(problem: NlpProblem, options: SolverOptions | None = None,
          multipliers=None, penalty: float | None = None) -> NlpSolution:
    """Augmented-Lagrangian solve; returns the best iterate even without convergence."""
    opts = options or SolverOptions()
    t_start = time.perf_counter()
    lb, ub = problem.lb, problem.ub
    x = np.clip(problem.x0, lb, ub)
    free = lb < ub
    lam = np.zeros(problem.n_eq)
    mu = np.zeros(problem.n_ineq)
    if multipliers is not None and multipliers[0].shape == lam.shape and multipliers[1].shape == mu.shape:
        lam, mu = multipliers[0].copy(), multipliers[1].copy()
    rho = float(penalty) if penalty is not None else opts.rho0
    history = []
    ev = problem.evaluate(x, derivatives=True)
    viol = constraint_violation(ev)
    kkt = kkt_residual(problem, ev, lam, mu)
    prev_kkt = kkt
    best = (x.copy(), kkt, viol, ev.cost)
    converged = viol <= opts.tol_feas and kkt <= opts.tol_kkt
    inner_total = 0
    outer = 0
    message = "converged at start" if converged else ""
    inner_opts = opts
    while not converged and outer < opts.max_outer:
        outer += 1
        merit = _Merit(problem, x, free, lam, mu, rho)
        z0 = x[free]
        if z0.size:
            z = _inner_solve(merit, z0, lb[free], ub[free], inner_opts)
            x = x.copy()
            x[free] = z
        inner_total += merit.nfev
        ev = problem.evaluate(x, derivatives=True)
        new_viol = constraint_violation(ev)
        if lam.size:
            lam = lam + rho * ev.h
        if mu.size:
            mu = np.maximum(0.0, mu + rho * ev.g)
        kkt = kkt_residual(problem, ev, lam, mu)
        history.append({"outer": outer, "cost": ev.cost, "violation": new_viol, "kkt": kkt,
                        "penalty": rho, "inner_evals": merit.nfev})
        if opts.log_iterations:
            log.info("outer %d cost %.6g viol %.3g kkt %.3g rho %.3g", outer, ev.cost, new_viol, kkt, rho)
        if new_viol <= opts.tol_feas and kkt <= opts.tol_kkt:
            converged = True
            best = (x.copy(), kkt, new_viol, ev.cost)
            message = "converged"
            break
        if _better(new_viol, kkt, best, opts):
            best = (x.copy(), kkt, new_viol, ev.cost)
        stalled = (new_viol > 0.25 * viol and new_viol > opts.tol_feas) or \
            (kkt > 0.25 * prev_kkt and kkt > opts.tol_kkt)
        if stalled:
            rho = min(rho * 10.0, opts.rho_max)
        if new_viol <= opts.tol_feas and kkt > 0.25 * prev_kkt:
            # feasible but not stationary: the inner solve stopped on its relative cost test
            inner_opts = replace(inner_opts, inner_ftol=max(inner_opts.inner_ftol * 1e-2, 1e-15))
        viol, prev_kkt = new_viol, kkt
    if not converged and not message:
        message = "maximum outer iterations reached"
    x_best, kkt, viol, cost = best
    return NlpSolution(x=x_best, converged=converged, kkt_residual=kkt,
                       max_constraint_violation=viol, iterations=outer,
                       solve_time=time.perf_counter() - t_start, cost=cost,
                       multipliers=(lam, mu), penalty=rho, inner_iterations=inner_total,
                       message=message, history=history)


def _better(viol, kkt, best, opts) -> bool:
    _, b_kkt, b_viol, _ = best
    score = max(viol / opts.tol_feas, kkt / opts.tol_kkt)
    b_score = max(b_viol / opts.tol_feas, b_kkt / opts.tol_kkt)
    return score < b_score


def _inner_solve(merit: _Merit, z0, lb, ub, opts: SolverOptions):
    z0 = np.clip(z0, lb, ub)
    if opts.inner == "lbfgs":
        res = minimize(merit.value_and_grad, z0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lb, ub)),
                       options={"maxiter": opts.max_inner, "gtol": 1e-12, "ftol": 1e-15})
        return res.x
    if opts.inner not in ("gauss-newton", "lm"):
        raise ValueError(f"unknown inner solver {opts.inner!r}")
    # least_squares needs a strictly interior start
    span = ub - lb
    pad = np.minimum(1e-10 * np.maximum(1.0, np.abs(z0)), 0.25 * span)
    z0 = np.clip(z0, lb + pad, ub - pad)
    if opts.inner == "lm" or z0.size > opts.sparse_above:
        return _projected_lm(merit, z0, lb, ub, opts, sparse=z0.size > opts.sparse_above)
    res = least_squares(merit.residual, z0, jac=merit.jacobian, bounds=(lb, ub), method="trf",
                        ftol=opts.inner_ftol, xtol=opts.inner_ftol, gtol=opts.inner_gtol,
                        max_nfev=opts.max_inner, x_scale="jac")
    return res.x


def _projected_lm(merit: _Merit, z, lb, ub, opts: SolverOptions, sparse: bool = True):
    """Levenberg-Marquardt on sparse normal equations with a projected box.

    Variables sitting on a bound with the gradient pushing outward are held
    for the step; the trial point is clipped back into the box.
    """
    F = merit.residual(z)
    cost = 0.5 * float(F @ F)
    lam = 1e-3
    for _ in range(opts.max_inner):
        J = merit.jacobian(z)
        if sparse:
            J = csr_matrix(J)
        g = J.T @ F
        pg = np.clip(z - g, lb, ub) - z
        if np.max(np.abs(pg), initial=0.0) <= opts.inner_gtol:
            break
        tol = 1e-12 * np.maximum(1.0, np.abs(z))
        held = ((z <= lb + tol) & (g > 0)) | ((z >= ub - tol) & (g < 0))
        act = np.flatnonzero(~held)
        Ja = J[:, act]
        H = (Ja.T @ Ja).tocsc() if sparse else Ja.T @ Ja
        d = np.maximum(H.diagonal(), 1e-12)
        accepted = False
        while lam < 1e12:
            step = np.zeros_like(z)
            if sparse:
                step[act] = spsolve(H + diags(lam * d, format="csc"), -g[act])
            else:
                step[act] = np.linalg.solve(H + np.diag(lam * d), -g[act])
            trial = np.clip(z + step, lb, ub)
            Ft = merit.residual(trial)
            ct = 0.5 * float(Ft @ Ft)
            if ct < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        rel = (cost - ct) / max(cost, 1e-300)
        z, F, cost = trial, Ft, ct
        lam = max(lam / 10.0, 1e-9)
        if rel <= opts.inner_ftol and np.max(np.abs(step)) <= opts.inner_ftol * (1.0 + np.max(np.abs(z))):
            break
    return z


def warm_multipliers(plan, penalty_cap: float = 1e4):
    """Multipliers and capped penalty carried over from a previous plan's solution."""
    sol = getattr(plan, "solution", None)
    if sol is None:
        return None, None
    return sol.multipliers, min(sol.penalty, penalty_cap)


def warm_start(problem: NlpProblem, previous: NlpSolution | None, shift_policy: str = "reuse"):
    """Initial guess for ``problem`` from the previous loop's solution.

    Bezier control points need no time shift: each loop renormalizes time,
    so ``"reuse"`` returns the previous optimum unchanged. Mismatched
    dimensions or ``shift_policy="cold"`` fall back to ``problem.x0``.
    """
    if previous is None or shift_policy == "cold" or np.shape(previous.x) != (problem.n,):
        return problem.x0.copy()
    if shift_policy != "reuse":
        raise ValueError(f"unknown shift policy {shift_policy!r}")
    return np.asarray(previous.x, dtype=float).copy()
