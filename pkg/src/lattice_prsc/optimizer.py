"""Stress-constrained mass minimization and a primal-dual interior-point solver.

The NLP is

    minimize    sum_i rho_i |Omega_i|
    subject to  g_m(rho) <= 0,   m = 1..n_agg
                0 <= rho_i <= 1

with g_m the KS stress aggregates.  The solver only sees :class:`NlpProblem`
callbacks, so another gradient-based method can be substituted.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .condensed import CondensedModel
from .fem import LameParams, SimpLaw
from .mesh import GroundStructure
from .offline import ComponentLibrary
from .sensitivity import constraint_gradient, objective_gradient
from .stress import AggregationPlan, KsConfig, assign_regions, build_stress_operators, compute_alpha, evaluate_aggregates

log = logging.getLogger(__name__)


class NlpProblem:
    """Callback interface: objective, gradient, constraints g <= 0 and Jacobian.

    Subclasses implement ``_objective``, ``_gradient``, ``_constraints`` and
    ``_jacobian``; the public wrappers count constraint and Jacobian calls.
    """

    n: int
    m: int

    def __init__(self, n: int, m: int, x0, lower=None, upper=None):
        self.n, self.m = n, m
        self.x0 = np.asarray(x0, dtype=float)
        self.lower = np.zeros(n) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.ones(n) if upper is None else np.asarray(upper, dtype=float)
        self.n_cons = 0
        self.n_jac = 0

    def objective(self, x) -> float:
        return float(self._objective(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self._gradient(np.asarray(x, dtype=float)), dtype=float)

    def constraints(self, x) -> np.ndarray:
        self.n_cons += 1
        return np.asarray(self._constraints(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        self.n_jac += 1
        return np.asarray(self._jacobian(np.asarray(x, dtype=float)), dtype=float).reshape(self.m, self.n)


class CallbackNlp(NlpProblem):
    """NLP from plain functions, mainly for small analytic instances."""

    def __init__(self, f, df, c, dc, x0, lower=None, upper=None, m=None):
        x0 = np.asarray(x0, dtype=float)
        super().__init__(len(x0), len(c(x0)) if m is None else m, x0, lower, upper)
        self._f, self._df, self._c, self._dc = f, df, c, dc

    def _objective(self, x):
        return self._f(x)

    def _gradient(self, x):
        return self._df(x)

    def _constraints(self, x):
        return self._c(x)

    def _jacobian(self, x):
        return self._dc(x)


class StressNlp(NlpProblem):
    """Mass minimization with KS stress aggregates evaluated through the condensed model."""

    def __init__(self, model: CondensedModel, plan: AggregationPlan, cfg: KsConfig, lame: LameParams, alpha: float, x0=None):
        gs = model.gs
        super().__init__(gs.n_components, plan.n_agg, np.ones(gs.n_components) if x0 is None else x0)
        self.model = model
        self.plan = plan
        self.cfg = cfg
        self.lame = lame
        self.alpha = float(alpha)
        self.ops = build_stress_operators(model, plan, lame)
        self.volumes = objective_gradient(gs)
        self._key = None
        self._sys = None
        self._state = None

    def evaluate(self, x):
        """Forward solve and aggregates at ``x`` (cached on the exact density vector)."""
        key = x.tobytes()
        if key != self._key:
            sys = self.model.solve(x)
            self._state = evaluate_aggregates(self.ops, self.plan, self.cfg, self.alpha, x, sys.U)
            self._sys = sys
            self._key = key
        return self._sys, self._state

    def _objective(self, x):
        return self.volumes @ x

    def _gradient(self, x):
        return self.volumes.copy()

    def _constraints(self, x):
        return self.evaluate(x)[1].g

    def _jacobian(self, x):
        sys, state = self.evaluate(x)
        return constraint_gradient(self.model, sys, self.ops, self.plan, self.cfg, state).grad


def build_nlp(
    gs: GroundStructure,
    lib: ComponentLibrary,
    cfg: KsConfig,
    lame: LameParams,
    n_agg: int,
    seed: int = 0,
    simp: SimpLaw | None = None,
    plan: AggregationPlan | None = None,
) -> StressNlp:
    """Stress-constrained NLP with alpha fixed from the solid design rho0 = 1."""
    model = CondensedModel(gs, lib, simp)
    plan = plan or assign_regions(gs, n_agg, seed)
    nlp = StressNlp(model, plan, cfg, lame, alpha=1.0)
    rho0 = np.ones(gs.n_components)
    _, state = nlp.evaluate(rho0)
    nlp.alpha = compute_alpha(plan, state.sigma_r, cfg)
    nlp._key = None
    return nlp


# --------------------------------------------------------------------------
# interior-point solver
# --------------------------------------------------------------------------


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 10000
    mu_init: float = 0.1
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    bound_push: float = 0.01
    theta_max_fact: float = 0.5
    max_step: float = 0.2
    feas_tol: float = 1e-6
    armijo: float = 1e-4
    max_backtracks: int = 40
    s_max: float = 100.0
    merit_noise: float = 1e-12
    scale_objective: bool = True


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    max_violation: float
    step_norm: float
    mu: float
    kkt_error: float
    alpha: float


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    n_cons: int = 0
    n_jac: int = 0
    wall_time: float = 0.0
    converged: bool = False
    status: str = ""
    iterations: int = 0
    best_feasible: np.ndarray | None = None
    best_feasible_objective: float = np.inf


@dataclass
class OptimizationResult:
    x: np.ndarray
    trace: OptimizationTrace
    constraints: np.ndarray
    objective: float


def _fraction_to_boundary(v, dv, tau):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def _damped_bfgs(W, s, y):
    Ws = W @ s
    sWs = s @ Ws
    sy = s @ y
    if sWs <= 1e-16 * max(1.0, np.abs(W).max()):
        return W
    if sy < 0.2 * sWs:
        theta = 0.8 * sWs / (sWs - sy)
        y = theta * y + (1.0 - theta) * Ws
        sy = s @ y
    W = W - np.outer(Ws, Ws) / sWs + np.outer(y, y) / sy
    return 0.5 * (W + W.T)


def _kkt_error_at(cfg, x, l, u, s, c, J, g, y, zl, zu, mu):
    """Scaled primal-dual optimality error of the barrier problem (mu = 0 for the original NLP)."""
    n, m = len(x), len(c)
    rd = g + J.T @ y - zl + zu
    scale = max(cfg.s_max, (np.abs(y).sum() + np.abs(zl).sum() + np.abs(zu).sum()) / (m + 2 * n)) / cfg.s_max
    comp = np.concatenate([(x - l) * zl - mu, (u - x) * zu - mu, s * y - mu])
    feas = np.maximum(c, 0.0).max() if m else 0.0
    return max(np.abs(rd).max() / scale, feas, np.abs(comp).max() / scale)


def run_optimization(nlp: NlpProblem, cfg: SolverConfig | None = None, callback=None) -> OptimizationResult:
    """Primal-dual log-barrier method with slacks for c(x) <= 0 and box bounds.

    Newton steps use a damped BFGS Lagrangian Hessian on the condensed primal
    system.  Step acceptance combines fraction-to-boundary, an infinity-norm
    cap on the primal step, rejection of trial points whose constraint
    residual exceeds ``theta_max_fact * max(1, theta0)``, and Armijo
    backtracking on an l1 merit function.  The barrier parameter decreases
    monotonically.  Non-convergence is reported in the trace, not raised.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    n, m = nlp.n, nlp.m
    l, u = nlp.lower, nlp.upper
    trace = OptimizationTrace()
    gscale = 1.0
    if cfg.scale_objective:
        gmax = np.abs(nlp.gradient(nlp.x0)).max()
        gscale = 1.0 / gmax if gmax > 0 else 1.0

    def f(x):
        return gscale * nlp.objective(x)

    def df(x):
        return gscale * nlp.gradient(x)

    push = cfg.bound_push * np.maximum(1.0, np.abs(u - l))
    x = np.clip(nlp.x0, l + np.minimum(push, 0.5 * (u - l)), u - np.minimum(push, 0.5 * (u - l)))
    mu = cfg.mu_init
    c = nlp.constraints(x)
    J = nlp.jacobian(x)
    g = df(x)
    s = np.maximum(-c, 1e-2)
    y = mu / s
    zl = mu / (x - l)
    zu = mu / (u - x)
    W = np.eye(n)
    nu = 1.0
    theta0 = np.abs(c + s).sum()
    theta_max = cfg.theta_max_fact * max(1.0, theta0)
    best_x, best_f = None, np.inf

    def kkt_error(mu_):
        return _kkt_error_at(cfg, x, l, u, s, c, J, g, y, zl, zu, mu_)

    it = 0
    status = "max_iter"
    alpha_p = 0.0
    step_norm = 0.0
    for it in range(cfg.max_iter + 1):
        viol = float(np.maximum(c, 0.0).max()) if m else 0.0
        fx = nlp.objective(x)
        if viol <= cfg.feas_tol and fx < best_f:
            best_f, best_x = fx, x.copy()
        err0 = kkt_error(0.0)
        trace.records.append(IterationRecord(it, fx, viol, step_norm, mu, err0, alpha_p))
        if callback is not None:
            callback(it, x, fx, viol)
        if err0 <= cfg.tol:
            status = "converged"
            break
        if it == cfg.max_iter:
            break
        while kkt_error(mu) <= cfg.kappa_eps * mu and mu > cfg.tol / 10.0:
            mu = max(cfg.tol / 10.0, min(cfg.kappa_mu * mu, mu**cfg.theta_mu))

        # Newton direction on the condensed primal system
        sig_x = zl / (x - l) + zu / (u - x)
        sig_s = y / s
        rc = c + s
        rx = g + J.T @ y - mu / (x - l) + mu / (u - x)
        H = W + np.diag(sig_x) + J.T @ (sig_s[:, None] * J)
        rhs = -rx - J.T @ (mu / s - y + sig_s * rc)
        try:
            dx = sla.solve(H, rhs, assume_a="pos")
        except (np.linalg.LinAlgError, sla.LinAlgError):
            W = np.eye(n)
            H = W + np.diag(sig_x) + J.T @ (sig_s[:, None] * J)
            dx = sla.solve(H, rhs)
        ds = -rc - J @ dx
        dy = mu / s - y - sig_s * ds
        dzl = mu / (x - l) - zl - (zl / (x - l)) * dx
        dzu = mu / (u - x) - zu + (zu / (u - x)) * dx

        tau = max(cfg.tau_min, 1.0 - mu)
        a_max = min(
            _fraction_to_boundary(x - l, dx, tau),
            _fraction_to_boundary(u - x, -dx, tau),
            _fraction_to_boundary(s, ds, tau) if m else 1.0,
        )
        dxn = np.abs(dx).max() if n else 0.0
        if dxn > cfg.max_step:
            a_max = min(a_max, cfg.max_step / dxn)
        a_dual = min(
            _fraction_to_boundary(zl, dzl, tau),
            _fraction_to_boundary(zu, dzu, tau),
            _fraction_to_boundary(y, dy, tau) if m else 1.0,
        )

        nu = max(nu, 1.1 * (np.abs(y + dy).max() if m else 0.0))

        def merit(xx, ss, cc):
            val = f(xx) - mu * (np.log(xx - l).sum() + np.log(u - xx).sum())
            if m:
                val += -mu * np.log(ss).sum() + nu * np.abs(cc + ss).sum()
            return val

        phi0 = merit(x, s, c)
        dphi = (g - mu / (x - l) + mu / (u - x)) @ dx
        if m:
            dphi += (-mu / s) @ ds - nu * np.abs(rc).sum()
        a = a_max
        accepted = False
        slack = 10.0 * np.finfo(float).eps * max(1.0, abs(phi0))
        # below this predicted decrease the merit comparison only sees evaluation noise
        noise = cfg.merit_noise * max(1.0, abs(phi0))
        for _ in range(cfg.max_backtracks):
            xt = x + a * dx
            st = s + a * ds
            ct = nlp.constraints(xt)
            if not np.all(np.isfinite(ct)):
                a *= 0.5
                continue
            theta_t = np.abs(ct + st).sum()
            if theta_t > theta_max:
                a *= 0.5
                continue
            if -a * dphi <= noise or merit(xt, st, ct) <= phi0 + cfg.armijo * a * min(dphi, 0.0) + slack:
                accepted = True
                break
            a *= 0.5
        Jt = gt = None
        if not accepted:
            # soft restoration: take the largest step if it reduces the barrier KKT error
            xt = x + a_max * dx
            st = s + a_max * ds
            ct = nlp.constraints(xt)
            if np.all(np.isfinite(ct)):
                Jt, gt = nlp.jacobian(xt), df(xt)
                trial = _kkt_error_at(
                    cfg, xt, l, u, np.maximum(st, 1e-20), ct, Jt, gt, y + a_dual * dy, zl + a_dual * dzl, zu + a_dual * dzu, mu
                )
                if trial <= (1.0 - 1e-4) * kkt_error(mu):
                    a = a_max
            if a != a_max:
                status = "line_search_failed"
                break
            W = np.eye(n)
        if Jt is None:
            Jt, gt = nlp.jacobian(xt), df(xt)

        # accept, reset slacks, update duals and Hessian
        y_new = y + a_dual * dy
        zl = zl + a_dual * dzl
        zu = zu + a_dual * dzu
        st = np.maximum(st, -ct) if m else st
        st = np.maximum(st, 1e-20)
        # keep bound duals within a factor of the primal-dual central path
        kappa_sigma = 1e10
        zl = np.clip(zl, mu / (kappa_sigma * (xt - l)), kappa_sigma * mu / (xt - l))
        zu = np.clip(zu, mu / (kappa_sigma * (u - xt)), kappa_sigma * mu / (u - xt))
        if m:
            y_new = np.clip(y_new, mu / (kappa_sigma * st), kappa_sigma * mu / st)
        sk = xt - x
        yk = (gt + Jt.T @ y_new) - (g + J.T @ y_new)
        if accepted:
            W = _damped_bfgs(W, sk, yk)
        step_norm = float(np.abs(sk).max()) if n else 0.0
        alpha_p = a
        x, s, c, J, g, y = xt, st, ct, Jt, gt, y_new

    trace.iterations = it
    trace.converged = status == "converged"
    trace.status = status
    trace.n_cons = nlp.n_cons
    trace.n_jac = nlp.n_jac
    trace.wall_time = time.perf_counter() - t0
    trace.best_feasible = best_x
    trace.best_feasible_objective = best_f
    if not trace.converged:
        log.warning("interior-point solver stopped without convergence after %d iterations", it)
    return OptimizationResult(x, trace, c, nlp.objective(x))
