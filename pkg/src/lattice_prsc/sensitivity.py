"""Adjoint gradients of the mass objective and the KS stress aggregates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .condensed import CondensedModel, CondensedSystem, cholesky_solve
from .mesh import GroundStructure
from .stress import AggregateState, AggregationPlan, KsConfig, StressOperators

RHO_GRAD_MIN = 1e-6
VM_GRAD_REL = 1e-9


class StaleFactorizationError(ValueError):
    pass


@dataclass
class ConstraintGradients:
    grad: np.ndarray  # (n_agg, n_c)
    adjoints: np.ndarray  # (ndofs, n_agg)


def objective_gradient(gs: GroundStructure) -> np.ndarray:
    """Gradient of sum(rho_i * |Omega_i|): the component volumes."""
    return gs.volumes()


def dg_dsigma(plan: AggregationPlan, state: AggregateState, cfg: KsConfig) -> np.ndarray:
    """Derivative of each point's own aggregate with respect to its relaxed stress.

    Every point belongs to exactly one region, so one vector over points holds
    all nonzero entries.  The max-shift cancels between ``e`` and ``sums``.
    """
    sums = np.repeat(state.sums, np.diff(plan.region_ptr))
    return plan.weights * state.e / (cfg.bound * sums)


def dsigma_drho(plan: AggregationPlan, state: AggregateState) -> np.ndarray:
    """Nonzero entries d(sigma_r,q)/d(rho_i(q)) = sigma_vm,q / (2 sqrt(rho_i))."""
    rho = np.maximum(state.rho, RHO_GRAD_MIN)[plan.point_instance]
    return state.vm / (2.0 * np.sqrt(rho))


def dsigma_dU(ops: StressOperators, plan: AggregationPlan, state: AggregateState, cfg: KsConfig) -> sp.csr_matrix:
    """Jacobian of the relaxed stress vector with respect to the condensed coefficients."""
    vm = np.maximum(state.vm, VM_GRAD_REL * cfg.bound)
    c = np.sqrt(np.clip(state.rho, 0.0, None))[plan.point_instance] / (2.0 * vm)
    dxx = sp.diags(c * (2.0 * state.sxx - state.syy))
    dyy = sp.diags(c * (2.0 * state.syy - state.sxx))
    dxy = sp.diags(c * 6.0 * state.sxy)
    return (dxx @ ops.Sxx + dyy @ ops.Syy + dxy @ ops.Sxy).tocsr()


def adjoint_rhs(ops: StressOperators, plan: AggregationPlan, state: AggregateState, cfg: KsConfig, d: np.ndarray) -> np.ndarray:
    """dg_m/dU for every region as columns, i.e. dsigma_dU^T applied to the per-region weights ``d``."""
    vm = np.maximum(state.vm, VM_GRAD_REL * cfg.bound)
    c = d * np.sqrt(np.clip(state.rho, 0.0, None))[plan.point_instance] / (2.0 * vm)
    vxx = c * (2.0 * state.sxx - state.syy)
    vyy = c * (2.0 * state.syy - state.sxx)
    vxy = c * 6.0 * state.sxy
    out = np.zeros((ops.Sxx.shape[1], plan.n_agg))
    for m, (bxx, byy, bxy) in enumerate(ops.region_blocks(plan)):
        r = plan.region(m)
        out[:, m] = bxx.T @ vxx[r] + byy.T @ vyy[r] + bxy.T @ vxy[r]
    return out


def constraint_gradient(
    model: CondensedModel,
    sys: CondensedSystem,
    ops: StressOperators,
    plan: AggregationPlan,
    cfg: KsConfig,
    state: AggregateState,
) -> ConstraintGradients:
    """Adjoint gradients of all aggregates, reusing the forward Cholesky factor."""
    if sys.factor is None or sys.U is None:
        raise StaleFactorizationError("condensed system has not been solved")
    if not (np.array_equal(sys.rho, state.rho) and np.array_equal(sys.U, state.U)):
        raise StaleFactorizationError("aggregate state and factorization refer to different densities")
    gs = model.gs
    nc = gs.n_components
    d = dg_dsigma(plan, state, cfg)

    direct = np.zeros(plan.n_agg * nc)
    np.add.at(direct, plan.point_region * nc + plan.point_instance, d * dsigma_drho(plan, state))
    direct = direct.reshape(plan.n_agg, nc)

    rhs = adjoint_rhs(ops, plan, state, cfg, d)
    lam = cholesky_solve(sys.factor, rhs) if model.ndofs else np.zeros((0, plan.n_agg))
    lam = lam.reshape(model.ndofs, plan.n_agg)

    ds = model.simp.deriv(state.rho)
    implicit = np.zeros((plan.n_agg, nc))
    for i, (_, code) in enumerate(gs.instances):
        m = model.local_maps[i]
        keep = m >= 0
        if not keep.any():
            continue
        A = model.lib[code].schur0[np.ix_(keep, keep)]
        t = A @ sys.U[m[keep]]
        implicit[:, i] = ds[i] * (lam[m[keep]].T @ t)
    return ConstraintGradients(direct - implicit, lam)
