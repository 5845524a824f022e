"""Relaxed Von Mises stress and Kreisselmeier-Steinhauser (KS) stress aggregates.

Quadrature points of all components are numbered region by region, and
within a region by (instance, element, point).  Stress operators are sparse
matrices over that numbering acting on the condensed coefficient vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .condensed import CondensedModel
from .fem import LameParams, element_geometry, element_stress
from .fem import von_mises as _von_mises
from .mesh import GroundStructure, QuadratureRule, four_point_rule


@dataclass(frozen=True)
class KsConfig:
    """Aggregation settings. Stresses are in Pa."""

    p: float
    sigma_max: float
    sigma_hat_max: float | None = None

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("KS multiplier p must be positive")
        if not self.sigma_max > 0:
            raise ValueError("sigma_max must be positive")
        if self.sigma_hat_max is not None and not 0 < self.sigma_hat_max <= self.sigma_max:
            raise ValueError("sigma_hat_max must lie in (0, sigma_max]")

    @property
    def bound(self) -> float:
        """Stress bound used inside the aggregates."""
        return self.sigma_max if self.sigma_hat_max is None else self.sigma_hat_max


@dataclass
class AggregationPlan:
    n_agg: int
    seed: int
    memberships: list
    rule: QuadratureRule
    point_instance: np.ndarray
    point_element: np.ndarray
    point_qp: np.ndarray
    weights: np.ndarray
    region_ptr: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def region(self, m: int) -> slice:
        return slice(int(self.region_ptr[m]), int(self.region_ptr[m + 1]))

    def region_measures(self) -> np.ndarray:
        return np.add.reduceat(self.weights, self.region_ptr[:-1])

    @property
    def point_region(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_agg), np.diff(self.region_ptr))


def assign_regions(gs: GroundStructure, n_agg: int, seed: int = 0, rule: QuadratureRule | None = None) -> AggregationPlan:
    """Randomly split each component's elements into ``n_agg`` near-equal regions."""
    if n_agg < 1:
        raise ValueError("n_agg must be at least 1")
    rule = rule or four_point_rule()
    rng = np.random.default_rng(seed)
    memberships = []
    for i in range(gs.n_components):
        ne = gs.reference(i).n_elements
        if n_agg > ne:
            raise ValueError(f"n_agg={n_agg} exceeds the {ne} elements of component {i}")
        perm = rng.permutation(ne)
        region = np.empty(ne, dtype=int)
        for m, chunk in enumerate(np.array_split(perm, n_agg)):
            region[chunk] = m
        memberships.append(region)

    dets = {}
    for code, ref in gs.references.items():
        _, det = element_geometry(ref.nodes, ref.elements)
        dets[code] = np.abs(det) * ref.thickness
    nq = rule.points.shape[0]
    inst, elem, qp, w, ptr = [], [], [], [], [0]
    for m in range(n_agg):
        count = 0
        for i in range(gs.n_components):
            els = np.flatnonzero(memberships[i] == m)
            code = gs.instances[i][1]
            inst.append(np.full(len(els) * nq, i))
            elem.append(np.repeat(els, nq))
            qp.append(np.tile(np.arange(nq), len(els)))
            w.append((dets[code][els][:, None] * rule.weights[None, :]).ravel())
            count += len(els) * nq
        ptr.append(ptr[-1] + count)
    return AggregationPlan(
        n_agg,
        seed,
        memberships,
        rule,
        np.concatenate(inst),
        np.concatenate(elem),
        np.concatenate(qp),
        np.concatenate(w),
        np.array(ptr),
    )


@dataclass
class StressOperators:
    """Sparse maps from condensed coefficients to stress components at plan points."""

    Sxx: sp.csr_matrix
    Syy: sp.csr_matrix
    Sxy: sp.csr_matrix

    def apply(self, U: np.ndarray):
        return self.Sxx @ U, self.Syy @ U, self.Sxy @ U

    def region(self, plan: AggregationPlan, m: int):
        r = plan.region(m)
        return self.Sxx[r], self.Syy[r], self.Sxy[r]

    def region_blocks(self, plan: AggregationPlan) -> list:
        """Per-region row blocks, sliced once and cached."""
        cache = self.__dict__.setdefault("_blocks", {})
        key = tuple(plan.region_ptr)
        if key not in cache:
            cache[key] = [self.region(plan, m) for m in range(plan.n_agg)]
        return cache[key]


def build_stress_operators(model: CondensedModel, plan: AggregationPlan, lame: LameParams) -> StressOperators:
    """Base-material stress operators from the library gradient tables.

    Requires the plan to use the same quadrature rule as the gradient tables.
    """
    gs, lib = model.gs, model.lib
    nq = plan.rule.points.shape[0]
    a = lame.lam + 2.0 * lame.mu
    rows, cols, vxx, vyy, vxy = [], [], [], [], []
    order = np.arange(plan.n_points)
    for i in range(gs.n_components):
        sel = order[plan.point_instance == i]
        if len(sel) == 0:
            continue
        table = lib[gs.instances[i][1]].grad_table
        if table.shape[1] != nq:
            raise ValueError("aggregation rule does not match the library gradient table")
        G = table[plan.point_element[sel], plan.point_qp[sel]]  # (npts, 4, nloc)
        m = model.local_maps[i]
        keep = np.flatnonzero(m >= 0)
        G = G[:, :, keep]
        gxx = a * G[:, 0] + lame.lam * G[:, 3]
        gyy = lame.lam * G[:, 0] + a * G[:, 3]
        gxy = lame.mu * (G[:, 1] + G[:, 2])
        rows.append(np.repeat(sel, len(keep)))
        cols.append(np.tile(m[keep], len(sel)))
        vxx.append(gxx.ravel())
        vyy.append(gyy.ravel())
        vxy.append(gxy.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    shape = (plan.n_points, model.ndofs)

    def mk(v):
        M = sp.csr_matrix((np.concatenate(v), (r, c)), shape=shape)
        M.sum_duplicates()
        return M

    return StressOperators(mk(vxx), mk(vyy), mk(vxy))


def von_mises(sxx, syy, sxy) -> np.ndarray:
    """Elementwise sqrt(sxx^2 + syy^2 - sxx*syy + 3*sxy^2)."""
    return _von_mises(sxx, syy, sxy)


def relaxed_stress(plan: AggregationPlan, rho, vm: np.ndarray) -> np.ndarray:
    """sqrt(rho of the owning component) times the Von Mises stress."""
    rho = np.asarray(rho, dtype=float)
    return np.sqrt(np.clip(rho, 0.0, None))[plan.point_instance] * vm


def _shifted_sums(plan: AggregationPlan, ratio: np.ndarray, p: float):
    shift = np.maximum.reduceat(ratio, plan.region_ptr[:-1])
    e = np.exp(p * (ratio - np.repeat(shift, np.diff(plan.region_ptr))))
    sums = np.add.reduceat(plan.weights * e, plan.region_ptr[:-1])
    return shift, e, sums


def region_alphas(plan: AggregationPlan, sigma_r0: np.ndarray, cfg: KsConfig) -> np.ndarray:
    """Per-region normalizations: shifted integral of exp(p*sigma_r/bound)."""
    _check_regions(plan)
    _, _, sums = _shifted_sums(plan, sigma_r0 / cfg.bound, cfg.p)
    return sums


ALPHA_MARGIN = 1e-14


def compute_alpha(plan: AggregationPlan, sigma_r0: np.ndarray, cfg: KsConfig) -> float:
    """Common normalization: the minimum over regions of the per-region values.

    It is lowered by ``exp(-p * ALPHA_MARGIN)`` so that every aggregate at the
    anchor design exceeds its region peak by ``ALPHA_MARGIN`` and the bound
    survives rounding in ``g = ks - 1``.
    """
    return float(region_alphas(plan, sigma_r0, cfg).min() * np.exp(-cfg.p * ALPHA_MARGIN))


def _check_regions(plan: AggregationPlan):
    if np.any(np.diff(plan.region_ptr) == 0):
        raise ValueError("aggregation plan has an empty region")


@dataclass
class AggregateState:
    """Aggregate values at one (rho, U) with the intermediates needed for gradients.

    ``ks`` holds g + 1, computed directly to avoid cancellation; ``e`` is the
    shifted exponential vector and ``sums`` its weighted region sums.
    """

    ks: np.ndarray
    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray
    vm: np.ndarray
    sigma_r: np.ndarray
    e: np.ndarray
    shift: np.ndarray
    sums: np.ndarray
    rho: np.ndarray
    U: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def g(self) -> np.ndarray:
        return self.ks - 1.0


def ks_from_stress(plan: AggregationPlan, sigma_r: np.ndarray, cfg: KsConfig, alpha: float):
    """Max-shifted KS values (g + 1) per region and the shifted intermediates."""
    _check_regions(plan)
    shift, e, sums = _shifted_sums(plan, sigma_r / cfg.bound, cfg.p)
    ks = shift + np.log(sums / alpha) / cfg.p
    return ks, shift, e, sums


def evaluate_aggregates(ops: StressOperators, plan: AggregationPlan, cfg: KsConfig, alpha: float, rho, U) -> AggregateState:
    rho = np.asarray(rho, dtype=float)
    sxx, syy, sxy = ops.apply(U)
    vm = von_mises(sxx, syy, sxy)
    sr = relaxed_stress(plan, rho, vm)
    ks, shift, e, sums = ks_from_stress(plan, sr, cfg, alpha)
    return AggregateState(ks, sxx, syy, sxy, vm, sr, e, shift, sums, rho.copy(), np.array(U, copy=True))


# --------------------------------------------------------------------------
# straightforward reference path
# --------------------------------------------------------------------------


def quadrature_loop_stress(model: CondensedModel, plan: AggregationPlan, lame: LameParams, U: np.ndarray):
    """Stress components at plan points from reconstructed nodal fields, element by element."""
    gs = model.gs
    out = np.zeros((3, plan.n_points))
    rho_one = np.ones(gs.n_components)
    fields = model.reconstruct(rho_one, U)
    pts = plan.rule.points
    for i in range(gs.n_components):
        sxx, syy, sxy = element_stress(gs.reference(i), fields[i], lame, pts)
        sel = np.flatnonzero(plan.point_instance == i)
        e, q = plan.point_element[sel], plan.point_qp[sel]
        out[0, sel] = sxx[e, q]
        out[1, sel] = syy[e, q]
        out[2, sel] = sxy[e, q]
    return out


def quadrature_loop_ks(model, plan, lame, cfg: KsConfig, alpha: float, rho, U) -> np.ndarray:
    """KS values (g + 1) by explicit summation over each region's points without shifting."""
    sxx, syy, sxy = quadrature_loop_stress(model, plan, lame, U)
    rho = np.asarray(rho, dtype=float)
    out = np.empty(plan.n_agg)
    for m in range(plan.n_agg):
        total = 0.0
        for q in range(plan.region_ptr[m], plan.region_ptr[m + 1]):
            vm = np.sqrt(max(sxx[q] ** 2 + syy[q] ** 2 - sxx[q] * syy[q] + 3.0 * sxy[q] ** 2, 0.0))
            sr = np.sqrt(rho[plan.point_instance[q]]) * vm
            total += plan.weights[q] * np.exp(cfg.p * sr / cfg.bound)
        out[m] = np.log(total / alpha) / cfg.p
    return out
