"""Plane-stress linear elasticity on P1/P2 triangles.

Degrees of freedom are interleaved per node: ``2*node`` is the x
displacement and ``2*node + 1`` the y displacement.  Thickness multiplies
stiffness; loads are given as total forces, so stresses are 3D-equivalent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import GroundStructure, QuadratureRule, ReferenceComponent, four_point_rule


@dataclass(frozen=True)
class LameParams:
    mu: float
    lam: float

    def __post_init__(self):
        if self.mu <= 0 or self.lam < 0:
            raise ValueError("Lame parameters must satisfy mu > 0, lambda >= 0")

    def elasticity_matrix(self) -> np.ndarray:
        """Voigt matrix acting on (exx, eyy, gxy)."""
        a = self.lam + 2.0 * self.mu
        return np.array([[a, self.lam, 0.0], [self.lam, a, 0.0], [0.0, 0.0, self.mu]])


def plane_stress_lame(E: float, nu: float) -> LameParams:
    """Shear modulus and effective first Lame parameter for plane stress."""
    if E <= 0:
        raise ValueError("Young's modulus must be positive")
    if not 0.0 <= nu < 0.5:
        raise ValueError("Poisson ratio must lie in [0, 0.5)")
    return LameParams(mu=E / (2.0 * (1.0 + nu)), lam=E * nu / (1.0 - nu * nu))


@dataclass(frozen=True)
class SimpLaw:
    """Modified SIMP interpolation ``s(rho) = [rho + (1 - rho) rho_min]^exponent``."""

    rho_min: float = 1e-3
    exponent: float = 3.0

    def __call__(self, rho):
        return simp_scale(rho, self.rho_min, self.exponent)

    def deriv(self, rho):
        return simp_scale_deriv(rho, self.rho_min, self.exponent)


def simp_scale(rho, rho_min: float = 1e-3, exponent: float = 3.0):
    r = np.asarray(rho, dtype=float)
    return (r + (1.0 - r) * rho_min) ** exponent


def simp_scale_deriv(rho, rho_min: float = 1e-3, exponent: float = 3.0):
    r = np.asarray(rho, dtype=float)
    return exponent * (r + (1.0 - r) * rho_min) ** (exponent - 1.0) * (1.0 - rho_min)


# --------------------------------------------------------------------------
# shape functions
# --------------------------------------------------------------------------


def shape_values(order: int, bary: np.ndarray) -> np.ndarray:
    """Shape function values, shape (npts, nloc)."""
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    if order == 1:
        return np.column_stack([l1, l2, l3])
    return np.column_stack(
        [l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1), 4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1]
    )


def shape_ref_gradients(order: int, bary: np.ndarray) -> np.ndarray:
    """Gradients w.r.t. (xi, eta), shape (npts, nloc, 2)."""
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    npts = len(bary)
    d1 = np.array([-1.0, -1.0])
    d2 = np.array([1.0, 0.0])
    d3 = np.array([0.0, 1.0])
    if order == 1:
        g = np.empty((npts, 3, 2))
        g[:, 0], g[:, 1], g[:, 2] = d1, d2, d3
        return g
    g = np.empty((npts, 6, 2))
    g[:, 0] = np.outer(4 * l1 - 1, d1)
    g[:, 1] = np.outer(4 * l2 - 1, d2)
    g[:, 2] = np.outer(4 * l3 - 1, d3)
    g[:, 3] = 4 * (np.outer(l2, d1) + np.outer(l1, d2))
    g[:, 4] = 4 * (np.outer(l3, d2) + np.outer(l2, d3))
    g[:, 5] = 4 * (np.outer(l1, d3) + np.outer(l3, d1))
    return g


def element_geometry(nodes: np.ndarray, elements: np.ndarray):
    """Inverse-transposed Jacobians (ne, 2, 2) and determinants (ne,) of the affine maps."""
    v = nodes[elements[:, :3]]
    J = np.empty((len(elements), 2, 2))
    J[:, :, 0] = v[:, 1] - v[:, 0]
    J[:, :, 1] = v[:, 2] - v[:, 0]
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0):
        raise ValueError("singular or inverted element Jacobian")
    invT = np.empty_like(J)
    invT[:, 0, 0] = J[:, 1, 1] / det
    invT[:, 0, 1] = -J[:, 1, 0] / det
    invT[:, 1, 0] = -J[:, 0, 1] / det
    invT[:, 1, 1] = J[:, 0, 0] / det
    return invT, det


def physical_gradients(nodes, elements, order, bary):
    """Shape-function gradients in physical coordinates, shape (ne, npts, nloc, 2)."""
    invT, det = element_geometry(nodes, elements)
    gref = shape_ref_gradients(order, bary)
    return np.einsum("eij,qaj->eqai", invT, gref), det


def element_dofs(elements: np.ndarray) -> np.ndarray:
    ne, nloc = elements.shape
    dofs = np.empty((ne, 2 * nloc), dtype=int)
    dofs[:, 0::2] = 2 * elements
    dofs[:, 1::2] = 2 * elements + 1
    return dofs


def strain_matrices(grads: np.ndarray) -> np.ndarray:
    """B matrices (ne, npts, 3, 2*nloc) mapping element DOFs to (exx, eyy, gxy)."""
    ne, nq, nloc, _ = grads.shape
    B = np.zeros((ne, nq, 3, 2 * nloc))
    B[:, :, 0, 0::2] = grads[..., 0]
    B[:, :, 1, 1::2] = grads[..., 1]
    B[:, :, 2, 0::2] = grads[..., 1]
    B[:, :, 2, 1::2] = grads[..., 0]
    return B


def element_stiffness(nodes, elements, order, lame: LameParams, thickness=1.0, rule: QuadratureRule | None = None):
    """Element stiffness matrices, shape (ne, 2*nloc, 2*nloc)."""
    rule = rule or four_point_rule()
    grads, det = physical_gradients(nodes, elements, order, rule.points)
    B = strain_matrices(grads)
    D = lame.elasticity_matrix()
    wq = rule.weights[None, :] * det[:, None] * thickness
    return np.einsum("eq,eqki,kl,eqlj->eij", wq, B, D, B)


def assemble_component_stiffness(comp: ReferenceComponent, lame: LameParams) -> sp.csr_matrix:
    """Unpenalized (s = 1) stiffness of a reference component, thickness included."""
    ke = element_stiffness(comp.nodes, comp.elements, comp.order, lame, comp.thickness)
    dofs = element_dofs(comp.elements)
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(comp.ndofs, comp.ndofs)).tocsr()
    K.sum_duplicates()
    return K


def body_force_vector(comp: ReferenceComponent, force_density) -> np.ndarray:
    """Consistent load vector of a constant body force (N/m^3)."""
    rule = four_point_rule()
    N = shape_values(comp.order, rule.points)
    _, det = element_geometry(comp.nodes, comp.elements)
    w = rule.weights[None, :] * det[:, None] * comp.thickness
    integ = np.einsum("eq,qa->ea", w, N)
    f = np.zeros(comp.ndofs)
    np.add.at(f, 2 * comp.elements, integ * force_density[0])
    np.add.at(f, 2 * comp.elements + 1, integ * force_density[1])
    return f


# --------------------------------------------------------------------------
# 1D port operators
# --------------------------------------------------------------------------


def port_segments(order: int, npts: int) -> np.ndarray:
    """Local node triples/pairs of the 1D port mesh (indices into the port node list)."""
    if order == 1:
        return np.column_stack([np.arange(npts - 1), np.arange(1, npts)])
    starts = np.arange(0, npts - 1, 2)
    return np.column_stack([starts, starts + 1, starts + 2])


def port_matrices(order: int, coord: np.ndarray):
    """1D mass and Laplacian matrices on a port with nodes at ``coord``."""
    n = len(coord)
    segs = port_segments(order, n)
    M = np.zeros((n, n))
    L = np.zeros((n, n))
    if order == 1:
        m0 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        l0 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    else:
        # local order (start, mid, end)
        m0 = np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) / 30.0
        l0 = np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / 3.0
    for s in segs:
        h = coord[s[-1]] - coord[s[0]]
        M[np.ix_(s, s)] += h * m0
        L[np.ix_(s, s)] += l0 / h
    return M, L


def port_load_weights(order: int, coord: np.ndarray) -> np.ndarray:
    """Integrals of the port shape functions, sum = port length."""
    n = len(coord)
    w = np.zeros(n)
    local = np.array([0.5, 0.5]) if order == 1 else np.array([1.0, 4.0, 1.0]) / 6.0
    for s in port_segments(order, n):
        w[s] += (coord[s[-1]] - coord[s[0]]) * local
    return w


def port_traction_vector(comp: ReferenceComponent, side: str, force) -> np.ndarray:
    """Consistent nodal load of a total force spread uniformly over a port."""
    coord = comp.port_coordinate(side)
    w = port_load_weights(comp.order, coord)
    length = coord[-1] - coord[0]
    f = np.zeros(comp.ndofs)
    idx = comp.ports[side]
    f[2 * idx] = force[0] * w / length
    f[2 * idx + 1] = force[1] * w / length
    return f


# --------------------------------------------------------------------------
# stresses
# --------------------------------------------------------------------------


def displacement_gradients(comp: ReferenceComponent, u: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Displacement gradients at points of every element.

    ``u`` is (ndofs,) or (ndofs, k); returns (ne, npts, 4[, k]) with entries
    (dux/dx, dux/dy, duy/dx, duy/dy).
    """
    grads, _ = physical_gradients(comp.nodes, comp.elements, comp.order, bary)
    single = u.ndim == 1
    U = u[:, None] if single else u
    ux = U[0::2][comp.elements]  # (ne, nloc, k)
    uy = U[1::2][comp.elements]
    out = np.empty(grads.shape[:2] + (4, U.shape[1]))
    out[:, :, 0] = np.einsum("eqa,eak->eqk", grads[..., 0], ux)
    out[:, :, 1] = np.einsum("eqa,eak->eqk", grads[..., 1], ux)
    out[:, :, 2] = np.einsum("eqa,eak->eqk", grads[..., 0], uy)
    out[:, :, 3] = np.einsum("eqa,eak->eqk", grads[..., 1], uy)
    return out[..., 0] if single else out


def stress_from_gradients(dg: np.ndarray, lame: LameParams):
    """(sxx, syy, sxy) from displacement gradients along axis -1 of size 4."""
    exx, eyy = dg[..., 0], dg[..., 3]
    gxy = dg[..., 1] + dg[..., 2]
    a = lame.lam + 2.0 * lame.mu
    return a * exx + lame.lam * eyy, a * eyy + lame.lam * exx, lame.mu * gxy


def element_stress(comp: ReferenceComponent, u: np.ndarray, lame: LameParams, bary: np.ndarray):
    """Stress components at barycentric points in every element, each (ne, npts)."""
    dg = displacement_gradients(comp, u, bary)
    return stress_from_gradients(np.moveaxis(dg, 2, -1), lame)


def von_mises(sxx, syy, sxy):
    """Plane-stress Von Mises stress."""
    sxx, syy, sxy = np.asarray(sxx), np.asarray(syy), np.asarray(sxy)
    if not (sxx.shape == syy.shape == sxy.shape):
        raise ValueError("stress component arrays must have equal shapes")
    return np.sqrt(np.maximum(sxx * sxx + syy * syy - sxx * syy + 3.0 * sxy * sxy, 0.0))


# --------------------------------------------------------------------------
# monolithic full-order model
# --------------------------------------------------------------------------


class FullOrderModel:
    """Monolithic FEM on a ground structure with port nodes merged.

    This is the reference ("oracle") solver against which the condensed
    models are checked.
    """

    def __init__(self, gs: GroundStructure, lame: LameParams, simp: SimpLaw | None = None):
        self.gs = gs
        self.lame = lame
        self.simp = simp or SimpLaw()
        self._ref_K = {code: assemble_component_stiffness(ref, lame) for code, ref in gs.references.items()}
        self.node_maps = self._merge_nodes()
        self.nnodes = int(max(m.max() for m in self.node_maps)) + 1
        self.ndofs = 2 * self.nnodes
        fixed = []
        for p in gs.dirichlet_ports:
            for i, side in gs.global_ports[p]:
                idx = self.node_maps[i][gs.reference(i).ports[side]]
                fixed.append(np.concatenate([2 * idx, 2 * idx + 1]))
        self.fixed = np.unique(np.concatenate(fixed)) if fixed else np.zeros(0, dtype=int)
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)

    def _merge_nodes(self):
        gs = self.gs
        maps = []
        start = 0
        for i in range(gs.n_components):
            n = gs.reference(i).nnodes
            maps.append(np.arange(start, start + n))
            start += n
        for pair in gs.global_ports:
            if len(pair) != 2:
                continue
            (i, si), (j, sj) = pair
            maps[j][gs.reference(j).ports[sj]] = maps[i][gs.reference(i).ports[si]]
        # compress numbering
        allids = np.unique(np.concatenate(maps))
        lookup = -np.ones(start, dtype=int)
        lookup[allids] = np.arange(len(allids))
        return [lookup[m] for m in maps]

    def instance_dofs(self, i: int) -> np.ndarray:
        m = self.node_maps[i]
        d = np.empty(2 * len(m), dtype=int)
        d[0::2] = 2 * m
        d[1::2] = 2 * m + 1
        return d

    def stiffness(self, rho) -> sp.csr_matrix:
        scale = self.simp(np.asarray(rho, dtype=float))
        rows, cols, vals = [], [], []
        for i in range(self.gs.n_components):
            Kr = self._ref_K[self.gs.instances[i][1]].tocoo()
            d = self.instance_dofs(i)
            rows.append(d[Kr.row])
            cols.append(d[Kr.col])
            vals.append(scale[i] * Kr.data)
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.ndofs, self.ndofs)
        ).tocsr()
        K.sum_duplicates()
        return K

    def load_vector(self, body_force=None) -> np.ndarray:
        gs = self.gs
        f = np.zeros(self.ndofs)
        for p, force in gs.loaded_ports:
            (i, side), = gs.global_ports[p]
            np.add.at(f, self.instance_dofs(i), port_traction_vector(gs.reference(i), side, force))
        if body_force is not None:
            for i in range(gs.n_components):
                np.add.at(f, self.instance_dofs(i), body_force_vector(gs.reference(i), body_force))
        return f

    def solve(self, rho, body_force=None) -> np.ndarray:
        """Global nodal displacement vector."""
        if len(self.fixed) == 0:
            raise ValueError("full-order solve needs at least one Dirichlet port")
        K = self.stiffness(rho)
        f = self.load_vector(body_force)
        u = np.zeros(self.ndofs)
        if not np.any(f):
            return u
        Kff = K[self.free][:, self.free].tocsc()
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                u[self.free] = spla.spsolve(Kff, f[self.free])
            except spla.MatrixRankWarning as exc:
                raise ValueError("singular full-order system") from exc
        if not np.all(np.isfinite(u)):
            raise ValueError("singular full-order system")
        return u

    def split(self, u: np.ndarray) -> list:
        """Per-instance nodal DOF vectors of a global displacement."""
        return [u[self.instance_dofs(i)] for i in range(self.gs.n_components)]


def full_fem_solve(gs: GroundStructure, rho, lame: LameParams, simp: SimpLaw | None = None, body_force=None):
    """Per-instance displacement fields from the monolithic FEM."""
    fom = FullOrderModel(gs, lame, simp)
    return fom.split(fom.solve(rho, body_force))
