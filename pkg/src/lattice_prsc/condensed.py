"""Condensed (Schur complement) system on port modes: assembly, solve, reconstruction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .fem import SimpLaw, port_traction_vector
from .mesh import GroundStructure
from .offline import ComponentLibrary, LibraryError, port_class


class SingularSystemError(ValueError):
    """Raised when the condensed matrix is not positive definite."""

    def __init__(self, message: str, port: int | None = None, mode: int | None = None):
        super().__init__(message)
        self.port = port
        self.mode = mode


@dataclass
class CondensedSystem:
    """Assembled condensed system at one density vector."""

    K: np.ndarray
    F: np.ndarray
    rho: np.ndarray
    mode: str
    factor: np.ndarray | None = None
    U: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.K.shape[0]


# Pivots with L_kk^2 below this fraction of K_kk are treated as zero; rigid
# modes of an unsupported structure survive roundoff at about 1e-10.
PIVOT_REL_TOL = 1e-9


def cholesky_factor(K: np.ndarray):
    """Lower Cholesky factor via LAPACK; returns (L, info) with info > 0 at the first bad pivot.

    A factorization that succeeds but has a pivot ratio L_kk^2 / K_kk below
    ``PIVOT_REL_TOL`` reports that row as failing too.
    """
    c, info = lapack.dpotrf(K, lower=1, clean=1, overwrite_a=0)
    if info == 0 and K.shape[0]:
        ratio = np.diag(c) ** 2 / np.diag(K)
        bad = np.flatnonzero(ratio < PIVOT_REL_TOL)
        if bad.size:
            info = int(bad[0]) + 1
    return c, int(info)


def cholesky_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    x, info = lapack.dpotrs(L, b, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs failed with info={info}")
    return x


class CondensedModel:
    """Port-mode discretization of a ground structure with a component library.

    Global unknowns are (global port p, mode k) pairs for every port that is
    not Dirichlet, ordered by port then mode.
    """

    def __init__(self, gs: GroundStructure, lib: ComponentLibrary, simp: SimpLaw | None = None):
        if lib.params != gs.params:
            raise LibraryError("library mesh parameters differ from the ground structure's")
        missing = sorted({code for _, code in gs.instances} - set(lib.components))
        if missing:
            raise LibraryError(f"library has no data for component types {missing}")
        self.gs = gs
        self.lib = lib
        self.simp = simp or SimpLaw()
        self.mode = "ROM" if lib.reduced else "FOM-SC"
        dirichlet = set(gs.dirichlet_ports)
        self.port_offset = {}
        self.dof_port = []
        self.dof_mode = []
        n = 0
        for p, members in enumerate(gs.global_ports):
            if p in dirichlet:
                continue
            i, side = members[0]
            d = lib.bases[port_class(side)].dim
            self.port_offset[p] = n
            self.dof_port.extend([p] * d)
            self.dof_mode.extend(range(d))
            n += d
        self.ndofs = n
        self.dof_port = np.array(self.dof_port, dtype=int)
        self.dof_mode = np.array(self.dof_mode, dtype=int)
        self.local_maps = []
        for i, (_, code) in enumerate(gs.instances):
            data = lib[code]
            m = -np.ones(data.n_modes, dtype=int)
            for side, (a, b) in data.mode_slices.items():
                p = gs.local_to_global[i][side]
                if p in self.port_offset:
                    m[a:b] = self.port_offset[p] + np.arange(b - a)
            self.local_maps.append(m)
        self._build_scatter()
        self._F_traction = self._traction_rhs()

    # ------------------------------------------------------------------ setup

    def _build_scatter(self):
        targets, inst, vals = [], [], []
        for i, (_, code) in enumerate(self.gs.instances):
            m = self.local_maps[i]
            keep = np.flatnonzero(m >= 0)
            A = self.lib[code].schur0[np.ix_(keep, keep)]
            gi = m[keep]
            targets.append((gi[:, None] * self.ndofs + gi[None, :]).ravel())
            vals.append(A.ravel())
            inst.append(np.full(A.size, i))
        self._targets = np.concatenate(targets) if targets else np.zeros(0, int)
        self._inst = np.concatenate(inst) if inst else np.zeros(0, int)
        self._vals = np.concatenate(vals) if vals else np.zeros(0)

    def _traction_rhs(self) -> np.ndarray:
        F = np.zeros(self.ndofs)
        for p, force in self.gs.loaded_ports:
            (i, side), = self.gs.global_ports[p]
            comp = self.gs.reference(i)
            f = port_traction_vector(comp, side, force)
            local = self.lib[self.gs.instances[i][1]].phi.T @ f
            m = self.local_maps[i]
            np.add.at(F, m[m >= 0], local[m >= 0])
        return F

    # ------------------------------------------------------------ operations

    def scales(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.gs.n_components,):
            raise ValueError(f"density vector must have length {self.gs.n_components}")
        return self.simp(rho)

    def assemble_matrix(self, rho) -> np.ndarray:
        s = self.scales(rho)
        K = np.bincount(self._targets, weights=s[self._inst] * self._vals, minlength=self.ndofs**2)
        return K.reshape(self.ndofs, self.ndofs)

    def load_vector(self, body_force=None) -> np.ndarray:
        F = self._F_traction.copy()
        if body_force is not None:
            bf = np.asarray(body_force, dtype=float)
            for i, (_, code) in enumerate(self.gs.instances):
                local = self.lib[code].phi_body @ bf
                m = self.local_maps[i]
                np.add.at(F, m[m >= 0], local[m >= 0])
        return F

    def assemble(self, rho, body_force=None) -> CondensedSystem:
        return CondensedSystem(
            self.assemble_matrix(rho), self.load_vector(body_force), np.array(rho, dtype=float), self.mode
        )

    def factorize(self, sys: CondensedSystem) -> CondensedSystem:
        if self.ndofs == 0:
            raise SingularSystemError("condensed system has no free port modes")
        L, info = cholesky_factor(sys.K)
        if info != 0:
            row = info - 1
            p, k = int(self.dof_port[row]), int(self.dof_mode[row])
            raise SingularSystemError(
                f"condensed matrix not positive definite: first failing pivot at port {p}, mode {k}", p, k
            )
        sys.factor = L
        return sys

    def solve_system(self, sys: CondensedSystem) -> np.ndarray:
        if sys.factor is None:
            self.factorize(sys)
        sys.U = cholesky_solve(sys.factor, sys.F)
        return sys.U

    def solve(self, rho, body_force=None) -> CondensedSystem:
        """Assemble, factor and solve; the returned system keeps the factor and solution."""
        sys = self.assemble(rho, body_force)
        self.solve_system(sys)
        return sys

    def local_coefficients(self, U: np.ndarray, i: int) -> np.ndarray:
        m = self.local_maps[i]
        out = np.zeros(len(m))
        out[m >= 0] = U[m[m >= 0]]
        return out

    def reconstruct(self, rho, U: np.ndarray, body_force=None) -> list:
        """Per-instance nodal displacement vectors."""
        s = self.scales(rho)
        fields = []
        for i, (_, code) in enumerate(self.gs.instances):
            data = self.lib[code]
            u = data.phi @ self.local_coefficients(U, i)
            if body_force is not None:
                u = u + data.forcing_bubbles @ np.asarray(body_force, dtype=float) / s[i]
            fields.append(u)
        return fields

    def port_coefficients(self, p: int, trace: np.ndarray) -> np.ndarray:
        """Coefficients of a nodal port trace ([x nodes, y nodes]) in the port basis of ``p``."""
        from .fem import port_matrices

        i, side = self.gs.global_ports[p][0]
        comp = self.gs.reference(i)
        M, _ = port_matrices(comp.order, comp.port_coordinate(side))
        B = self.lib.bases[port_class(side)]
        n = B.npts
        return np.concatenate([B.x.T @ M @ trace[:n], B.y.T @ M @ trace[n:]])


def assemble_condensed(gs, lib, rho, simp=None, body_force=None) -> CondensedSystem:
    return CondensedModel(gs, lib, simp).assemble(rho, body_force)


def solve_condensed(sys: CondensedSystem) -> np.ndarray:
    """Solve a standalone condensed system by Cholesky."""
    L, info = cholesky_factor(sys.K)
    if info != 0:
        raise SingularSystemError(f"condensed matrix not positive definite at row {info - 1}")
    sys.factor = L
    sys.U = cholesky_solve(L, sys.F)
    return sys.U


def reconstruct(gs, lib, rho, U, simp=None, body_force=None) -> list:
    return CondensedModel(gs, lib, simp).reconstruct(rho, U, body_force)
