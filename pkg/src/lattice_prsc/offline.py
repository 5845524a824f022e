"""Offline stage: port bases, interface functions and the component library.

Ports come in two classes that share one basis each: ``"horizontal"``
(bottom/top edges) and ``"vertical"`` (left/right edges).  Port basis
functions are stored as nodal values along the port, separately for the x
and y displacement components, orthonormal in the port L2 inner product with
the constant function first.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .fem import (
    LameParams,
    assemble_component_stiffness,
    body_force_vector,
    displacement_gradients,
    port_matrices,
)
from .mesh import ComponentFactory, MeshParams, ReferenceComponent, four_point_rule

PORT_CLASSES = ("horizontal", "vertical")
LIBRARY_MAGIC = b"LPRSCLIB"
LIBRARY_VERSION = 1


def port_class(side: str) -> str:
    return "horizontal" if side in ("bottom", "top") else "vertical"


class LibraryError(ValueError):
    pass


# --------------------------------------------------------------------------
# port bases
# --------------------------------------------------------------------------


@dataclass
class PortBasis:
    """Basis of one port class.

    ``x`` and ``y`` hold nodal values (npts, n_x) and (npts, n_y) of the
    scalar functions used for the x and y displacement components.
    """

    x: np.ndarray
    y: np.ndarray
    reduced: bool = False
    energy_captured: tuple = (1.0, 1.0)

    @property
    def dim(self) -> int:
        return self.x.shape[1] + self.y.shape[1]

    @property
    def npts(self) -> int:
        return self.x.shape[0]

    def nodal(self) -> np.ndarray:
        """Matrix (2*npts, dim) mapping coefficients to port DOFs ordered [x nodes, y nodes]."""
        n = self.npts
        B = np.zeros((2 * n, self.dim))
        B[:n, : self.x.shape[1]] = self.x
        B[n:, self.x.shape[1] :] = self.y
        return B


def _m_orthonormalize(V: np.ndarray, M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Twice-iterated modified Gram-Schmidt in the M inner product; drops dependent columns."""
    out = []
    for v in V.T:
        w = v.astype(float).copy()
        norm0 = np.sqrt(max(w @ M @ w, 0.0))
        for _ in range(2):
            for q in out:
                w -= (q @ M @ w) * q
        nrm = np.sqrt(max(w @ M @ w, 0.0))
        if norm0 == 0.0 or nrm <= tol * norm0:
            continue
        out.append(w / nrm)
    return np.array(out).T if out else np.zeros((V.shape[0], 0))


def port_eigenbasis(order: int, coord: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """M-orthonormal port Laplacian eigenvectors, constant first, and eigenvalues."""
    M, L = port_matrices(order, coord)
    lam, vec = sla.eigh(L, M)
    const = np.ones(len(coord)) / np.sqrt(coord[-1] - coord[0])
    vec = np.column_stack([const, vec[:, 1:]])
    return _m_orthonormalize(vec, M), lam


def full_port_basis(order: int, coord: np.ndarray) -> PortBasis:
    """Unreduced basis spanning the whole port space (used for FOM static condensation)."""
    E, _ = port_eigenbasis(order, coord)
    return PortBasis(x=E.copy(), y=E.copy(), reduced=False, energy_captured=(1.0, 1.0))


def pod_reduce(snap_x: np.ndarray, snap_y: np.ndarray, mass: np.ndarray, energy_fraction: float) -> PortBasis:
    """L2 POD of port traces, separately for each displacement component.

    The constant function is projected out of the snapshots, the energy
    criterion is applied to what remains, and the constant is prepended.
    Snapshots are columns, shape (npts, nsnap).
    """
    if not 0.0 < energy_fraction <= 1.0:
        raise ValueError("energy fraction must lie in (0, 1]")
    if snap_x.size == 0 or snap_y.size == 0:
        raise ValueError("empty snapshot set")
    bx, ex = _pod_component(snap_x, mass, energy_fraction)
    by, ey = _pod_component(snap_y, mass, energy_fraction)
    return PortBasis(x=bx, y=by, reduced=True, energy_captured=(ex, ey))


def _pod_component(X: np.ndarray, M: np.ndarray, frac: float):
    npts = X.shape[0]
    c = np.ones(npts)
    c /= np.sqrt(c @ M @ c)
    Xd = X - np.outer(c, c @ M @ X)
    R = np.linalg.cholesky(M).T  # M = R^T R
    Y = R @ Xd
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    energy = s**2
    total = energy.sum()
    if total == 0.0 or s[0] == 0.0:
        return c[:, None], 1.0
    rank = int(np.sum(s > s[0] * 1e-10))
    csum = np.cumsum(energy[:rank])
    k = int(np.searchsorted(csum, frac * total * (1.0 - 1e-12))) + 1
    k = min(k, rank)
    modes = sla.solve_triangular(R, U[:, :k])
    basis = _m_orthonormalize(np.column_stack([c, modes]), M)
    return basis, float(csum[k - 1] / total)


# --------------------------------------------------------------------------
# per-component operators
# --------------------------------------------------------------------------


class ComponentSolver:
    """Cached interior factorization of one reference component.

    Port DOFs are ordered side by side in ``comp.sides`` order, each side as
    [x nodes, y nodes]; everything else (including non-port boundary) is
    interior.
    """

    def __init__(self, comp: ReferenceComponent, K):
        self.comp = comp
        self.K = K.tocsr()
        self.P = comp.all_port_dofs()
        self.I = comp.interior_dofs()
        if len(self.P) == 0:
            raise ValueError(f"component {comp.type_id!r} has no port DOFs; interior block is singular")
        Kd = self.K
        self.K_IP = Kd[self.I][:, self.P].toarray()
        self.K_PP = Kd[self.P][:, self.P].toarray()
        K_II = Kd[self.I][:, self.I].toarray()
        try:
            self._chol = sla.cho_factor(K_II, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular interior block for component {comp.type_id!r}") from exc
        self.side_slices = {}
        start = 0
        for s in comp.sides:
            n = 2 * len(comp.ports[s])
            self.side_slices[s] = slice(start, start + n)
            start += n

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self._chol, rhs)

    def extend(self, gP: np.ndarray) -> np.ndarray:
        """Discrete elastic-harmonic extension of port values ``gP`` (nP,) or (nP, k)."""
        single = gP.ndim == 1
        G = gP[:, None] if single else gP
        out = np.zeros((self.comp.ndofs, G.shape[1]))
        out[self.P] = G
        out[self.I] = -self.solve_interior(self.K_IP @ G)
        return out[:, 0] if single else out

    def nodal_schur(self) -> np.ndarray:
        S = self.K_PP - self.K_IP.T @ self.solve_interior(self.K_IP)
        return 0.5 * (S + S.T)


def port_trace_matrix(comp: ReferenceComponent, bases: dict) -> tuple[np.ndarray, dict]:
    """Block-diagonal map from local mode coefficients to port DOFs, plus mode slices."""
    blocks = [bases[port_class(s)].nodal() for s in comp.sides]
    B = sla.block_diag(*blocks)
    slices = {}
    start = 0
    for s, b in zip(comp.sides, blocks):
        slices[s] = (start, start + b.shape[1])
        start += b.shape[1]
    return B, slices


def lift_port_basis(comp: ReferenceComponent, K, bases: dict, solver: ComponentSolver | None = None):
    """Lifted port basis: traces equal to the basis on the owning port, zero elsewhere."""
    solver = solver or ComponentSolver(comp, K)
    B, _ = port_trace_matrix(comp, bases)
    return solver.extend(B)


def solve_bubbles(comp: ReferenceComponent, K, lifted: np.ndarray, body_forces=None, solver=None):
    """Port bubbles ``b`` with a(b, v) = -a(psi, v) and forcing bubbles for ``body_forces``.

    ``body_forces`` is a sequence of constant force densities; returns
    ``(bubbles, forcing_bubbles)`` where the latter has one column per force.
    """
    solver = solver or ComponentSolver(comp, K)
    Kc = K.tocsr()
    I = solver.I
    bubbles = np.zeros_like(lifted)
    rhs = -(Kc @ lifted)[I]
    bubbles[I] = solver.solve_interior(rhs)
    forces = [] if body_forces is None else list(body_forces)
    fb = np.zeros((comp.ndofs, len(forces)))
    for k, fd in enumerate(forces):
        f = body_force_vector(comp, np.asarray(fd, dtype=float))
        fb[I, k] = solver.solve_interior(f[I])
    return bubbles, fb


def component_schur_contribution(K, phi: np.ndarray) -> np.ndarray:
    """Unpenalized Schur contribution a0(phi_k, phi_l)."""
    A = phi.T @ (K @ phi)
    return 0.5 * (A + A.T)


# --------------------------------------------------------------------------
# pairwise training
# --------------------------------------------------------------------------


@dataclass
class SnapshotSet:
    """Shared-port traces from pairwise training, snapshots as columns."""

    port_class: str
    x: np.ndarray
    y: np.ndarray
    pairs: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.x.shape[1]


def random_port_data(rng: np.random.Generator, eig: np.ndarray, eta: float) -> np.ndarray:
    """Random smooth port values: N(0,1) coefficients decayed by (1+k)^(-eta/10)."""
    k = np.arange(eig.shape[1])
    c = rng.standard_normal(eig.shape[1]) * (1.0 + k) ** (-eta / 10.0)
    return eig @ c


def pairwise_train(
    comp_a: ReferenceComponent,
    side_a: str,
    comp_b: ReferenceComponent,
    side_b: str,
    n_snapshots: int,
    eta: float,
    seed,
    lame: LameParams,
    schur_a: np.ndarray | None = None,
    schur_b: np.ndarray | None = None,
    return_data: bool = False,
):
    """Snapshots of the shared-port trace of two joined components.

    Each snapshot draws random smooth Dirichlet data on every other port of
    the pair and random densities for both components, then solves the pair
    with the shared port free.  Returns ``(trace_x, trace_y)`` arrays of shape
    (npts, n_snapshots); with ``return_data`` also the boundary data and
    stiffness scalings used.
    """
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    rng = np.random.default_rng(seed)
    sa = schur_a if schur_a is not None else ComponentSolver(comp_a, assemble_component_stiffness(comp_a, lame)).nodal_schur()
    sb = schur_b if schur_b is not None else ComponentSolver(comp_b, assemble_component_stiffness(comp_b, lame)).nodal_schur()

    def layout(comp, shared):
        sl, start = {}, 0
        for s in comp.sides:
            n = 2 * len(comp.ports[s])
            sl[s] = np.arange(start, start + n)
            start += n
        ext = np.concatenate([sl[s] for s in comp.sides if s != shared]) if len(comp.sides) > 1 else np.zeros(0, int)
        return sl[shared], ext, [s for s in comp.sides if s != shared]

    sh_a, ex_a, sides_a = layout(comp_a, side_a)
    sh_b, ex_b, sides_b = layout(comp_b, side_b)
    npts = len(comp_a.ports[side_a])
    eig, _ = port_eigenbasis(comp_a.order, comp_a.port_coordinate(side_a))
    tx = np.empty((npts, n_snapshots))
    ty = np.empty((npts, n_snapshots))
    data = []
    for k in range(n_snapshots):
        rho = rng.uniform(0.0, 1.0, size=2)
        s_a, s_b = (rho + (1.0 - rho) * 1e-3) ** 3
        ga = np.concatenate([np.concatenate([random_port_data(rng, eig, eta), random_port_data(rng, eig, eta)]) for _ in sides_a]) if len(ex_a) else np.zeros(0)
        gb = np.concatenate([np.concatenate([random_port_data(rng, eig, eta), random_port_data(rng, eig, eta)]) for _ in sides_b]) if len(ex_b) else np.zeros(0)
        lhs = s_a * sa[np.ix_(sh_a, sh_a)] + s_b * sb[np.ix_(sh_b, sh_b)]
        rhs = -(s_a * sa[np.ix_(sh_a, ex_a)] @ ga + s_b * sb[np.ix_(sh_b, ex_b)] @ gb)
        u = sla.solve(lhs, rhs, assume_a="pos")
        tx[:, k] = u[:npts]
        ty[:, k] = u[npts:]
        if return_data:
            data.append({"s": (s_a, s_b), "ga": ga, "gb": gb, "trace": u})
    if return_data:
        return tx, ty, data
    return tx, ty


@dataclass
class TrainingData:
    params: MeshParams
    codes: tuple
    n_snapshots: int
    eta: float
    seed: int
    snapshots: dict


def collect_snapshots(params: MeshParams, codes, lame: LameParams, n_snapshots: int = 100, eta: float = 10.0, seed: int = 0) -> TrainingData:
    """Pairwise training over every ordered pair of reference types and both joint directions."""
    factory = ComponentFactory(params)
    codes = tuple(sorted(codes))
    schur = {}
    for c in codes:
        comp = factory(c)
        schur[c] = ComponentSolver(comp, assemble_component_stiffness(comp, lame)).nodal_schur()
    joints = {"vertical": ("right", "left"), "horizontal": ("top", "bottom")}
    ss = np.random.SeedSequence(seed)
    children = iter(ss.spawn(2 * len(codes) ** 2))
    snaps = {}
    for cls in PORT_CLASSES:
        sa_side, sb_side = joints[cls]
        xs, ys, pairs = [], [], []
        for a in codes:
            for b in codes:
                child = next(children)
                ca, cb = factory(a), factory(b)
                if sa_side not in ca.ports or sb_side not in cb.ports:
                    continue
                tx, ty = pairwise_train(ca, sa_side, cb, sb_side, n_snapshots, eta, child, lame, schur[a], schur[b])
                xs.append(tx)
                ys.append(ty)
                pairs.append((a, b))
        if not xs:
            raise LibraryError(f"no component pairs available for {cls} ports")
        snaps[cls] = SnapshotSet(cls, np.hstack(xs), np.hstack(ys), pairs)
    return TrainingData(params, codes, n_snapshots, eta, seed, snaps)


# --------------------------------------------------------------------------
# component library
# --------------------------------------------------------------------------


@dataclass
class ComponentData:
    type_id: str
    psi: np.ndarray
    bubbles: np.ndarray
    forcing_bubbles: np.ndarray
    phi_body: np.ndarray
    schur0: np.ndarray
    grad_table: np.ndarray
    mode_slices: dict

    @property
    def phi(self) -> np.ndarray:
        return self.psi + self.bubbles

    @property
    def n_modes(self) -> int:
        return self.schur0.shape[0]


UNIT_BODY_FORCES = ((1.0, 0.0), (0.0, 1.0))


def build_component_data(comp: ReferenceComponent, lame: LameParams, bases: dict) -> ComponentData:
    K = assemble_component_stiffness(comp, lame)
    solver = ComponentSolver(comp, K)
    psi = lift_port_basis(comp, K, bases, solver)
    bub, fb = solve_bubbles(comp, K, psi, UNIT_BODY_FORCES, solver)
    phi = psi + bub
    A0 = component_schur_contribution(K, phi)
    phi_body = np.column_stack([body_force_vector(comp, np.array(f)) @ phi for f in UNIT_BODY_FORCES])
    grad = displacement_gradients(comp, phi, four_point_rule().points)
    _, slices = port_trace_matrix(comp, bases)
    return ComponentData(comp.type_id, psi, bub, fb, phi_body, A0, grad, slices)


@dataclass
class ComponentLibrary:
    params: MeshParams
    lame: LameParams
    bases: dict
    components: dict
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, code: str) -> ComponentData:
        try:
            return self.components[code]
        except KeyError:
            raise LibraryError(f"component type {code!r} is not in the library") from None

    def covers(self, codes) -> bool:
        return set(codes) <= set(self.components)

    @property
    def reduced(self) -> bool:
        return any(b.reduced for b in self.bases.values())

    def checksum(self) -> str:
        return hashlib.sha256(library_bytes(self)).hexdigest()


def build_library(params: MeshParams, codes, lame: LameParams, bases: dict, provenance=None) -> ComponentLibrary:
    factory = ComponentFactory(params)
    comps = {c: build_component_data(factory(c), lame, bases) for c in sorted(codes)}
    return ComponentLibrary(params, lame, bases, comps, dict(provenance or {}))


def full_library(params: MeshParams, codes, lame: LameParams) -> ComponentLibrary:
    """Library with unreduced port bases (full-order static condensation)."""
    comp = ComponentFactory(params)(sorted(codes)[0])
    side = {"horizontal": "bottom", "vertical": "left"}
    bases = {}
    for cls in PORT_CLASSES:
        bases[cls] = full_port_basis(params.order, comp.port_coordinate(side[cls]))
    prov = {"mode": "full", "energy_fraction": 1.0, "codes": list(sorted(codes))}
    return build_library(params, codes, lame, bases, prov)


def reduced_bases(training: TrainingData, energy_fraction: float) -> dict:
    comp = ComponentFactory(training.params)(training.codes[0])
    side = {"horizontal": "bottom", "vertical": "left"}
    bases = {}
    for cls in PORT_CLASSES:
        M, _ = port_matrices(training.params.order, comp.port_coordinate(side[cls]))
        snap = training.snapshots[cls]
        bases[cls] = pod_reduce(snap.x, snap.y, M, energy_fraction)
    return bases


def library_from_training(training: TrainingData, lame: LameParams, energy_fraction: float, codes=None) -> ComponentLibrary:
    bases = reduced_bases(training, energy_fraction)
    prov = {
        "mode": "rom",
        "energy_fraction": float(energy_fraction),
        "n_snapshots": int(training.n_snapshots),
        "snapshots_per_class": {k: int(v.count) for k, v in sorted(training.snapshots.items())},
        "eta": float(training.eta),
        "seed": int(training.seed),
        "codes": list(training.codes),
    }
    return build_library(training.params, codes or training.codes, lame, bases, prov)


def train_library(params: MeshParams, codes, lame: LameParams, energy_fraction: float = 0.999, n_snapshots: int = 100, eta: float = 10.0, seed: int = 0) -> ComponentLibrary:
    training = collect_snapshots(params, codes, lame, n_snapshots, eta, seed)
    return library_from_training(training, lame, energy_fraction)


# --------------------------------------------------------------------------
# library file format
# --------------------------------------------------------------------------
#
#   magic      8 bytes  b"LPRSCLIB"
#   version    uint32 LE
#   hlen       uint64 LE, length of the JSON header
#   header     UTF-8 JSON (sorted keys): {"meta": ..., "sections": [{name, dtype, shape, offset, nbytes}]}
#   payload    section arrays, little-endian, C order, at the listed offsets
#   checksum   32 bytes, SHA-256 of everything above


def _sections(lib: ComponentLibrary):
    out = []
    for cls in sorted(lib.bases):
        b = lib.bases[cls]
        out.append((f"basis/{cls}/x", b.x))
        out.append((f"basis/{cls}/y", b.y))
    for code in sorted(lib.components):
        c = lib.components[code]
        for name in ("psi", "bubbles", "forcing_bubbles", "phi_body", "schur0", "grad_table"):
            out.append((f"component/{code}/{name}", getattr(c, name)))
    return out


def library_bytes(lib: ComponentLibrary) -> bytes:
    sections, blobs, offset = [], [], 0
    for name, arr in _sections(lib):
        a = np.ascontiguousarray(arr, dtype="<f8")
        raw = a.tobytes()
        sections.append({"name": name, "dtype": "<f8", "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    meta = {
        "params": lib.params.__dict__,
        "lame": {"mu": lib.lame.mu, "lam": lib.lame.lam},
        "provenance": lib.provenance,
        "bases": {
            cls: {"reduced": b.reduced, "energy_captured": list(b.energy_captured)} for cls, b in sorted(lib.bases.items())
        },
        "mode_slices": {
            code: {s: list(v) for s, v in c.mode_slices.items()} for code, c in sorted(lib.components.items())
        },
    }
    header = json.dumps({"meta": meta, "sections": sections}, sort_keys=True).encode("utf-8")
    body = LIBRARY_MAGIC + struct.pack("<IQ", LIBRARY_VERSION, len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_library(lib: ComponentLibrary, path) -> str:
    data = library_bytes(lib)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_library(path) -> ComponentLibrary:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 52 or data[:8] != LIBRARY_MAGIC:
        raise LibraryError("not a component library file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise LibraryError("library checksum mismatch")
    version, hlen = struct.unpack("<IQ", body[8:20])
    if version != LIBRARY_VERSION:
        raise LibraryError(f"unsupported library version {version}")
    header = json.loads(body[20 : 20 + hlen].decode("utf-8"))
    payload = body[20 + hlen :]
    arrays = {}
    for s in header["sections"]:
        raw = payload[s["offset"] : s["offset"] + s["nbytes"]]
        arrays[s["name"]] = np.frombuffer(raw, dtype=s["dtype"]).reshape(s["shape"]).astype(float)
    meta = header["meta"]
    params = MeshParams(**meta["params"])
    lame = LameParams(**meta["lame"])
    bases = {}
    for cls, info in meta["bases"].items():
        bases[cls] = PortBasis(
            arrays[f"basis/{cls}/x"], arrays[f"basis/{cls}/y"], info["reduced"], tuple(info["energy_captured"])
        )
    comps = {}
    for code, sl in meta["mode_slices"].items():
        g = lambda n: arrays[f"component/{code}/{n}"]  # noqa: E731
        comps[code] = ComponentData(
            code,
            g("psi"),
            g("bubbles"),
            g("forcing_bubbles"),
            g("phi_body"),
            g("schur0"),
            g("grad_table"),
            {s: tuple(v) for s, v in sl.items()},
        )
    return ComponentLibrary(params, lame, bases, comps, meta["provenance"])
