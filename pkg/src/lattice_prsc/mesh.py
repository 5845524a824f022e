"""Reference-component meshes, quadrature rules and ground-structure layouts.

Every component is an axis-aligned square cell discretized on an ``N x N``
pixel grid. Each pixel is split into two triangles following a "union jack"
pattern so that both cell diagonals are mesh lines; component types are
material masks over those triangles.  Ports are the middle part of each cell
edge; the ``corner_gap`` pixels at each end of an edge are void so that ports
of one component never share nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

SIDES = ("bottom", "right", "top", "left")
OPPOSITE = {"bottom": "top", "top": "bottom", "left": "right", "right": "left"}
SIDE_BITS = {"bottom": 1, "right": 2, "top": 4, "left": 8}
# neighbour offset (dcol, drow) across each side
SIDE_OFFSET = {"bottom": (0, -1), "right": (1, 0), "top": (0, 1), "left": (-1, 0)}

# four-port lattice cells usable in a ground structure
LATTICE_TYPES = {
    "S": "solid",
    "F": "frame",
    "X": "x-braced frame",
    "D": "diagonal-braced frame",
}


class MeshError(ValueError):
    """Raised for degenerate or inconsistent component geometry."""


class LayoutError(ValueError):
    """Raised for invalid ground-structure layouts or boundary conditions."""


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Triangle quadrature rule on the reference triangle (area 1/2).

    ``points`` are barycentric coordinates ``(l1, l2, l3)`` where the
    reference coordinates are ``xi = l2`` and ``eta = l3``.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if not np.isclose(self.weights.sum(), 0.5, rtol=0, atol=1e-14):
            raise ValueError("quadrature weights must sum to the reference area 1/2")

    @property
    def npoints(self) -> int:
        return len(self.weights)

    @property
    def xi(self) -> np.ndarray:
        return self.points[:, 1:]


def conical_product_rule(n: int) -> QuadratureRule:
    """Collapsed Gauss rule with ``n*n`` interior points, exact to degree ``2n-1``."""
    t, a = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (t + 1.0)
    a = 0.25 * a
    s, b = roots_legendre(n)
    v = 0.5 * (s + 1.0)
    b = 0.5 * b
    xi = np.repeat(u, n)
    eta = np.outer(1.0 - u, v).ravel()
    w = np.outer(a, b).ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(points=bary, weights=w)


def four_point_rule() -> QuadratureRule:
    """Four-point rule used for stiffness assembly and stress aggregation (degree 3)."""
    return conical_product_rule(2)


def nine_point_rule() -> QuadratureRule:
    """Nine-point rule used for full-order stress validation (degree 5)."""
    return conical_product_rule(3)


def centroid_rule() -> QuadratureRule:
    return QuadratureRule(points=np.full((1, 3), 1.0 / 3.0), weights=np.array([0.5]))


# --------------------------------------------------------------------------
# reference components
# --------------------------------------------------------------------------


@dataclass
class ReferenceComponent:
    """A meshed reference component.

    Attributes
    ----------
    type_id : str
        Component-type code.
    nodes : ndarray (n, 2)
        Node coordinates in metres, cell occupying ``[0, size]^2``.
    elements : ndarray (ne, 3) or (ne, 6)
        Triangle connectivity; P2 ordering is three vertices followed by
        the midpoints of edges (0,1), (1,2), (2,0).
    order : int
        Polynomial order of the elements.
    ports : dict[str, ndarray]
        Port node indices per side, ordered by increasing coordinate along
        the edge.
    """

    type_id: str
    nodes: np.ndarray
    elements: np.ndarray
    order: int
    ports: dict
    size: float = 1.0
    thickness: float = 1.0
    resolution: int = 1
    corner_gap: int = 1
    _area: float = field(default=0.0, repr=False)

    def __post_init__(self):
        v = self.nodes[self.elements[:, :3]]
        det = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (
            v[:, 2, 0] - v[:, 0, 0]
        ) * (v[:, 1, 1] - v[:, 0, 1])
        if len(det) == 0 or np.any(det <= 0):
            raise MeshError(f"component {self.type_id!r}: non-positive element Jacobian")
        self._area = 0.5 * float(det.sum())
        bnd = set(self.boundary_nodes().tolist())
        for side, idx in self.ports.items():
            if not set(idx.tolist()) <= bnd:
                raise MeshError(f"port {side!r} of {self.type_id!r} leaves the boundary")

    @property
    def nnodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def ndofs(self) -> int:
        return 2 * len(self.nodes)

    @property
    def area(self) -> float:
        return self._area

    @property
    def volume(self) -> float:
        return self._area * self.thickness

    @property
    def sides(self) -> list[str]:
        return [s for s in SIDES if s in self.ports]

    @property
    def ports_disjoint(self) -> bool:
        seen: set[int] = set()
        for idx in self.ports.values():
            s = set(idx.tolist())
            if seen & s:
                return False
            seen |= s
        return True

    def port_dofs(self, side: str) -> np.ndarray:
        """Interleaved DOFs of a port: all x components then all y components."""
        idx = self.ports[side]
        return np.concatenate([2 * idx, 2 * idx + 1])

    def all_port_dofs(self) -> np.ndarray:
        return np.concatenate([self.port_dofs(s) for s in self.sides])

    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.all_port_dofs()] = False
        return np.flatnonzero(mask)

    def port_coordinate(self, side: str) -> np.ndarray:
        """Arc-length coordinate of the port nodes measured from the port start."""
        xy = self.nodes[self.ports[side]]
        along = xy[:, 0] if side in ("bottom", "top") else xy[:, 1]
        return along - along[0]

    def edges(self) -> np.ndarray:
        """Unique vertex-vertex edges (corner nodes only)."""
        tri = self.elements[:, :3]
        e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def boundary_nodes(self) -> np.ndarray:
        tri = self.elements[:, :3]
        e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        bedges = uniq[counts == 1]
        nodes = set(bedges.ravel().tolist())
        if self.order == 2:
            # midpoints of boundary edges
            lookup = {}
            for k, (a, b) in enumerate([(0, 1), (1, 2), (2, 0)]):
                for el in self.elements:
                    lookup[tuple(sorted((el[a], el[b])))] = el[3 + k]
            nodes |= {lookup[tuple(be)] for be in bedges.tolist()}
        return np.array(sorted(nodes), dtype=int)

    def euler_characteristic(self) -> int:
        verts = np.unique(self.elements[:, :3])
        return len(verts) - len(self.edges()) + len(self.elements)


def _cell_mask(kind: str, n: int, wall: int, diag: int):
    """Return a predicate on triangle centroids (pixel units) for a cell type."""
    half = n / 2.0

    def walls(cx, cy, sides):
        m = np.zeros_like(cx, dtype=bool)
        if "bottom" in sides:
            m |= cy < wall
        if "top" in sides:
            m |= cy > n - wall
        if "left" in sides:
            m |= cx < wall
        if "right" in sides:
            m |= cx > n - wall
        return m

    def arms(cx, cy, sides):
        # bars of width ``wall`` from the middle of each side to the centre
        m = np.zeros_like(cx, dtype=bool)
        hb = np.abs(cy - half) < wall / 2.0
        vb = np.abs(cx - half) < wall / 2.0
        if "left" in sides:
            m |= hb & (cx < half + wall / 2.0)
        if "right" in sides:
            m |= hb & (cx > half - wall / 2.0)
        if "bottom" in sides:
            m |= vb & (cy < half + wall / 2.0)
        if "top" in sides:
            m |= vb & (cy > half - wall / 2.0)
        return m

    if kind in ("square", "S"):
        return lambda cx, cy: np.ones_like(cx, dtype=bool)
    if kind == "F":
        return lambda cx, cy: walls(cx, cy, SIDES)
    if kind == "X":
        return lambda cx, cy: (
            walls(cx, cy, SIDES) | (np.abs(cy - cx) < diag) | (np.abs(cy + cx - n) < diag)
        )
    if kind == "D":
        return lambda cx, cy: walls(cx, cy, SIDES) | (np.abs(cy - cx) < diag)
    sides = variant_sides(kind)
    if sides is None:
        raise MeshError(f"unknown component type {kind!r}")
    return lambda cx, cy: walls(cx, cy, sides) | arms(cx, cy, sides)


def variant_sides(code: str):
    """Connected sides of a streamlined variant code, or ``None`` for lattice codes.

    Variants are named by the hex digit of their port bitmask
    (bottom=1, right=2, top=4, left=8); ``H`` and ``V`` alias ``a`` and ``5``.
    """
    alias = {"H": "a", "V": "5"}
    code = alias.get(code, code)
    if len(code) != 1 or code not in "0123456789abcdef":
        return None
    mask = int(code, 16)
    return tuple(s for s in SIDES if mask & SIDE_BITS[s])


def variant_code(sides) -> str:
    mask = sum(SIDE_BITS[s] for s in sides)
    code = format(mask, "x")
    return {"a": "H", "5": "V"}.get(code, code)


def build_reference_component(
    geometry: str,
    order: int = 2,
    resolution: int = 12,
    size: float = 1.0,
    thickness: float = 1.0,
    corner_gap: int | None = None,
    wall_px: int = 2,
    diag_px: int = 2,
) -> ReferenceComponent:
    """Mesh a reference component.

    ``geometry`` is ``"square"`` (plain square, full-edge ports unless a
    ``corner_gap`` is given), a lattice code from :data:`LATTICE_TYPES`, or a
    streamlined variant code (see :func:`variant_sides`).
    """
    if resolution < 1:
        raise MeshError("resolution must be >= 1")
    if order not in (1, 2):
        raise MeshError("element order must be 1 or 2")
    if size <= 0 or thickness <= 0:
        raise MeshError("zero-area geometry: size and thickness must be positive")
    n = resolution
    if corner_gap is None:
        corner_gap = 0 if geometry == "square" else 1
    g = corner_gap
    if 2 * g >= n:
        raise MeshError("corner gap leaves no port length")
    mask_fn = _cell_mask(geometry, n, wall_px, diag_px)

    # vertex grid in half-pixel units: index (a, b) -> a + b * (2n + 1)
    m = 2 * n + 1

    def gid(a, b):
        return a + b * m

    tris = []
    cents = []
    for j in range(n):
        for i in range(n):
            c00, c10, c01, c11 = (2 * i, 2 * j), (2 * i + 2, 2 * j), (2 * i, 2 * j + 2), (2 * i + 2, 2 * j + 2)
            slash = (i < n / 2) == (j < n / 2)
            if slash:
                pair = [(c00, c10, c11), (c00, c11, c01)]
            else:
                pair = [(c00, c10, c01), (c10, c11, c01)]
            for t in pair:
                tris.append(t)
                cents.append(((t[0][0] + t[1][0] + t[2][0]) / 6.0, (t[0][1] + t[1][1] + t[2][1]) / 6.0))
    cents = np.array(cents)
    cx, cy = cents[:, 0], cents[:, 1]
    keep = mask_fn(cx, cy)
    if g > 0:
        near_x = (cx < g) | (cx > n - g)
        near_y = (cy < g) | (cy > n - g)
        keep &= ~(near_x & near_y)
    if not keep.any():
        raise MeshError(f"component {geometry!r} has zero area")

    conn = []
    for t, k in zip(tris, keep):
        if not k:
            continue
        (a0, b0), (a1, b1), (a2, b2) = t
        row = [gid(a0, b0), gid(a1, b1), gid(a2, b2)]
        if order == 2:
            row += [
                gid((a0 + a1) // 2, (b0 + b1) // 2),
                gid((a1 + a2) // 2, (b1 + b2) // 2),
                gid((a2 + a0) // 2, (b2 + b0) // 2),
            ]
        conn.append(row)
    conn = np.array(conn, dtype=int)
    used = np.unique(conn)
    remap = -np.ones(m * m, dtype=int)
    remap[used] = np.arange(len(used))
    elements = remap[conn]
    half_px = size / (2.0 * n)
    nodes = np.column_stack([(used % m) * half_px, (used // m) * half_px])

    _check_connected(elements, len(used), geometry)

    wanted = SIDES if (geometry == "square" or geometry in LATTICE_TYPES) else variant_sides(geometry)
    ports = {}
    step = 1 if order == 2 else 2
    lo, hi = 2 * g, 2 * (n - g)
    for side in wanted:
        if side == "bottom":
            pts = [(a, 0) for a in range(lo, hi + 1, step)]
        elif side == "top":
            pts = [(a, 2 * n) for a in range(lo, hi + 1, step)]
        elif side == "left":
            pts = [(0, b) for b in range(lo, hi + 1, step)]
        else:
            pts = [(2 * n, b) for b in range(lo, hi + 1, step)]
        ids = remap[[gid(a, b) for a, b in pts]]
        if np.any(ids < 0):
            raise MeshError(f"port {side!r} of {geometry!r} is not fully covered by material")
        ports[side] = ids
    return ReferenceComponent(
        type_id=geometry,
        nodes=nodes,
        elements=elements,
        order=order,
        ports=ports,
        size=size,
        thickness=thickness,
        resolution=n,
        corner_gap=g,
    )


def _check_connected(elements: np.ndarray, nnodes: int, name: str) -> None:
    parent = np.arange(nnodes)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for el in elements:
        r0 = find(el[0])
        for v in el[1:]:
            r = find(v)
            if r != r0:
                parent[r] = r0
    roots = {find(i) for i in range(nnodes)}
    if len(roots) != 1:
        raise MeshError(f"component {name!r} mesh is not connected")


@dataclass(frozen=True)
class MeshParams:
    """Shared discretization parameters for every component of a ground structure."""

    order: int = 2
    resolution: int = 12
    size: float = 0.0625
    thickness: float = 0.05
    corner_gap: int = 1
    wall_px: int = 2
    diag_px: int = 2

    @property
    def port_nodes(self) -> int:
        edges = self.resolution - 2 * self.corner_gap
        return self.order * edges + 1


class ComponentFactory:
    """Builds and caches reference components for one set of mesh parameters."""

    def __init__(self, params: MeshParams):
        self.params = params
        self._cache: dict[str, ReferenceComponent] = {}

    def __call__(self, code: str) -> ReferenceComponent:
        if code not in self._cache:
            p = self.params
            self._cache[code] = build_reference_component(
                code,
                order=p.order,
                resolution=p.resolution,
                size=p.size,
                thickness=p.thickness,
                corner_gap=p.corner_gap,
                wall_px=p.wall_px,
                diag_px=p.diag_px,
            )
        return self._cache[code]


# --------------------------------------------------------------------------
# ground structures
# --------------------------------------------------------------------------


@dataclass
class GroundStructure:
    """Instantiated components plus the global port graph.

    Instances are sorted by (row, col) with row 0 at the bottom.  Global
    port ``p`` is described by ``global_ports[p]``, a tuple of one or two
    ``(instance, side)`` pairs.
    """

    params: MeshParams
    cells: dict
    instances: list
    offsets: np.ndarray
    global_ports: list
    local_to_global: list
    dirichlet_ports: list
    loaded_ports: list
    bc_spec: dict
    references: dict = field(default_factory=dict, repr=False)

    @property
    def n_components(self) -> int:
        return len(self.instances)

    @property
    def n_global_ports(self) -> int:
        return len(self.global_ports)

    def reference(self, i: int) -> ReferenceComponent:
        return self.references[self.instances[i][1]]

    def volumes(self) -> np.ndarray:
        return np.array([self.reference(i).volume for i in range(self.n_components)])

    def cell_of(self, i: int) -> tuple:
        return self.instances[i][0]

    def to_dict(self) -> dict:
        return {
            "params": self.params.__dict__.copy(),
            "layout": cells_to_layout(self.cells),
            "bcs": self.bc_spec,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GroundStructure":
        params = MeshParams(**d["params"])
        return instantiate_ground_structure(parse_layout(d["layout"]), d["bcs"], params)

    @classmethod
    def from_json(cls, text: str) -> "GroundStructure":
        return cls.from_dict(json.loads(text))


def parse_layout(rows) -> dict:
    """Parse layout rows (top row first) into ``{(col, row): code}``.

    ``.``, ``_`` and spaces mark empty cells.
    """
    cells = {}
    nrows = len(rows)
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch in ". _":
                continue
            cells[(c, nrows - 1 - r)] = ch
    if not cells:
        raise LayoutError("layout has no occupied cells")
    return cells


def cells_to_layout(cells: dict) -> list:
    if not cells:
        return []
    ncol = max(c for c, _ in cells) + 1
    nrow = max(r for _, r in cells) + 1
    rows = []
    for r in range(nrow - 1, -1, -1):
        rows.append("".join(cells.get((c, r), ".") for c in range(ncol)))
    return rows


def instantiate_ground_structure(cells: dict, bcs: dict, params: MeshParams, factory=None) -> GroundStructure:
    """Instantiate components on a cell grid and build the global port graph.

    ``bcs`` holds ``"dirichlet"``: list of ``[col, row, side]`` and
    ``"loads"``: list of ``[col, row, side, fx_n, fy_n]``.
    """
    factory = factory or ComponentFactory(params)
    order = sorted(cells, key=lambda cr: (cr[1], cr[0]))
    refs = {}
    instances = []
    index = {}
    for i, cr in enumerate(order):
        code = cells[cr]
        if code not in refs:
            refs[code] = factory(code)
            if not refs[code].ports_disjoint:
                raise LayoutError(f"component {code!r} has overlapping ports; cannot instantiate")
        instances.append((cr, code))
        index[cr] = i
    offsets = np.array([[c * params.size, r * params.size] for (c, r), _ in instances], dtype=float)

    global_ports = []
    l2g = [dict() for _ in instances]
    for i, ((c, r), code) in enumerate(instances):
        ref = refs[code]
        for side in ref.sides:
            if side in l2g[i]:
                continue
            dc, dr = SIDE_OFFSET[side]
            nb = index.get((c + dc, r + dr))
            other = OPPOSITE[side]
            if nb is not None and other in refs[instances[nb][1]].ports:
                _check_port_match(ref, side, refs[instances[nb][1]], other, offsets[i], offsets[nb])
                p = len(global_ports)
                global_ports.append(((i, side), (nb, other)))
                l2g[i][side] = p
                l2g[nb][other] = p
            else:
                p = len(global_ports)
                global_ports.append(((i, side),))
                l2g[i][side] = p

    def lookup(spec):
        c, r, side = int(spec[0]), int(spec[1]), str(spec[2])
        i = index.get((c, r))
        if i is None or side not in l2g[i]:
            raise LayoutError(f"boundary condition on missing port {spec[:3]}")
        p = l2g[i][side]
        if len(global_ports[p]) != 1:
            raise LayoutError(f"boundary condition on interior port {spec[:3]}")
        return p

    bcs = {"dirichlet": [list(d) for d in bcs.get("dirichlet", [])], "loads": [list(x) for x in bcs.get("loads", [])]}
    dirichlet = sorted({lookup(d) for d in bcs["dirichlet"]})
    loads = []
    for spec in bcs["loads"]:
        p = lookup(spec)
        if p in dirichlet:
            raise LayoutError(f"port {spec[:3]} is both Dirichlet and loaded")
        loads.append((p, np.array([float(spec[3]), float(spec[4])])))
    return GroundStructure(
        params=params,
        cells=dict(cells),
        instances=instances,
        offsets=offsets,
        global_ports=global_ports,
        local_to_global=l2g,
        dirichlet_ports=dirichlet,
        loaded_ports=loads,
        bc_spec=bcs,
        references=refs,
    )


def _check_port_match(ref_a, side_a, ref_b, side_b, off_a, off_b) -> None:
    pa = ref_a.nodes[ref_a.ports[side_a]] + off_a
    pb = ref_b.nodes[ref_b.ports[side_b]] + off_b
    if pa.shape != pb.shape or not np.allclose(pa, pb, rtol=0, atol=1e-9 * max(ref_a.size, 1e-12)):
        raise LayoutError(
            f"port discretizations of {ref_a.type_id}:{side_a} and {ref_b.type_id}:{side_b} do not match"
        )
