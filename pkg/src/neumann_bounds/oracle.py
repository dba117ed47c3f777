"""Ground-truth verification: P1 Neumann eigenvalues and Rayleigh quotients.

Everything needed to check that emitted bounds are genuine lower bounds at
desk scale: deterministic 2D triangulations of the supported domain kinds,
stiffness/mass assembly with consistent (non-lumped) mass, the smallest
nonzero Neumann eigenvalue with a residual certificate, and discrete
Rayleigh-quotient evaluation for general p. All |f|-type integrals use the
three-edge-midpoint rule, which is exact for quadratics, so at p = 2 the
quotient machinery reproduces the assembled mass forms to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq
from scipy.spatial import Delaunay

from .geometry import StarDomainSpec
from .poincare import PoincareBound
from .qc_transfer import EigenBound

AREA_TOL = 1e-14
DENSE_LIMIT = 5000


class MeshError(ValueError):
    """Invalid mesh or unsupported domain description."""


class SolveError(RuntimeError):
    """Eigenvalue iteration failed to meet the residual target."""


class TriangleMesh:
    """Conforming P1 triangulation with pure Neumann (implicit) boundary.

    Construction normalizes element orientation and audits the invariants:
    positive areas, connectivity, no edge shared by more than two elements,
    and no node hanging on the interior of a boundary edge.
    """

    def __init__(self, nodes, elements) -> None:
        nodes = np.asarray(nodes, dtype=float)
        elements = np.array(elements, dtype=np.int64)  # copy: orientation may flip
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must be an (N, 2) array")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError("elements must be an (M, 3) array")
        if elements.min(initial=0) < 0 or elements.max(initial=-1) >= len(nodes):
            raise MeshError("element indices out of range")

        x = nodes[elements]
        signed = 0.5 * (
            (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1])
            - (x[:, 2, 0] - x[:, 0, 0]) * (x[:, 1, 1] - x[:, 0, 1])
        )
        flip = signed < 0.0
        elements[flip] = elements[flip][:, [0, 2, 1]]
        signed = np.abs(signed)
        scale = float(np.ptp(nodes, axis=0).max()) or 1.0
        if np.any(signed <= AREA_TOL * scale**2):
            raise MeshError("mesh contains a degenerate element")

        self.nodes = nodes
        self.elements = elements
        self.areas = signed
        coords = nodes[elements]
        # constant P1 basis gradients per element
        grads = np.empty((len(elements), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = coords[:, j, 1] - coords[:, k, 1]
            grads[:, i, 1] = coords[:, k, 0] - coords[:, j, 0]
        self.grads = grads / (2.0 * self.areas)[:, None, None]

        self._audit_edges()
        self._audit_connected()

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def element_count(self) -> int:
        return len(self.elements)

    def _edge_counts(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for tri in self.elements:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def boundary_edges(self) -> list[tuple[int, int]]:
        return [e for e, c in self._edge_counts().items() if c == 1]

    def _audit_edges(self) -> None:
        counts = self._edge_counts()
        if any(c > 2 for c in counts.values()):
            raise MeshError("an edge is shared by more than two elements")
        # hanging-node audit: no mesh node may sit strictly inside a
        # boundary edge
        boundary = [e for e, c in counts.items() if c == 1]
        if not boundary:
            return
        scale = float(np.ptp(self.nodes, axis=0).max()) or 1.0
        tol = 1e-9 * scale
        for a, b in boundary:
            pa, pb = self.nodes[a], self.nodes[b]
            d = pb - pa
            length2 = float(d @ d)
            rel = self.nodes - pa
            t = (rel @ d) / length2
            off = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / math.sqrt(length2)
            inside = (off < tol) & (t > 1e-9) & (t < 1.0 - 1e-9)
            inside[[a, b]] = False
            if np.any(inside):
                raise MeshError("hanging node detected on a boundary edge")

    def _audit_connected(self) -> None:
        n = self.node_count
        rows = self.elements[:, [0, 1, 2]].ravel()
        cols = self.elements[:, [1, 2, 0]].ravel()
        graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp = sp.csgraph.connected_components(graph, directed=False, return_labels=False)
        if ncomp != 1:
            raise MeshError(f"mesh is not connected ({ncomp} components)")

    def max_edge_length(self) -> float:
        coords = self.nodes[self.elements]
        edges = coords - np.roll(coords, 1, axis=1)
        return float(np.sqrt((edges**2).sum(axis=2)).max())

    def total_area(self) -> float:
        return float(self.areas.sum())

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TriangleMesh":
        return cls(data["nodes"], data["elements"])


@dataclass(frozen=True)
class GridFunction:
    """One real value per mesh node."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class EigenResult:
    mu2: float
    residual: float
    eigenvector: GridFunction
    dof: int


# ---------------------------------------------------------------------------
# meshing
# ---------------------------------------------------------------------------


def _structured_rectangle(x0, y0, x1, y1, h):
    nx = max(1, math.ceil((x1 - x0) / h))
    ny = max(1, math.ceil((y1 - y0) / h))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    nodes = np.array([(x, y) for y in ys for x in xs])
    elements = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = a + (nx + 1)
            d = c + 1
            elements.append((a, b, d))
            elements.append((a, d, c))
    return TriangleMesh(nodes, np.array(elements))


def _cut_lines(lo: float, hi: float, breaks: list[float], h: float) -> np.ndarray:
    pts = sorted({lo, hi, *[b for b in breaks if lo < b < hi]})
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, math.ceil((b - a) / h))
        out.extend(np.linspace(a, b, k + 1)[:-1])
    out.append(pts[-1])
    return np.array(out)


def _rect_union_mesh(rects: list[tuple[float, float, float, float]], h: float) -> TriangleMesh:
    """Conforming mesh of a union of axis-aligned rectangles.

    Grid lines are cut at every rectangle edge, so elements never straddle
    a rectangle boundary and the overlap regions are node-matched.
    """
    xs = _cut_lines(
        min(r[0] for r in rects),
        max(r[2] for r in rects),
        [v for r in rects for v in (r[0], r[2])],
        h,
    )
    ys = _cut_lines(
        min(r[1] for r in rects),
        max(r[3] for r in rects),
        [v for r in rects for v in (r[1], r[3])],
        h,
    )

    def covered(cx: float, cy: float) -> bool:
        return any(r[0] <= cx <= r[2] and r[1] <= cy <= r[3] for r in rects)

    node_index: dict[tuple[int, int], int] = {}
    nodes: list[tuple[float, float]] = []

    def node(i: int, j: int) -> int:
        key = (i, j)
        if key not in node_index:
            node_index[key] = len(nodes)
            nodes.append((xs[i], ys[j]))
        return node_index[key]

    elements = []
    for j in range(len(ys) - 1):
        for i in range(len(xs) - 1):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            if not covered(cx, cy):
                continue
            a, b = node(i, j), node(i + 1, j)
            c, d = node(i, j + 1), node(i + 1, j + 1)
            elements.append((a, b, d))
            elements.append((a, d, c))
    if not elements:
        raise MeshError("rectangle union is empty")
    return TriangleMesh(np.array(nodes), np.array(elements))


def _convex_polygon_mesh(vertices: np.ndarray, h: float) -> TriangleMesh:
    """Delaunay mesh of a convex polygon (boundary resolved to spacing h)."""
    verts = np.asarray(vertices, dtype=float)
    signed2 = float(
        np.dot(verts[:, 0], np.roll(verts[:, 1], -1)) - np.dot(verts[:, 1], np.roll(verts[:, 0], -1))
    )
    if signed2 < 0.0:
        verts = verts[::-1]
    spacing = 0.72 * h
    boundary = []
    m = len(verts)
    for i in range(m):
        a, b = verts[i], verts[(i + 1) % m]
        k = max(1, math.ceil(np.linalg.norm(b - a) / spacing))
        for t in range(k):
            boundary.append(a + (b - a) * (t / k))
    boundary = np.array(boundary)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    g = spacing
    gx = np.arange(lo[0] + g / 2, hi[0], g)
    gy = np.arange(lo[1] + g / 2, hi[1], g)
    grid = np.array([(x, y) for y in gy for x in gx])
    if len(grid):
        # deterministic jitter breaks cocircular grid squares
        idx = np.arange(len(grid))
        jit = np.stack(
            [np.sin(idx * 12.9898) * 0.05 * g, np.sin(idx * 78.233) * 0.05 * g], axis=1
        )
        grid = grid + jit
        # keep points with a clearance margin inside every edge
        keep = np.ones(len(grid), dtype=bool)
        for i in range(m):
            a, b = verts[i], verts[(i + 1) % m]
            e = b - a
            # signed area cross(e, p - a): positive strictly left of a ccw edge
            off = e[0] * (grid[:, 1] - a[1]) - e[1] * (grid[:, 0] - a[0])
            keep &= off > 0.45 * g * np.linalg.norm(e)
        grid = grid[keep]
    points = np.vstack([boundary, grid]) if len(grid) else boundary
    tri = Delaunay(points)
    return TriangleMesh(points, tri.simplices)


def _star_mesh(delta: float, h: float) -> TriangleMesh:
    """Graded structured mesh of the 2D star union {|x| < delta + |y|, |y| < alpha}.

    Rows of nodes are placed at uniform heights and rescaled to the exact
    row half-width, so the slanted boundary is matched exactly and no
    sliver elements appear.
    """
    spec = StarDomainSpec(delta=delta, n=2)
    alpha = spec.alpha
    half_width = delta + alpha
    # row shear adds up to one vertical spacing to the horizontal extent of
    # slanted edges; the budget dx <= 0.7h, dy <= 0.5h keeps every edge
    # below sqrt((0.7h + 0.5h)^2 + (0.5h)^2) = 1.3h
    nx = max(2, math.ceil(2.0 * half_width / (0.7 * h)))
    ny = max(2, math.ceil(2.0 * alpha / (0.5 * h)))
    ny += ny % 2  # keep the pinch row y = 0 in the lattice
    xi = np.linspace(-1.0, 1.0, nx + 1)
    ys = np.linspace(-alpha, alpha, ny + 1)
    nodes = []
    for y in ys:
        w = delta + abs(y)
        nodes.extend((x * w, y) for x in xi)
    nodes = np.array(nodes)
    elements = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = a + (nx + 1)
            d = c + 1
            elements.append((a, b, d))
            elements.append((a, d, c))
    return TriangleMesh(nodes, np.array(elements))


def _disk_mesh(radius: float, h: float, center=(0.0, 0.0)) -> TriangleMesh:
    """Polar structured mesh: ring k carries 6k nodes at radius k * R / K."""
    rings = max(2, round(radius / h))
    dr = radius / rings
    cx, cy = center
    nodes = [(cx, cy)]
    ring_start = [0]
    for k in range(1, rings + 1):
        m = 6 * k
        ring_start.append(len(nodes))
        ang = 2.0 * math.pi * np.arange(m) / m
        nodes.extend(zip(cx + k * dr * np.cos(ang), cy + k * dr * np.sin(ang)))
    elements = []
    for j in range(6):  # center fan
        elements.append((0, 1 + j, 1 + (j + 1) % 6))
    for k in range(2, rings + 1):
        m_prev, m_cur = 6 * (k - 1), 6 * k
        start_prev, start_cur = ring_start[k - 1], ring_start[k]
        i = j = 0
        for _ in range(m_prev + m_cur):
            next_prev = (i + 1) / m_prev
            next_cur = (j + 1) / m_cur
            pi_, ci_ = start_prev + i % m_prev, start_cur + j % m_cur
            # ties advance the coarse ring first, keeping the rings aligned
            if next_cur < next_prev:
                elements.append((pi_, ci_, start_cur + (j + 1) % m_cur))
                j += 1
            else:
                elements.append((pi_, ci_, start_prev + (i + 1) % m_prev))
                i += 1
    return TriangleMesh(np.array(nodes), np.array(elements))


def mesh_domain(spec: dict, h: float) -> TriangleMesh:
    """Deterministic conforming triangulation of a supported 2D domain.

    Supported kinds: rectangle, rect_union, convex polygon, the 2D star
    domain, and disk. Maximum edge length stays below 1.5 h.
    """
    if h <= 0.0:
        raise MeshError("target edge length must be positive")
    kind = spec.get("kind")
    if kind == "rectangle":
        x0, y0, x1, y1 = spec["bounds"]
        return _structured_rectangle(x0, y0, x1, y1, h)
    if kind == "rect_union":
        return _rect_union_mesh([tuple(r) for r in spec["rects"]], h)
    if kind == "polygon":
        return _convex_polygon_mesh(np.asarray(spec["vertices"], dtype=float), h)
    if kind == "star":
        return _star_mesh(float(spec["delta"]), h)
    if kind == "disk":
        return _disk_mesh(float(spec["radius"]), h, tuple(spec.get("center", (0.0, 0.0))))
    raise MeshError(f"unsupported domain kind {kind!r}")


def refine_uniform(mesh: TriangleMesh) -> TriangleMesh:
    """Red refinement: each triangle splits into four via edge midpoints."""
    nodes = list(map(tuple, mesh.nodes))
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            midpoint[key] = len(nodes)
            nodes.append(tuple(0.5 * (mesh.nodes[a] + mesh.nodes[b])))
        return midpoint[key]

    elements = []
    for a, b, c in mesh.elements:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        elements.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return TriangleMesh(np.array(nodes), np.array(elements))


# ---------------------------------------------------------------------------
# P1 assembly and the eigenvalue solve
# ---------------------------------------------------------------------------


def p1_matrices(mesh: TriangleMesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Stiffness and consistent mass (exact quadratic quadrature, not lumped).

    Element contributions are emitted in element-index order, so assembly
    is bit-reproducible for a fixed mesh.
    """
    ke = np.einsum("eid,ejd,e->eij", mesh.grads, mesh.grads, mesh.areas)
    me_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = mesh.areas[:, None, None] * me_ref
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    n = mesh.node_count
    stiffness = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mass = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return stiffness, mass


def neumann_mu2(
    mesh: TriangleMesh,
    dense_limit: int = DENSE_LIMIT,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> EigenResult:
    """Smallest nonzero Neumann eigenvalue of the P1 discretization.

    Constants are deflated by working mass-orthogonally to them; below
    dense_limit nodes the generalized problem is solved by dense
    factorization, above it by shifted inverse iteration. The relative
    eigenpair residual is certified to 1e-8.
    """
    stiffness, mass = p1_matrices(mesh)
    n = mesh.node_count
    ones_mass = np.asarray(mass.sum(axis=0)).ravel()  # M @ 1

    if n <= dense_limit:
        w, vecs = sla.eigh(
            stiffness.toarray(), mass.toarray(), subset_by_index=[0, 1]
        )
        mu = float(w[1])
        v = vecs[:, 1]
    else:
        # block shifted inverse iteration with Ritz extraction; the block
        # resolves near-degenerate clusters (square-symmetric domains carry
        # an almost-double first eigenvalue) and the moderate shift keeps
        # the deflated constant mode from being amplified into a residual
        # floor
        sigma = 1e-3 * stiffness.diagonal().sum() / max(mass.diagonal().sum(), 1e-300)
        solver = spla.splu((stiffness + sigma * mass).tocsc())
        rng = np.random.default_rng(0)
        block = rng.standard_normal((n, 4))

        def deflate_orthonormalize(vectors):
            vectors = vectors - np.outer(
                np.ones(n), (ones_mass @ vectors) / ones_mass.sum()
            )
            for col in range(vectors.shape[1]):
                w = vectors[:, col]
                for prev in range(col):
                    w -= (vectors[:, prev] @ (mass @ w)) * vectors[:, prev]
                w /= math.sqrt(w @ (mass @ w))
                vectors[:, col] = w
            return vectors

        mu = math.inf
        resid = math.inf
        for _ in range(max_iter):
            block = deflate_orthonormalize(block)
            block = solver.solve(mass @ block)
            block = deflate_orthonormalize(block)
            ritz = block.T @ (stiffness @ block)
            ritz_vals, ritz_vecs = sla.eigh(0.5 * (ritz + ritz.T))
            block = block @ ritz_vecs
            v = block[:, 0]
            mu = float(ritz_vals[0])
            resid = np.linalg.norm(stiffness @ v - mu * (mass @ v)) / np.linalg.norm(
                stiffness @ v
            )
            if resid <= tol:
                break
        else:
            raise SolveError(
                f"inverse iteration did not converge: relative residual {resid:.3e}"
            )

    v = v - (ones_mass @ v) / ones_mass.sum()
    v /= math.sqrt(v @ (mass @ v))
    mu = float(v @ (stiffness @ v))
    residual = float(
        np.linalg.norm(stiffness @ v - mu * (mass @ v)) / np.linalg.norm(stiffness @ v)
    )
    if residual > tol:
        raise SolveError(f"eigenpair residual {residual:.3e} above target {tol:g}")
    return EigenResult(mu2=mu, residual=residual, eigenvector=GridFunction(v), dof=n)


def poincare_constant_p2(mesh: TriangleMesh) -> float:
    """Discrete (2,2)-Poincare constant mu2^(-1/2)."""
    return neumann_mu2(mesh).mu2 ** -0.5


# ---------------------------------------------------------------------------
# discrete integrals (three-edge-midpoint rule) and Rayleigh quotients
# ---------------------------------------------------------------------------


def midpoint_values(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    """Values of the P1 interpolant at the three edge midpoints per element."""
    v = values[mesh.elements]
    return 0.5 * (v + np.roll(v, -1, axis=1))

def integrate_abs_power(
    mesh: TriangleMesh, values: np.ndarray, p: float, element_mask=None
) -> float:
    """int |f|^p over the mesh (or a subset of elements), midpoint rule."""
    mids = np.abs(midpoint_values(mesh, values)) ** p
    contrib = mesh.areas / 3.0 * mids.sum(axis=1)
    if element_mask is not None:
        contrib = contrib[element_mask]
    return float(contrib.sum())


def subset_average(mesh: TriangleMesh, values: np.ndarray, element_mask=None) -> float:
    """Mean of f over the selected elements in the midpoint measure."""
    mids = midpoint_values(mesh, values)
    contrib = mesh.areas / 3.0 * mids.sum(axis=1)
    areas = mesh.areas
    if element_mask is not None:
        contrib = contrib[element_mask]
        areas = areas[element_mask]
    total = float(areas.sum())
    if total <= 0.0:
        raise MeshError("subset has zero area")
    return float(contrib.sum()) / total


def gradient_magnitudes(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    g = np.einsum("eid,ei->ed", mesh.grads, values[mesh.elements])
    return np.sqrt((g**2).sum(axis=1))


def gradient_integral(mesh: TriangleMesh, values: np.ndarray, p: float, element_mask=None) -> float:
    """int |grad f|^p with the exact per-element constant gradients."""
    contrib = mesh.areas * gradient_magnitudes(mesh, values) ** p
    if element_mask is not None:
        contrib = contrib[element_mask]
    return float(contrib.sum())


def constraint_value(mesh: TriangleMesh, values: np.ndarray, p: float) -> float:
    """Discretized zero-mean constraint functional int |f|^(p-2) f."""
    mids = midpoint_values(mesh, values)
    g = np.abs(mids) ** (p - 2.0) * mids if p != 2.0 else mids
    return float((mesh.areas / 3.0 * g.sum(axis=1)).sum())


def constraint_scale(mesh: TriangleMesh, values: np.ndarray, p: float) -> float:
    mids = np.abs(midpoint_values(mesh, values)) ** (p - 1.0)
    return float((mesh.areas / 3.0 * mids.sum(axis=1)).sum())


def project_constraint(mesh: TriangleMesh, values: np.ndarray, p: float) -> np.ndarray:
    """Shift by the unique constant that zeroes the constraint functional."""
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0.0:
        raise ValueError("cannot project a constant function")
    shift = brentq(lambda c: constraint_value(mesh, values - c, p), lo, hi, xtol=1e-15)
    return values - shift


def rayleigh_quotient(
    mesh: TriangleMesh, f: GridFunction, p: float, project: bool = False
) -> float:
    """Discrete Rayleigh quotient int |grad f|^p / int |f|^p.

    The argument must satisfy the discretized zero-mean constraint to 1e-8
    (relative), unless project=True requests the constant-shift projection.
    Always an upper bound for the discrete minimum.
    """
    values = np.asarray(f.values, dtype=float)
    if len(values) != mesh.node_count:
        raise ValueError("grid function length does not match the mesh")
    if np.ptp(values) <= 1e-14 * max(1.0, np.abs(values).max()):
        raise ValueError("Rayleigh quotient of a constant function is undefined")
    scale = constraint_scale(mesh, values, p)
    if abs(constraint_value(mesh, values, p)) > 1e-8 * scale:
        if not project:
            raise ValueError("constraint violated; pass project=True to shift")
        values = project_constraint(mesh, values, p)
    return gradient_integral(mesh, values, p) / integrate_abs_power(mesh, values, p)


def _rayleigh_gradient(mesh: TriangleMesh, values: np.ndarray, p: float):
    """Value and nodal gradient of the Rayleigh functional."""
    grads_vec = np.einsum("eid,ei->ed", mesh.grads, values[mesh.elements])
    gmag = np.sqrt((grads_vec**2).sum(axis=1))
    num = float((mesh.areas * gmag**p).sum())
    mids = midpoint_values(mesh, values)
    den = float((mesh.areas / 3.0 * (np.abs(mids) ** p).sum(axis=1)).sum())

    dnum = np.zeros(mesh.node_count)
    weight = mesh.areas * p * np.where(gmag > 0.0, gmag ** (p - 2.0), 0.0)
    contrib = np.einsum("e,eid,ed->ei", weight, mesh.grads, grads_vec)
    np.add.at(dnum, mesh.elements, contrib)

    dden = np.zeros(mesh.node_count)
    gmid = np.abs(mids) ** (p - 2.0) * mids if p != 2.0 else mids
    half = mesh.areas[:, None] / 3.0 * p * gmid * 0.5
    np.add.at(dden, mesh.elements, half)
    np.add.at(dden, np.roll(mesh.elements, -1, axis=1), half)

    quotient = num / den
    return quotient, (dnum - quotient * dden) / den


def minimize_rayleigh_p(
    mesh: TriangleMesh,
    p: float,
    iterations: int = 200,
    seed: int = 0,
    starts: int = 3,
    return_info: bool = False,
):
    """Best-effort upper estimate of the discrete first nontrivial mu_p.

    Normalized descent with backtracking from seeded random starts; the
    constraint is re-projected after every step. The result is an estimate,
    not a certificate: it is only suitable for necessary-direction checks
    (a claimed lower bound must not exceed it).
    """
    if p <= 1.0:
        raise ValueError("exponent p must exceed 1")
    rng = np.random.default_rng(seed)
    best = math.inf
    total_iters = 0
    final_step = 0.0
    for _ in range(starts):
        v = rng.standard_normal(mesh.node_count)
        v = project_constraint(mesh, v, p)
        v /= integrate_abs_power(mesh, v, p) ** (1.0 / p)
        step = 0.5
        value, grad = _rayleigh_gradient(mesh, v, p)
        for _ in range(iterations):
            total_iters += 1
            gnorm = np.linalg.norm(grad)
            if gnorm <= 1e-12 * max(1.0, abs(value)):
                break
            trial = v - step * grad / gnorm
            try:
                trial = project_constraint(mesh, trial, p)
            except ValueError:
                step *= 0.5
                continue
            norm = integrate_abs_power(mesh, trial, p) ** (1.0 / p)
            if norm <= 0.0:
                step *= 0.5
                continue
            trial /= norm
            t_value, t_grad = _rayleigh_gradient(mesh, trial, p)
            if t_value < value:
                v, value, grad = trial, t_value, t_grad
                step = min(step * 1.3, 1.0)
            else:
                step *= 0.5
                if step < 1e-12:
                    break
        final_step = step
        best = min(best, value)
    if return_info:
        return best, {"iterations": total_iters, "final_step": final_step}
    return best


# ---------------------------------------------------------------------------
# domination checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DominationReport:
    passed: bool
    kind: str
    claimed: float
    oracle_value: float
    margin: float
    oracle_is_estimate: bool
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "kind": self.kind,
            "claimed": self.claimed,
            "oracle_value": self.oracle_value,
            "margin": self.margin,
            "oracle_is_estimate": self.oracle_is_estimate,
            "notes": list(self.notes),
        }


def check_domination(bound, mesh: TriangleMesh, domain_label: str | None = None) -> DominationReport:
    """PASS iff the claimed bound is on the safe side of the oracle.

    Poincare bounds must dominate the discrete constant; eigenvalue lower
    bounds must not exceed the discrete eigenvalue. At p = 2 the oracle is
    the FEM value; for other p it is the descent estimate, which is
    explicitly flagged as an estimate, not a certificate.
    """
    notes: list[str] = []
    bound_domain = getattr(bound, "domain", None)
    if bound_domain and domain_label and bound_domain != domain_label:
        notes.append(f"domain mismatch: bound is for {bound_domain!r}, mesh is {domain_label!r}")
    if isinstance(bound, PoincareBound):
        p = bound.p
        if abs(p - 2.0) < 1e-12:
            oracle_value = poincare_constant_p2(mesh)
            estimate = False
        else:
            oracle_value = minimize_rayleigh_p(mesh, p) ** (-1.0 / p)
            estimate = True
            notes.append("general-p oracle is an estimate, not a certificate")
        margin = float(bound.value - oracle_value)
        return DominationReport(
            passed=bool(margin >= 0.0),
            kind="poincare",
            claimed=float(bound.value),
            oracle_value=oracle_value,
            margin=margin,
            oracle_is_estimate=estimate,
            notes=tuple(notes),
        )
    if isinstance(bound, EigenBound):
        p = bound.p
        if abs(p - 2.0) < 1e-12:
            oracle_value = neumann_mu2(mesh).mu2
            estimate = False
        else:
            oracle_value = minimize_rayleigh_p(mesh, p)
            estimate = True
            notes.append("general-p oracle is an estimate, not a certificate")
        margin = float(oracle_value - bound.mu_lower)
        return DominationReport(
            passed=bool(margin >= 0.0),
            kind="eigen",
            claimed=float(bound.mu_lower),
            oracle_value=oracle_value,
            margin=margin,
            oracle_is_estimate=estimate,
            notes=tuple(notes),
        )
    raise TypeError(f"cannot check bounds of type {type(bound).__name__}")
