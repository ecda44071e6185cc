"""Structured simplicial meshes and piecewise-linear hat basis functions."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DomainError",
    "Mesh",
    "build_interval_mesh",
    "build_rect_mesh",
    "hat_eval",
    "make_projector",
    "read_mesh",
    "write_mesh",
    "write_triplets",
]

SNAP_TOL = 1e-10


class DomainError(ValueError):
    """A point lies outside the meshed domain."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh of an interval (``dim=1``) or a polygon (``dim=2``).

    ``nodes`` has shape ``(n_h, dim)`` and ``elements`` has shape
    ``(n_elements, dim + 1)`` with 0-based node indices. ``grid`` holds the
    tensor-grid description for structured meshes and enables O(1) point
    location; it is ``None`` for meshes read from file.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    h: float
    grid: Optional[tuple] = field(default=None)

    def __post_init__(self):
        for name in ("nodes", "elements", "boundary_nodes"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def element_measures(self):
        """Length (1D) or area (2D) of every element."""
        v = self.nodes[self.elements]
        if self.dim == 1:
            return np.abs(v[:, 1, 0] - v[:, 0, 0])
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def element_diameters(self):
        v = self.nodes[self.elements]
        k = self.dim + 1
        diam = np.zeros(self.n_elements)
        for a in range(k):
            for b in range(a + 1, k):
                diam = np.maximum(diam, np.linalg.norm(v[:, a] - v[:, b], axis=1))
        return diam

    def measure(self):
        return float(self.element_measures().sum())

    def quasi_uniformity(self):
        """Ratio of the smallest to the largest element diameter."""
        d = self.element_diameters()
        return float(d.min() / d.max())

    def check(self, threshold=0.1):
        """Validate indices, element measures and the quasi-uniformity ratio."""
        if self.elements.min() < 0 or self.elements.max() >= self.n_nodes:
            raise ValueError("element references a node index out of range")
        if np.any(self.element_measures() <= 0):
            raise ValueError("mesh contains degenerate elements")
        q = self.quasi_uniformity()
        if q < threshold:
            raise ValueError(f"mesh is not quasi-uniform: ratio {q:.3g} < {threshold}")
        return True

    def free_nodes(self, boundary="neumann"):
        """Indices of basis functions kept for the given boundary condition."""
        if boundary == "neumann":
            return np.arange(self.n_nodes)
        if boundary == "dirichlet":
            keep = np.ones(self.n_nodes, dtype=bool)
            keep[self.boundary_nodes] = False
            return np.flatnonzero(keep)
        raise ValueError(f"unknown boundary condition {boundary!r}")

    def locate(self, points):
        """Find containing elements and barycentric weights.

        Returns ``(element_index, weights)`` with weights of shape
        ``(N, dim + 1)`` ordered as the element's vertices. Points within
        ``1e-10 * h`` of the boundary are snapped onto it.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
            pts = pts.T
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates")
        if self.grid is not None and self.dim == 2:
            return self._locate_grid2(pts)
        if self.dim == 1:
            return self._locate_1d(pts[:, 0])
        return self._locate_generic(pts)

    def _locate_1d(self, x):
        v = self.nodes[self.elements][:, :, 0]
        lo = v.min(axis=1)
        hi = v.max(axis=1)
        order = np.argsort(lo)
        lo_s, hi_s = lo[order], hi[order]
        tol = SNAP_TOL * self.h
        bad = (x < lo_s[0] - tol) | (x > hi_s[-1] + tol)
        if bad.any():
            idx = np.flatnonzero(bad)
            raise DomainError(f"points outside the domain: indices {idx.tolist()}", idx)
        x = np.clip(x, lo_s[0], hi_s[-1])
        pos = np.clip(np.searchsorted(lo_s, x, side="right") - 1, 0, len(lo_s) - 1)
        el = order[pos]
        x0 = v[el, 0]
        x1 = v[el, 1]
        t = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
        return el, np.column_stack([1.0 - t, t])

    def _locate_grid2(self, pts):
        (x0, x1), (y0, y1), nx, ny = self.grid
        tol = SNAP_TOL * self.h
        bad = ((pts[:, 0] < x0 - tol) | (pts[:, 0] > x1 + tol)
               | (pts[:, 1] < y0 - tol) | (pts[:, 1] > y1 + tol))
        if bad.any():
            idx = np.flatnonzero(bad)
            raise DomainError(f"points outside the domain: indices {idx.tolist()}", idx)
        dx = (x1 - x0) / (nx - 1)
        dy = (y1 - y0) / (ny - 1)
        sx = np.clip((pts[:, 0] - x0) / dx, 0, nx - 1)
        sy = np.clip((pts[:, 1] - y0) / dy, 0, ny - 1)
        i = np.minimum(np.floor(sx).astype(np.int64), nx - 2)
        j = np.minimum(np.floor(sy).astype(np.int64), ny - 2)
        u = sx - i
        v = sy - j
        lower = u >= v
        cell = j * (nx - 1) + i
        el = 2 * cell + (~lower)
        # lower triangle (ll, lr, ur); upper triangle (ll, ur, ul)
        w = np.where(lower[:, None],
                     np.column_stack([1.0 - u, u - v, v]),
                     np.column_stack([1.0 - v, u, v - u]))
        return el, w

    def _locate_generic(self, pts):
        v = self.nodes[self.elements]
        T = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        Tinv = np.linalg.inv(T)
        el = np.full(len(pts), -1, dtype=np.int64)
        w = np.zeros((len(pts), 3))
        tol = SNAP_TOL
        for start in range(0, len(pts), 256):
            p = pts[start:start + 256]
            rel = p[:, None, :] - v[None, :, 0, :]
            lam = np.einsum("eij,nej->nei", Tinv, rel)
            bary = np.concatenate([1.0 - lam.sum(axis=2, keepdims=True), lam], axis=2)
            score = bary.min(axis=2)
            best = score.argmax(axis=1)
            ok = score[np.arange(len(p)), best] >= -tol
            chosen = bary[np.arange(len(p)), best]
            chosen = np.clip(chosen, 0.0, None)
            chosen /= chosen.sum(axis=1, keepdims=True)
            el[start:start + len(p)] = np.where(ok, best, -1)
            w[start:start + len(p)] = chosen
        if (el < 0).any():
            idx = np.flatnonzero(el < 0)
            raise DomainError(f"points outside the domain: indices {idx.tolist()}", idx)
        return el, w


def build_interval_mesh(a, b, n_nodes):
    """Uniform mesh of ``[a, b]`` with ``n_nodes`` nodes."""
    if n_nodes < 2 or not b > a:
        raise ValueError("need b > a and n_nodes >= 2")
    x = np.linspace(a, b, n_nodes)
    elements = np.column_stack([np.arange(n_nodes - 1), np.arange(1, n_nodes)])
    return Mesh(dim=1, nodes=x[:, None], elements=elements,
                boundary_nodes=np.array([0, n_nodes - 1]),
                h=(b - a) / (n_nodes - 1), grid=((a, b), n_nodes))


def build_rect_mesh(x_range, y_range, nx, ny):
    """Tensor-grid triangulation of a rectangle.

    Nodes are numbered with x varying fastest. Each cell is split along the
    diagonal from its lower-left to its upper-right corner.
    """
    (x0, x1), (y0, y1) = x_range, y_range
    if nx < 2 or ny < 2 or not x1 > x0 or not y1 > y0:
        raise ValueError("need nx, ny >= 2 and non-degenerate ranges")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    ll = (j * nx + i).ravel()
    lr, ul, ur = ll + 1, ll + nx, ll + nx + 1
    elements = np.empty((2 * len(ll), 3), dtype=np.int64)
    elements[0::2] = np.column_stack([ll, lr, ur])
    elements[1::2] = np.column_stack([ll, ur, ul])
    gi, gj = np.meshgrid(np.arange(nx), np.arange(ny))
    on_edge = (gi == 0) | (gi == nx - 1) | (gj == 0) | (gj == ny - 1)
    h = float(np.hypot((x1 - x0) / (nx - 1), (y1 - y0) / (ny - 1)))
    return Mesh(dim=2, nodes=nodes, elements=elements,
                boundary_nodes=np.flatnonzero(on_edge.ravel()), h=h,
                grid=((x0, x1), (y0, y1), nx, ny))


def hat_eval(mesh, basis_index, point):
    """Value of hat function ``basis_index`` at a single point."""
    el, w = mesh.locate(np.reshape(np.asarray(point, dtype=float), (1, mesh.dim)))
    verts = mesh.elements[el[0]]
    hit = np.flatnonzero(verts == basis_index)
    return float(w[0, hit[0]]) if len(hit) else 0.0


def make_projector(mesh, locations, boundary="neumann"):
    """Sparse matrix ``A`` with ``A[i, j] = phi_j(s_i)``.

    Under Dirichlet conditions the columns of boundary basis functions are
    dropped, matching the assembled matrices.
    """
    locs = np.asarray(locations, dtype=float)
    if mesh.dim == 1:
        locs = locs.reshape(-1, 1)
    el, w = mesh.locate(locs)
    n = len(el)
    rows = np.repeat(np.arange(n), mesh.dim + 1)
    cols = mesh.elements[el].ravel()
    A = sp.csr_matrix((w.ravel(), (rows, cols)), shape=(n, mesh.n_nodes))
    A.eliminate_zeros()
    free = mesh.free_nodes(boundary)
    if len(free) != mesh.n_nodes:
        A = A[:, free]
    return A


def _boundary_from_elements(dim, elements):
    if dim == 1:
        counts = np.bincount(elements.ravel())
        return np.flatnonzero(counts == 1)
    edges = np.sort(np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]],
                                    elements[:, [0, 2]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1].ravel())


def read_mesh(path):
    """Read the plain-text mesh format written by :func:`write_mesh`."""
    with open(path) as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln and not ln.startswith("#")]
    try:
        dim, n_nodes, n_el = (int(t) for t in lines[0].split())
        nodes = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + n_nodes]])
        elements = np.array([[int(t) for t in ln.split()]
                             for ln in lines[1 + n_nodes:1 + n_nodes + n_el]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed mesh file ({exc})") from exc
    if nodes.shape != (n_nodes, dim) or elements.shape != (n_el, dim + 1):
        raise ValueError(f"{path}: header does not match contents")
    mesh = Mesh(dim=dim, nodes=nodes, elements=elements,
                boundary_nodes=_boundary_from_elements(dim, elements), h=0.0)
    h = float(mesh.element_diameters().max())
    return Mesh(dim=dim, nodes=nodes, elements=elements,
                boundary_nodes=mesh.boundary_nodes.copy(), h=h)


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {mesh.n_nodes} {mesh.n_elements}\n")
        for p in mesh.nodes:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        for e in mesh.elements:
            fh.write(" ".join(str(int(i)) for i in e) + "\n")


def write_triplets(A, path):
    """Write a sparse matrix as ``row col value`` lines."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
