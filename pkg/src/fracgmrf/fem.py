"""Linear finite element matrices for the operator kappa^2 - Laplacian."""
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .cholesky import SparseCholesky

__all__ = [
    "OperatorSpec",
    "FemMatrices",
    "SpectralBounds",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_weighted_mass",
    "assemble_operator",
    "assemble",
    "lump_mass",
    "spectral_bounds",
    "write_sym_matrix",
    "read_sym_matrix",
]

KappaLike = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class OperatorSpec:
    """Operator ``kappa(s)^2 - Laplacian`` with a boundary condition.

    ``kappa`` is a positive constant or a vectorized callable mapping an
    ``(n, dim)`` coordinate array to ``n`` values. For a callable, ``kappa0``
    must bound it from below; for a constant it defaults to ``kappa``.
    """

    kappa: KappaLike
    boundary: str = "neumann"
    kappa0: Optional[float] = None

    def __post_init__(self):
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary condition {self.boundary!r}")
        if callable(self.kappa):
            if self.kappa0 is None:
                raise ValueError("a spatially varying kappa needs an explicit kappa0")
        else:
            if not float(self.kappa) > 0:
                raise ValueError("kappa must be positive")
            if self.kappa0 is None:
                object.__setattr__(self, "kappa0", float(self.kappa))
        if not self.kappa0 > 0:
            raise ValueError("kappa0 must be positive")

    @property
    def is_constant(self):
        return not callable(self.kappa)


@dataclass(frozen=True)
class SpectralBounds:
    lambda_min_lower: float
    lambda_max_upper: float
    method: str = "power"

    def __post_init__(self):
        if not 0 < self.lambda_min_lower <= self.lambda_max_upper:
            raise ValueError("invalid spectral bounds")


@dataclass(frozen=True, eq=False)
class FemMatrices:
    """Assembled matrices restricted to the free basis functions."""

    C: sp.csc_matrix
    G: sp.csc_matrix
    L: sp.csc_matrix
    C_lumped: sp.csc_matrix
    free: np.ndarray
    spec: OperatorSpec

    @property
    def n(self):
        return self.C.shape[0]


# --- element-level kernels -------------------------------------------------

def _local_mass(mesh):
    d = mesh.dim
    meas = mesh.element_measures()
    k = d + 1
    base = (np.ones((k, k)) + np.eye(k)) / ((d + 1) * (d + 2))
    return meas[:, None, None] * base[None]


def _bary_gradients(mesh):
    v = mesh.nodes[mesh.elements]
    if mesh.dim == 1:
        dx = v[:, 1, 0] - v[:, 0, 0]
        g = np.stack([-1.0 / dx, 1.0 / dx], axis=1)
        return g[:, :, None]
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)  # columns are edge vectors
    Jinv = np.linalg.inv(J)  # rows are grads of lambda_1, lambda_2
    g12 = Jinv
    g0 = -g12.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g12], axis=1)


def _local_stiffness(mesh):
    g = _bary_gradients(mesh)
    meas = mesh.element_measures()
    return meas[:, None, None] * np.einsum("eai,ebi->eab", g, g)


def _quadrature(dim):
    """Barycentric quadrature points and weights on the reference simplex."""
    if dim == 1:
        t = 0.5 * (1.0 + np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]))
        pts = np.column_stack([1.0 - t, t])
        w = np.array([5.0, 8.0, 5.0]) / 18.0
        return pts, w
    pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    return pts, np.full(3, 1.0 / 3.0)


def _kappa2_at_quadrature(mesh, spec):
    bary, _ = _quadrature(mesh.dim)
    v = mesh.nodes[mesh.elements]
    xq = np.einsum("qa,ead->eqd", bary, v)
    flat = xq.reshape(-1, mesh.dim)
    vals = np.asarray(spec.kappa(flat), dtype=float).reshape(-1)
    if vals.shape[0] != flat.shape[0]:
        vals = np.array([float(spec.kappa(p)) for p in flat])
    if not np.all(np.isfinite(vals)):
        raise ValueError("kappa returned non-finite values")
    if spec.boundary == "neumann" and np.any(vals < spec.kappa0):
        bad = int(np.argmin(vals))
        raise ValueError(f"kappa({flat[bad].tolist()}) = {vals[bad]:.6g} is below kappa0 = {spec.kappa0}")
    return vals.reshape(xq.shape[:2]) ** 2


def _local_weighted_mass(mesh, spec):
    bary, w = _quadrature(mesh.dim)
    k2 = _kappa2_at_quadrature(mesh, spec)  # (E, Q)
    meas = mesh.element_measures()
    return meas[:, None, None] * np.einsum("q,eq,qa,qb->eab", w, k2, bary, bary)


def _scatter(mesh, local):
    """Symmetric global assembly from per-element local matrices.

    Only the upper triangle is accumulated, in element order, and mirrored,
    so the result is bit-symmetric and reproducible.
    """
    n = mesh.n_nodes
    k = mesh.dim + 1
    a, b = np.triu_indices(k)
    gi = mesh.elements[:, a]
    gj = mesh.elements[:, b]
    rows = np.minimum(gi, gj).ravel()
    cols = np.maximum(gi, gj).ravel()
    vals = local[:, a, b].ravel()
    keys = rows.astype(np.int64) * n + cols
    uniq, inv = np.unique(keys, return_inverse=True)
    acc = np.zeros(len(uniq))
    np.add.at(acc, inv, vals)
    r = uniq // n
    c = uniq % n
    off = r != c
    R = np.concatenate([r, c[off]])
    Cc = np.concatenate([c, r[off]])
    V = np.concatenate([acc, acc[off]])
    return sp.csc_matrix((V, (R, Cc)), shape=(n, n))


def _restrict(A, free):
    if len(free) == A.shape[0]:
        return A
    return A[free][:, free].tocsc()


def assemble_mass(mesh, boundary="neumann"):
    """Consistent mass matrix ``C[i, j] = (phi_i, phi_j)``."""
    return _restrict(_scatter(mesh, _local_mass(mesh)), mesh.free_nodes(boundary))


def assemble_stiffness(mesh, boundary="neumann"):
    """Stiffness matrix ``G[i, j] = (grad phi_i, grad phi_j)``."""
    return _restrict(_scatter(mesh, _local_stiffness(mesh)), mesh.free_nodes(boundary))


def assemble_weighted_mass(mesh, spec):
    """Mass matrix weighted by ``kappa^2``."""
    free = mesh.free_nodes(spec.boundary)
    if spec.is_constant:
        return float(spec.kappa) ** 2 * assemble_mass(mesh, spec.boundary)
    return _restrict(_scatter(mesh, _local_weighted_mass(mesh, spec)), free)


def assemble_operator(mesh, spec):
    """Matrix of the bilinear form of ``kappa^2 - Laplacian``."""
    G = assemble_stiffness(mesh, spec.boundary)
    if spec.is_constant:
        C = assemble_mass(mesh, spec.boundary)
        return (G + float(spec.kappa) ** 2 * C).tocsc()
    return (G + assemble_weighted_mass(mesh, spec)).tocsc()


def lump_mass(C):
    """Diagonal matrix of the row sums of ``C``."""
    d = np.asarray(C.sum(axis=1)).ravel()
    if np.any(d <= 0):
        raise ValueError(f"mass lumping produced a non-positive entry at row {int(np.argmin(d))}")
    return sp.diags(d, format="csc")


def assemble(mesh, spec, lumped_kappa=False):
    """Assemble ``C, G, L`` and the lumped mass for one operator.

    With ``lumped_kappa`` the reaction term uses the lumped mass, so that
    ``L = G + kappa^2 C_lumped``; this keeps all precision blocks sparse.
    """
    free = mesh.free_nodes(spec.boundary)
    C = _restrict(_scatter(mesh, _local_mass(mesh)), free)
    G = _restrict(_scatter(mesh, _local_stiffness(mesh)), free)
    Cl = lump_mass(C)
    if spec.is_constant:
        K = float(spec.kappa) ** 2 * (Cl if lumped_kappa else C)
    else:
        K = _restrict(_scatter(mesh, _local_weighted_mass(mesh, spec)), free)
        if lumped_kappa:
            K = lump_mass(K)
    L = (G + K).tocsc()
    return FemMatrices(C=C.tocsc(), G=G.tocsc(), L=L, C_lumped=Cl, free=free, spec=spec)


def _gershgorin_upper(L, C, dim):
    """Upper bound of the generalized spectrum of ``(L, C)``.

    Gershgorin on ``C_lumped^{-1} L``. For a consistent linear-element mass
    ``C >= C_lumped / (dim + 2)`` holds elementwise, hence the extra factor.
    """
    Cl = np.asarray(C.sum(axis=1)).ravel()
    bound = float(np.max(np.asarray(abs(sp.csr_matrix(L)).sum(axis=1)).ravel() / Cl))
    if sp.csr_matrix(C).count_nonzero() == C.shape[0]:
        return bound
    return bound * (dim + 2)


def spectral_bounds(L, C, spec, dim=2, max_steps=50, inflate=1.01, seed=0, rtol=1e-6):
    """Bounds on the generalized eigenvalues of ``(L, C)``.

    The lower bound is ``kappa0^2``. The upper bound is the largest Ritz
    value of ``C^{-1} L`` from at most ``max_steps`` restarted Lanczos
    iterations, inflated by ``inflate``. Without convergence a Gershgorin
    bound is used.
    """
    lo = float(spec.kappa0) ** 2
    n = L.shape[0]
    Cfac = SparseCholesky(C)
    if n <= 2:
        lam = float(sl.eigh(L.toarray(), C.toarray(), eigvals_only=True)[-1])
        return SpectralBounds(lo, max(lo, inflate * lam), "dense")
    rng = np.random.default_rng(seed)
    Cinv = sla.LinearOperator((n, n), matvec=Cfac.solve, dtype=float)
    try:
        lam = sla.eigsh(L, k=1, M=C, Minv=Cinv, which="LA", v0=rng.standard_normal(n),
                        ncv=min(n - 1, 20), maxiter=max_steps, tol=rtol,
                        return_eigenvectors=False)[0]
        return SpectralBounds(lo, max(lo, inflate * float(lam)), "lanczos")
    except sla.ArpackNoConvergence:
        warnings.warn("Lanczos iteration for the largest eigenvalue did not converge; "
                      "falling back to a Gershgorin bound", RuntimeWarning, stacklevel=2)
    return SpectralBounds(lo, max(lo, _gershgorin_upper(L, C, dim)), "gershgorin")


def write_sym_matrix(A, path):
    """Write the lower triangle of a symmetric matrix as ``row col value`` lines."""
    T = sp.tril(sp.coo_matrix(A)).tocoo()
    order = np.lexsort((T.col, T.row))
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {T.nnz}\n")
        for r, c, v in zip(T.row[order], T.col[order], T.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def read_sym_matrix(path):
    with open(path) as fh:
        header = fh.readline().split()
        n, nnz = int(header[0]), int(header[1])
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ValueError(f"{path}: expected {nnz} entries, found {data.shape[0]}")
    r = data[:, 0].astype(np.int64)
    c = data[:, 1].astype(np.int64)
    v = data[:, 2]
    off = r != c
    return sp.csc_matrix((np.concatenate([v, v[off]]),
                          (np.concatenate([r, c[off]]), np.concatenate([c, r[off]]))), shape=(n, n))
