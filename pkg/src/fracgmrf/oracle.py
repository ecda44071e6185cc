"""Reference covariances: Matern, folded Matern on [0, 1]^d, exact FEM."""
import math

import numpy as np
import scipy.linalg as sl
from scipy.special import gammaln, kv

from .gmrf import DENSE_LIMIT, ModelError

__all__ = [
    "matern_cov",
    "folded_matern_cov",
    "folded_matern_grid",
    "exact_fem_fractional_cov",
    "generalized_eigh",
    "cov_error_norms",
    "grid_node_indices",
    "field_cov_grid",
    "dense_gaussian_loglik",
]

FOLD_RTOL = 1e-10


def matern_cov(r, nu, kappa, sigma=1.0):
    """``sigma^2 / (2^(nu-1) Gamma(nu)) (kappa r)^nu K_nu(kappa r)``."""
    r = np.asarray(r, dtype=float)
    x = kappa * np.abs(r)
    out = np.full(x.shape, sigma ** 2, dtype=float)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            logc = (1.0 - nu) * math.log(2.0) - gammaln(nu)
            val = np.exp(logc + nu * np.log(xp)) * kv(nu, xp)
        val = np.where(np.isfinite(val), val, 1.0)  # kv overflow only as x -> 0
        val = np.where(xp > 700.0, 0.0, val)
        out[pos] = sigma ** 2 * val
    return out if out.ndim else float(out)


def _lattice(K, d):
    k = np.arange(-K, K + 1)
    if d == 1:
        return k[:, None]
    a, b = np.meshgrid(k, k, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


def _shell(K, d):
    pts = _lattice(K, d)
    return pts[np.abs(pts).max(axis=1) == K]


def _fold_terms(x, y, shifts, nu, kappa, sigma):
    """Sum over shifts of the 2^d reflection terms; last axis holds coordinates."""
    d = x.shape[-1]
    total = np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))
    signs = [(-1,), (1,)] if d == 1 else [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for sg in signs:
        base = x + np.asarray(sg, dtype=float) * y
        for k in shifts:
            total = total + matern_cov(np.linalg.norm(base + 2.0 * k, axis=-1), nu, kappa, sigma)
    return total


def folded_matern_cov(x, y, nu, kappa, sigma=1.0, K_trunc=4, adaptive=True):
    """Covariance of the Neumann Whittle-Matern field on ``[0, 1]^d``.

    A reflected lattice sum of Matern covariances truncated to
    ``k in {-K..K}^d``. Points carry their coordinates on the last axis and
    broadcast against each other. With ``adaptive`` the lattice is extended shell by
    shell until a shell adds less than ``1e-10`` relative, starting at
    ``K_trunc``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if y.ndim == 0:
        y = y.reshape(1)
    d = x.shape[-1]
    if y.shape[-1] != d or d not in (1, 2):
        raise ValueError("points must have matching dimension 1 or 2")
    total = _fold_terms(x, y, _lattice(K_trunc, d), nu, kappa, sigma)
    K = K_trunc
    while adaptive:
        K += 1
        add = _fold_terms(x, y, _shell(K, d), nu, kappa, sigma)
        total = total + add
        if np.max(np.abs(add)) <= FOLD_RTOL * np.max(np.abs(total)) or K > 10_000:
            break
    return float(total) if total.ndim == 0 else total


def _fold_table_1d(T, h, nu, kappa, sigma, K):
    t = np.arange(-T, 2 * T + 1, dtype=float)
    shifts = np.arange(-K, K + 1)
    return sum(matern_cov(h * np.abs(t + 2 * k * T), nu, kappa, sigma) for k in shifts)


def _fold_table_2d(T, h, nu, kappa, sigma, shifts):
    t = np.arange(-T, 2 * T + 1, dtype=float)
    A, B = np.meshgrid(t, t, indexing="ij")
    F = np.zeros_like(A)
    for k1, k2 in shifts:
        F += matern_cov(h * np.hypot(A + 2 * k1 * T, B + 2 * k2 * T), nu, kappa, sigma)
    return F


def folded_matern_grid(N, nu, kappa, sigma=1.0, d=2, K_trunc=4):
    """Folded Matern covariance between all nodes of a regular grid.

    The grid has ``N`` equally spaced nodes per axis on ``[0, 1]`` with x
    varying fastest. Because every reflected distance is a lattice vector,
    the lattice sum is tabulated once over integer offsets.
    """
    T = N - 1
    h = 1.0 / T
    K = K_trunc
    if d == 1:
        F = _fold_table_1d(T, h, nu, kappa, sigma, K)
        while True:
            K += 1
            t = np.arange(-T, 2 * T + 1, dtype=float)
            add = matern_cov(h * np.abs(t + 2 * K * T), nu, kappa, sigma) + \
                matern_cov(h * np.abs(t - 2 * K * T), nu, kappa, sigma)
            F += add
            if add.max() <= FOLD_RTOL * F.max():
                break
        i = np.arange(N)
        return F[(i[:, None] - i[None, :]) + T] + F[(i[:, None] + i[None, :]) + T]
    F = _fold_table_2d(T, h, nu, kappa, sigma, _lattice(K, 2))
    while True:
        K += 1
        add = _fold_table_2d(T, h, nu, kappa, sigma, _shell(K, 2))
        F += add
        if add.max() <= FOLD_RTOL * F.max():
            break
    n = N * N
    idx = np.arange(n)
    ix, iy = idx % N, idx // N
    S = np.empty((n, n))
    for start in range(0, n, 512):
        sl_ = slice(start, min(start + 512, n))
        a = ix[sl_, None]
        b = iy[sl_, None]
        dm, dp = a - ix[None, :] + T, a + ix[None, :] + T
        em, ep = b - iy[None, :] + T, b + iy[None, :] + T
        S[sl_] = F[dm, em] + F[dm, ep] + F[dp, em] + F[dp, ep]
    return S


def generalized_eigh(L, C):
    """Dense generalized eigenpairs with ``V^T C V = I``."""
    n = L.shape[0]
    if n > DENSE_LIMIT:
        raise ModelError(f"dense eigendecomposition requested for n_h = {n} > {DENSE_LIMIT}")
    Ld = L.toarray() if hasattr(L, "toarray") else np.asarray(L)
    Cd = C.toarray() if hasattr(C, "toarray") else np.asarray(C)
    return sl.eigh(Ld, Cd)


def exact_fem_fractional_cov(L, C, beta, tau, eig=None):
    """``tau^-2 V diag(lam^(-2 beta)) V^T`` from the eigenpairs of ``(L, C)``."""
    lam, V = generalized_eigh(L, C) if eig is None else eig
    S = (V * (lam ** (-2.0 * beta) / tau ** 2)) @ V.T
    return 0.5 * (S + S.T)


def cov_error_norms(Sigma, Sigma_hat, N=None, d=None):
    """``(||S - S_hat||_F / n_points, max |S - S_hat|)``.

    ``n_points`` is the matrix dimension, i.e. ``N^d`` for a grid with
    ``N`` nodes per axis.
    """
    S = np.asarray(Sigma)
    Sh = np.asarray(Sigma_hat)
    if S.shape != Sh.shape or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("covariance matrices must be square with equal dimensions")
    if N is not None:
        expected = {N ** k for k in ((d,) if d else (1, 2))}
        if S.shape[0] not in expected:
            raise ValueError(f"matrix size {S.shape[0]} does not match a grid with N = {N}")
    D = S - Sh
    return float(np.linalg.norm(D) / S.shape[0]), float(np.abs(D).max())


def grid_node_indices(mesh, grid_N):
    """Node indices of a ``grid_N`` per axis grid on a regular mesh."""
    if mesh.grid is None:
        raise ValueError("grid covariances need a structured mesh")
    if mesh.dim == 1:
        (_, _), n = mesh.grid
        nx = ny = n
    else:
        _, _, nx, ny = mesh.grid
    step = []
    for n in ((nx,) if mesh.dim == 1 else (nx, ny)):
        if (n - 1) % (grid_N - 1):
            raise ValueError(f"grid with {grid_N} nodes per axis is not aligned with mesh nodes")
        step.append((n - 1) // (grid_N - 1))
    g = np.arange(grid_N)
    if mesh.dim == 1:
        return g * step[0]
    gx, gy = np.meshgrid(g * step[0], g * step[1])
    return (gy * nx + gx).ravel()


def field_cov_grid(model, grid_N=None, idx=None, exact=None):
    """Field covariance at grid nodes.

    For a GMRF model this is ``sum_i I Q_i^{-1} I^T`` computed by block solves
    against indicator right-hand sides. ``exact`` may instead be a dense
    weight covariance, which is simply restricted to the grid nodes.
    """
    if idx is None:
        idx = grid_node_indices(model.mesh, grid_N) if grid_N else np.arange(model.n)
    idx = np.asarray(idx)
    if len(idx) > DENSE_LIMIT * 4:
        raise ModelError("grid covariance too large for a dense matrix")
    if exact is not None:
        return np.asarray(exact)[np.ix_(idx, idx)]
    E = np.zeros((model.n, len(idx)))
    E[idx, np.arange(len(idx))] = 1.0
    S = np.zeros((len(idx), len(idx)))
    for f in model.factors:
        S += f.solve(E)[idx]
    return 0.5 * (S + S.T)


def dense_gaussian_loglik(y, Sigma, mean=None):
    """Log-density of ``N(mean, Sigma)`` at ``y`` (columns for several y)."""
    y = np.asarray(y, dtype=float)
    if mean is not None:
        y = y - (mean if y.ndim == 1 else np.asarray(mean)[:, None])
    c, low = sl.cho_factor(Sigma, lower=True)
    z = sl.solve_triangular(c, y, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    quad = np.sum(z * z, axis=0)
    return -0.5 * (quad + logdet + len(Sigma) * math.log(2.0 * math.pi))
