"""Sparse precision blocks of the covariance-based rational approximation.

The field weights are written as ``w = x_1 + ... + x_{m+1}`` with
independent Gaussian ``x_i ~ N(0, Q_i^{-1})``.
"""
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
from scipy.special import gammaln

from . import fem as _fem
from .cholesky import NotPositiveDefiniteError, SparseCholesky
from .ratapprox import INTEGER_TOL, PartialFractions, rational_coefficients

__all__ = [
    "FieldParams",
    "GmrfModel",
    "ModelError",
    "build_model",
    "implied_covariance_dense",
    "rational_spectral_covariance",
    "sample_prior",
    "write_model",
    "spectral_lower_limit",
    "DENSE_LIMIT",
    "SMALL_ALPHA",
]

DENSE_LIMIT = 5000
# below this fractional part the best approximant on [0, 1] equioscillates at
# points smaller than the smallest double, so [1/lambda_max, 1] is used instead
SMALL_ALPHA = 0.05


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldParams:
    """Whittle-Matern parameters: smoothness, scale and marginal std dev."""

    nu: float
    kappa: float
    sigma: float = 1.0
    d: int = 2

    def __post_init__(self):
        if not (self.nu > 0 and self.kappa > 0 and self.sigma > 0):
            raise ValueError("nu, kappa and sigma must be positive")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")

    @classmethod
    def from_range(cls, nu, rho, sigma=1.0, d=2):
        """Parameterize by the practical range ``rho = sqrt(8 nu) / kappa``."""
        if not rho > 0:
            raise ValueError("range must be positive")
        return cls(nu=float(nu), kappa=math.sqrt(8.0 * nu) / rho, sigma=float(sigma), d=int(d))

    @property
    def range(self):
        return math.sqrt(8.0 * self.nu) / self.kappa

    @property
    def beta(self):
        return self.nu / 2.0 + self.d / 4.0

    @property
    def tau(self):
        # tau^2 = Gamma(nu) / (sigma^2 kappa^{2 nu} (4 pi)^{d/2} Gamma(nu + d/2))
        log_tau2 = (gammaln(self.nu) - gammaln(self.nu + self.d / 2.0) - 2.0 * math.log(self.sigma)
                    - 2.0 * self.nu * math.log(self.kappa) - self.d / 2.0 * math.log(4.0 * math.pi))
        return math.exp(0.5 * log_tau2)

    def split_beta(self):
        """``(floor(2 beta), {2 beta})`` with near-integers snapped."""
        two_beta = 2.0 * self.beta
        n = math.floor(two_beta + INTEGER_TOL)
        frac = two_beta - n
        if abs(frac) < INTEGER_TOL:
            frac = 0.0
        return n, frac


@dataclass(frozen=True, eq=False)
class GmrfModel:
    """The ``m + 1`` precision blocks for one parameter setting.

    ``scale`` holds ``tau2``, ``kappa0`` and the combined block multiplier
    ``s = tau^2 kappa0^{4 beta}`` applied to the rescaled operator blocks.
    """

    m: int
    blocks: tuple
    factors: tuple
    lumped: bool
    scale: dict
    beta: float
    floor2beta: int
    frac2beta: float
    pf: Optional[PartialFractions]
    params: FieldParams
    spec: _fem.OperatorSpec
    mesh: object
    matrices: _fem.FemMatrices
    delta: float = 0.0
    algo: str = "brasil"

    @property
    def n(self):
        return self.blocks[0].shape[0]

    @property
    def n_blocks(self):
        return len(self.blocks)

    def precision(self):
        """Block-diagonal precision of the stacked vector ``X``."""
        return sp.block_diag(self.blocks, format="csc")

    def logdet(self):
        return float(sum(f.logdet() for f in self.factors))


def _inv_mass(C):
    d = C.diagonal()
    if sp.csr_matrix(C).count_nonzero() == C.shape[0]:
        return sp.diags(1.0 / d, format="csc")
    n = C.shape[0]
    if n > DENSE_LIMIT:
        raise ModelError(f"consistent-mass blocks need a dense inverse; n_h = {n} exceeds {DENSE_LIMIT}")
    return sp.csc_matrix(np.linalg.inv(C.toarray()))


def _sandwich(X, B, j):
    """``(B^T)^j X B^j``."""
    for _ in range(j):
        X = B.T @ X @ B
    return X


def _symmetric(A):
    A = sp.csc_matrix(A)
    A = 0.5 * (A + A.T)
    A.sort_indices()
    return A.tocsc()


def _rational_blocks(Lh, C, pf, n):
    """Unscaled blocks ``r_i^{-1} (Lh - p_i C)(C^{-1} Lh)^n`` and ``K_n^{-1}``."""
    Cinv = _inv_mass(C) if n > 0 else None
    B = Cinv @ Lh if n > 0 else None
    LCL = Lh @ Cinv @ Lh if n > 0 else None
    j, odd = divmod(n, 2)
    blocks = []
    for r, p in zip(pf.r, pf.p):
        X = (LCL - p * Lh) if odd else (Lh - p * C)
        blocks.append(_sandwich(X, B, j) / r)
    blocks.append(_last_block(Lh, C, B, LCL, n) / pf.k)
    return blocks


def _last_block(Lh, C, B, LCL, n):
    """Precision ``Lh (C^{-1} Lh)^{n-1}`` of the polynomial part, ``C`` for n = 0."""
    if n == 0:
        return C
    j, odd = divmod(n - 1, 2)
    return _sandwich(LCL if odd else Lh, B, j)


def spectral_lower_limit(matrices, C, spec, dim):
    """``kappa0^2 / lambda_max``: the smallest eigenvalue of ``Lh^{-1}``, bounded below."""
    bounds = _fem.spectral_bounds(matrices.L, C, spec, dim=dim)
    return float(spec.kappa0) ** 2 / bounds.lambda_max_upper


def build_model(mesh, params, m=None, spec=None, lumped=True, delta=0.0, algo="brasil", matrices=None):
    """Assemble and factorize the precision blocks.

    The operator is rescaled as ``Lh = L / kappa0^2`` so that the rational
    approximation of ``x^{{2 beta}}`` lives on ``[delta, 1]``; the rescaling
    and ``tau^2`` are folded into one multiplier per block. With ``lumped``
    the lumped mass replaces ``C`` everywhere, which keeps all blocks sparse.
    For integer ``2 beta`` a single block is produced and ``m`` is ignored.
    A fractional part below ``SMALL_ALPHA`` with ``delta = 0`` is approximated
    on ``[kappa0^2 / lambda_max, 1]``, which still covers the spectrum.
    """
    if spec is None:
        spec = _fem.OperatorSpec(params.kappa)
    if spec.is_constant and abs(float(spec.kappa) - params.kappa) > 1e-12 * params.kappa:
        raise ValueError("operator kappa differs from the field parameters")
    if matrices is None:
        matrices = _fem.assemble(mesh, spec, lumped_kappa=lumped)
    C = matrices.C_lumped if lumped else matrices.C
    kappa0 = float(spec.kappa0)
    Lh = (matrices.L / kappa0 ** 2).tocsc()
    n, frac = params.split_beta()
    beta = params.beta
    tau2 = params.tau ** 2
    s = tau2 * kappa0 ** (4.0 * beta)
    pf = None
    if frac == 0.0:
        raw = [_last_block(Lh, C, _inv_mass(C) @ Lh if n > 0 else None,
                           Lh @ _inv_mass(C) @ Lh if n > 1 else None, n)]
        m_eff = 0
    else:
        if m is None or m < 1:
            raise ValueError("a fractional 2*beta needs an order m >= 1")
        if delta == 0.0 and frac < SMALL_ALPHA:
            delta = spectral_lower_limit(matrices, C, spec, mesh.dim)
        _, pf = rational_coefficients(frac, m, delta, algo)
        raw = _rational_blocks(Lh, C, pf, n)
        m_eff = int(m)
    blocks, factors = [], []
    for i, Q in enumerate(raw):
        Q = _symmetric(s * Q)
        try:
            factors.append(SparseCholesky(Q))
        except NotPositiveDefiniteError as exc:
            raise ModelError(f"precision block {i + 1} of {len(raw)} is not positive definite") from exc
        blocks.append(Q)
    scale = {"tau2": tau2, "kappa0": kappa0, "s": s}
    return GmrfModel(m=m_eff, blocks=tuple(blocks), factors=tuple(factors), lumped=bool(lumped),
                     scale=scale, beta=beta, floor2beta=n, frac2beta=frac, pf=pf, params=params,
                     spec=spec, mesh=mesh, matrices=matrices, delta=float(delta), algo=algo)


def _dense_guard(n):
    if n > DENSE_LIMIT:
        raise ModelError(f"dense covariance requested for n_h = {n} > {DENSE_LIMIT}")


def implied_covariance_dense(model, consistent_mass=False):
    """Dense covariance of the weights ``w``.

    By default this is ``sum_i Q_i^{-1}``. With ``consistent_mass`` the
    covariance is evaluated from the partial-fraction formula using the
    consistent mass and operator matrices
    ``s^{-1} [(Lh^{-1} C)^n sum_i r_i (Lh - p_i C)^{-1} + K_n]``.
    """
    _dense_guard(model.n)
    if not consistent_mass:
        I = np.eye(model.n)
        S = sum(f.solve(I) for f in model.factors)
        return 0.5 * (S + S.T)
    mats = _fem.assemble(model.mesh, model.spec, lumped_kappa=False)
    C = mats.C.toarray()
    Lh = mats.L.toarray() / model.scale["kappa0"] ** 2
    n = model.floor2beta
    Lfac = sl.cho_factor(Lh)
    LinvC = sl.cho_solve(Lfac, C)
    P = np.linalg.matrix_power(LinvC, n) if n > 0 else np.eye(model.n)
    if model.pf is None:
        # polynomial part only: (Lh^{-1} C)^{n-1} Lh^{-1}
        S = np.linalg.matrix_power(LinvC, n - 1) @ sl.cho_solve(Lfac, np.eye(model.n))
    else:
        R = sum(r * np.linalg.inv(Lh - p * C) for r, p in zip(model.pf.r, model.pf.p))
        if n == 0:
            K = np.linalg.inv(C) * model.pf.k
        else:
            K = model.pf.k * np.linalg.matrix_power(LinvC, n - 1) @ sl.cho_solve(Lfac, np.eye(model.n))
        S = P @ R + K
    S = S / model.scale["s"]
    return 0.5 * (S + S.T)


def rational_spectral_covariance(model, L=None, C=None, eig=None):
    """Spectral form ``V diag(s^{-1} lam^{-n} r(lam)) V^T`` on ``(L, C)``.

    ``r`` is the partial-fraction approximation of ``lam^{-{2 beta}}`` and
    ``V`` the C-orthonormal generalized eigenvectors. Defaults to the
    consistent matrices of the model's mesh.
    """
    if eig is None:
        if L is None or C is None:
            mats = _fem.assemble(model.mesh, model.spec, lumped_kappa=False)
            L, C = mats.L, mats.C
        _dense_guard(L.shape[0])
        lam, V = sl.eigh(L.toarray(), C.toarray())
    else:
        lam, V = eig
    lam_h = lam / model.scale["kappa0"] ** 2
    g = lam_h ** (-float(model.floor2beta))
    if model.pf is not None:
        g = g * model.pf(lam_h)
    S = (V * (g / model.scale["s"])) @ V.T
    return 0.5 * (S + S.T)


def sample_prior(model, n_samples, seed=0):
    """Draw ``n_samples`` weight vectors; returns shape ``(n_samples, n_h)``.

    Each block is sampled by a triangular solve with its Cholesky factor
    against standard normals from a counter-based generator keyed by seed.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    out = np.zeros((model.n, n_samples))
    for f in model.factors:
        out += f.solve_factor(rng.standard_normal((model.n, n_samples)))
    return out.T


def write_model(model, directory):
    """Dump each block as a coordinate list plus a key=value manifest."""
    os.makedirs(directory, exist_ok=True)
    for i, Q in enumerate(model.blocks, start=1):
        _fem.write_sym_matrix(Q, os.path.join(directory, f"block_{i}.txt"))
    p = model.params
    manifest = {
        "beta": repr(model.beta), "nu": repr(p.nu), "m": model.m, "n_blocks": model.n_blocks,
        "tau": repr(p.tau), "kappa": repr(p.kappa), "sigma": repr(p.sigma), "d": p.d,
        "kappa0": repr(model.scale["kappa0"]), "scale": repr(model.scale["s"]),
        "delta": repr(model.delta), "algo": model.algo, "lumped": str(model.lumped).lower(),
        "n_h": model.n,
    }
    if model.pf is not None:
        manifest["k"] = repr(float(model.pf.k))
        manifest["r"] = " ".join(repr(float(v)) for v in model.pf.r)
        manifest["p"] = " ".join(repr(float(v)) for v in model.pf.p)
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        for key, val in manifest.items():
            fh.write(f"{key}={val}\n")
