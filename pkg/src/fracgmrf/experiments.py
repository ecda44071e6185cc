"""Experiment drivers behind the CLI: covariance, likelihood and FEM errors."""
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg as sl

from .config import ConfigError, FieldConfig, MeshConfig, RationalConfig
from .fem import OperatorSpec, assemble_mass, assemble_stiffness
from .gmrf import FieldParams, build_model
from .inference import (ObservationSet, loglik_many, posterior, predictive_sd, predict,
                        score_predictions)
from .mesh import build_interval_mesh, build_rect_mesh, make_projector, read_mesh
from .oracle import (cov_error_norms, dense_gaussian_loglik, exact_fem_fractional_cov,
                     field_cov_grid, folded_matern_cov, folded_matern_grid)
from .ratapprox import default_delta

__all__ = [
    "BenchCovConfig",
    "BenchLoglikConfig",
    "FemRateConfig",
    "CvConfig",
    "make_mesh",
    "resolve_delta",
    "bench_cov",
    "bench_loglik",
    "fem_rate",
    "cross_validate",
    "run_cells",
]


@dataclass
class BenchCovConfig:
    N: int = 50
    dim: int = 2
    nu: List[float] = field(default_factory=lambda: [0.6])
    range: List[float] = field(default_factory=lambda: [1.0])
    m: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    sigma: float = 1.0
    delta: str = "zero"
    algo: str = "brasil"
    lumped: bool = True
    timing: bool = False


@dataclass
class BenchLoglikConfig:
    N: int = 50
    n_obs: int = 200
    nu: List[float] = field(default_factory=lambda: [0.6])
    range: List[float] = field(default_factory=lambda: [0.5])
    m: List[int] = field(default_factory=lambda: [1, 2, 3])
    sigma: float = 1.0
    sigma_eps: List[float] = field(default_factory=lambda: [0.1])
    replicates: int = 100
    delta: str = "zero"
    algo: str = "brasil"
    lumped: bool = True
    per_replicate: bool = True


@dataclass
class FemRateConfig:
    N: List[int] = field(default_factory=lambda: [16, 32, 64])
    dim: int = 2
    nu: List[float] = field(default_factory=lambda: [0.2, 0.6])
    range: float = 1.0
    sigma: float = 1.0


@dataclass
class CvConfig(MeshConfig, FieldConfig, RationalConfig):
    obs: str = ""
    radius: List[float] = field(default_factory=lambda: [0.0, 0.05, 0.1])
    n_targets: int = 50


def make_mesh(cfg):
    """Mesh from a config with ``dim, n, x0..y1`` or ``mesh_file``."""
    if getattr(cfg, "mesh_file", None):
        return read_mesh(cfg.mesh_file)
    if cfg.dim == 1:
        return build_interval_mesh(cfg.x0, cfg.x1, cfg.n)
    if cfg.dim == 2:
        return build_rect_mesh((cfg.x0, cfg.x1), (cfg.y0, cfg.y1), cfg.n, cfg.n)
    raise ConfigError(f"dim must be 1 or 2, got {cfg.dim}")


def resolve_delta(mode, m):
    try:
        return default_delta(m, mode)
    except ValueError as exc:
        raise ConfigError(f"delta must be 'zero', 'auto' or a number, got {mode!r}") from exc


def run_cells(fn, cells, workers=1):
    """Map ``fn`` over cells; results come back in cell order."""
    if workers and workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


def _unit_mesh(N, dim):
    return build_interval_mesh(0.0, 1.0, N) if dim == 1 else build_rect_mesh((0, 1), (0, 1), N, N)


def _truth_grid(N, dim, params):
    if dim == 1:
        return folded_matern_grid(N, params.nu, params.kappa, params.sigma, d=1)
    return folded_matern_grid(N, params.nu, params.kappa, params.sigma, d=2)


# --- covariance errors -----------------------------------------------------

def _bench_cov_cell(args):
    cfg, nu, rho = args
    params = FieldParams.from_range(nu, rho, cfg.sigma, cfg.dim)
    mesh = _unit_mesh(cfg.N, cfg.dim)
    truth = _truth_grid(cfg.N, cfg.dim, params)
    rows = []
    cached = None
    for m in cfg.m:
        t0 = time.perf_counter()
        delta = resolve_delta(cfg.delta, m)
        if params.split_beta()[1] == 0.0 and cached is not None:
            l2, sup = cached
        else:
            model = build_model(mesh, params, m=m, lumped=cfg.lumped, delta=delta, algo=cfg.algo)
            l2, sup = cov_error_norms(truth, field_cov_grid(model))
            if params.split_beta()[1] == 0.0:
                cached = (l2, sup)
        secs = time.perf_counter() - t0
        rows.append((nu, rho, m, cfg.algo, delta, l2, sup, secs if cfg.timing else float("nan")))
    return rows


def bench_cov(cfg, workers=1):
    """Covariance errors of the GMRF approximation against the folded truth.

    Rows ``(nu, range, m, algo, delta, l2_err, sup_err, seconds)``.
    """
    cells = [(cfg, nu, rho) for nu in cfg.nu for rho in cfg.range]
    return [row for rows in run_cells(_bench_cov_cell, cells, workers) for row in rows]


# --- likelihood errors -----------------------------------------------------

def _obs_locations(n_obs, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.uniform(0.0, 1.0, size=(n_obs, 2))


def _bench_loglik_cell(args):
    cfg, nu, rho, s_eps, seed = args
    params = FieldParams.from_range(nu, rho, cfg.sigma, 2)
    locs = _obs_locations(cfg.n_obs, seed)
    Sigma = folded_matern_cov(locs[:, None, :], locs[None, :, :], nu, params.kappa, cfg.sigma)
    Sigma = 0.5 * (Sigma + Sigma.T) + s_eps ** 2 * np.eye(cfg.n_obs)
    rng = np.random.Generator(np.random.Philox([seed, 1]))
    Z = rng.standard_normal((cfg.n_obs, cfg.replicates))
    Y = np.linalg.cholesky(Sigma) @ Z
    true_ll = dense_gaussian_loglik(Y, Sigma)
    mesh = _unit_mesh(cfg.N, 2)
    A = make_projector(mesh, locs)
    obs = ObservationSet(locs, Y[:, 0], s_eps)
    rows = []
    for m in cfg.m:
        delta = resolve_delta(cfg.delta, m)
        model = build_model(mesh, params, m=m, lumped=cfg.lumped, delta=delta, algo=cfg.algo)
        approx = loglik_many(model, obs, Y, A)
        err = np.abs(1.0 - approx / true_ll)
        if cfg.per_replicate:
            for r in range(cfg.replicates):
                rows.append((nu, rho, m, s_eps, str(r + 1), true_ll[r], approx[r], err[r]))
        rows.append((nu, rho, m, s_eps, "median", float("nan"), float("nan"), float(np.median(err))))
    return rows


def bench_loglik(cfg, seed=0, workers=1):
    """Relative log-likelihood errors on data simulated from the folded truth.

    Rows ``(nu, range, m, sigma_eps, replicate, true_loglik, approx_loglik,
    abs_rel_err)``; each block of replicates ends with a ``median`` row.
    """
    cells = [(cfg, nu, rho, se, seed) for nu in cfg.nu for rho in cfg.range for se in cfg.sigma_eps]
    return [row for rows in run_cells(_bench_loglik_cell, cells, workers) for row in rows]


# --- FEM convergence -------------------------------------------------------

def _fem_rate_cell(args):
    cfg, N = args
    mesh = _unit_mesh(N, cfg.dim)
    G = assemble_stiffness(mesh).toarray()
    C = assemble_mass(mesh).toarray()
    mu, V = sl.eigh(G, C)
    out = {}
    for nu in cfg.nu:
        params = FieldParams.from_range(nu, cfg.range, cfg.sigma, cfg.dim)
        S = exact_fem_fractional_cov(None, None, params.beta, params.tau, eig=(mu + params.kappa ** 2, V))
        out[nu] = (mesh.h, cov_error_norms(_truth_grid(N, cfg.dim, params), S)[0])
    return out


def fem_rate(cfg, workers=1):
    """Error of the exact fractional FEM covariance as the mesh is refined.

    One dense generalized eigendecomposition of ``(G, C)`` per mesh serves
    all ``nu`` since ``L = G + kappa^2 C``. Rows
    ``(nu, N, h, l2_err, local_rate, fit_rate)``; ``local_rate`` is the
    log-log slope from the previous mesh and ``fit_rate`` the least-squares
    slope over all meshes.
    """
    Ns = sorted(cfg.N)
    per_mesh = run_cells(_fem_rate_cell, [(cfg, N) for N in Ns], workers)
    rows = []
    for nu in cfg.nu:
        hs = np.array([pm[nu][0] for pm in per_mesh])
        errs = np.array([pm[nu][1] for pm in per_mesh])
        fit = float(np.polyfit(np.log(hs), np.log(errs), 1)[0]) if len(Ns) > 1 else float("nan")
        for i, N in enumerate(Ns):
            local = float("nan") if i == 0 else float(np.log(errs[i] / errs[i - 1]) / np.log(hs[i] / hs[i - 1]))
            rows.append((nu, N, float(hs[i]), float(errs[i]), local, fit))
    return rows


# --- leave-group-out cross-validation --------------------------------------

def cross_validate(mesh, obs, params, m, radii, n_targets, seed=0, lumped=True, delta=0.0,
                   algo="brasil", boundary="neumann"):
    """Distance-based leave-group-out scores.

    For every target observation, all observations strictly closer than
    ``D`` are removed (``D = 0`` removes nothing), the model is conditioned
    on the rest and the target is predicted with its noise variance. Rows
    ``(D, mse, neg_log_score, n_targets)``.
    """
    model = build_model(mesh, params, m=m, spec=OperatorSpec(params.kappa, boundary),
                        lumped=lumped, delta=delta, algo=algo)
    rng = np.random.Generator(np.random.Philox(seed))
    n_t = min(n_targets, obs.N)
    targets = np.sort(rng.choice(obs.N, size=n_t, replace=False))
    A_all = make_projector(mesh, obs.locations, boundary)
    rows = []
    for D in radii:
        mean = np.empty(n_t)
        sd = np.empty(n_t)
        for j, t in enumerate(targets):
            dist = np.linalg.norm(obs.locations - obs.locations[t], axis=1)
            keep = np.flatnonzero(~(dist < D)) if D > 0 else np.arange(obs.N)
            if len(keep) == 0:
                raise ValueError(f"radius {D} removes every observation")
            state = posterior(model, obs.subset(keep), A_all[keep])
            a = A_all[[t]]
            mean[j] = predict(state, model, a)[0][0]
            sd[j] = predictive_sd(state, a, obs.sigma_eps)[0]
        mse, nls = score_predictions(obs.y[targets], mean, sd)
        rows.append((D, mse, nls, n_t))
    return rows
