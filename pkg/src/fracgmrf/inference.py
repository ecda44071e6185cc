"""Likelihood, posterior, kriging and fitting for the latent Gaussian model.

Observations follow ``y = A_bar X + eps`` with ``X`` the stacked block
vector, ``A_bar = [A ... A]`` and ``eps ~ N(0, sigma_eps^2 I)``.
"""
import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .cholesky import NotPositiveDefiniteError, SparseCholesky
from .fem import OperatorSpec
from .gmrf import FieldParams, GmrfModel, ModelError, build_model
from .mesh import make_projector
from .ratapprox import default_delta

__all__ = [
    "ObservationSet",
    "PosteriorState",
    "FitResult",
    "stack_projector",
    "posterior",
    "loglik",
    "loglik_many",
    "predict",
    "predictive_sd",
    "fit",
    "score_predictions",
    "read_observations",
    "write_observations",
    "write_fit_trace",
]

LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    locations: np.ndarray
    y: np.ndarray
    sigma_eps: float

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float)
        if locs.ndim == 1:
            locs = locs[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(y) < 1 or locs.shape[0] != len(y):
            raise ValueError("need N >= 1 observations with one location each")
        if not self.sigma_eps > 0:
            raise ValueError("sigma_eps must be positive")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "y", y)

    @property
    def N(self):
        return len(self.y)

    def with_y(self, y):
        return ObservationSet(self.locations, y, self.sigma_eps)

    def with_sigma(self, sigma_eps):
        return ObservationSet(self.locations, self.y, sigma_eps)

    def subset(self, idx):
        return ObservationSet(self.locations[idx], self.y[idx], self.sigma_eps)


@dataclass(frozen=True, eq=False)
class PosteriorState:
    mu: np.ndarray
    factor: SparseCholesky
    loglik: float
    Q_cond: sp.csc_matrix
    n_blocks: int


def stack_projector(A, m):
    """``[A ... A]`` with ``m + 1`` copies."""
    A = sp.csr_matrix(A)
    return sp.hstack([A] * (int(m) + 1), format="csr")


def _projector(model, obs, A):
    if A is None:
        A = make_projector(model.mesh, obs.locations, model.spec.boundary)
    A = sp.csr_matrix(A)
    if A.shape != (obs.N, model.n):
        raise ValueError(f"projector has shape {A.shape}, expected {(obs.N, model.n)}")
    return A


def posterior(model, obs, A=None):
    """Posterior of ``X`` given ``y`` and the marginal log-likelihood.

    ``2 l = log|Q| + log|Q_eps| - log|Q_X|y| - mu^T Q mu
    - (y - A_bar mu)^T Q_eps (y - A_bar mu) - N log(2 pi)``.
    """
    A = _projector(model, obs, A)
    Abar = stack_projector(A, model.n_blocks - 1)
    q_eps = 1.0 / obs.sigma_eps ** 2
    Q = model.precision()
    Qc = (Q + q_eps * (Abar.T @ Abar)).tocsc()
    try:
        fac = SparseCholesky(Qc)
    except NotPositiveDefiniteError as exc:
        raise ModelError("conditional precision is not positive definite") from exc
    mu = fac.solve(q_eps * (Abar.T @ obs.y))
    ll = _loglik_terms(model, fac, Q, Abar, obs.y[:, None], mu[:, None], obs.sigma_eps)[0]
    return PosteriorState(mu=mu, factor=fac, loglik=float(ll), Q_cond=Qc, n_blocks=model.n_blocks)


def _loglik_terms(model, fac, Q, Abar, Y, MU, sigma_eps):
    N = Y.shape[0]
    q_eps = 1.0 / sigma_eps ** 2
    resid = Y - Abar @ MU
    quad = np.einsum("ij,ij->j", MU, Q @ MU) + q_eps * np.einsum("ij,ij->j", resid, resid)
    logdet_eps = -2.0 * N * math.log(sigma_eps)
    return 0.5 * (model.logdet() + logdet_eps - fac.logdet() - quad - N * LOG2PI)


def loglik(model, obs, A=None):
    """Marginal log-likelihood of ``obs.y``."""
    return posterior(model, obs, A).loglik


def loglik_many(model, obs, Y, A=None):
    """Log-likelihoods of several response vectors (columns of ``Y``).

    The conditional precision does not depend on ``y``, so it is factorized
    once for all columns.
    """
    A = _projector(model, obs, A)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Abar = stack_projector(A, model.n_blocks - 1)
    q_eps = 1.0 / obs.sigma_eps ** 2
    Q = model.precision()
    fac = SparseCholesky((Q + q_eps * (Abar.T @ Abar)).tocsc())
    MU = fac.solve(q_eps * (Abar.T @ Y))
    return _loglik_terms(model, fac, Q, Abar, Y, MU, obs.sigma_eps)


def predict(state, model, A_new, n_samples=0, seed=0):
    """Kriging mean at new locations and optional posterior samples.

    Returns ``(mean, samples)`` where ``samples`` has shape
    ``(n_samples, N_new)`` (or is ``None`` when ``n_samples == 0``).
    """
    Abar = stack_projector(sp.csr_matrix(A_new), state.n_blocks - 1)
    if Abar.shape[1] != len(state.mu):
        raise ValueError("prediction projector does not match the model")
    mean = Abar @ state.mu
    if not n_samples:
        return mean, None
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((len(state.mu), n_samples))
    X = state.mu[:, None] + state.factor.solve_factor(z)
    return mean, (Abar @ X).T


def predictive_sd(state, A_new, sigma_eps=None, chunk=512):
    """Posterior standard deviation of the field (plus noise if given)."""
    Abar = stack_projector(sp.csr_matrix(A_new), state.n_blocks - 1)
    var = np.empty(Abar.shape[0])
    for start in range(0, Abar.shape[0], chunk):
        rows = Abar[start:start + chunk].toarray().T
        v = state.factor.solve_factor_t(rows)
        var[start:start + chunk] = np.einsum("ij,ij->j", v, v)
    if sigma_eps is not None:
        var = var + sigma_eps ** 2
    return np.sqrt(var)


def score_predictions(y_true, pred_mean, pred_sd):
    """Mean squared error and negative log-score (both smaller is better)."""
    y = np.asarray(y_true, dtype=float)
    mu = np.asarray(pred_mean, dtype=float)
    sd = np.asarray(pred_sd, dtype=float)
    if not (y.shape == mu.shape == sd.shape):
        raise ValueError("y_true, pred_mean and pred_sd must have equal lengths")
    if np.any(sd <= 0):
        raise ValueError("pred_sd must be positive")
    z = (y - mu) / sd
    mse = float(np.mean((y - mu) ** 2))
    nls = float(np.mean(0.5 * LOG2PI + np.log(sd) + 0.5 * z ** 2))
    return mse, nls


# --- maximum likelihood ----------------------------------------------------

@dataclass
class FitResult:
    params: FieldParams
    sigma_eps: float
    loglik: float
    trace: list = field(default_factory=list)
    n_evals: int = 0
    converged: bool = False


def _logit(p):
    return math.log(p / (1.0 - p))


def _expit(t):
    return 1.0 / (1.0 + math.exp(-t)) if t >= 0 else math.exp(t) / (1.0 + math.exp(t))


def fit(mesh, obs, m, init, sigma_eps0=None, fix_nu=None, nu_max=2.0, spec_factory=None,
        max_iter=500, xatol=1e-6, lumped=True, delta="auto", algo="brasil", simplex_step=0.5,
        restarts=3, restart_tol=1e-2):
    """Maximum-likelihood fit by Nelder-Mead in transformed coordinates.

    Free coordinates are ``log sigma``, ``log rho``, ``logit(nu / nu_max)``
    (unless ``fix_nu``) and ``log sigma_eps``. Stops when the simplex is
    smaller than ``xatol`` or after ``max_iter`` iterations. The search is
    restarted from the best vertex with a fresh simplex while a run gains
    more than ``restart_tol`` (at most ``restarts`` times). The trace holds
    the best point after every iteration.

    ``delta`` defaults to ``"auto"``: with ``delta = 0`` the approximation
    error near integer ``2 beta`` is large and the likelihood is not smooth
    in ``nu`` there, which traps the simplex.
    """
    if isinstance(delta, str):
        delta = default_delta(m, delta)
    if obs.N < 10:
        raise ValueError("fitting needs at least 10 observations")
    d = mesh.dim
    A = make_projector(mesh, obs.locations)
    if spec_factory is None:
        spec_factory = lambda kappa: OperatorSpec(kappa)
    s_eps0 = obs.sigma_eps if sigma_eps0 is None else sigma_eps0
    nu0 = init.nu if fix_nu is None else fix_nu
    if not 0 < nu0 < nu_max:
        raise ValueError(f"initial nu must lie in (0, {nu_max})")

    def unpack(th):
        if fix_nu is None:
            ls, lr, tn, le = th
            nu = nu_max * _expit(tn)
        else:
            ls, lr, le = th
            nu = fix_nu
        return math.exp(ls), math.exp(lr), nu, math.exp(le)

    theta0 = [math.log(init.sigma), math.log(init.range)]
    if fix_nu is None:
        theta0.append(_logit(nu0 / nu_max))
    theta0.append(math.log(s_eps0))
    theta0 = np.array(theta0)

    cache = {}

    def evaluate(th):
        key = tuple(np.round(th, 14))
        if key in cache:
            return cache[key]
        sigma, rho, nu, s_eps = unpack(th)
        val = -np.inf
        if nu > 1e-8:
            try:
                params = FieldParams.from_range(nu, rho, sigma, d)
                model = build_model(mesh, params, m=m, spec=spec_factory(params.kappa),
                                    lumped=lumped, delta=delta, algo=algo)
                val = loglik(model, obs.with_sigma(s_eps), A)
            except (ModelError, np.linalg.LinAlgError, ValueError, OverflowError):
                val = -np.inf
        if not np.isfinite(val):
            val = -np.inf
        cache[key] = val
        return val

    ll0 = evaluate(theta0)
    if not np.isfinite(ll0):
        raise ValueError("log-likelihood is not finite at the initial point; rescale the initial values")

    trace = []

    def record(th):
        sigma, rho, nu, s_eps = unpack(th)
        trace.append((len(trace) + 1, sigma, rho, nu, s_eps, evaluate(th)))

    objective = lambda th: -evaluate(th) if np.isfinite(evaluate(th)) else 1e300
    start, start_ll, converged = theta0, ll0, False
    for _ in range(1 + max(0, int(restarts))):
        simplex = np.vstack([start] + [start + simplex_step * e for e in np.eye(len(start))])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = scipy.optimize.minimize(
                objective, start, method="Nelder-Mead", callback=record,
                options={"xatol": xatol, "fatol": np.inf, "maxiter": max_iter,
                         "initial_simplex": simplex})
        converged = bool(res.success)
        best_ll, best = max(((v, k) for k, v in cache.items()), key=lambda t: t[0])
        if best_ll - start_ll <= restart_tol:
            break
        start, start_ll = np.array(best), best_ll
    # best-so-far bookkeeping: the optimizer reports its best vertex
    best_ll, best = max(((v, k) for k, v in cache.items()), key=lambda t: t[0])
    best = np.array(best)
    sigma, rho, nu, s_eps = unpack(best)
    params = FieldParams.from_range(nu, rho, sigma, d)
    for i in range(1, len(trace)):
        if trace[i][5] < trace[i - 1][5]:
            trace[i] = (trace[i][0],) + trace[i - 1][1:]
    return FitResult(params=params, sigma_eps=s_eps, loglik=float(best_ll), trace=trace,
                     n_evals=len(cache), converged=converged)


# --- files -----------------------------------------------------------------

def read_observations(path):
    """Read ``x[,y],value`` CSV; returns ``(locations, values)``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows:
        raise ValueError(f"{path}: empty observation file")
    header = [h.strip() for h in rows[0]]
    if header not in (["x", "value"], ["x", "y", "value"]):
        raise ValueError(f"{path}: header must be 'x,value' or 'x,y,value', got {','.join(header)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise ValueError(f"{path}: no observations")
    return data[:, :-1], data[:, -1]


def write_observations(path, locations, values, header_lines=()):
    locs = np.asarray(locations, dtype=float)
    if locs.ndim == 1:
        locs = locs[:, None]
    names = ["x", "value"] if locs.shape[1] == 1 else ["x", "y", "value"]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for loc, v in zip(locs, values):
            fh.write(",".join(repr(float(c)) for c in loc) + f",{float(v)!r}\n")


def write_fit_trace(path, trace, header_lines=()):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("iter,sigma,rho,nu,sigma_eps,loglik\n")
        for it, sigma, rho, nu, s_eps, ll in trace:
            fh.write(f"{it},{sigma!r},{rho!r},{nu!r},{s_eps!r},{ll!r}\n")
