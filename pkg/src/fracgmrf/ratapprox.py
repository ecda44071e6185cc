"""Rational approximations of x^alpha on [delta, 1] and their partial fractions.

Two constructions are available: ``brasil`` (iterative best approximation by
barycentric interpolation with rebalanced nodes) and ``chebyshev_pade``
(Clenshaw-Lord Chebyshev-Pade, near-best). Both return monomial coefficients
of numerator and denominator of equal degree ``m``.
"""
import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.fft
from numpy.polynomial import Chebyshev, Polynomial
from numpy.polynomial import polynomial as npoly
from scipy.special import gamma, rgamma

__all__ = [
    "RationalCoeffs",
    "PartialFractions",
    "PositivityError",
    "RepeatedPoleError",
    "PadeDegeneracyError",
    "chebyshev_t",
    "chebyshev_coefficients",
    "power_chebyshev_coefficients",
    "chebyshev_pade",
    "brasil",
    "partial_fractions",
    "to_partial_fractions",
    "calibrated_order",
    "default_delta",
    "rational_coefficients",
    "sup_error",
    "error_grid",
]

INTEGER_TOL = 1e-12


class PositivityError(ValueError):
    """A partial-fraction term would give an indefinite precision block."""


class RepeatedPoleError(ValueError):
    pass


class PadeDegeneracyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class RationalCoeffs:
    """``p(x)/q(x)`` with ascending coefficients and monic ``q``."""

    m: int
    a: np.ndarray
    b: np.ndarray
    delta: float
    alpha: float
    algo: str = "brasil"
    deviation: float = float("nan")
    iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        self.a.setflags(write=False)
        self.b.setflags(write=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return npoly.polyval(x, self.a) / npoly.polyval(x, self.b)

    @property
    def interval(self):
        return (self.delta, 1.0)


@dataclass(frozen=True, eq=False)
class PartialFractions:
    """``k + sum_i r_i / (lam - p_i)`` in the spectral variable ``lam``.

    For coefficients built by :func:`to_partial_fractions`, evaluating at
    ``lam = 1/x`` reproduces ``p(x)/q(x)``.
    """

    m: int
    k: float
    r: np.ndarray
    p: np.ndarray
    alpha: float = float("nan")
    delta: float = 0.0

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.k + (self.r / (lam[..., None] - self.p)).sum(axis=-1)

    def at_x(self, x):
        """Evaluate in the original variable ``x = 1/lam``."""
        x = np.asarray(x, dtype=float)
        # r/(1/x - p) = r x/(1 - p x), safe at x = 0
        return self.k + (self.r * x[..., None] / (1.0 - self.p * x[..., None])).sum(axis=-1)


# --- Chebyshev machinery ---------------------------------------------------

def chebyshev_t(n, x):
    """Chebyshev polynomial ``T_n(x)`` from the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    t0, t1 = np.ones_like(x), x
    if n == 0:
        return t0
    for _ in range(n - 1):
        t0, t1 = t1, 2 * x * t1 - t0
    return t1


def chebyshev_coefficients(f, n, interval=(-1.0, 1.0), n_points=None):
    """First ``n`` Chebyshev coefficients of ``f`` on ``interval``.

    Computed by a discrete cosine transform at Chebyshev points of the first
    kind; ``f`` must accept arrays.
    """
    lo, hi = interval
    N = max(int(n_points or 0), 2 * n, 64)
    theta = (np.arange(N) + 0.5) * np.pi / N
    x = lo + (hi - lo) * (np.cos(theta) + 1.0) / 2.0
    c = scipy.fft.dct(np.asarray(f(x), dtype=float), type=2) / N
    c[0] /= 2.0
    return c[:n]


def power_chebyshev_coefficients(alpha, n, delta=0.0):
    """Chebyshev coefficients of ``x^alpha`` on ``[delta, 1]``.

    For ``delta = 0`` the closed form
    ``c_k = 4 Gamma(2a+1) / (2^(2a+1) Gamma(1+a+k) Gamma(1+a-k))`` is used
    (with ``c_0`` halved to match the standard series). Otherwise the
    coefficients come from a large DCT.
    """
    if delta == 0.0:
        k = np.arange(n)
        c = 4.0 * gamma(2 * alpha + 1) / 2 ** (2 * alpha + 1) * rgamma(1 + alpha + k) * rgamma(1 + alpha - k)
        c[0] /= 2.0
        return c
    return chebyshev_coefficients(lambda x: np.power(x, alpha), n, (delta, 1.0), n_points=2 ** 15)


def _clenshaw_lord(c, m):
    """Chebyshev-Pade numerator and denominator Chebyshev coefficients."""
    g = np.asarray(c, dtype=float)
    M = np.array([[g[n - j] for j in range(1, m + 1)] for n in range(m + 1, 2 * m + 1)])
    rhs = -g[m + 1:2 * m + 1]
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise PadeDegeneracyError(f"Pade system singular for m={m}; try a smaller m") from exc
    if np.linalg.cond(M) > 1e14:
        raise PadeDegeneracyError(f"Pade system numerically singular for m={m}; try a smaller m")
    beta = np.concatenate([[1.0], sol])
    a_ = np.array([beta[:n + 1] @ g[n::-1] for n in range(m + 1)])
    P = np.zeros(2 * m + 1)
    Q = np.zeros(2 * m + 1)
    for i in range(m + 1):
        for k in range(m + 1):
            P[abs(i - k)] += a_[i] * beta[k]
            Q[abs(i - k)] += beta[i] * beta[k]
    return P[:m + 1], Q[:m + 1]


def _normalize(a, b):
    return a / b[-1], b / b[-1]


def chebyshev_pade(alpha, m, interval=(0.0, 1.0)):
    """Clenshaw-Lord ``[m/m]`` Chebyshev-Pade approximant of ``x^alpha``."""
    delta, upper = float(interval[0]), float(interval[1])
    _check_args(alpha, m, delta, upper)
    c = power_chebyshev_coefficients(alpha, 2 * m + 2, delta)
    P, Q = _clenshaw_lord(c, m)
    num = Chebyshev(P, domain=[delta, 1.0]).convert(kind=Polynomial).coef
    den = Chebyshev(Q, domain=[delta, 1.0]).convert(kind=Polynomial).coef
    num = np.pad(num, (0, m + 1 - len(num)))
    den = np.pad(den, (0, m + 1 - len(den)))
    a, b = _normalize(num, den)
    _check_denominator(b, delta)
    return RationalCoeffs(m=m, a=a, b=b, delta=delta, alpha=float(alpha), algo="chebyshev-pade")


# --- BRASIL ----------------------------------------------------------------

def _bary_fit(f, nodes):
    """Barycentric rational interpolant of type (m, m) through 2m+1 nodes.

    Every other node is a support point; the weights make the interpolant
    also pass through the remaining nodes (null vector of the Loewner matrix).
    """
    z = nodes[0::2]
    x = nodes[1::2]
    fz = f(z)
    fx = f(x)
    loewner = (fx[:, None] - fz[None, :]) / (x[:, None] - z[None, :])
    w = np.linalg.svd(loewner)[2][-1]
    return z, fz, w


def _bary_eval(z, fz, w, x):
    x = np.asarray(x, dtype=float)
    d = x[..., None] - z
    exact = d == 0
    d = np.where(exact, 1.0, d)
    c = w / d
    r = (c * fz).sum(axis=-1) / c.sum(axis=-1)
    hit = exact.any(axis=-1)
    if np.any(hit):
        r = np.where(hit, fz[np.argmax(exact, axis=-1)], r)
    return r


def _local_maxima(err, edges, n_samples=24, n_golden=40):
    """Maximum of ``|err|`` on each subinterval (sampling plus golden section)."""
    lo, hi = edges[:-1], edges[1:]
    rows = np.arange(len(lo))
    t = np.linspace(0.0, 1.0, n_samples)
    pts = lo[:, None] + (hi - lo)[:, None] * t[None, :]
    vals = np.abs(err(pts))
    k = np.argmax(vals, axis=1)
    a = pts[rows, np.clip(k - 1, 0, n_samples - 1)]
    b = pts[rows, np.clip(k + 1, 0, n_samples - 1)]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = np.abs(err(c)), np.abs(err(d))
    for _ in range(n_golden):
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c = b - g * (b - a)
        d = a + g * (b - a)
        fc, fd = np.abs(err(c)), np.abs(err(d))
    em = np.maximum(fc, fd)
    return np.maximum(em, vals[rows, k])


def _initial_nodes(alpha, m, a, b):
    n = 2 * m + 1
    j = np.arange(1, n + 1)
    if a == 0.0:
        # geometric clustering towards the branch point at 0
        t = np.exp(-math.pi * math.sqrt(2.0 / alpha) * (n + 1 - j) / math.sqrt(n + 1))
        return a + (b - a) * t
    return np.sort(a + (b - a) * (1.0 + np.cos((2 * j - 1) * np.pi / (2 * n))) / 2.0)


def _bary_to_monomial(z, fz, w):
    m = len(z) - 1
    num = np.zeros(m + 1)
    den = np.zeros(m + 1)
    for j in range(m + 1):
        others = npoly.polyfromroots(np.delete(z, j))
        num += w[j] * fz[j] * others
        den += w[j] * others
    return _normalize(num, den)


def brasil(alpha, m, interval=(0.0, 1.0), tol=1e-4, max_iter=200, exponent=0.6, clip=2.0,
           init=None):
    """Best uniform rational approximation of ``x^alpha`` of type (m, m).

    Nodes of a barycentric interpolant are moved so that the maximal errors
    on the subintervals between them become equal. Each step rescales the
    subinterval lengths by ``(err_j / geomean(err)) ** -exponent`` (clipped
    to ``[1/clip, clip]``); the exponent is halved whenever three steps fail
    to improve the deviation ``max/min - 1``. Stops once the deviation is at
    most ``tol``. On failure the best iterate is returned with
    ``converged=False`` and a warning.
    """
    delta, upper = float(interval[0]), float(interval[1])
    _check_args(alpha, m, delta, upper)
    f = lambda x: np.power(x, alpha)
    nodes = np.sort(np.asarray(init, dtype=float)) if init is not None else _initial_nodes(alpha, m, delta, upper)
    if len(nodes) != 2 * m + 1:
        raise ValueError(f"need {2 * m + 1} initial nodes")
    best_dev, best_nodes = np.inf, nodes
    stall, e, it = 0, exponent, 0
    for it in range(1, max_iter + 1):
        z, fz, w = _bary_fit(f, nodes)
        edges = np.concatenate([[delta], nodes, [upper]])
        em = _local_maxima(lambda x: f(x) - _bary_eval(z, fz, w, x), edges)
        dev = float(em.max() / em.min() - 1.0)
        if dev < best_dev:
            best_dev, best_nodes, stall = dev, nodes, 0
        else:
            stall += 1
            if stall >= 3:
                e *= 0.5
                stall = 0
                nodes = best_nodes
                continue
        if dev <= tol:
            break
        lengths = np.diff(edges)
        lengths *= np.clip((em / np.exp(np.mean(np.log(em)))) ** (-e), 1.0 / clip, clip)
        lengths *= (upper - delta) / lengths.sum()
        nodes = delta + np.cumsum(lengths)[:-1]
    converged = best_dev <= tol
    if not converged:
        warnings.warn(f"brasil(alpha={alpha}, m={m}) stopped at deviation {best_dev:.2e} > tol {tol:.1e}",
                      RuntimeWarning, stacklevel=2)
    z, fz, w = _bary_fit(f, best_nodes)
    a, b = _bary_to_monomial(z, fz, w)
    _check_denominator(b, delta)
    return RationalCoeffs(m=m, a=a, b=b, delta=delta, alpha=float(alpha), algo="brasil",
                          deviation=best_dev, iterations=it, converged=converged)


# --- partial fractions -----------------------------------------------------

def partial_fractions(num, den, check_positive=True):
    """Partial fractions of ``num(t)/den(t)`` for polynomials of equal degree.

    Coefficients are ascending. Returns ``(k, r, p)`` with
    ``num/den = k + sum_i r_i/(t - p_i)``. Poles are the companion-matrix
    eigenvalues of ``den`` and must be real and distinct.
    """
    num = np.trim_zeros(np.asarray(num, dtype=float), "b")
    den = np.trim_zeros(np.asarray(den, dtype=float), "b")
    m = len(den) - 1
    if m < 1 or len(num) - 1 > m:
        raise ValueError("need deg(num) <= deg(den) and deg(den) >= 1")
    num = np.pad(num, (0, m + 1 - len(num)))
    k = num[-1] / den[-1]
    p = npoly.polyroots(den)
    if np.any(np.abs(p.imag) > 1e-8 * max(1.0, np.abs(p).max())):
        raise ValueError(f"denominator has complex roots {p[np.abs(p.imag) > 0].tolist()}")
    p = np.sort(p.real)
    if m > 1:
        # relative to the neighbouring poles, which may span many decades
        gap = np.diff(p) / np.maximum(np.abs(p[1:]), np.abs(p[:-1]))
        if gap.min() <= 1e-8:
            i = int(np.argmin(gap))
            raise RepeatedPoleError(f"repeated poles near {p[i]:.6g} (relative gap {gap[i]:.3g})")
    rem = num - k * den
    r = npoly.polyval(p, rem) / npoly.polyval(p, npoly.polyder(den))
    if check_positive:
        _check_positivity(k, r, p)
    return float(k), r, p


def _check_positivity(k, r, p):
    for i, (ri, pi) in enumerate(zip(r, p)):
        if not pi < 0:
            raise PositivityError(f"pole p_{i + 1} = {pi:.6g} is not negative")
        if not ri > 0:
            raise PositivityError(f"residue r_{i + 1} = {ri:.6g} is not positive")
    if not k > 0:
        raise PositivityError(f"constant k = {k:.6g} is not positive")


def to_partial_fractions(coeffs, check_positive=True):
    """Partial fractions of ``p(x)/q(x)`` in the spectral variable ``lam = 1/x``.

    ``p(1/lam)/q(1/lam)`` has numerator and denominator coefficients
    ``a[::-1]`` and ``b[::-1]`` in ``lam``, so ``k = a_0/b_0`` and the poles
    ``p_i`` are reciprocals of the roots of ``q``.
    """
    k, r, p = partial_fractions(coeffs.a[::-1], coeffs.b[::-1], check_positive=check_positive)
    pf = PartialFractions(m=coeffs.m, k=k, r=r, p=p, alpha=coeffs.alpha, delta=coeffs.delta)
    xs = coeffs.delta + (1 - coeffs.delta) * (1 + np.cos((2 * np.arange(20) + 1) * np.pi / 40)) / 2
    ref = coeffs(xs)
    rel = np.max(np.abs(pf.at_x(xs) - ref) / np.abs(ref))
    if rel > 1e-8:
        warnings.warn(f"partial fraction reconstruction error {rel:.2e}", RuntimeWarning, stacklevel=2)
    return pf


# --- order selection, defaults and caching --------------------------------

class CalibratedOrder(NamedTuple):
    m: int
    rational: bool


def calibrated_order(beta, d, h, eps=0.01):
    """Order ``m`` balancing rational and finite element errors.

    ``m = ceil((min(4 beta - d/2 - eps, 2) + d/2)^2 ln(h)^2 / (4 pi^2 {2 beta}))``
    with a minimum of 1. For integer ``2 beta`` returns ``(0, False)``.
    """
    if not 0 < h < 1:
        raise ValueError("h must lie in (0, 1)")
    frac = 2 * beta - math.floor(2 * beta)
    if frac < INTEGER_TOL or 1 - frac < INTEGER_TOL:
        return CalibratedOrder(0, False)
    rate = min(4 * beta - d / 2 - eps, 2.0)
    m = math.ceil((rate + d / 2) ** 2 * math.log(h) ** 2 / (4 * math.pi ** 2 * frac))
    return CalibratedOrder(max(1, m), True)


def default_delta(m, mode="zero"):
    """``0`` or ``10^(-(5+m)/2)``."""
    if mode in ("zero", 0, "0"):
        return 0.0
    if mode == "auto":
        return 10.0 ** (-(5 + m) / 2)
    return float(mode)


_CACHE = {}
_CACHE_LOCK = threading.Lock()


def rational_coefficients(alpha, m, delta=0.0, algo="brasil"):
    """Cached coefficients keyed by ``(round(alpha, 6), m, delta, algo)``."""
    key = (round(float(alpha), 6), int(m), float(delta), algo)
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    if algo == "brasil":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rc = brasil(key[0], key[1], (key[2], 1.0), max_iter=500)
        if not rc.converged:
            warnings.warn(f"brasil did not reach tolerance for alpha={key[0]}, m={m}: "
                          f"deviation {rc.deviation:.2e}", RuntimeWarning, stacklevel=2)
    elif algo in ("chebyshev-pade", "cp"):
        rc = chebyshev_pade(key[0], key[1], (key[2], 1.0))
    else:
        raise ValueError(f"unknown rational approximation algorithm {algo!r}")
    pf = to_partial_fractions(rc)
    with _CACHE_LOCK:
        _CACHE.setdefault(key, (rc, pf))
        return _CACHE[key]


def clear_cache():
    with _CACHE_LOCK:
        _CACHE.clear()


def error_grid(delta=0.0, n=100_000):
    """Evaluation grid on ``[delta, 1]``: half uniform, half geometric."""
    lo = max(delta, 1e-16)
    g = np.concatenate([[delta], np.geomspace(lo, 1.0, n // 2), np.linspace(delta, 1.0, n - n // 2 - 1)])
    return np.unique(g)


def sup_error(coeffs, n=100_000):
    x = error_grid(coeffs.delta, n)
    return float(np.max(np.abs(np.power(x, coeffs.alpha) - coeffs(x))))


def _check_args(alpha, m, delta, upper):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    if not 0 <= delta < upper:
        raise ValueError("need 0 <= delta < 1")


def _check_denominator(b, delta):
    roots = npoly.polyroots(b)
    real = roots[np.abs(roots.imag) <= 1e-12 * max(1.0, np.abs(roots).max())].real
    if np.any((real >= delta) & (real <= 1.0)):
        raise ValueError("denominator vanishes inside the approximation interval")
