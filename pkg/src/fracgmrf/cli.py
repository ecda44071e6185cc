"""Command-line interface: ``fracgmrf <command> [--config FILE] [--key value ...]``."""
import argparse
import dataclasses
import io
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import __version__
from .config import (ConfigError, FieldConfig, MeshConfig, RationalConfig, build_config,
                     config_items, format_value, read_config_file)
from .experiments import (BenchCovConfig, BenchLoglikConfig, CvConfig, FemRateConfig,
                          bench_cov, bench_loglik, cross_validate, fem_rate, make_mesh,
                          resolve_delta)
from .fem import OperatorSpec
from .gmrf import FieldParams, ModelError, build_model, sample_prior, write_model
from .inference import (ObservationSet, fit, posterior, predict, predictive_sd,
                        read_observations, write_fit_trace)
from .mesh import DomainError, make_projector, write_mesh, write_triplets
from .ratapprox import (PadeDegeneracyError, PositivityError, RepeatedPoleError, brasil,
                        chebyshev_pade, sup_error, to_partial_fractions)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


@dataclass
class MeshCmdConfig(MeshConfig):
    boundary: str = "neumann"
    locations: Optional[str] = None
    projector_out: Optional[str] = None


@dataclass
class RatapproxConfig:
    alpha: float = 0.5
    m: int = 2
    delta: str = "zero"
    algo: str = "brasil"
    tol: float = 1e-4
    max_iter: int = 200
    exponent: float = 0.6


@dataclass
class BuildConfig(MeshConfig, FieldConfig, RationalConfig):
    pass


@dataclass
class SimulateConfig(MeshConfig, FieldConfig, RationalConfig):
    n_obs: int = 2000
    locations: Optional[str] = None


@dataclass
class LoglikConfig(MeshConfig, FieldConfig, RationalConfig):
    obs: str = ""


@dataclass
class FitConfig(MeshConfig, FieldConfig, RationalConfig):
    delta: str = "auto"
    obs: str = ""
    fix_nu: Optional[float] = None
    nu_max: float = 2.0
    max_iter: int = 500
    xatol: float = 1e-6


@dataclass
class PredictConfig(MeshConfig, FieldConfig, RationalConfig):
    obs: str = ""
    locations: str = ""
    n_samples: int = 0


COMMANDS = {
    "mesh": (MeshCmdConfig, "build a structured mesh (and optionally a projector)"),
    "ratapprox": (RatapproxConfig, "rational approximation coefficients of x^alpha"),
    "build": (BuildConfig, "assemble the GMRF precision blocks and dump them"),
    "simulate": (SimulateConfig, "simulate noisy observations from the model"),
    "loglik": (LoglikConfig, "marginal log-likelihood of observations"),
    "fit": (FitConfig, "maximum-likelihood parameter fit"),
    "predict": (PredictConfig, "kriging prediction at new locations"),
    "cv": (CvConfig, "distance-based leave-group-out cross-validation"),
    "bench-cov": (BenchCovConfig, "covariance errors against the folded Matern truth"),
    "bench-loglik": (BenchLoglikConfig, "log-likelihood errors against the dense truth"),
    "fem-rate": (FemRateConfig, "FEM covariance error under mesh refinement"),
}


# --- helpers ---------------------------------------------------------------

def _header(command, cfg, seed):
    lines = [f"fracgmrf {__version__}", f"command={command}", f"seed={seed}"]
    lines += [f"{k}={v}" for k, v in config_items(cfg)]
    return lines


class _Output:
    """Collects text and writes it in one piece to a file or stdout."""

    def __init__(self, path, header):
        self.path = path
        self.buf = io.StringIO()
        for line in header:
            self.buf.write(f"# {line}\n")

    def row(self, *values):
        self.buf.write(",".join(format_value(v) if not isinstance(v, (float, np.floating))
                                else repr(float(v)) for v in values) + "\n")

    def close(self):
        text = self.buf.getvalue()
        if self.path in (None, "-"):
            sys.stdout.write(text)
        else:
            with open(self.path, "w") as fh:
                fh.write(text)


def _params(cfg, d):
    return FieldParams.from_range(cfg.nu, cfg.range, cfg.sigma, d)


def _model(cfg, mesh):
    params = _params(cfg, mesh.dim)
    spec = OperatorSpec(params.kappa, cfg.boundary)
    return build_model(mesh, params, m=cfg.m, spec=spec, lumped=cfg.lumped,
                       delta=resolve_delta(cfg.delta, cfg.m), algo=cfg.algo)


def _obs(cfg):
    if not cfg.obs:
        raise ConfigError("an observation file is required (obs=...)")
    locs, y = read_observations(cfg.obs)
    return ObservationSet(locs, y, cfg.sigma_eps)


def _read_locations(path):
    """Coordinates from a CSV or whitespace file; one optional header line."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append([float(p) for p in line.replace(",", " ").split()])
            except ValueError:
                if rows:
                    raise ConfigError(f"{path}:{lineno}: bad coordinate line {line!r}")
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}: no locations or ragged rows")
    return np.array(rows)


def _random_locations(cfg, n, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    if cfg.dim == 1:
        return rng.uniform(cfg.x0, cfg.x1, size=(n, 1))
    return np.column_stack([rng.uniform(cfg.x0, cfg.x1, n), rng.uniform(cfg.y0, cfg.y1, n)])


# --- commands --------------------------------------------------------------

def cmd_mesh(cfg, out, seed, workers):
    mesh = make_mesh(cfg)
    mesh.check()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "mesh.txt")
        write_mesh(mesh, path)
        with open(path) as fh:
            out.buf.write(fh.read())
    if cfg.locations:
        A = make_projector(mesh, _read_locations(cfg.locations), cfg.boundary)
        write_triplets(A, cfg.projector_out or "projector.txt")
    return out


def cmd_ratapprox(cfg, out, seed, workers):
    delta = resolve_delta(cfg.delta, cfg.m)
    if cfg.algo == "brasil":
        rc = brasil(cfg.alpha, cfg.m, (delta, 1.0), tol=cfg.tol, max_iter=cfg.max_iter,
                    exponent=cfg.exponent)
    elif cfg.algo in ("chebyshev-pade", "cp"):
        rc = chebyshev_pade(cfg.alpha, cfg.m, (delta, 1.0))
    else:
        raise ConfigError(f"unknown algo {cfg.algo!r}")
    pf = to_partial_fractions(rc)
    out.row("quantity", "index", "value")
    for i, v in enumerate(rc.a):
        out.row("a", i, v)
    for i, v in enumerate(rc.b):
        out.row("b", i, v)
    out.row("k", 0, pf.k)
    for i, v in enumerate(pf.r, start=1):
        out.row("r", i, v)
    for i, v in enumerate(pf.p, start=1):
        out.row("p", i, v)
    out.row("delta", 0, float(delta))
    out.row("sup_error", 0, sup_error(rc))
    out.row("deviation", 0, float(rc.deviation))
    out.row("iterations", 0, rc.iterations)
    out.row("converged", 0, rc.converged)
    return out


def cmd_build(cfg, out, seed, workers):
    if out.path in (None, "-"):
        raise ConfigError("build needs --out DIRECTORY")
    mesh = make_mesh(cfg)
    model = _model(cfg, mesh)
    write_model(model, out.path)
    out.path = os.path.join(out.path, "summary.csv")
    out.row("block", "n", "nnz", "logdet")
    for i, (Q, f) in enumerate(zip(model.blocks, model.factors), start=1):
        out.row(i, Q.shape[0], Q.nnz, f.logdet())
    return out


def cmd_simulate(cfg, out, seed, workers):
    mesh = make_mesh(cfg)
    model = _model(cfg, mesh)
    locs = _read_locations(cfg.locations) if cfg.locations else _random_locations(cfg, cfg.n_obs, seed)
    w = sample_prior(model, 1, seed)[0]
    A = make_projector(mesh, locs, cfg.boundary)
    rng = np.random.Generator(np.random.Philox([seed, 7]))
    y = A @ w + cfg.sigma_eps * rng.standard_normal(A.shape[0])
    out.row(*(["x", "value"] if locs.shape[1] == 1 else ["x", "y", "value"]))
    for loc, v in zip(locs, y):
        out.row(*[float(c) for c in loc], float(v))
    return out


def cmd_loglik(cfg, out, seed, workers):
    mesh = make_mesh(cfg)
    obs = _obs(cfg)
    model = _model(cfg, mesh)
    ll = posterior(model, obs, make_projector(mesh, obs.locations, cfg.boundary)).loglik
    out.row("nu", "range", "sigma", "sigma_eps", "m", "n_obs", "loglik")
    out.row(cfg.nu, cfg.range, cfg.sigma, cfg.sigma_eps, model.m, obs.N, ll)
    return out


def cmd_fit(cfg, out, seed, workers):
    mesh = make_mesh(cfg)
    obs = _obs(cfg)
    init = _params(cfg, mesh.dim)
    res = fit(mesh, obs, cfg.m, init, sigma_eps0=cfg.sigma_eps, fix_nu=cfg.fix_nu,
              nu_max=cfg.nu_max, max_iter=cfg.max_iter, xatol=cfg.xatol, lumped=cfg.lumped,
              delta=resolve_delta(cfg.delta, cfg.m), algo=cfg.algo,
              spec_factory=lambda kappa: OperatorSpec(kappa, cfg.boundary))
    out.row("iter", "sigma", "rho", "nu", "sigma_eps", "loglik")
    for it, sigma, rho, nu, s_eps, ll in res.trace:
        out.row(it, sigma, rho, nu, s_eps, ll)
    out.buf.write(f"# result: sigma={res.params.sigma!r} rho={res.params.range!r} "
                  f"nu={res.params.nu!r} sigma_eps={res.sigma_eps!r} loglik={res.loglik!r} "
                  f"evaluations={res.n_evals} converged={str(res.converged).lower()}\n")
    return out


def cmd_predict(cfg, out, seed, workers):
    if not cfg.locations:
        raise ConfigError("prediction locations are required (locations=...)")
    mesh = make_mesh(cfg)
    obs = _obs(cfg)
    model = _model(cfg, mesh)
    state = posterior(model, obs, make_projector(mesh, obs.locations, cfg.boundary))
    locs = _read_locations(cfg.locations)
    A_new = make_projector(mesh, locs, cfg.boundary)
    mean, samples = predict(state, model, A_new, cfg.n_samples, seed)
    sd = predictive_sd(state, A_new)
    names = ["x"] if locs.shape[1] == 1 else ["x", "y"]
    names += ["mean", "sd"] + [f"sample_{i + 1}" for i in range(cfg.n_samples)]
    out.row(*names)
    for j, loc in enumerate(locs):
        extra = [] if samples is None else list(samples[:, j])
        out.row(*[float(c) for c in loc], float(mean[j]), float(sd[j]), *extra)
    return out


def cmd_cv(cfg, out, seed, workers):
    mesh = make_mesh(cfg)
    obs = _obs(cfg)
    params = _params(cfg, mesh.dim)
    rows = cross_validate(mesh, obs, params, cfg.m, cfg.radius, cfg.n_targets, seed=seed,
                          lumped=cfg.lumped, delta=resolve_delta(cfg.delta, cfg.m),
                          algo=cfg.algo, boundary=cfg.boundary)
    out.row("D", "mse", "neg_log_score", "n_targets")
    for r in rows:
        out.row(*r)
    return out


def cmd_bench_cov(cfg, out, seed, workers):
    out.row("nu", "range", "m", "algo", "delta", "l2_err", "sup_err", "seconds")
    for r in bench_cov(cfg, workers):
        out.row(*r)
    return out


def cmd_bench_loglik(cfg, out, seed, workers):
    out.row("nu", "range", "m", "sigma_eps", "replicate", "true_loglik", "approx_loglik", "abs_rel_err")
    for r in bench_loglik(cfg, seed, workers):
        out.row(*r)
    return out


def cmd_fem_rate(cfg, out, seed, workers):
    out.row("nu", "N", "h", "l2_err", "local_rate", "fit_rate")
    for r in fem_rate(cfg, workers):
        out.row(*r)
    return out


HANDLERS = {
    "mesh": cmd_mesh, "ratapprox": cmd_ratapprox, "build": cmd_build, "simulate": cmd_simulate,
    "loglik": cmd_loglik, "fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv,
    "bench-cov": cmd_bench_cov, "bench-loglik": cmd_bench_loglik, "fem-rate": cmd_fem_rate,
}


# --- entry point -------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="fracgmrf", description=__doc__)
    p.add_argument("--version", action="version", version=f"fracgmrf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (cls, help_) in COMMANDS.items():
        sp_ = sub.add_parser(name, help=help_, description=help_)
        sp_.add_argument("--config", help="file with key=value lines")
        sp_.add_argument("--seed", type=int, default=None)
        sp_.add_argument("--out", default=None, help="output path (default: stdout)")
        sp_.add_argument("--workers", type=int, default=None)
        for f in dataclasses.fields(cls):
            flags = ["--" + f.name.replace("_", "-")] + (["--rational-algo"] if f.name == "algo" else [])
            sp_.add_argument(*flags, dest=f.name, default=None,
                             metavar="VALUE", help=f"(default: {format_value(_default(f))})")
    return p


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _split_universal(file_values, args):
    universal = {}
    for key in ("seed", "out", "workers"):
        if key in file_values:
            universal[key] = file_values.pop(key)[0]
        if getattr(args, key) is not None:
            universal[key] = getattr(args, key)
    try:
        seed = int(universal.get("seed", 0))
        workers = int(universal.get("workers", 1))
    except ValueError as exc:
        raise ConfigError(f"bad seed or workers value: {exc}") from exc
    return seed, universal.get("out"), workers


def main(argv=None):
    args = _parser().parse_args(argv)
    cls, _ = COMMANDS[args.command]
    try:
        file_values = read_config_file(args.config) if args.config else {}
        seed, out_path, workers = _split_universal(file_values, args)
        overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(cls)}
        cfg = build_config(cls, file_values, overrides)
        out = _Output(out_path, _header(args.command, cfg, seed))
        result = HANDLERS[args.command](cfg, out, seed, workers)
        if result is not None:
            result.close()
    except (ModelError, np.linalg.LinAlgError, PositivityError, RepeatedPoleError,
            PadeDegeneracyError, FloatingPointError) as exc:
        print(f"fracgmrf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DomainError, OSError, ValueError) as exc:
        print(f"fracgmrf: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
