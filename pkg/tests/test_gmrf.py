import math

import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, settings, strategies as st
from scipy.special import gamma

from fracgmrf.fem import OperatorSpec, assemble
from fracgmrf.gmrf import (FieldParams, ModelError, build_model, implied_covariance_dense,
                           rational_spectral_covariance, sample_prior, write_model)
from fracgmrf.mesh import build_interval_mesh, build_rect_mesh
from fracgmrf.oracle import exact_fem_fractional_cov


@pytest.fixture(scope="module")
def mesh2d():
    return build_rect_mesh((0, 1), (0, 1), 9, 9)


def test_range_roundtrip():
    p = FieldParams.from_range(0.7, 0.3, 2.0, 2)
    assert p.range == pytest.approx(0.3, rel=1e-12)
    assert p.kappa == pytest.approx(math.sqrt(8 * 0.7) / 0.3, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(nu=st.floats(0.05, 3), rho=st.floats(0.01, 10), sigma=st.floats(0.1, 10), d=st.sampled_from([1, 2]))
def test_tau_formula(nu, rho, sigma, d):
    p = FieldParams.from_range(nu, rho, sigma, d)
    ref = gamma(nu) / (sigma ** 2 * p.kappa ** (2 * nu) * (4 * math.pi) ** (d / 2) * gamma(nu + d / 2))
    assert p.tau ** 2 == pytest.approx(ref, rel=1e-10)
    assert p.beta > d / 4
    assert abs(FieldParams.from_range(nu, p.range, sigma, d).kappa - p.kappa) <= 1e-12 * p.kappa


def test_block_counts(mesh2d):
    model = build_model(mesh2d, FieldParams.from_range(0.6, 0.5), m=2)
    assert model.n_blocks == 3 and model.m == 2
    assert model.floor2beta == 1 and model.frac2beta == pytest.approx(0.6)
    model = build_model(mesh2d, FieldParams.from_range(1.0, 0.5), m=3)
    assert model.n_blocks == 1 and model.m == 0


def test_frac_below_one_last_block_is_diagonal():
    mesh = build_interval_mesh(0, 1, 20)
    model = build_model(mesh, FieldParams.from_range(0.3, 0.4, d=1), m=2)
    assert model.floor2beta == 0
    last = model.blocks[-1]
    assert (last - last.multiply(np.eye(last.shape[0]))).count_nonzero() == 0
    # s / k times the lumped mass
    s = model.scale["s"]
    expected = s / model.pf.k * model.matrices.C_lumped.diagonal()
    assert np.allclose(last.diagonal(), expected, rtol=1e-13)


def test_integer_case_matches_dense(mesh2d):
    p = FieldParams.from_range(1.0, 0.4)
    model = build_model(mesh2d, p, lumped=False)
    S = implied_covariance_dense(model, consistent_mass=True)
    L = model.matrices.L.toarray()
    C = model.matrices.C.toarray()
    Li = np.linalg.inv(L)
    ref = Li @ C @ Li / p.tau ** 2
    assert np.linalg.norm(S - ref) / np.linalg.norm(ref) < 1e-10


@pytest.mark.parametrize("nu,m", [(0.6, 2), (0.3, 1), (1.4, 3), (2.2, 2)])
def test_consistent_mass_matches_spectral_rational(mesh2d, nu, m):
    model = build_model(mesh2d, FieldParams.from_range(nu, 0.4), m=m, lumped=False)
    S = implied_covariance_dense(model, consistent_mass=True)
    ref = rational_spectral_covariance(model, model.matrices.L, model.matrices.C)
    assert np.linalg.norm(S - ref) / np.linalg.norm(ref) < 1e-10


def test_lumped_blocks_match_spectral_rational(mesh2d):
    model = build_model(mesh2d, FieldParams.from_range(0.6, 0.4), m=3)
    S = implied_covariance_dense(model)
    # with lumping L = G + kappa^2 C~ and every C is C~
    ref = rational_spectral_covariance(model, model.matrices.L, model.matrices.C_lumped)
    assert np.linalg.norm(S - ref) / np.linalg.norm(ref) < 1e-10


def test_sum_of_block_inverses(mesh2d):
    model = build_model(mesh2d, FieldParams.from_range(0.6, 0.4), m=2)
    S = implied_covariance_dense(model)
    ref = sum(np.linalg.inv(Q.toarray()) for Q in model.blocks)
    assert np.linalg.norm(S - ref) / np.linalg.norm(ref) < 1e-10


@pytest.mark.filterwarnings("ignore:brasil did not reach tolerance")
def test_large_m_approaches_exact_fractional():
    mesh = build_rect_mesh((0, 1), (0, 1), 7, 7)
    p = FieldParams.from_range(0.6, 0.5)
    model = build_model(mesh, p, m=12, lumped=False)
    S = implied_covariance_dense(model, consistent_mass=True)
    ref = exact_fem_fractional_cov(model.matrices.L, model.matrices.C, p.beta, p.tau)
    assert np.linalg.norm(S - ref) / np.linalg.norm(ref) < 1e-6


def test_tau_scaling(mesh2d):
    a = build_model(mesh2d, FieldParams.from_range(0.6, 0.4, 1.0), m=2)
    b = build_model(mesh2d, FieldParams.from_range(0.6, 0.4, 0.5), m=2)  # tau doubles
    assert b.params.tau == pytest.approx(2 * a.params.tau)
    for Qa, Qb in zip(a.blocks, b.blocks):
        assert abs(Qb - 4 * Qa).max() <= 1e-12 * abs(Qa).max()
    Sa, Sb = implied_covariance_dense(a), implied_covariance_dense(b)
    corr = lambda S: S / np.sqrt(np.outer(np.diag(S), np.diag(S)))
    assert np.abs(corr(Sa) - corr(Sb)).max() < 1e-12


def test_nnz_grows_linearly():
    p = FieldParams.from_range(0.6, 0.4)
    nnz = []
    for n in (10, 20):
        model = build_model(build_rect_mesh((0, 1), (0, 1), n, n), p, m=2)
        nnz.append(sum(Q.nnz for Q in model.blocks) / model.n)
    assert nnz[1] < 1.2 * nnz[0]


def test_lumped_consistent_gap_shrinks():
    p = FieldParams.from_range(0.6, 0.5)
    gaps = []
    for n in (6, 11):
        mesh = build_rect_mesh((0, 1), (0, 1), n, n)
        S1 = implied_covariance_dense(build_model(mesh, p, m=2))
        S2 = implied_covariance_dense(build_model(mesh, p, m=2, lumped=False), consistent_mass=True)
        gaps.append(np.linalg.norm(S1 - S2) / np.linalg.norm(S2))
    assert gaps[1] < gaps[0]


def test_kappa_mismatch_rejected(mesh2d):
    with pytest.raises(ValueError):
        build_model(mesh2d, FieldParams(0.6, 3.0), m=2, spec=OperatorSpec(2.0))


def test_fractional_needs_order(mesh2d):
    with pytest.raises(ValueError):
        build_model(mesh2d, FieldParams.from_range(0.6, 0.4), m=None)


def test_dense_guard():
    mesh = build_rect_mesh((0, 1), (0, 1), 72, 72)
    model = build_model(mesh, FieldParams.from_range(1.0, 0.4))
    with pytest.raises(ModelError):
        implied_covariance_dense(model)


def test_small_fractional_part_is_stable(mesh2d):
    # {2 beta} just above an integer: continuous towards the integer model
    p0 = FieldParams.from_range(1.0, 0.4)
    S0 = implied_covariance_dense(build_model(mesh2d, p0))
    for eps in (1e-3, 1e-5):
        S = implied_covariance_dense(build_model(mesh2d, FieldParams.from_range(1.0 + eps, 0.4), m=2))
        assert np.linalg.norm(S - S0) / np.linalg.norm(S0) < 100 * eps


def test_sampling_mean_and_determinism():
    mesh = build_rect_mesh((0, 1), (0, 1), 6, 6)
    model = build_model(mesh, FieldParams.from_range(0.6, 0.5), m=2)
    X = sample_prior(model, 20000, seed=3)
    assert X.shape == (20000, model.n)
    sd = np.sqrt(np.diag(implied_covariance_dense(model)))
    assert np.all(np.abs(X.mean(axis=0)) < 4 * sd / np.sqrt(20000))
    assert np.array_equal(sample_prior(model, 5, seed=3), sample_prior(model, 5, seed=3))
    assert not np.array_equal(sample_prior(model, 5, seed=3), sample_prior(model, 5, seed=4))


def test_write_model(tmp_path, mesh2d):
    model = build_model(mesh2d, FieldParams.from_range(0.6, 0.4), m=2)
    write_model(model, tmp_path / "dump")
    files = sorted(p.name for p in (tmp_path / "dump").iterdir())
    assert files == ["block_1.txt", "block_2.txt", "block_3.txt", "manifest.txt"]
    manifest = dict(l.split("=", 1) for l in (tmp_path / "dump" / "manifest.txt").read_text().splitlines())
    for key in ("beta", "m", "tau", "kappa", "delta", "algo", "lumped"):
        assert key in manifest
    assert manifest["m"] == "2" and manifest["lumped"] == "true"
