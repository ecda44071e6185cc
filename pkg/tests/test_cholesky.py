import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fracgmrf.cholesky import NotPositiveDefiniteError, SparseCholesky, fill_reducing_order
from fracgmrf.fem import OperatorSpec, assemble_operator
from fracgmrf.mesh import build_rect_mesh


def _spd(n, seed, density=0.1):
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=density, random_state=rng)
    return (B @ B.T + n * sp.eye(n)).tocsc()


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2**31))
def test_against_dense(n, seed):
    Q = _spd(n, seed)
    f = SparseCholesky(Q)
    Qd = Q.toarray()
    assert f.logdet() == pytest.approx(np.linalg.slogdet(Qd)[1], rel=1e-10)
    b = np.random.default_rng(seed).standard_normal((n, 2))
    assert np.allclose(f.solve(b), np.linalg.solve(Qd, b))
    assert np.allclose(f.solve(b[:, 0]), np.linalg.solve(Qd, b[:, 0]))
    assert np.allclose(f.inverse_dense(), np.linalg.inv(Qd))


def test_factor_solves_give_covariance():
    Q = assemble_operator(build_rect_mesh((0, 1), (0, 1), 6, 6), OperatorSpec(2.0)).tocsc()
    f = SparseCholesky(Q)
    I = np.eye(Q.shape[0])
    X = f.solve_factor(I)
    assert np.allclose(X @ X.T, np.linalg.inv(Q.toarray()))
    V = f.solve_factor_t(I)
    assert np.allclose(V.T @ V, np.linalg.inv(Q.toarray()))


def test_indefinite_raises():
    with pytest.raises(NotPositiveDefiniteError):
        SparseCholesky(sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))


def test_ordering_is_a_permutation_and_cached():
    Q = _spd(40, 3)
    p = fill_reducing_order(Q)
    assert sorted(p.tolist()) == list(range(40))
    assert np.array_equal(fill_reducing_order(Q * 2.0), p)
