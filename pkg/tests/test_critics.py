import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fdd import critics
from fdd.critics import GaussianSummary
from fdd.errors import DimensionError, InputError, NumericalError
from oracles import diagonal_frechet, mmd2_brute, prim_mst_weights

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def clouds(min_n=3, max_n=12, max_d=4):
    return st.integers(1, max_d).flatmap(
        lambda d: st.tuples(
            arrays(np.float64, st.tuples(st.integers(min_n, max_n), st.just(d)), elements=finite),
            arrays(np.float64, st.tuples(st.integers(min_n, max_n), st.just(d)), elements=finite),
        ))


# -- Frechet -----------------------------------------------------------------


def test_frechet_diagonal_closed_form(rng):
    for _ in range(20):
        d = int(rng.integers(1, 6))
        mu1, mu2 = rng.normal(size=d), rng.normal(size=d)
        sd1, sd2 = rng.uniform(0.1, 2, d), rng.uniform(0.1, 2, d)
        got = critics.frechet_distance(GaussianSummary(mu1, np.diag(sd1 ** 2)),
                                       GaussianSummary(mu2, np.diag(sd2 ** 2)))
        assert got == pytest.approx(diagonal_frechet(mu1, sd1, mu2, sd2), rel=1e-8)


def test_frechet_general_matches_scipy_sqrtm(rng):
    from scipy.linalg import sqrtm
    a, b = rng.standard_normal((40, 5)), rng.standard_normal((30, 5)) * 1.5 + 0.3
    sa, sb_ = critics.summarize(a), critics.summarize(b)
    cross = np.real(np.trace(sqrtm(sa.sigma @ sb_.sigma)))
    ref = np.sum((sa.mu - sb_.mu) ** 2) + np.trace(sa.sigma) + np.trace(sb_.sigma) - 2 * cross
    assert critics.frechet_distance_features(a, b) == pytest.approx(ref, rel=1e-9)


def test_frechet_identical_sets_zero(rng):
    a = rng.standard_normal((50, 8))
    assert critics.frechet_distance_features(a, a) == pytest.approx(0.0, abs=1e-10)


def test_frechet_rank_deficient_covariance(rng):
    a = rng.standard_normal((5, 20))  # N < D
    b = rng.standard_normal((6, 20))
    assert critics.frechet_distance_features(a, b) > 0


def test_frechet_duplicated_set_equals_rescaled_covariance(rng):
    # duplicating every sample keeps mu and scales Sigma by (N-1)/N * 2N/(2N-1)
    real, gen = rng.standard_normal((30, 4)), rng.standard_normal((25, 4)) + 0.2
    n = len(gen)
    doubled = critics.frechet_distance_features(real, np.concatenate([gen, gen]))
    s = critics.summarize(gen)
    scaled = GaussianSummary(s.mu, s.sigma * (n - 1) / n * (2 * n) / (2 * n - 1))
    assert doubled == pytest.approx(critics.frechet_distance(critics.summarize(real), scaled),
                                    rel=1e-10)


@given(clouds())
@settings(max_examples=60, deadline=None)
def test_frechet_symmetric_and_nonnegative(pair):
    a, b = pair
    ab = critics.frechet_distance_features(a, b)
    ba = critics.frechet_distance_features(b, a)
    assert ab >= 0
    assert ab == pytest.approx(ba, rel=1e-6, abs=1e-6 * (1 + np.var(a) + np.var(b)) * a.shape[1])


@given(clouds(), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_frechet_permutation_invariant(pair, seed):
    a, b = pair
    perm = np.random.default_rng(seed).permutation(len(a))
    # singular covariances: sqrt turns ~eps eigenvalue noise into ~sqrt(eps)
    scale = 1.0 + np.trace(np.cov(a.T, ddof=1).reshape(a.shape[1], -1)) + np.sum(np.var(b, 0))
    assert critics.frechet_distance_features(a[perm], b) == pytest.approx(
        critics.frechet_distance_features(a, b), rel=1e-9, abs=1e-6 * scale)


def test_matrix_sqrt_squares_back(rng):
    m = rng.standard_normal((6, 6))
    a = m @ m.T
    s = critics.matrix_sqrt_psd(a)
    np.testing.assert_allclose(s @ s, a, atol=1e-10)
    np.testing.assert_allclose(s, s.T)


def test_matrix_sqrt_clamps_rounding_negatives():
    a = np.diag([1.0, -1e-14])
    np.testing.assert_allclose(critics.matrix_sqrt_psd(a), np.diag([1.0, 0.0]))


def test_matrix_sqrt_rejects_indefinite_and_asymmetric():
    with pytest.raises(InputError):
        critics.matrix_sqrt_psd(np.diag([1.0, -0.5]))
    with pytest.raises(InputError):
        critics.matrix_sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_frechet_errors(rng):
    with pytest.raises(DimensionError):
        critics.frechet_distance_features(rng.standard_normal((5, 3)), rng.standard_normal((5, 4)))
    with pytest.raises(InputError):
        critics.frechet_distance_features(rng.standard_normal((1, 3)), rng.standard_normal((5, 3)))
    bad = rng.standard_normal((5, 3))
    bad[0, 0] = np.nan
    with pytest.raises(NumericalError):
        critics.frechet_distance_features(bad, rng.standard_normal((5, 3)))


# -- MMD ---------------------------------------------------------------------


def test_mmd_bitwise_brute_force(rng):
    for _ in range(10):
        d = int(rng.integers(1, 9))
        x = rng.standard_normal((int(rng.integers(2, 20)), d))
        y = rng.standard_normal((int(rng.integers(2, 20)), d)) * 1.3
        assert critics.mmd2_poly(x, y) == mmd2_brute(x, y)


@pytest.mark.parametrize("degree,gamma,coef", [(1, 0.5, 0.0), (2, None, 2.0), (4, 0.1, 1.0)])
def test_mmd_kernel_parameters(rng, degree, gamma, coef):
    x, y = rng.standard_normal((8, 3)), rng.standard_normal((9, 3))
    assert critics.mmd2_poly(x, y, degree, gamma, coef) == mmd2_brute(x, y, degree, gamma, coef)


def test_mmd_linear_kernel_is_mean_gap_minus_bias(rng):
    # degree 1, coef 0: unbiased MMD^2 = ||mean_x - mean_y||^2 - tr(Sx)/n - tr(Sy)/m (scaled by gamma)
    x, y = rng.standard_normal((12, 3)), rng.standard_normal((15, 3)) + 0.5
    n, m = len(x), len(y)
    sx, sy = np.cov(x.T), np.cov(y.T)
    ref = np.sum((x.mean(0) - y.mean(0)) ** 2) - np.trace(sx) / n - np.trace(sy) / m
    assert critics.mmd2_poly(x, y, degree=1, gamma=1.0, coef=0.0) == pytest.approx(ref, rel=1e-10)


@given(clouds(), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_mmd_permutation_invariant_and_symmetric(pair, seed):
    a, b = pair
    perm = np.random.default_rng(seed).permutation(len(a))
    base = critics.mmd2_poly(a, b)
    # fsum makes every sum order-independent, so permutation is bit-exact
    assert critics.mmd2_poly(a[perm], b) == base
    assert critics.mmd2_poly(b, a) == pytest.approx(base, rel=1e-12, abs=1e-12 * (1 + abs(base)))


def test_mmd_can_be_slightly_negative(rng):
    vals = [critics.mmd2_poly(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))
            for _ in range(20)]
    assert min(vals) < 0 < max(vals)


def test_mmd_errors(rng):
    with pytest.raises(DimensionError):
        critics.mmd2_poly(rng.standard_normal((5, 3)), rng.standard_normal((5, 2)))
    with pytest.raises(InputError):
        critics.mmd2_poly(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)), degree=0)


# -- persistence -------------------------------------------------------------


def test_persistence_matches_prim(rng):
    for _ in range(10):
        pts = rng.standard_normal((int(rng.integers(2, 30)), int(rng.integers(1, 6))))
        deaths = np.sort(critics.persistence_0d(pts).deaths)
        assert deaths.tolist() == prim_mst_weights(pts)


def test_persistence_hand_example():
    pts = np.array([[0.0], [1.0], [3.0], [7.0]])
    diag = critics.persistence_0d(pts)
    assert diag.deaths.tolist() == [1.0, 2.0, 4.0]
    assert np.all(diag.pairs[:, 0] == 0)
    assert len(diag) == 3


def test_persistence_duplicate_points_die_at_zero():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    assert sorted(critics.persistence_0d(pts).deaths.tolist()) == [0.0, 1.0]


@given(arrays(np.float64, st.tuples(st.integers(2, 15), st.integers(1, 3)), elements=finite),
       st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_persistence_invariants(pts, seed):
    deaths = critics.persistence_0d(pts).deaths
    assert len(deaths) == len(pts) - 1
    assert np.all(deaths >= 0)
    perm = np.random.default_rng(seed).permutation(len(pts))
    assert np.sort(critics.persistence_0d(pts[perm]).deaths).tolist() == np.sort(deaths).tolist()
    assert np.sort(deaths).tolist() == prim_mst_weights(pts)


def test_union_find():
    uf = critics.UnionFind(4)
    assert uf.union(0, 1) and uf.union(2, 3) and uf.union(1, 3)
    assert not uf.union(0, 2)
    assert uf.components == 1


def test_topology_distance_identical_zero_and_shift_invariant(rng):
    a = rng.standard_normal((20, 3))
    assert critics.topology_distance(a, a) == 0.0
    assert critics.topology_distance(a, a + 5.0) == pytest.approx(0.0, abs=1e-12)


def test_topology_distance_scaling(rng):
    a = rng.standard_normal((15, 2))
    da = np.sort(critics.persistence_0d(a).deaths)
    assert critics.topology_distance(a, 2 * a) == pytest.approx(np.linalg.norm(da), rel=1e-12)
    assert critics.topology_distance(a, 2 * a, p=np.inf) == pytest.approx(da.max(), rel=1e-12)


def test_topology_distance_unequal_sizes_seeded(rng):
    a, b = rng.standard_normal((20, 2)), rng.standard_normal((12, 2))
    assert critics.topology_distance(a, b, seed=4) == critics.topology_distance(a, b, seed=4)
    with pytest.raises(InputError):
        critics.topology_distance(a, b, p=0)
