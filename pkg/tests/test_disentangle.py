import numpy as np
import pytest

from diclab.disentangle import (
    PcaError,
    PcaMap,
    covariance_matrix,
    default_components,
    fit_disentangler,
    fit_pca,
    pca_inverse,
    pca_transform,
    reconstruction_error,
)


def anisotropic_samples(seed=0, n=20000, stds=(3.0, 1.0, 0.2)):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, len(stds))) * np.array(stds)


def test_axis_aligned_components():
    data = anisotropic_samples()
    m = fit_pca(data, c=3)
    # each component should align with one axis, largest variance first
    expected_axes = [0, 1, 2]
    for row, axis in zip(m.components, expected_axes):
        assert abs(row[axis]) > 0.99
    assert m.explained_variance[0] == pytest.approx(9.0, rel=0.05)


def test_single_dimension():
    data = np.array([[1.0], [2.0], [4.0]])
    m = fit_pca(data, c=1)
    np.testing.assert_allclose(m.components, [[1.0]])
    np.testing.assert_allclose(pca_transform(m, data)[:, 0], data[:, 0] - data.mean())


def test_full_rank_round_trip():
    rng = np.random.default_rng(1)
    data = rng.standard_normal((50, 6)) @ rng.standard_normal((6, 6))
    m = fit_pca(data, c=6)
    recon = pca_inverse(m, pca_transform(m, data))
    assert np.max(np.abs(recon - data)) < 1e-8


def test_transform_of_mean_is_zero():
    data = anisotropic_samples(2, n=500)
    m = fit_pca(data, c=2)
    np.testing.assert_allclose(pca_transform(m, data.mean(axis=0)[None, :]), 0.0, atol=1e-12)


def test_orthonormal_components():
    data = anisotropic_samples(3, n=300)
    m = fit_pca(data, c=3)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(3), atol=1e-8)


def test_variance_ordering_and_trace():
    rng = np.random.default_rng(4)
    data = rng.standard_normal((200, 5)) * np.array([1.0, 4.0, 2.0, 0.5, 3.0])
    m = fit_pca(data, c=5)
    ev = m.explained_variance
    assert np.all(np.diff(ev) <= 1e-12)
    assert np.all(ev >= 0)
    assert ev.sum() == pytest.approx(np.trace(covariance_matrix(data)), abs=1e-8)


def test_decorrelation():
    rng = np.random.default_rng(5)
    data = rng.standard_normal((300, 4)) @ rng.standard_normal((4, 4))
    m = fit_pca(data, c=4)
    cov = covariance_matrix(pca_transform(m, data))
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) < 1e-8


def test_reconstruction_equals_discarded_eigenvalues():
    rng = np.random.default_rng(6)
    data = rng.standard_normal((400, 6)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5, 0.1])
    full = fit_pca(data, c=6)
    for c in (1, 2, 3, 5):
        m = fit_pca(data, c=c)
        err = reconstruction_error(m, data)
        discarded = full.explained_variance[c:].sum()
        assert err == pytest.approx(discarded, rel=1e-6)


def test_rank_deficient_error_reports_rank():
    rng = np.random.default_rng(7)
    base = rng.standard_normal((100, 2))
    data = np.column_stack([base, base[:, 0] + base[:, 1]])  # rank 2 in 3 dims
    with pytest.raises(PcaError, match="rank 2"):
        fit_pca(data, c=3)
    fit_pca(data, c=2)  # attainable rank is fine


def test_determinism_bitwise():
    data = anisotropic_samples(8, n=150)
    a = fit_pca(data, c=2)
    b = fit_pca(data, c=2)
    assert a.to_json() == b.to_json()
    np.testing.assert_array_equal(a.components, b.components)


def test_sign_convention():
    data = anisotropic_samples(9, n=500)
    m = fit_pca(data, c=3)
    for row in m.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_json_round_trip():
    data = anisotropic_samples(10, n=100)
    m = fit_pca(data, c=2)
    m2 = PcaMap.from_json(m.to_json())
    np.testing.assert_array_equal(m.components, m2.components)
    np.testing.assert_array_equal(m.mean, m2.mean)


def test_covariance_basics():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    cov = covariance_matrix(x)
    corr = cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1])
    assert corr == pytest.approx(1.0)

    rng = np.random.default_rng(11)
    big = rng.standard_normal((100_000, 3))
    cov = covariance_matrix(big)
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) < 0.02
    np.testing.assert_array_equal(cov, cov.T)


def test_covariance_requires_samples():
    with pytest.raises(PcaError):
        covariance_matrix(np.ones((1, 3)))


def test_dimension_mismatch_errors():
    data = anisotropic_samples(12, n=50)
    m = fit_pca(data, c=2)
    with pytest.raises(PcaError):
        pca_transform(m, np.zeros((4, 5)))
    with pytest.raises(PcaError):
        pca_inverse(m, np.zeros((4, 3)))


def test_default_components():
    assert default_components(2) == 1
    assert default_components(17) == 9
    assert default_components(23) == 12


def test_disentangler_round_trip_and_decorrelation():
    rng = np.random.default_rng(13)
    data = rng.standard_normal((300, 4)) @ rng.standard_normal((4, 4)) + np.array([5.0, -2.0, 0.0, 1.0])
    phi = fit_disentangler(data, c=4, standardize=True)
    z = phi.transform(data)
    cov = covariance_matrix(z)
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) < 1e-8
    np.testing.assert_allclose(phi.inverse_transform(z), data, atol=1e-8)
    assert phi.n_components == 4


def test_disentangler_default_component_count():
    rng = np.random.default_rng(14)
    data = rng.standard_normal((100, 5))
    phi = fit_disentangler(data)
    assert phi.n_components == 3
