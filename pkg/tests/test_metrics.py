import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from physinpaint.darcy import solve_sample
from physinpaint.errors import ShapeError
from physinpaint.grid import BoundarySpec, make_grid
from physinpaint.kl import CovarianceSpec, kl_basis, sample_lnk_batch
from physinpaint.metrics import consistency_check, dataset_spectrum, r_squared, rmse, ssim

seeds = st.integers(0, 2**32 - 1)


def test_rmse_examples(rng):
    u = rng.standard_normal((6, 7))
    assert rmse(u, u) == 0.0
    assert rmse(u, u - 0.37) == pytest.approx(0.37, abs=1e-12)
    with pytest.raises(ShapeError):
        rmse(u, u[:5])


@given(seeds)
def test_rmse_naive_loop(seed):
    u, v = np.random.default_rng(seed).standard_normal((2, 5, 4))
    acc = 0.0
    for a, b in zip(u.ravel(), v.ravel()):
        acc += (a - b) ** 2
    assert abs(rmse(u, v) - np.sqrt(acc / u.size)) <= 1e-12
    assert rmse(u, v) == rmse(v, u)


@given(seeds)
def test_rmse_triangle(seed):
    u, v, w = np.random.default_rng(seed).standard_normal((3, 4, 4))
    assert rmse(u, w) <= rmse(u, v) + rmse(v, w) + 1e-12


def test_ssim_examples(rng):
    u = rng.standard_normal((8, 8))
    assert ssim(u, u) == pytest.approx(1.0, abs=1e-12)
    assert ssim(np.ones((4, 4)), np.zeros((4, 4))) == pytest.approx(0.01 / 1.01, abs=1e-12)


@given(seeds)
def test_ssim_direct_formula(seed):
    u, v = np.random.default_rng(seed).standard_normal((2, 6, 6))
    n = u.size
    mu_u, mu_v = sum(u.ravel()) / n, sum(v.ravel()) / n
    su = sum((a - mu_u) ** 2 for a in u.ravel()) / n
    sv = sum((b - mu_v) ** 2 for b in v.ravel()) / n
    suv = sum((a - mu_u) * (b - mu_v) for a, b in zip(u.ravel(), v.ravel())) / n
    ref = (2 * mu_u * mu_v + 0.01) * (2 * suv + 0.03) / ((mu_u**2 + mu_v**2 + 0.01) * (su + sv + 0.03))
    assert abs(ssim(u, v) - ref) <= 1e-12
    assert abs(ssim(u, v) - ssim(v, u)) <= 1e-15
    assert -1 <= ssim(u, v) <= 1


def test_r_squared_examples(rng):
    t = rng.standard_normal((5, 5))
    assert r_squared(t, t) == 1.0
    assert r_squared(t, np.full_like(t, t.mean())) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        r_squared(np.ones((3, 3)), t[:3, :3])


@given(seeds)
def test_r_squared_identity(seed):
    t, p = np.random.default_rng(seed).standard_normal((2, 5, 6))
    tss = np.sum((t - t.mean()) ** 2)
    assert abs(r_squared(t, p) - (1 - rmse(t, p) ** 2 * t.size / tss)) <= 1e-12
    naive = 1 - sum((a - b) ** 2 for a, b in zip(t.ravel(), p.ravel())) / tss
    assert abs(r_squared(t, p) - naive) <= 1e-12


def test_spectrum_identical_samples():
    x = np.tile(np.arange(12.0), (5, 1))
    rep = dataset_spectrum(x, 3)
    np.testing.assert_array_equal(rep.eigenvalues, 0)


def test_spectrum_needs_two_samples():
    with pytest.raises(ValueError):
        dataset_spectrum(np.zeros((1, 9)), 3)


@given(seeds)
def test_spectrum_gram_and_covariance_agree(seed):
    x = np.random.default_rng(seed).standard_normal((7, 10))
    small = dataset_spectrum(x, 5)  # n <= p: Gram route
    direct = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1][:5]
    np.testing.assert_allclose(small.eigenvalues, direct, atol=1e-10)
    curve = small.retained_energy_curve
    assert np.all(np.diff(curve) >= -1e-15)
    full = dataset_spectrum(x, 10).retained_energy_curve
    assert full[-1] == pytest.approx(1.0, abs=1e-12)


def test_spectrum_recovers_kl_eigenvalues():
    g = make_grid(8, 8, 2, 2)
    cov = CovarianceSpec(kernel="exponential")
    basis = kl_basis(g, cov, 16)
    x = sample_lnk_batch(basis, cov, np.random.default_rng(0).standard_normal((10000, 16)))
    rep = dataset_spectrum(x, 16)
    rel = np.abs(rep.eigenvalues - basis.eigenvalues) / basis.eigenvalues
    assert rel.max() <= 0.10


def test_consistency_oracle_generator(basis16, grid16):
    bc = BoundarySpec()
    cov = CovarianceSpec(kernel="exponential")
    z = np.random.default_rng(4).standard_normal((5, 64))
    samples = np.stack([solve_sample(f, bc, grid16) for f in sample_lnk_batch(basis16, cov, z)])
    rep = consistency_check(samples, bc, grid16)
    assert not rep.failed.any()
    assert rep.mean_rmse <= 1e-12
    assert rep.mean_ssim == pytest.approx(1.0, abs=1e-12)


def test_consistency_flags_failures(grid16):
    bc = BoundarySpec()
    samples = np.zeros((2, 4, 16, 16))
    samples[1, 0, 3, 3] = np.inf  # K = inf is rejected by the solver
    rep = consistency_check(samples, bc, grid16)
    assert rep.failed.tolist() == [False, True]
    assert np.isnan(rep.rmse[1]) and np.isfinite(rep.mean_rmse)
