from __future__ import annotations

import numpy as np
import pytest
from scipy import linalg

from se2lab import fourier_solver as fs
from se2lab.analysis import relative_error
from se2lab.core import DiffusionParams, GridSpec, Se2Error
from se2lab.exact import sample_kernel_hat

ENH = DiffusionParams.enhancement(D11=1.0, D33=0.05, alpha=0.05)
ANISO = DiffusionParams.enhancement(D11=1.0, D22=0.3, D33=0.2, alpha=0.1)
COM = DiffusionParams.completion(D33=0.08, alpha=0.05)


def test_zero_radius_is_diagonal():
    A = fs.BandSystem.build(0.0, ENH, 6).dense()
    assert np.count_nonzero(A - np.diag(np.diag(A))) == 0
    ls = np.arange(-6, 7)
    assert np.allclose(np.diag(A), 4 * ls ** 2 + 4 * ENH.alpha / ENH.D33)


def test_banded_storage_matches_dense():
    s = fs.BandSystem.build(1.3, ANISO, 7)
    ab = s.banded()
    A = s.dense()
    n = A.shape[0]
    for u in range(-2, 3):
        assert np.allclose(np.diag(A, u), ab[2 - u, max(u, 0):n + min(u, 0)])


@pytest.mark.parametrize("p", [ENH, ANISO, COM])
def test_banded_solve_matches_dense_solve(p, rng):
    N = 12
    for rho in rng.uniform(0.05, 3.0, 5):
        b = rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)
        x = fs.solve_column(rho, b, p, N)
        A = fs.BandSystem.build(rho, p, N).dense()
        assert np.allclose(A @ x, fs.rhs_factor(p) * b, rtol=1e-12, atol=1e-12)
        assert np.allclose(x, np.linalg.solve(A, fs.rhs_factor(p) * b), rtol=1e-10)


def test_multiple_right_hand_sides(rng):
    N = 5
    B = rng.normal(size=(2 * N + 1, 3))
    X = fs.solve_column(0.7, B, ENH, N)
    for j in range(3):
        assert np.allclose(X[:, j], fs.solve_column(0.7, B[:, j], ENH, N))


@pytest.mark.parametrize("p,case", [(ENH, "enh"), (COM, "com")])
def test_spectral_decomposition(p, case, rng):
    N = 10
    for rho in rng.uniform(0.1, 3.0, 4):
        S, lam, Si = fs.spectral_decompose(rho, p, N, case)
        assert np.allclose(S @ Si, np.eye(S.shape[0]), atol=1e-10)
        A = fs.BandSystem.build(rho, p, N).dense()
        assert np.abs(S @ np.diag(lam) @ Si - A).max() < 1e-9 * np.abs(A).max()


def test_spectral_vectors_orthogonal_for_real_q():
    S, lam, Si = fs.spectral_decompose(1.7, ENH, 8)
    assert np.allclose(S.T @ S, np.eye(S.shape[0]), atol=1e-12)
    assert np.allclose(Si, S.T, atol=1e-12)
    assert np.all(lam.real > 0)


@pytest.mark.parametrize("p,case", [(ENH, "enh"), (COM, "com")])
def test_spectral_solve_agrees(p, case, rng):
    N = 16
    for rho in rng.uniform(0.05, 3.0, 5):
        b = rng.normal(size=2 * N + 1) + 0j
        assert np.abs(fs.spectral_solve(rho, b, p, N, case) - fs.solve_column(rho, b, p, N)).max() < 1e-8


def test_spike_harmonics():
    h = fs.spike_harmonics(np.array([0.3]), np.array([2.0]), 0.5, 3)
    ls = np.arange(-3, 4)
    assert np.allclose(h[:, 0], np.exp(1j * ls * 0.3) * np.exp(-2.0) / (2 * np.pi))


def test_converges_to_exact_with_harmonic_cutoff():
    g = GridSpec(P=10, Q=10, R=6)
    p = ENH.with_(s=0.5)
    E = sample_kernel_hat(g, p)
    errs = np.array([relative_error(E, fs.kernel_fbt(g, p, N=N), 1, "f") for N in (4 * g.R, 8 * g.R, 16 * g.R)])
    # the theta = 0 samples sit on the derivative jump, so truncation converges like 1/N
    assert np.all((errs[:-1] / errs[1:] > 1.7) & (errs[:-1] / errs[1:] < 2.5))
    assert errs[-1] < 0.01


def test_completion_converges_to_exact():
    g = GridSpec(P=10, Q=10, R=6)
    p = COM.with_(s=0.5)
    E = sample_kernel_hat(g, p, "com")
    e1 = relative_error(E, fs.kernel_fbt(g, p, "com", N=8 * g.R), 1, "f")
    e2 = relative_error(E, fs.kernel_fbt(g, p, "com", N=16 * g.R), 1, "f")
    assert 1.7 < e1 / e2 < 2.5 and e2 < 0.01


def test_spatial_kernel_unit_mass_and_peak():
    g = GridSpec(P=10, Q=10, R=6)
    K = fs.kernel_fbt_spatial(g, ENH.with_(s=0.5))
    assert K.mass() == pytest.approx(1.0)
    d = K.data.real
    assert np.unravel_index(np.argmax(d), d.shape) == (g.R, g.P, g.Q)


def test_iterated_resolvent_is_wider():
    g = GridSpec(P=12, Q=12, R=6)
    p = ENH.with_(s=0.5, alpha=0.2)
    K1 = fs.kernel_fbt_spatial(g, p).data.real
    K2 = fs.kernel_fbt_spatial(g, p.with_(k=2)).data.real
    x = g.xs[None, :, None]
    assert (K2 * x ** 2).sum() > (K1 * x ** 2).sum()
    assert K2.max() < K1.max()


def test_oversampled_fill_changes_little():
    g = GridSpec(P=8, Q=8, R=4, oversample=2)
    p = ENH.with_(s=0.5)
    a = fs.kernel_fbt(g, p)
    b = fs.kernel_fbt(g, p, oversampled=True)
    assert relative_error(a, b, 1, "f") < 0.05


def test_argument_checks():
    with pytest.raises(Se2Error):
        fs.BandSystem.build(1.0, ENH, 0)
    with pytest.raises(Se2Error):
        fs.solve_column(1.0, np.ones(5), ENH.with_(alpha=0.0), 2)
    with pytest.raises(Se2Error):
        fs.solve_column(1.0, np.ones(4), ENH, 2)
    with pytest.raises(Se2Error):
        fs.kernel_fbt(GridSpec(4, 4, 4), ENH, N=2)
    with pytest.raises(Se2Error):
        fs.spectral_decompose(1.0, ENH.with_(a2=1.0), 4)
    with pytest.raises(Se2Error):
        fs.BandSystem.build(1.0, ENH.with_(D33=0.0), 4)


def test_solve_banded_used_as_documented():
    # cross-check the storage convention against scipy's own dense conversion
    s = fs.BandSystem.build(0.9, ANISO, 4)
    ab = s.banded()
    n = ab.shape[1]
    A = np.zeros((n, n), complex)
    for i in range(n):
        for j in range(max(0, i - 2), min(n, i + 3)):
            A[i, j] = ab[2 + i - j, j]
    assert np.allclose(A, s.dense())
    b = np.arange(n, dtype=complex)
    assert np.allclose(linalg.solve_banded((2, 2), ab, b), np.linalg.solve(A, b))
