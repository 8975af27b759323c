"""Fourier based technique: per-frequency pentadiagonal solves in the angular harmonics.

At a spatial frequency ``omega = rho (cos phi, sin phi)`` the resolvent is
expanded as ``P_hat(theta) = sum_l P_l exp(-i l (phi - theta))``. The generator
couples harmonic ``l`` to ``l +- 1`` (convection) and ``l +- 2`` (anisotropic
spatial diffusion), which gives a banded system of size ``2N + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import mathieu as mth
from .core import Case, DiffusionParams, Domain, GridSpec, Se2Error, Se2Field, check_case, dc_normalize, to_spatial


@dataclass(frozen=True)
class BandSystem:
    """Entries of the scaled banded matrix at one radius.

    Row ``l`` reads ``(q - t) P_{l-1} + p_l P_l + (q + t) P_{l+1} + r (P_{l-2} + P_{l+2})``.
    """

    N: int
    rho: float
    p_l: np.ndarray
    q: complex
    t: complex
    r: complex

    @classmethod
    def build(cls, rho: float, p: DiffusionParams, N: int) -> "BandSystem":
        if N < 1:
            raise Se2Error("N must be >= 1")
        if p.D33 <= 0:
            raise Se2Error("the banded system needs D33 > 0")
        ls = np.arange(-N, N + 1)
        pl = (2.0 * ls) ** 2 + (4 * p.alpha + 2 * rho ** 2 * (p.D11 + p.D22) + 4j * p.a3 * ls) / p.D33
        return cls(
            N=N,
            rho=float(rho),
            p_l=pl.astype(complex),
            q=2j * rho * p.a1 / p.D33,
            t=2.0 * p.a2 * rho / p.D33 + 0j,
            r=rho ** 2 * (p.D11 - p.D22) / p.D33 + 0j,
        )

    @property
    def ls(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def banded(self) -> np.ndarray:
        """Diagonal-ordered storage for ``scipy.linalg.solve_banded((2, 2), ...)``."""
        n = 2 * self.N + 1
        ab = np.zeros((5, n), dtype=complex)
        ab[0, 2:] = self.r
        ab[1, 1:] = self.q + self.t
        ab[2] = self.p_l
        ab[3, :-1] = self.q - self.t
        ab[4, :-2] = self.r
        return ab

    def dense(self) -> np.ndarray:
        n = 2 * self.N + 1
        A = np.diag(self.p_l)
        A += np.diag(np.full(n - 1, self.q + self.t), 1) + np.diag(np.full(n - 1, self.q - self.t), -1)
        A += np.diag(np.full(n - 2, self.r), 2) + np.diag(np.full(n - 2, self.r), -2)
        return A


def rhs_factor(p: DiffusionParams) -> float:
    """Right-hand side factor 4 alpha / D11, or 4 alpha / D33 when D11 = 0."""
    return 4.0 * p.alpha / (p.D11 if p.D11 > 0 else p.D33)


def unscale(p: DiffusionParams) -> float:
    """Factor turning a solution with ``rhs_factor`` into the unit-mass resolvent."""
    return (4.0 * p.alpha / p.D33) / rhs_factor(p)


def solve_column(rho: float, rhs: np.ndarray, p: DiffusionParams, N: int) -> np.ndarray:
    """Solve the banded system with right-hand side ``rhs_factor(p) * rhs``.

    ``rhs`` has length ``2N + 1`` (harmonics ``-N..N``) or shape ``(2N + 1, k)``
    for several right-hand sides. Multiply by ``unscale(p)`` to get the resolvent.
    """
    if p.alpha <= 0:
        raise Se2Error("the banded solve needs alpha > 0")
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.shape[0] != 2 * N + 1:
        raise Se2Error(f"rhs must have length 2N+1 = {2 * N + 1}")
    sys_ = BandSystem.build(rho, p, N)
    return linalg.solve_banded((2, 2), sys_.banded(), rhs_factor(p) * rhs, check_finite=False)


def spike_harmonics(phi: np.ndarray, rho: np.ndarray, s: float, N: int) -> np.ndarray:
    """Harmonics ``exp(i l phi) exp(-s rho^2) / (2 pi)`` of a Gaussian blurred spike, shape (2N+1, n)."""
    ls = np.arange(-N, N + 1)[:, None]
    return np.exp(1j * ls * np.asarray(phi)[None]) * np.exp(-s * np.asarray(rho) ** 2)[None] / (2 * np.pi)


def kernel_fbt(grid: GridSpec, p: DiffusionParams, case=Case.ENHANCEMENT, N: int | None = None, oversampled: bool = False) -> Se2Field:
    """Frequency field of the Gaussian regularised resolvent by banded solves.

    For Gamma order ``p.k > 1`` the solve is applied k times, which gives the
    k-fold iterated resolvent. ``N`` defaults to ``2R``. With ``oversampled`` the oversampled lattice is
    filled and folded onto the base lattice, as for the exact kernels.
    """
    from .exact import _fold

    case = Case.parse(case)
    check_case(p, case)
    if N is None:
        N = 2 * grid.R
    if N < grid.R:
        raise Se2Error("need N >= R")
    wx, wy = grid.frequencies(oversampled)
    WX, WY = np.meshgrid(wx, wy, indexing="ij")
    rho, phi = np.hypot(WX, WY).ravel(), np.arctan2(WY, WX).ravel()
    ur, inv = np.unique(rho, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(ur.size + 1))
    coef = np.zeros((2 * N + 1, rho.size), dtype=complex)
    for i, r in enumerate(ur):
        idx = order[bounds[i]:bounds[i + 1]]
        c = spike_harmonics(phi[idx], rho[idx], p.s, N)
        for _ in range(p.k):
            c = unscale(p) * solve_column(r, c, p, N)
        coef[:, idx] = c
    ls = np.arange(-N, N + 1)
    # P(theta_r) = sum_l P_l exp(i l (theta_r - phi))
    E = np.exp(1j * np.multiply.outer(grid.thetas, ls))
    vals = E @ (coef * np.exp(-1j * np.multiply.outer(ls, phi)))
    vals = vals.reshape((grid.thetas.size,) + WX.shape)
    if oversampled:
        vals = _fold(vals, grid)
    f = Se2Field(vals, grid, Domain.FREQUENCY)
    f.meta.update(method="fbt", N=N, k=p.k, case=case.value)
    return f


def kernel_fbt_spatial(grid: GridSpec, p: DiffusionParams, case=Case.ENHANCEMENT, N: int | None = None, oversampled: bool = False) -> Se2Field:
    """Spatial, DC-normalised version of ``kernel_fbt``."""
    f = kernel_fbt(grid, p, case, N, oversampled)
    sp = to_spatial(f)
    out = dc_normalize(Se2Field(sp.real(1e-8) + 0j, grid, Domain.SPATIAL))
    out.meta.update(f.meta)
    return out


def spectral_decompose(rho: float, p: DiffusionParams, N: int, case=Case.ENHANCEMENT):
    """Eigen-decomposition ``A = S diag(lam) S^-1`` of the banded matrix via periodic Mathieu data.

    Columns of ``S`` are Mathieu Fourier coefficient vectors; ``lam`` equals
    ``(4 / D33)(alpha - lambda_n)`` with ``lambda_n`` the generator eigenvalues.
    Returns ``(S, lam, S_inv)``; for real q ``S`` is orthogonal and ``S_inv = S.T``.
    """
    case = Case.parse(case)
    if p.a2 != 0 or p.a3 != 0:
        raise Se2Error("spectral form needs a2 = a3 = 0")
    if case is Case.ENHANCEMENT:
        if p.a1 != 0:
            raise Se2Error("enhancement spectral form needs a1 = 0")
        q = rho ** 2 * (p.D11 - p.D22) / (4 * p.D33)
        ls, w, S, Si = mth.hill_eigensystem(q + 0j, N, step=1, dual=True)
        lam_gen = -w * p.D33 - rho ** 2 * (p.D11 + p.D22) / 2
    else:
        if p.D11 != 0 or p.D22 != 0:
            raise Se2Error("completion spectral form needs D11 = D22 = 0")
        q = 2j * rho * p.a1 / p.D33
        ls, w, S, Si = mth.hill_eigensystem(q, 2 * N, step=2, dual=True)
        lam_gen = -w * p.D33 / 4
    return S, (4.0 / p.D33) * (p.alpha - lam_gen), Si


def spectral_solve(rho: float, rhs: np.ndarray, p: DiffusionParams, N: int, case=Case.ENHANCEMENT) -> np.ndarray:
    """Same contract as ``solve_column`` but through ``S diag(1/lam) S^-1``."""
    S, lam, Si = spectral_decompose(rho, p, N, case)
    rhs = rhs_factor(p) * np.asarray(rhs, dtype=complex)
    if rhs.ndim == 1:
        return S @ ((Si @ rhs) / lam)
    return S @ ((Si @ rhs) / lam[:, None])
