"""Exact resolvent kernels in the spatial Fourier domain and their sampling.

For fixed frequency ``omega = rho (cos phi, sin phi)`` the resolvent solves a
second order ODE in ``theta`` whose solutions are Mathieu functions. Three
representations are provided:

* ``series``: expansion in periodic Mathieu eigenfunctions (Hill matrix),
* ``unwrapped``: a continuous fit on the real line, periodised by summing
  translates (Floquet shifts),
* ``closed_form``: the geometric sum of the periodisation written with four
  Mathieu functions ce/se.

All three use the unit-mass convention ``(alpha - Q) R = alpha delta_e`` so that
``int R_hat(0, theta) dtheta = 1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import mathieu as mth
from .core import (
    Case,
    DiffusionParams,
    Domain,
    GridSpec,
    NumericalError,
    Se2Error,
    Se2Field,
    check_case,
    dc_normalize,
    to_spatial,
)

log = logging.getLogger(__name__)

APPROACHES = ("exact1", "exact2", "exact3")
C_INTERVAL = (0.5, 2.0 ** 0.25)


@dataclass
class CaseSettings:
    """Mathieu data for one frequency radius."""

    case: Case
    rho: float
    a: complex
    q: complex
    mu: int
    nu: complex = 0j
    W: complex = 0j
    solution: mth.MathieuSolution | None = None
    flags: list = field(default_factory=list)


def mathieu_parameters(rho, p: DiffusionParams, case: Case, alpha: float | None = None):
    """Characteristic value a, parameter q and scale mu of the Mathieu equation at radius rho."""
    case = Case.parse(case)
    al = p.alpha if alpha is None else alpha
    rho = np.asarray(rho, dtype=float)
    if case is Case.ENHANCEMENT:
        a = (-al - rho ** 2 * (p.D11 + p.D22) / 2.0) / p.D33
        q = rho ** 2 * (p.D11 - p.D22) / (4.0 * p.D33)
        return a + 0j, q + 0j, 1
    a = np.full(rho.shape, -4.0 * al / p.D33)
    q = 2j * p.a1 * rho / p.D33
    return a + 0j, q, 2


def eigenvalues(rho: float, p: DiffusionParams, case: Case, M: int = 64):
    """lambda_n(rho) from periodic Mathieu characteristics, sorted by real part (descending)."""
    case = Case.parse(case)
    a, q, mu = mathieu_parameters(rho, p, case)
    _, w, _ = mth.hill_eigensystem(complex(q), M * mu, step=mu)
    if case is Case.ENHANCEMENT:
        lam = -w * p.D33 - rho ** 2 * (p.D11 + p.D22) / 2.0
    else:
        lam = -w * p.D33 / 4.0
    return lam[np.argsort(-lam.real, kind="stable")]


def case_settings(rho: float, p: DiffusionParams, case: Case, alpha: float | None = None) -> CaseSettings:
    case = Case.parse(case)
    a, q, mu = mathieu_parameters(rho, p, case, alpha)
    sol = mth.mathieu_solution(complex(a), complex(q))
    return CaseSettings(case, float(rho), complex(a), complex(q), mu, sol.nu, sol.wronskian(mu), sol)


class _Rays:
    """Mathieu solutions for a set of radii, solved in one batch."""

    def __init__(self, rhos: np.ndarray, p: DiffusionParams, case: Case, alpha: float):
        self.case = Case.parse(case)
        self.p = p
        self.rhos = np.asarray(rhos, dtype=float)
        self.alpha = alpha
        a, q, mu = mathieu_parameters(self.rhos, p, self.case, alpha)
        self.mu = mu
        a = np.broadcast_to(a, self.rhos.shape).astype(complex)
        q = np.broadcast_to(q, self.rhos.shape).astype(complex)
        nu = mth.floquet_exponents(a, q)
        res = np.abs(nu - np.round(nu.real)) < 1e-8
        self.flags = {}
        if np.any(res & (self.rhos > 0)) and alpha > 0:
            # resonance: nudge alpha and recompute the affected radii
            bump = alpha * (1 + 1e-9)
            idx = np.flatnonzero(res & (self.rhos > 0))
            a2, q2, _ = mathieu_parameters(self.rhos[idx], p, self.case, bump)
            a[idx] = a2
            nu[idx] = mth.floquet_exponents(a2, q2)
            self.flags["resonant_radii"] = self.rhos[idx].tolist()
            log.info("perturbed alpha at %d resonant radii", idx.size)
        self.a, self.q = a, q
        self.nu, self.coeffs, self.N = mth.solve_batch(a, q, nu=nu)
        self.W = np.array([self.solution(i).wronskian(mu) for i in range(self.rhos.size)])

    def solution(self, i: int) -> mth.MathieuSolution:
        return mth.MathieuSolution(self.nu[i], self.coeffs[i], self.N, mth.MathieuParams(self.a[i], self.q[i]))


def _me_pair(sol: mth.MathieuSolution, z: np.ndarray):
    return sol.eval(z, "me_plus"), sol.eval(z, "me_minus")


def _prefactor(p: DiffusionParams, W, source: float):
    if np.any(np.abs(W) < 1e-14):
        raise NumericalError("degenerate Wronskian (|W| < 1e-14)")
    return source / (p.D33 * W)


def _ray_unwrapped(sol, W, mu, p, phi, theta, source, n_max=None):
    """Periodised continuous fit for one radius; phi and theta broadcast."""
    phi, theta = np.broadcast_arrays(np.asarray(phi, float), np.asarray(theta, float))
    th = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    eps = np.exp(2j * np.pi * sol.nu / mu)
    if abs(eps) >= 1:
        raise NumericalError(f"non-decaying Floquet multiplier |eps|={abs(eps):.3g}")
    if n_max is None:
        n_max = 1 if abs(eps) == 0 else int(np.ceil(np.log(1e-17) / np.log(abs(eps))))
        n_max = max(2, min(n_max, 2000))
    A = phi / mu
    B = (phi - th) / mu
    GA, FA = _me_pair(sol, A)
    GB, FB = _me_pair(sol, B)
    pw = eps ** np.arange(n_max + 1)
    s0 = pw.sum()          # n = 0..n_max
    s1 = pw[1:].sum()      # n = 1..n_max
    pos = th >= 0
    # theta >= 0: n >= 0 use G(A) F(B - 2n pi/mu) = eps^n G(A) F(B); n < 0 the mirrored branch
    val = np.where(pos, GA * FB * s0 + FA * GB * s1, FA * GB * s0 + GA * FB * s1)
    return _prefactor(p, W, source) * val


def _ray_closed(sol, W, mu, p, phi, theta, source, literal=False):
    """Closed form with ce/se and cot(nu pi / mu).

    With ``literal=False`` the bracket is regrouped through ce = (G + F)/2 and
    se = (G - F)/(2i) with G = me_nu, F = me_-nu, so that the coefficients
    -cot/2 +- i/2 are formed from eps = exp(2 i pi nu / mu) directly. The
    literal ce/se products cancel catastrophically once |Im nu| is large.
    """
    phi, theta = np.broadcast_arrays(np.asarray(phi, float), np.asarray(theta, float))
    th = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    A = phi / mu
    B = (phi - th) / mu
    pre = _prefactor(p, W, source) / 1j
    if literal:
        ceA, seA = sol.eval(A, "ce"), sol.eval(A, "se")
        ceB, seB = sol.eval(B, "ce"), sol.eval(B, "se")
        cot = 1.0 / np.tan(sol.nu * np.pi / mu)
        up = -cot * (ceA * ceB + seA * seB) + ceA * seB - seA * ceB
        down = -cot * (ceA * ceB + seA * seB) - ceA * seB + seA * ceB
    else:
        eps = np.exp(2j * np.pi * sol.nu / mu)
        k_near = 1j / (1.0 - eps)       # -cot/2 + i/2
        k_far = 1j * eps / (1.0 - eps)  # -cot/2 - i/2
        GA, FA = _me_pair(sol, A)
        GB, FB = _me_pair(sol, B)
        up = k_near * GA * FB + k_far * FA * GB
        down = k_far * GA * FB + k_near * FA * GB
    val = np.where(th > 0, up, np.where(th < 0, down, 0.5 * (up + down)))
    return pre * val


def _circle_green(kappa2, D33, zeta):
    """Green's function of (kappa2 D33 - D33 d^2) on the circle with unit delta at 0."""
    k = np.sqrt(kappa2 + 0j)
    z = np.abs(np.mod(zeta + np.pi, 2 * np.pi) - np.pi)
    # cosh(k (pi - z)) / sinh(k pi), written to avoid overflow for large Re k
    num = np.exp(-k * z) + np.exp(-k * (2 * np.pi - z))
    den = 1.0 - np.exp(-2 * np.pi * k)
    return num / den / (2.0 * D33 * k)


def series_order(q: complex, mu: int = 1) -> int:
    """Harmonic cutoff for the accelerated series, about 1e-7 relative accuracy."""
    return int(32 + np.ceil(12.0 * np.sqrt(abs(q)) / mu))


def _ray_series(rho, p, case, phi, theta, source, alpha, M=None, accelerate=True):
    """Periodic eigenfunction series for one radius (Hill-matrix eigenpairs)."""
    phi, theta = np.broadcast_arrays(np.asarray(phi, float), np.asarray(theta, float))
    a, q, mu = mathieu_parameters(rho, p, case, alpha)
    if M is None:
        M = series_order(q, mu)
    ls, w, V, Vi = mth.hill_eigensystem(complex(q), M * mu, step=mu, dual=True)
    m = ls // mu  # harmonics of zeta = phi - theta
    if case is Case.ENHANCEMENT:
        lam = -w * p.D33 - rho ** 2 * (p.D11 + p.D22) / 2.0
        v0 = rho ** 2 * (p.D11 + p.D22) / 2.0
        kap, shift = rho ** 2 * (p.D11 - p.D22) / 4.0, 2
    else:
        lam = -w * p.D33 / 4.0
        v0 = 0.0
        kap, shift = 1j * p.a1 * rho / 2.0, 1
    gap = alpha - lam
    zeta = phi - theta
    flat_phi = phi.ravel()
    out = np.zeros(flat_phi.shape, dtype=complex)
    zf = zeta.ravel()
    E = np.exp(1j * np.multiply.outer(zf, m))          # e^{i m zeta}
    # group by phi since the source depends on it
    for ph in np.unique(flat_phi):
        sel = flat_phi == ph
        vphi = v0 + 2.0 * kap * np.cos(shift * ph)
        if accelerate:
            # subtract the constant-coefficient circle resolvent carrying the kink at zeta = phi
            al_eff = alpha + vphi
            mm = np.arange(m.min() - shift, m.max() + shift + 1)
            h = np.exp(-1j * mm * ph) / (2 * np.pi * (al_eff + p.D33 * mm ** 2))
            hm = h[shift:-shift]
            r = -((v0 - vphi) * hm + kap * (h[:-2 * shift] + h[2 * shift:]))
            coef = V @ ((Vi @ r) / gap)
            sing = _circle_green(al_eff / p.D33, p.D33, zf[sel] - ph)
            out[sel] = source * (sing + E[sel] @ coef)
        else:
            b = np.exp(-1j * m * ph) / (2 * np.pi)
            coef = V @ ((Vi @ b) / gap)
            out[sel] = source * (E[sel] @ coef)
    return out.reshape(phi.shape)


def _polar(omega):
    wx, wy = omega
    wx, wy = np.broadcast_arrays(np.asarray(wx, float), np.asarray(wy, float))
    return np.hypot(wx, wy), np.arctan2(wy, wx)


def _evaluate(omega, theta, p, case, approach, **kw):
    case = Case.parse(case)
    check_case(p, case, allow_zero_alpha=True)
    rho, phi = _polar(omega)
    rho, phi, theta = np.broadcast_arrays(rho, phi, np.asarray(theta, float))
    shape = rho.shape
    rho, phi, theta = rho.ravel(), phi.ravel(), theta.ravel()
    out = np.zeros(rho.shape, dtype=complex)
    alpha = p.alpha
    source = alpha if alpha > 0 else 1.0
    ur, inv = np.unique(rho, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(ur.size + 1))
    if approach == "exact1":
        for i, r in enumerate(ur):
            idx = order[bounds[i]:bounds[i + 1]]
            out[idx] = _ray_series(r, p, case, phi[idx], theta[idx], source, alpha, **kw)
        return out.reshape(shape)
    rays = _Rays(ur, p, case, alpha)
    fn = _ray_unwrapped if approach == "exact2" else _ray_closed
    for i in range(ur.size):
        idx = order[bounds[i]:bounds[i + 1]]
        out[idx] = fn(rays.solution(i), rays.W[i], rays.mu, p, phi[idx], theta[idx], source, **kw)
    return out.reshape(shape)


def kernel_hat_series(omega, theta, p: DiffusionParams, case=Case.ENHANCEMENT, M: int | None = None, accelerate: bool = True):
    """Resolvent from the periodic Mathieu eigenfunction expansion truncated at M harmonics.

    ``M=None`` picks the cutoff from |q| per radius (see ``series_order``).

    With ``accelerate`` the constant-coefficient circle resolvent (which carries
    the derivative jump at theta = 0) is subtracted in closed form and only the
    smooth remainder is expanded; otherwise the plain truncated series is used.
    """
    if M is not None and M < 8:
        raise Se2Error("series truncation M must be >= 8")
    return _evaluate(omega, theta, p, case, "exact1", M=M, accelerate=accelerate)


def kernel_hat_unwrapped(omega, theta, p: DiffusionParams, case=Case.ENHANCEMENT, n_max: int | None = None):
    """Continuous fit on the unwrapped angle, periodised over translates theta + 2 n pi."""
    return _evaluate(omega, theta, p, case, "exact2", n_max=n_max)


def kernel_hat_closed_form(omega, theta, p: DiffusionParams, case=Case.ENHANCEMENT, literal: bool = False):
    """Four-Mathieu-function closed form with cot(nu pi / mu).

    ``literal=True`` evaluates the ce/se products as written; it loses all
    digits roughly once |Im nu| exceeds 5 and is kept for small-rho checks.
    """
    return _evaluate(omega, theta, p, case, "exact3", literal=literal)


_DISPATCH = {"exact1": kernel_hat_series, "exact2": kernel_hat_unwrapped, "exact3": kernel_hat_closed_form}


def kernel_hat(omega, theta, p, case=Case.ENHANCEMENT, approach: str = "exact3", **kw):
    if approach not in _DISPATCH:
        raise Se2Error(f"unknown approach {approach!r}")
    return _DISPATCH[approach](omega, theta, p, case, **kw)


def inner_scale_sigma(oversample: int = 1, nu: float = 0.9, length: float = 1.0, Ns: int = 1) -> float:
    """Spatial Gaussian width 2 / (nu oversample pi) * (length / Ns)."""
    return 2.0 / (nu * oversample * np.pi) * (length / Ns)


def tail_bound(s: float, oversample: int = 1, C: float = 1.0) -> float:
    """Bound pi C Gamma(0, pi^2 s oversample^2) on the discarded Fourier tail."""
    return float(np.pi * C * special.exp1(np.pi ** 2 * s * oversample ** 2))


def _lattice_values(grid: GridSpec, p, case, approach, oversampled: bool, **kw) -> np.ndarray:
    wx, wy = grid.frequencies(oversampled)
    WX, WY = np.meshgrid(wx, wy, indexing="ij")
    th = grid.thetas[:, None, None]
    vals = kernel_hat((WX[None], WY[None]), th, p, case, approach, **kw)
    return vals * np.exp(-p.s * (WX ** 2 + WY ** 2))[None]


def _fold(vals: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Sum oversampled frequency samples into the base lattice (aliasing at integer x)."""
    m = grid.oversample
    if m == 1:
        return vals
    nx, ny = 2 * grid.P + 1, 2 * grid.Q + 1
    px = (np.arange(-m * grid.P, m * grid.P + 1) + grid.P) % nx
    qy = (np.arange(-m * grid.Q, m * grid.Q + 1) + grid.Q) % ny
    out = np.zeros((vals.shape[0], nx, ny), dtype=complex)
    tmp = np.zeros((vals.shape[0], nx, vals.shape[2]), dtype=complex)
    np.add.at(tmp, (slice(None), px), vals)
    np.add.at(out, (slice(None), slice(None), qy), tmp)
    return out


def sample_kernel_hat(grid: GridSpec, p: DiffusionParams, case=Case.ENHANCEMENT, approach: str = "exact3", **kw) -> Se2Field:
    """Gaussian-regularised frequency samples on the base lattice."""
    case = Case.parse(case)
    check_case(p, case)
    vals = _lattice_values(grid, p, case, approach, False, **kw)
    f = Se2Field(vals, grid, Domain.FREQUENCY)
    f.meta.update(approach=approach, case=case.value)
    return f


def sample_kernel(grid: GridSpec, p: DiffusionParams, case=Case.ENHANCEMENT, approach: str = "exact3", **kw) -> Se2Field:
    """Spatial kernel on the lattice: oversampled frequency fill, fold, inverse CDFT, DC-normalise."""
    case = Case.parse(case)
    check_case(p, case)
    if p.s == 0:
        log.warning("s = 0: the unregularised kernel is singular at the origin")
    vals = _fold(_lattice_values(grid, p, case, approach, True, **kw), grid)
    spatial = to_spatial(Se2Field(vals, grid, Domain.FREQUENCY))
    spatial = Se2Field(spatial.real(1e-8) + 0j, grid, Domain.SPATIAL)
    out = dc_normalize(spatial)
    out.meta.update(approach=approach, case=case.value, s=p.s)
    return out


def fundamental_solution(grid: GridSpec, p: DiffusionParams, case=Case.ENHANCEMENT, approach: str = "exact3") -> Se2Field:
    """Frequency samples of S = lim_{alpha -> 0} R_alpha / alpha (no Gaussian window).

    The omega = 0 column is a pole; it is filled by linear radial extrapolation
    from the two nearest rings of the same angle and flagged in ``meta``.
    """
    case = Case.parse(case)
    p0 = p.with_(alpha=0.0)
    check_case(p0, case, allow_zero_alpha=True)
    wx, wy = grid.frequencies(False)
    WX, WY = np.meshgrid(wx, wy, indexing="ij")
    th = grid.thetas[:, None, None]
    mask = ~((WX == 0) & (WY == 0))
    vals = np.zeros(grid.shape, dtype=complex)
    vals[:, mask] = kernel_hat((WX[mask][None], WY[mask][None]), grid.thetas[:, None], p0, case, approach)
    # extrapolate along the +x axis from the first two samples
    v1, v2 = vals[:, grid.P + 1, grid.Q], vals[:, grid.P + 2, grid.Q]
    vals[:, grid.P, grid.Q] = 2 * v1 - v2
    f = Se2Field(vals, grid, Domain.FREQUENCY)
    f.meta.update(pole_extrapolated=True, case=case.value)
    return f
