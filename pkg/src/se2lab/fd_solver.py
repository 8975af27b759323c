"""Left-invariant finite differences with quadratic B-spline interpolation.

Derivatives along e_xi = (cos theta, sin theta) use samples at x +- e_xi, which
fall off the pixel grid and are interpolated with 2nd order B-splines
(prefiltered, so grid samples are reproduced; ``prefilter=False`` on the
stencil uses the samples as spline coefficients, a positive average that adds
blur). The theta direction uses plain periodic central differences.

Spatial boundaries are periodic. Every per-orientation stencil is then a
convolution, so the operator is stored as one Fourier symbol per orientation
and applied in the spatial frequency domain. ``apply_spatial`` evaluates the
same stencil directly with ``scipy.ndimage.map_coordinates`` and serves as a
cross-check.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import linalg as spla

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
    to_frequency,
    to_spatial,
)

log = logging.getLogger(__name__)


class Scheme(enum.Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


@dataclass(frozen=True)
class SchemeConfig:
    dt: float = 0.005
    n_steps: int = 1
    scheme: Scheme = Scheme.EXPLICIT
    cg_tol: float = 1e-8
    cg_max_iter: int = 500

    def __post_init__(self):
        if self.dt <= 0:
            raise Se2Error("dt must be positive")
        if self.n_steps < 0:
            raise Se2Error("n_steps must be >= 0")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


def stability_bound(p: DiffusionParams, dtheta: float) -> float:
    """Explicit step bound 1 / (2 (1 + sqrt 2 + 1/q^2)) with q = dtheta / beta, beta^2 = D33/D11.

    Written for D11 = 1; for other D11 the bound is divided by D11.
    """
    if p.D11 <= 0:
        raise Se2Error("stability bound needs D11 > 0")
    beta = math.sqrt(p.D33 / p.D11)
    inv_q2 = (beta / dtheta) ** 2
    return 1.0 / (2.0 * p.D11 * (1.0 + math.sqrt(2.0) + inv_q2))


def _impulse(grid: GridSpec, ex: float, ey: float, order: int, prefilter: bool = True) -> np.ndarray:
    """Response of f -> f(x + e) to a centered unit impulse (periodic)."""
    nx, ny = 2 * grid.P + 1, 2 * grid.Q + 1
    d = np.zeros((nx, ny))
    d[grid.P, grid.Q] = 1.0
    X, Y = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float), indexing="ij")
    return ndimage.map_coordinates(d, [X + ex / grid.dx, Y + ey / grid.dy], order=order, mode="grid-wrap", prefilter=prefilter)


def _symbol(kernel: np.ndarray) -> np.ndarray:
    """Centered Fourier symbol of a convolution kernel given by its centered impulse response."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(kernel)))


@dataclass
class Stencil:
    """Per-orientation shift symbols for +-e_xi and +-e_eta steps of one pixel."""

    grid: GridSpec
    order: int = 2
    prefilter: bool = True
    xi_plus: np.ndarray = field(init=False, repr=False)
    xi_minus: np.ndarray = field(init=False, repr=False)
    eta_plus: np.ndarray = field(init=False, repr=False)
    eta_minus: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        h = g.dx
        shape = (g.thetas.size, 2 * g.P + 1, 2 * g.Q + 1)
        self.xi_plus, self.xi_minus = np.empty(shape, complex), np.empty(shape, complex)
        self.eta_plus, self.eta_minus = np.empty(shape, complex), np.empty(shape, complex)
        for r, th in enumerate(g.thetas):
            c, s = math.cos(th) * h, math.sin(th) * h
            self.xi_plus[r] = _symbol(_impulse(g, c, s, self.order, self.prefilter))
            self.xi_minus[r] = _symbol(_impulse(g, -c, -s, self.order, self.prefilter))
            self.eta_plus[r] = _symbol(_impulse(g, -s, c, self.order, self.prefilter))
            self.eta_minus[r] = _symbol(_impulse(g, s, -c, self.order, self.prefilter))

    def weights(self, r: int, kind: str = "xixi") -> np.ndarray:
        """Spatial weights (centered) of one stencil at orientation index r."""
        sym = {
            "xixi": self.xi_plus[r] + self.xi_minus[r] - 2,
            "etaeta": self.eta_plus[r] + self.eta_minus[r] - 2,
            "xi_up": 1 - self.xi_minus[r],
            "xi_down": self.xi_plus[r] - 1,
        }[kind]
        w = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(sym))).real
        return w / self.grid.dx ** (2 if kind in ("xixi", "etaeta") else 1)


class FDOperator:
    """Discrete generator Q_h = D11 d_xi^2 + D22 d_eta^2 + D33 d_theta^2 - a1 d_xi (upwind).

    ``part`` selects ``"all"``, ``"diffusion"`` or ``"convection"``.
    """

    def __init__(self, grid: GridSpec, p: DiffusionParams, stencil: Stencil | None = None, part: str = "all"):
        if part not in ("all", "diffusion", "convection"):
            raise Se2Error(f"unknown operator part {part!r}")
        if p.a2 != 0 or p.a3 != 0:
            raise Se2Error("finite differences support convection along e_xi only (a2 = a3 = 0)")
        self.grid, self.p, self.part = grid, p, part
        self.stencil = stencil if stencil is not None else Stencil(grid)
        st, h = self.stencil, grid.dx
        diag = np.zeros(st.xi_plus.shape, complex)
        if part in ("all", "diffusion"):
            if p.D11:
                diag += p.D11 * (st.xi_plus + st.xi_minus - 2) / h ** 2
            if p.D22:
                diag += p.D22 * (st.eta_plus + st.eta_minus - 2) / h ** 2
            self.theta_coef = p.D33 / grid.dtheta ** 2
        else:
            self.theta_coef = 0.0
        if part in ("all", "convection") and p.a1:
            # upwind: backward difference for transport in +e_xi
            up = (1 - st.xi_minus) / h if p.a1 > 0 else (st.xi_plus - 1) / h
            diag -= p.a1 * up
        self.diag = diag
        self.symmetric = p.a1 == 0 or part == "diffusion"

    def apply_hat(self, F: np.ndarray) -> np.ndarray:
        """Apply to centered spatial-frequency data of shape (2R+1, 2P+1, 2Q+1)."""
        out = self.diag * F
        if self.theta_coef:
            out += self.theta_coef * (np.roll(F, 1, 0) + np.roll(F, -1, 0) - 2 * F)
        return out

    def apply(self, W: Se2Field) -> Se2Field:
        F = W if W.domain == Domain.FREQUENCY else to_frequency(W)
        out = Se2Field(self.apply_hat(F.data), W.grid, Domain.FREQUENCY)
        return out if W.domain == Domain.FREQUENCY else to_spatial(out)

    def apply_spatial(self, W: np.ndarray) -> np.ndarray:
        """Same stencil evaluated pixel by pixel with map_coordinates (periodic)."""
        g, p, h = self.grid, self.p, self.grid.dx
        W = np.asarray(W)
        nx, ny = W.shape[1:]
        X, Y = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float), indexing="ij")

        def at(slice_, ex, ey):
            kw = dict(order=self.stencil.order, mode="grid-wrap", prefilter=self.stencil.prefilter)
            if np.iscomplexobj(slice_):
                return ndimage.map_coordinates(slice_.real, [X + ex / g.dx, Y + ey / g.dy], **kw) + 1j * ndimage.map_coordinates(
                    slice_.imag, [X + ex / g.dx, Y + ey / g.dy], **kw
                )
            return ndimage.map_coordinates(slice_, [X + ex / g.dx, Y + ey / g.dy], **kw)

        out = np.zeros_like(W, dtype=np.result_type(W.dtype, float))
        for r, th in enumerate(g.thetas):
            c, s = math.cos(th) * h, math.sin(th) * h
            f = W[r]
            if self.part in ("all", "diffusion"):
                if p.D11:
                    out[r] += p.D11 * (at(f, c, s) + at(f, -c, -s) - 2 * f) / h ** 2
                if p.D22:
                    out[r] += p.D22 * (at(f, -s, c) + at(f, s, -c) - 2 * f) / h ** 2
            if self.part in ("all", "convection") and p.a1:
                up = (f - at(f, -c, -s)) / h if p.a1 > 0 else (at(f, c, s) - f) / h
                out[r] -= p.a1 * up
        if self.theta_coef:
            out += self.theta_coef * (np.roll(W, 1, 0) + np.roll(W, -1, 0) - 2 * W)
        return out

    def theta_matrix(self) -> np.ndarray:
        """Cyclic second difference in theta times D33 / dtheta^2."""
        n = self.grid.thetas.size
        T = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
        T[0, -1] += 1.0
        T[-1, 0] += 1.0
        return self.theta_coef * T

    def omega_matrices(self, idx: np.ndarray) -> np.ndarray:
        """Dense theta-coupling matrices L_omega for flat spatial-frequency indices ``idx``."""
        d = self.diag.reshape(self.diag.shape[0], -1)[:, idx].T
        n = self.grid.thetas.size
        M = np.broadcast_to(self.theta_matrix(), (idx.size, n, n)).astype(complex)
        M[:, np.arange(n), np.arange(n)] += d
        return M


def spectral_step_limit(op: FDOperator, chunk: int = 4096) -> float:
    """Largest stable forward-Euler step of ``op``, 2 / max eigenvalue of -L_omega (symmetric case)."""
    if not op.symmetric:
        raise Se2Error("sharp step limit is computed for the symmetric diffusion operator only")
    n_omega = op.diag[0].size
    lam = 0.0
    for start in range(0, n_omega, chunk):
        idx = np.arange(start, min(start + chunk, n_omega))
        M = op.omega_matrices(idx).real
        lam = max(lam, float(np.max(-np.linalg.eigvalsh(M))))
    return 2.0 / lam


def initial_spike(grid: GridSpec, s: float) -> Se2Field:
    """Gaussian blurred spike at the identity, in the spatial frequency domain, unit mass."""
    wx, wy = grid.frequencies(False)
    WX, WY = np.meshgrid(wx, wy, indexing="ij")
    F = np.zeros(grid.shape, complex)
    F[grid.R] = np.exp(-s * (WX ** 2 + WY ** 2)) / grid.dtheta
    return Se2Field(F, grid, Domain.FREQUENCY)


def _check_finite(F: np.ndarray) -> None:
    if not np.all(np.isfinite(F)) or np.abs(F).max() > 1e150:
        raise NumericalError("instability: the explicit scheme blew up")


def step_explicit(W: Se2Field, p: DiffusionParams, cfg: SchemeConfig, op: FDOperator | None = None) -> Se2Field:
    """``cfg.n_steps`` forward Euler steps W <- W + dt Q_h W."""
    op = op if op is not None else FDOperator(W.grid, p)
    F = W if W.domain == Domain.FREQUENCY else to_frequency(W)
    X = F.data.copy()
    for _ in range(cfg.n_steps):
        X = X + cfg.dt * op.apply_hat(X)
        _check_finite(X)
    out = Se2Field(X, W.grid, Domain.FREQUENCY)
    return out if W.domain == Domain.FREQUENCY else to_spatial(out)


def step_implicit(W: Se2Field, p: DiffusionParams, cfg: SchemeConfig, op: FDOperator | None = None) -> Se2Field:
    """``cfg.n_steps`` backward Euler steps (I - dt Q_h) w_new = w, matrix free.

    Conjugate gradients for the symmetric (enhancement) operator, BiCGSTAB
    otherwise. Raises ``NumericalError`` when the residual target is missed.
    """
    op = op if op is not None else FDOperator(W.grid, p)
    F = W if W.domain == Domain.FREQUENCY else to_frequency(W)
    shape = F.data.shape
    n = F.data.size
    A = spla.LinearOperator((n, n), matvec=lambda v: v - cfg.dt * op.apply_hat(v.reshape(shape)).ravel(), dtype=complex)
    solver = spla.cg if op.symmetric else spla.bicgstab
    X = F.data.ravel().copy()
    for _ in range(cfg.n_steps):
        nb = np.linalg.norm(X)
        if nb == 0:
            break
        Y, info = solver(A, X, x0=X, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_max_iter)
        res = np.linalg.norm(A.matvec(Y) - X)
        if info != 0 or res > 10 * cfg.cg_tol * nb:
            raise NumericalError(f"implicit step did not converge (info={info}, residual {res / nb:.2e})")
        X = Y
    out = Se2Field(X.reshape(shape), W.grid, Domain.FREQUENCY)
    return out if W.domain == Domain.FREQUENCY else to_spatial(out)


def time_weights(p: DiffusionParams, times: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid weights of the Gamma(k, alpha) travelling-time density on ``times``."""
    k = p.k
    dens = p.alpha ** k * times ** (k - 1) * np.exp(-p.alpha * times) / math.factorial(k - 1)
    w = dens * dt
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def t_max_for(p: DiffusionParams, tol: float = 1e-6) -> float:
    """Time after which the exponential weight has dropped below ``tol``."""
    return -math.log(tol) / p.alpha


def _macro_propagator(op_diff: FDOperator, cfg: SchemeConfig, span: float) -> np.ndarray | None:
    """Diffusion propagator over ``span`` as one theta matrix (only when no spatial diffusion)."""
    n_sub = max(1, int(math.ceil(span / cfg.dt - 1e-12)))
    dt = span / n_sub
    n = op_diff.grid.thetas.size
    if cfg.scheme is Scheme.EXPLICIT:
        S = np.eye(n) + dt * op_diff.theta_matrix()
    else:
        S = np.linalg.inv(np.eye(n) - dt * op_diff.theta_matrix())
    return np.linalg.matrix_power(S, n_sub)


def _one_step_matrices(op: FDOperator, cfg: SchemeConfig, idx: np.ndarray, case: Case) -> tuple[np.ndarray, float]:
    """Per-frequency one-step propagators G_omega and the step length."""
    n = op.grid.thetas.size
    if case is Case.COMPLETION:
        # half diffusion, one convection step of one pixel, half diffusion
        h = op.grid.dx
        span = h / abs(op.p.a1)
        Dh = _macro_propagator(FDOperator(op.grid, op.p, op.stencil, "diffusion"), cfg, span / 2)
        shift = op.stencil.xi_minus if op.p.a1 > 0 else op.stencil.xi_plus
        c = shift.reshape(n, -1)[:, idx].T
        G = Dh[None] @ (c[:, :, None] * Dh[None])
        return G, span
    L = op.omega_matrices(idx)
    eye = np.eye(n)[None]
    if cfg.scheme is Scheme.EXPLICIT:
        return eye + cfg.dt * L, cfg.dt
    return np.linalg.inv(eye - cfg.dt * L), cfg.dt


def resolvent_quadrature(
    grid: GridSpec,
    p: DiffusionParams,
    cfg: SchemeConfig,
    case=Case.ENHANCEMENT,
    T_max: float | None = None,
    closed_form: bool = True,
    chunk: int = 2048,
    stencil: Stencil | None = None,
) -> Se2Field:
    """Sum_s alpha exp(-alpha t_s) W(t_s) dt over the scheme's time levels (trapezoid).

    ``W(t_s)`` is the scheme applied s times to a Gaussian blurred spike. With
    ``closed_form`` and k = 1 the geometric series is summed to infinity per
    spatial frequency (the tail beyond ``T_max`` is below 1e-6 anyway);
    otherwise the states are stepped up to ``T_max`` and accumulated, which
    also covers Gamma weights with k > 1.
    """
    case = Case.parse(case)
    check_case(p, case)
    op = FDOperator(grid, p, stencil)
    if case is Case.ENHANCEMENT and cfg.scheme is Scheme.EXPLICIT:
        bound = spectral_step_limit(op)
        if cfg.dt > bound:
            raise Se2Error(f"dt = {cfg.dt} exceeds the explicit stability limit {bound:.4f}")
    F0 = initial_spike(grid, p.s).data
    n = grid.thetas.size
    flat0 = F0.reshape(n, -1)
    T_max = t_max_for(p) if T_max is None else T_max
    out = np.zeros_like(flat0)
    n_omega = flat0.shape[1]
    for start in range(0, n_omega, chunk):
        idx = np.arange(start, min(start + chunk, n_omega))
        G, step = _one_step_matrices(op, cfg, idx, case)
        b = flat0[:, idx].T[:, :, None]
        if closed_form and p.k == 1:
            gam = math.exp(-p.alpha * step)
            A = np.eye(n)[None] - gam * G
            x = np.linalg.solve(A, b)
            # trapezoid: half weight at t = 0
            out[:, idx] = (p.alpha * step * (x - 0.5 * b))[:, :, 0].T
        else:
            n_steps = int(math.ceil(T_max / step))
            w = time_weights(p, np.arange(n_steps + 1) * step, step)
            acc = w[0] * b
            x = b
            for s_ in range(1, n_steps + 1):
                x = G @ x
                acc = acc + w[s_] * x
            out[:, idx] = acc[:, :, 0].T
    res = Se2Field(out.reshape(F0.shape), grid, Domain.FREQUENCY)
    res.meta.update(method=f"fd-{cfg.scheme.value}", dt=cfg.dt, case=case.value)
    return res


def evolve_completion(W: Se2Field, p: DiffusionParams, cfg: SchemeConfig) -> Se2Field:
    """``cfg.n_steps`` splitting steps: half diffusion, shift by one pixel along e_xi, half diffusion.

    Each splitting step advances time by dx / |a1|.
    """
    if p.a1 == 0:
        raise Se2Error("completion needs a1 != 0")
    grid = W.grid
    op = FDOperator(grid, p)
    n = grid.thetas.size
    F = W if W.domain == Domain.FREQUENCY else to_frequency(W)
    X = F.data.reshape(n, -1)
    span = grid.dx / abs(p.a1)
    op_diff = FDOperator(grid, p, op.stencil, "diffusion")
    has_spatial = p.D11 != 0 or p.D22 != 0
    shift = (op.stencil.xi_minus if p.a1 > 0 else op.stencil.xi_plus).reshape(n, -1)
    if not has_spatial:
        Dh = _macro_propagator(op_diff, cfg, span / 2)
    for _ in range(cfg.n_steps):
        if has_spatial:
            half = SchemeConfig(dt=span / 2 / max(1, math.ceil(span / 2 / cfg.dt)), n_steps=max(1, math.ceil(span / 2 / cfg.dt)), scheme=cfg.scheme)
            X = step_explicit(Se2Field(X.reshape(F.data.shape), grid, Domain.FREQUENCY), p, half, op_diff).data.reshape(n, -1)
            X = shift * X
            X = step_explicit(Se2Field(X.reshape(F.data.shape), grid, Domain.FREQUENCY), p, half, op_diff).data.reshape(n, -1)
        else:
            X = Dh @ (shift * (Dh @ X))
        _check_finite(X)
    out = Se2Field(X.reshape(F.data.shape), grid, Domain.FREQUENCY)
    return out if W.domain == Domain.FREQUENCY else to_spatial(out)


def kernel_fd(grid: GridSpec, p: DiffusionParams, case=Case.ENHANCEMENT, scheme: str = "explicit", dt: float | None = None, **kw) -> Se2Field:
    """Spatial DC-normalised resolvent kernel from the finite difference scheme."""
    scheme = Scheme(scheme)
    if dt is None:
        dt = 0.005 if scheme is Scheme.EXPLICIT else 0.05
    cfg = SchemeConfig(dt=dt, scheme=scheme)
    F = resolvent_quadrature(grid, p, cfg, case, **kw)
    sp = to_spatial(F)
    out = dc_normalize(Se2Field(sp.real(1e-8) + 0j, grid, Domain.SPATIAL))
    out.meta.update(F.meta)
    return out
