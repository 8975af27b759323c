"""Floquet-type Mathieu functions for complex parameters.

Solutions of ``y'' + (a - 2 q cos 2z) y = 0`` are written as

    me_nu(z) = exp(i nu z) * sum_k c_{2k} exp(2 i k z),

with the Floquet exponent ``nu`` found from the monodromy ``cos(pi nu) = y1(pi)``
and the coefficients from backward continued fractions of the three-term
recursion ``c_{2k+2} - D_{2k} c_{2k} + c_{2k-2} = 0``,
``D_{2k} = (a - (2k + nu)^2) / q``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

from .core import NumericalError, Se2Error

KINDS = ("me_plus", "me_minus", "ce", "se", "ce_prime", "se_prime", "me_plus_prime", "me_minus_prime")


@dataclass(frozen=True)
class MathieuParams:
    a: complex
    q: complex


@dataclass
class MathieuSolution:
    """Floquet solution with coefficients c_{2k}, k = -N..N (index k + N)."""

    nu: complex
    coeffs: np.ndarray
    N: int
    params: MathieuParams
    resonant: bool = False

    @property
    def orders(self) -> np.ndarray:
        return self.nu + 2.0 * np.arange(-self.N, self.N + 1)

    def eval(self, z, kind: str = "me_plus"):
        return evaluate(self, z, kind)

    def wronskian(self, mu: int = 1) -> complex:
        """W = G F' - F G' for F(z) = me_{-nu}(z/mu), G(z) = me_nu(z/mu); equals -(2i/mu) se'(0) ce(0)."""
        return -2j / mu * self.eval(0.0, "se_prime") * self.eval(0.0, "ce")


def _monodromy(a: np.ndarray, q: np.ndarray, rtol: float) -> np.ndarray:
    """y1(pi) for y1(0)=1, y1'(0)=0, for every (a, q) pair at once."""
    n = a.size

    def rhs(z, u):
        y = u[:n] + 1j * u[n:2 * n]
        dy = u[2 * n:3 * n] + 1j * u[3 * n:]
        d2 = -(a - 2.0 * q * np.cos(2.0 * z)) * y
        return np.concatenate([dy.real, dy.imag, d2.real, d2.imag])

    u0 = np.concatenate([np.ones(n), np.zeros(3 * n)])
    sol = solve_ivp(rhs, (0.0, np.pi), u0, method="DOP853", rtol=rtol, atol=rtol * 1e-3, dense_output=False)
    if not sol.success:
        raise NumericalError(f"monodromy integration failed: {sol.message}")
    u = sol.y[:, -1]
    return u[:n] + 1j * u[n:2 * n]


def _pick_branch(nu0: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Choose the representative of +-nu0 + 2m with Im >= 0 closest to sqrt(a)."""
    nu = np.where(nu0.imag < 0, -nu0, nu0)
    flat = np.abs(nu.imag) < 1e-14
    target = np.sqrt(a.astype(complex))
    out = nu.copy()
    for idx in np.ndindex(nu.shape):
        cands = [nu[idx]]
        if flat[idx]:
            cands.append(-nu[idx].real + 0j)
        best = None
        for c in cands:
            m = np.round((target[idx].real - c.real) / 2.0)
            for mm in (m - 1, m, m + 1):
                v = c + 2.0 * mm
                d = abs(v.real - target[idx].real)
                if best is None or d < best[0] - 1e-12:
                    best = (d, v)
        out[idx] = best[1]
    return out


def floquet_exponents(a, q, rtol: float = 1e-12, chunk: int = 256) -> np.ndarray:
    """Vectorised Floquet exponents with Im(nu) >= 0."""
    a = np.atleast_1d(np.asarray(a, dtype=complex)).ravel()
    q = np.broadcast_to(np.asarray(q, dtype=complex), a.shape).ravel()
    out = np.empty(a.shape, dtype=complex)
    small = np.abs(q) < 1e-300
    out[small] = np.sqrt(a[small])
    idx = np.flatnonzero(~small)
    for start in range(0, idx.size, chunk):
        sl = idx[start:start + chunk]
        y1 = _monodromy(a[sl], q[sl], rtol)
        out[sl] = np.arccos(y1) / np.pi
    out = _pick_branch(out, a)
    return out


def floquet_exponent(p: MathieuParams | tuple, rtol: float = 1e-12) -> complex:
    """Floquet exponent nu of the Mathieu equation, Im(nu) >= 0."""
    a, q = (p.a, p.q) if isinstance(p, MathieuParams) else p
    return complex(floquet_exponents([a], [q], rtol=rtol)[0])


def is_resonant(nu: complex, tol: float = 1e-8) -> bool:
    return abs(nu - np.round(nu.real)) < tol


def _coefficients_batch(a, q, nu, N: int, L: int) -> np.ndarray:
    """Coefficients c_{2k}, k=-N..N, for arrays of (a, q, nu); c_0 = 1 before scaling."""
    a = np.asarray(a, dtype=complex)[:, None]
    q = np.asarray(q, dtype=complex)[:, None]
    nu = np.asarray(nu, dtype=complex)[:, None]
    M = N + L

    def D(k):
        return (a - (2.0 * k + nu) ** 2) / q

    n = a.shape[0]
    # positive side: f_k = c_{k+1} / c_k via f_{k-1} = 1 / (D_k - f_k)
    f = np.zeros((n, M + 1), dtype=complex)
    f[:, M] = 1.0 / D(M + 1)[:, 0]
    for k in range(M, 0, -1):
        f[:, k - 1] = 1.0 / (D(k)[:, 0] - f[:, k])
    # negative side: g_k = c_{k-1} / c_k via g_{k+1} = 1 / (D_k - g_k)
    g = np.zeros((n, M + 1), dtype=complex)  # g[:, j] stores g_{-j}
    g[:, M] = 1.0 / D(-M - 1)[:, 0]
    for j in range(M, 0, -1):
        g[:, j - 1] = 1.0 / (D(-j)[:, 0] - g[:, j])
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))) or max(np.abs(f).max(), np.abs(g).max()) > 1e12:
        raise NumericalError("continued fraction diverged")
    c = np.zeros((n, 2 * N + 1), dtype=complex)
    c[:, N] = 1.0
    for k in range(1, N + 1):
        c[:, N + k] = f[:, k - 1] * c[:, N + k - 1]
        c[:, N - k] = g[:, k - 1] * c[:, N - k + 1]
    return c


def coefficients(p: MathieuParams, nu: complex, N: int = 32, L: int = 16, normalize: bool = True) -> np.ndarray:
    """Fourier coefficients c_{2k} (k=-N..N) of me_nu, l2-normalised with real positive c_0."""
    if N < 4 or L < 8:
        raise Se2Error("need N >= 4 and L >= 8")
    if p.q == 0:
        c = np.zeros(2 * N + 1, dtype=complex)
        c[N] = 1.0
        return c
    last = None
    for _ in range(4):
        try:
            c = _coefficients_batch([p.a], [p.q], [nu], N, L)[0]
            break
        except NumericalError as exc:
            last = exc
            L *= 2
    else:
        raise NumericalError(f"coefficient recursion failed for a={p.a}, q={p.q}: {last}")
    if normalize:
        c = c / np.linalg.norm(c)
        c = c * (abs(c[N]) / c[N]) if c[N] != 0 else c
    return c


def _decayed(c: np.ndarray, N: int, tol: float) -> np.ndarray:
    peak = np.abs(c).max(axis=-1)
    tail = np.maximum(np.abs(c[..., 0]), np.abs(c[..., -1]))
    return tail <= tol * peak


def solve_batch(a, q, N: int = 32, L: int = 16, tol: float = 1e-13, nu=None, max_N: int = 512):
    """Floquet exponents and coefficient arrays for many parameter pairs.

    Returns ``(nu, coeffs)`` with coeffs of shape (n, 2N'+1); N' is doubled until
    the outermost coefficients fall below ``tol`` relative to the largest one.
    """
    a = np.atleast_1d(np.asarray(a, dtype=complex)).ravel()
    q = np.broadcast_to(np.asarray(q, dtype=complex), a.shape).ravel().copy()
    if nu is None:
        nu = floquet_exponents(a, q)
    nu = np.asarray(nu, dtype=complex).ravel()
    zero = np.abs(q) == 0
    qq = np.where(zero, 1.0, q)
    while True:
        c = _coefficients_batch(a, qq, nu, N, L)
        c[zero] = 0.0
        c[zero, N] = 1.0
        if np.all(_decayed(c, N, tol)) or N >= max_N:
            break
        N *= 2
        L = max(L, N // 2)
    nrm = np.linalg.norm(c, axis=1, keepdims=True)
    c = c / nrm
    ph = c[:, N] / np.where(np.abs(c[:, N]) > 0, np.abs(c[:, N]), 1.0)
    c = c / np.where(ph != 0, ph, 1.0)[:, None]
    return nu, c, N


def mathieu_solution(a: complex, q: complex, N: int = 32, L: int = 16, nu: complex | None = None) -> MathieuSolution:
    """Floquet exponent plus coefficients, with truncation grown until the tail decays."""
    nus, c, N = solve_batch([a], [q], N=N, L=L, nu=None if nu is None else [nu])
    nu = complex(nus[0])
    return MathieuSolution(nu, c[0], N, MathieuParams(complex(a), complex(q)), is_resonant(nu))


def _series(c: np.ndarray, orders: np.ndarray, z: np.ndarray, deriv: int) -> np.ndarray:
    """sum_k (i w_k)^deriv c_k exp(i w_k z), with the exp(i nu z) factor split off."""
    nu = orders[len(orders) // 2]
    shifts = orders - nu
    e = np.exp(1j * np.multiply.outer(z, shifts))
    w = c * (1j * orders) ** deriv if deriv else c
    return np.exp(1j * nu * z) * (e @ w)


def evaluate(sol: MathieuSolution, z, kind: str = "me_plus", deriv: int | None = None):
    """Evaluate me_{+-nu}, ce_nu, se_nu or their first z-derivatives.

    ``deriv`` (0, 1 or 2) overrides the derivative order for the me/ce/se kinds.
    """
    if kind not in KINDS:
        raise Se2Error(f"unknown kind {kind!r}")
    z = np.asarray(z, dtype=complex)
    base = kind.replace("_prime", "")
    d = 1 if kind.endswith("_prime") else 0
    if deriv is not None:
        d = deriv
    o = sol.orders
    plus = _series(sol.coeffs, o, z, d)
    minus = (-1) ** d * _series(sol.coeffs, o, -z, d)
    if base == "me_plus":
        out = plus
    elif base == "me_minus":
        out = minus
    elif base == "ce":
        out = 0.5 * (plus + minus)
    else:
        out = (plus - minus) / 2j
    return out[()] if out.ndim == 0 else out


def _hill_matrix(q: complex, size: int, family: str) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric Hill matrix for the cosine/sine series of the four periodic families."""
    k = np.arange(size)
    if family == "ce_even":
        d = (2 * k) ** 2 + 0j
        off = np.full(size - 1, q, dtype=complex)
        off[0] *= np.sqrt(2.0)
    elif family == "ce_odd":
        d = (2 * k + 1.0) ** 2 + 0j
        d[0] += q
        off = np.full(size - 1, q, dtype=complex)
    elif family == "se_odd":
        d = (2 * k + 1.0) ** 2 + 0j
        d[0] -= q
        off = np.full(size - 1, q, dtype=complex)
    elif family == "se_even":
        d = (2 * (k + 1.0)) ** 2 + 0j
        off = np.full(size - 1, q, dtype=complex)
    else:
        raise Se2Error(f"unknown family {family!r}")
    return d, off


def _family_eigs(q: complex, size: int, family: str) -> tuple[np.ndarray, np.ndarray]:
    d, off = _hill_matrix(q, size, family)
    if np.isrealobj(q) or abs(complex(q).imag) == 0:
        w, v = linalg.eigh_tridiagonal(d.real, off.real)
        return w.astype(complex), v.astype(complex)
    A = np.diag(d) + np.diag(off, 1) + np.diag(off, -1)
    w, v = linalg.eig(A)
    order = np.argsort(w.real)
    w, v = w[order], v[:, order]
    # complex-orthogonal normalisation v^T v = 1
    v = v / np.sqrt(np.sum(v * v, axis=0))
    return w, v


def periodic_characteristic(n: int, q: complex, kind: str = "a", tol: float = 1e-14, max_size: int = 512) -> complex:
    """Characteristic value a_n(q) (kind 'a', even solutions) or b_n(q) (kind 'b', odd solutions)."""
    if n < 0 or (kind == "b" and n < 1):
        raise Se2Error("need n >= 0 (n >= 1 for b_n)")
    if kind == "a":
        family, pos = ("ce_even", n // 2) if n % 2 == 0 else ("ce_odd", n // 2)
    elif kind == "b":
        family, pos = ("se_even", n // 2 - 1) if n % 2 == 0 else ("se_odd", n // 2)
    else:
        raise Se2Error(f"unknown kind {kind!r}")
    size = max(16, pos + 16)
    prev = None
    while size <= max_size:
        w, v = _family_eigs(q, size, family)
        tail = abs(v[-1, pos]) / np.abs(v[:, pos]).max()
        if tail < tol and (prev is None or abs(w[pos] - prev) <= 1e-13 * max(1.0, abs(w[pos]))):
            return complex(w[pos])
        prev = w[pos]
        size *= 2
    raise NumericalError(f"characteristic a_{n}({q}) did not converge at size {max_size}")


def _symmetric_eig(B: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenpairs of a complex-symmetric block plus the dual (inverse) rows."""
    if np.all(B.imag == 0):
        w, v = np.linalg.eigh(B.real)
        return w.astype(complex), v.astype(complex), v.T.astype(complex)
    w, v = linalg.eig(B, overwrite_a=True, check_finite=False)
    v = v / np.sqrt(np.sum(v * v, axis=0))
    vt = v.T
    # v^T is the inverse unless an exceptional point is close
    if np.abs(vt @ v - np.eye(len(w))).max() > 1e-10:
        vt = np.linalg.inv(v)
    return w, v, vt


def hill_eigensystem(q: complex, M: int, step: int = 1, dual: bool = False):
    """Eigenpairs of H = diag(l^2) + q (shift by +-2) on the exponential basis.

    The basis is exp(i l z) for l in ``-M..M`` with spacing ``step`` (1: all
    2 pi periodic functions; 2: only pi periodic ones). Eigenvectors are
    normalised with v^T v = 1 (complex-orthogonal), which for real q makes the
    matrix of eigenvectors orthogonal. The four blocks (l even / l odd, each
    split into cosine and sine combinations) are diagonalised separately so
    that eigenvectors never mix them.

    Returns ``(ls, eigenvalues, vectors)`` with ``vectors[:, j]`` the j-th
    eigenvector; with ``dual=True`` also the inverse of ``vectors``.
    """
    ls = np.arange(-M, M + 1, step)
    n = ls.size
    vals = np.zeros(n, dtype=complex)
    vecs = np.zeros((n, n), dtype=complex)
    duals = np.zeros((n, n), dtype=complex)
    col = 0
    r = np.sqrt(0.5)
    for parity in (0, 1):
        pos = ls[(ls > 0) & (ls % 2 == parity)]
        if pos.size == 0 and not (parity == 0 and 0 in ls):
            continue
        ip, im = np.searchsorted(ls, pos), np.searchsorted(ls, -pos)
        for sign in (1.0, -1.0):
            # orthonormal combinations (e_l + sign e_-l)/sqrt 2, l > 0, plus e_0 for cosines
            has0 = sign > 0 and parity == 0 and 0 in ls
            k = pos.astype(float) if not has0 else np.concatenate([[0.0], pos])
            m = k.size
            if m == 0:
                continue
            d = k ** 2 + 0j
            off = np.full(m - 1, complex(q))
            if has0:
                off[0] *= np.sqrt(2.0)
            if parity == 1:
                # l = 1 couples to l = -1
                d[0] += sign * q
            B = np.diag(d) + np.diag(off, 1) + np.diag(off, -1)
            w, v, vi = _symmetric_eig(B)
            vals[col:col + m] = w
            j = slice(1, None) if has0 else slice(None)
            vecs[ip, col:col + m] = r * v[j]
            vecs[im, col:col + m] = sign * r * v[j]
            duals[col:col + m, ip] = r * vi[:, j]
            duals[col:col + m, im] = sign * r * vi[:, j]
            if has0:
                i0 = np.searchsorted(ls, 0)
                vecs[i0, col:col + m] = v[0]
                duals[col:col + m, i0] = vi[:, 0]
            col += m
    order = np.argsort(vals.real, kind="stable")
    if dual:
        return ls, vals[order], vecs[:, order], duals[order]
    return ls, vals[order], vecs[:, order]
