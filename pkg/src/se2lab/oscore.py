"""Invertible orientation scores with a tight frame of angular wavelets.

The wavelet is defined in the Fourier domain as ``psi_hat(omega) = A(phi) W(|omega|)``.
The angular window ``A`` is the square root of a pi-periodic sum of cubic
B-splines, so ``sum_m |psi_hat(R_m^-1 omega)|^2 dtheta 2 pi = 1`` wherever the
radial window ``W`` equals one. ``W`` is one up to ``0.9 varrho`` and tapers to
zero at ``varrho``. Scores use the unitary Fourier convention, so the score norm
with measure ``dx dtheta / (2 pi)`` equals the image norm on the disk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import interpolate

from .core import Domain, GridSpec, Se2Error, Se2Field, se2_convolve, to_spatial

M_PSI_FLOOR = 1e-8


def _cubic_bspline(x: np.ndarray) -> np.ndarray:
    return interpolate.BSpline.basis_element(np.arange(-2.0, 3.0), extrapolate=False)(x)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """C^2 step from 1 (t <= 0) to 0 (t >= 1) with a squared partner summing to one."""
    t = np.clip(t, 0.0, 1.0)
    s = t * t * t * (10 - 15 * t + 6 * t * t)
    return np.cos(0.5 * np.pi * s)


@dataclass
class WaveletSpec:
    n_orientations: int
    varrho: float
    shape: tuple[int, int]
    padded: tuple[int, int]
    psi_hat: np.ndarray
    M_psi: np.ndarray

    @property
    def grid(self) -> GridSpec:
        return GridSpec(P=self.padded[0] // 2, Q=self.padded[1] // 2, R=self.n_orientations // 2)

    @property
    def dtheta(self) -> float:
        return 2 * math.pi / self.n_orientations

    @property
    def thetas(self) -> np.ndarray:
        return self.grid.thetas

    def disk(self, fraction: float = 1.0) -> np.ndarray:
        """Mask of frequencies with |omega| < fraction * varrho * pi (centered layout)."""
        return _radius(self.padded) < fraction * self.varrho * math.pi


def _radius(padded: tuple[int, int]) -> np.ndarray:
    wx = 2 * np.pi * np.arange(-(padded[0] // 2), padded[0] // 2 + 1) / padded[0]
    wy = 2 * np.pi * np.arange(-(padded[1] // 2), padded[1] // 2 + 1) / padded[1]
    return np.hypot(wx[:, None], wy[None, :])


def _angle(padded: tuple[int, int]) -> np.ndarray:
    wx = np.arange(-(padded[0] // 2), padded[0] // 2 + 1) / padded[0]
    wy = np.arange(-(padded[1] // 2), padded[1] // 2 + 1) / padded[1]
    return np.arctan2(wy[None, :] + 0 * wx[:, None], wx[:, None] + 0 * wy[None, :])


def build_wavelets(n_orientations: int, varrho: float, shape: tuple[int, int]) -> WaveletSpec:
    """Filter bank for images of ``shape``; the orientation count is rounded down to odd.

    ``varrho`` is the disk radius as a fraction of the Nyquist frequency.
    """
    if n_orientations < 4:
        raise Se2Error("need at least 4 orientations for overlapping angular windows")
    if not 0 < varrho <= 1:
        raise Se2Error("varrho must lie in (0, 1]")
    n_o = n_orientations if n_orientations % 2 else n_orientations - 1
    padded = tuple(n if n % 2 else n + 1 for n in shape)
    dth = 2 * math.pi / n_o
    rho = _radius(padded)
    phi = _angle(padded)
    radial = _smoothstep((rho / (varrho * math.pi) - 0.9) / 0.1)
    grid = GridSpec(P=padded[0] // 2, Q=padded[1] // 2, R=n_o // 2)
    psi = np.empty((n_o,) + padded)
    # sum over theta_m + j pi covers a lattice of spacing dth / 2, where cubic B-splines sum to 2
    c = n_o / (8 * math.pi ** 2)
    for m, th in enumerate(grid.thetas):
        # the filter responds to frequencies normal to the orientation
        d = np.mod(phi - th, math.pi) - math.pi / 2
        acc = np.zeros_like(phi)
        for j in (-1, 0, 1):
            b = _cubic_bspline((d + j * math.pi) / dth)
            acc += np.nan_to_num(b)
        psi[m] = np.sqrt(c * acc) * radial
    centre = (padded[0] // 2, padded[1] // 2)
    psi[(slice(None),) + centre] = 1.0 / (2 * math.pi)
    M = 2 * math.pi * dth * (psi ** 2).sum(axis=0)
    return WaveletSpec(n_o, float(varrho), tuple(shape), padded, psi.astype(complex), M)


def _pad(f: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    f = np.asarray(f)
    if f.shape != spec.shape:
        raise Se2Error(f"image shape {f.shape} does not match the wavelet spec {spec.shape}")
    out = np.zeros(spec.padded, dtype=np.result_type(f.dtype, float))
    out[: f.shape[0], : f.shape[1]] = f
    return out


def _fft(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a, axes=(-2, -1))), axes=(-2, -1))


def _ifft(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(a, axes=(-2, -1))), axes=(-2, -1))


def transform(f: np.ndarray, spec: WaveletSpec) -> Se2Field:
    """Orientation score; slice m is the correlation of f with the wavelet rotated by theta_m."""
    F = _fft(_pad(f, spec))
    U = _ifft(2 * math.pi * np.conj(spec.psi_hat) * F[None])
    if np.isrealobj(f):
        U = U.real + 0j
    out = Se2Field(U, spec.grid, Domain.SPATIAL)
    out.meta.update(kind="orientation-score", n_orientations=spec.n_orientations)
    return out


def reconstruct(U: Se2Field, spec: WaveletSpec, real: bool = True) -> np.ndarray:
    """Adjoint integral over orientations divided by M_psi, cropped to the image shape."""
    if U.data.shape != (spec.n_orientations,) + spec.padded:
        raise Se2Error("score does not match the wavelet spec")
    if np.any(spec.M_psi[spec.disk(0.9)] < M_PSI_FLOOR):
        raise Se2Error("M_psi too small for a stable reconstruction")
    FU = _fft(U.data)
    acc = spec.dtheta * (spec.psi_hat * FU).sum(axis=0)
    acc = np.where(spec.M_psi > M_PSI_FLOOR, acc / np.where(spec.M_psi > M_PSI_FLOOR, spec.M_psi, 1.0), 0.0)
    f = _ifft(acc)[: spec.shape[0], : spec.shape[1]]
    return f.real if real else f


def score_norm(U: Se2Field) -> float:
    """l2 norm with measure dx dy dtheta / (2 pi) on unit pixels."""
    return float(np.sqrt((np.abs(U.data) ** 2).sum() * U.grid.dtheta / (2 * math.pi)))


def disk_limited(f: np.ndarray, spec: WaveletSpec, fraction: float = 0.9) -> np.ndarray:
    """Projection of f onto frequencies inside ``fraction * varrho``, on the padded frame."""
    F = _fft(_pad(f, spec)) * spec.disk(fraction)
    return _ifft(F).real if np.isrealobj(f) else _ifft(F)


def embed_kernel(K: Se2Field, grid: GridSpec) -> Se2Field:
    """Center-crop or zero-pad a spatial kernel onto ``grid`` (same orientation count)."""
    if K.domain is not Domain.SPATIAL:
        K = to_spatial(K)
    if K.grid.R != grid.R:
        raise Se2Error(f"kernel has {2 * K.grid.R + 1} orientations, the score has {2 * grid.R + 1}")
    out = np.zeros(grid.shape, complex)
    p = min(K.grid.P, grid.P)
    q = min(K.grid.Q, grid.Q)
    out[:, grid.P - p: grid.P + p + 1, grid.Q - q: grid.Q + q + 1] = K.data[
        :, K.grid.P - p: K.grid.P + p + 1, K.grid.Q - q: K.grid.Q + q + 1
    ]
    return Se2Field(out, grid, Domain.SPATIAL, dict(K.meta))


def enhance(f: np.ndarray, spec: WaveletSpec, kernel: Se2Field, boundary: str = "zero") -> np.ndarray:
    """Transform, SE(2)-convolve the score with ``kernel``, reconstruct."""
    U = transform(f, spec)
    K = embed_kernel(kernel, U.grid)
    V = se2_convolve(K, U, boundary=boundary)
    if np.isrealobj(f):
        V.data = V.data.real + 0j
    return reconstruct(V, spec)


# image I/O


def read_image(path) -> np.ndarray:
    """8/16-bit binary or ASCII PGM, or a CSV matrix (by extension)."""
    path = str(path)
    if path.lower().endswith(".csv"):
        return np.loadtxt(path, delimiter=",", ndmin=2)
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        dtype = ">u2" if maxval > 255 else "u1"
        data = np.frombuffer(raw[pos + 1:], dtype=dtype, count=w * h)
    elif magic == b"P2":
        data = np.array(raw[pos:].split()[: w * h], dtype=int)
    else:
        raise Se2Error(f"not a PGM file: {path}")
    return data.reshape(h, w).astype(float)


def write_image(path, img: np.ndarray, bits: int = 8) -> None:
    """Write a PGM (scaled to the full range) or a CSV matrix (raw values)."""
    path = str(path)
    img = np.asarray(img, float)
    if path.lower().endswith(".csv"):
        np.savetxt(path, img, delimiter=",")
        return
    if bits not in (8, 16):
        raise Se2Error("PGM depth must be 8 or 16 bits")
    maxval = 255 if bits == 8 else 65535
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    q = np.round(scaled * maxval).astype(">u2" if bits == 16 else "u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode())
        fh.write(q.tobytes())
