"""SE(2) group algebra, sampling lattices, kernel fields and their transforms."""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage


class Se2Error(ValueError):
    """Raised on invalid parameters, grids or field combinations."""


class NumericalError(RuntimeError):
    """Raised when an algorithm fails to converge or blows up."""


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    t = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    t = np.where(t <= -np.pi, t + 2 * np.pi, t)
    if np.ndim(t) == 0:
        return float(t)
    return t


@dataclass(frozen=True)
class GroupElement:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def __mul__(self, other: GroupElement) -> GroupElement:
        return group_product(self, other)

    def inverse(self) -> GroupElement:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return GroupElement(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


IDENTITY = GroupElement(0.0, 0.0, 0.0)


def group_product(g: GroupElement, h: GroupElement) -> GroupElement:
    """(x, R_theta) (x', R_theta') = (x + R_theta x', theta + theta')."""
    c, s = math.cos(g.theta), math.sin(g.theta)
    return GroupElement(g.x + c * h.x - s * h.y, g.y + s * h.x + c * h.y, g.theta + h.theta)


def log_coordinates(g: GroupElement) -> tuple[float, float, float]:
    """Coordinates (c1, c2, c3) with g = exp(c1 A1 + c2 A2 + c3 A3)."""
    x, y, th = g.x, g.y, g.theta
    if th == 0.0:
        return (x, y, 0.0)
    xi = x * math.cos(th) + y * math.sin(th)
    eta = -x * math.sin(th) + y * math.cos(th)
    # 1 - cos(th) = 2 sin^2(th/2) keeps precision for small |th|
    den = 4.0 * math.sin(th / 2.0) ** 2
    return (th * (y - eta) / den, th * (xi - x) / den, th)


def exp_coordinates(c1: float, c2: float, c3: float) -> GroupElement:
    """Group exponential of c1 A1 + c2 A2 + c3 A3 (inverse of log_coordinates)."""
    if c3 == 0.0:
        return GroupElement(c1, c2, 0.0)
    s, cth = math.sin(c3), math.cos(c3)
    x = (c1 * s - c2 * (1.0 - cth)) / c3
    y = (c1 * (1.0 - cth) + c2 * s) / c3
    return GroupElement(x, y, c3)


@dataclass(frozen=True)
class DiffusionParams:
    D11: float = 1.0
    D22: float = 0.0
    D33: float = 0.05
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0
    alpha: float = 0.05
    k: int = 1
    s: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        for name in ("D11", "D22", "D33", "alpha", "s", "t"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise Se2Error(f"{name} must be finite and >= 0, got {v}")
        if int(self.k) != self.k or self.k < 1:
            raise Se2Error(f"Gamma order k must be an integer >= 1, got {self.k}")

    @property
    def D(self) -> tuple[float, float, float]:
        return (self.D11, self.D22, self.D33)

    @property
    def a(self) -> tuple[float, float, float]:
        return (self.a1, self.a2, self.a3)

    def with_(self, **changes) -> DiffusionParams:
        return replace(self, **changes)

    @classmethod
    def enhancement(cls, D11=1.0, D33=0.05, alpha=0.05, D22=0.0, **kw) -> DiffusionParams:
        return cls(D11=D11, D22=D22, D33=D33, alpha=alpha, **kw)

    @classmethod
    def completion(cls, D33=0.08, alpha=0.05, **kw) -> DiffusionParams:
        return cls(D11=0.0, D22=0.0, D33=D33, a1=1.0, alpha=alpha, **kw)


class Case(enum.Enum):
    ENHANCEMENT = "enh"
    COMPLETION = "com"

    @classmethod
    def parse(cls, value) -> Case:
        if isinstance(value, Case):
            return value
        v = str(value).lower()
        for c in cls:
            if v in (c.value, c.name.lower()):
                return c
        raise Se2Error(f"unknown case {value!r}")


def check_case(p: DiffusionParams, case: Case, *, allow_zero_alpha: bool = False) -> None:
    """Validate the Hormander-type conditions for the supported cases."""
    case = Case.parse(case)
    if case is Case.ENHANCEMENT:
        if not (p.D11 > 0 and p.D33 > 0):
            raise Se2Error("enhancement requires D11 > 0 and D33 > 0")
        if p.a1 or p.a2 or p.a3:
            raise Se2Error("enhancement kernels have no convection (a = 0)")
    else:
        if not (p.a1 != 0 and p.D33 > 0):
            raise Se2Error("completion requires a1 != 0 and D33 > 0")
        if p.D11 or p.D22 or p.a2 or p.a3:
            raise Se2Error("completion is defined for D = (0, 0, D33), a = (a1, 0, 0)")
    if p.alpha == 0 and not allow_zero_alpha:
        raise Se2Error("resolvent kernels need alpha > 0")


def weighted_modulus(g: GroupElement, p: DiffusionParams) -> float:
    """Smooth modulus |g| = sqrt((c1^2/D11 + c3^2/D33)^2 + c2^2/(D11 D33))."""
    if p.D11 <= 0 or p.D33 <= 0:
        raise Se2Error("weighted modulus needs D11 > 0 and D33 > 0")
    c1, c2, c3 = log_coordinates(g)
    inner = c1 * c1 / p.D11 + c3 * c3 / p.D33
    return math.sqrt(inner * inner + c2 * c2 / (p.D11 * p.D33))


@dataclass(frozen=True)
class GridSpec:
    """Centered lattice with (2P+1) x (2Q+1) pixels and 2R+1 orientations.

    Spatial samples sit at integer multiples of ``dx = length_x / (2P+1)``;
    frequencies are ``2 pi p' / length_x`` and angles ``2 pi r / (2R+1)``.
    """

    P: int
    Q: int
    R: int
    oversample: int = 1
    length_x: float | None = None
    length_y: float | None = None

    def __post_init__(self):
        for name in ("P", "Q", "R", "oversample"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise Se2Error(f"{name} must be an integer >= 1, got {v}")
        if self.length_x is None:
            object.__setattr__(self, "length_x", float(2 * self.P + 1))
        if self.length_y is None:
            object.__setattr__(self, "length_y", float(2 * self.Q + 1))
        if self.length_x <= 0 or self.length_y <= 0:
            raise Se2Error("physical extent must be positive")

    @classmethod
    def from_counts(cls, Ns: int, No: int, oversample: int = 1) -> GridSpec:
        """Grid for Ns pixels per side and No orientations (rounded down to odd counts)."""
        return cls(P=Ns // 2, Q=Ns // 2, R=No // 2, oversample=oversample)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2 * self.R + 1, 2 * self.P + 1, 2 * self.Q + 1)

    @property
    def dx(self) -> float:
        return self.length_x / (2 * self.P + 1)

    @property
    def dy(self) -> float:
        return self.length_y / (2 * self.Q + 1)

    @property
    def dtheta(self) -> float:
        return 2 * np.pi / (2 * self.R + 1)

    @property
    def thetas(self) -> np.ndarray:
        return np.arange(-self.R, self.R + 1) * self.dtheta

    @property
    def xs(self) -> np.ndarray:
        return np.arange(-self.P, self.P + 1) * self.dx

    @property
    def ys(self) -> np.ndarray:
        return np.arange(-self.Q, self.Q + 1) * self.dy

    def frequencies(self, oversampled: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """1D frequency axes; the oversampled axes span [-oversample*pi/dx, ...]."""
        m = self.oversample if oversampled else 1
        px = np.arange(-m * self.P, m * self.P + 1)
        qy = np.arange(-m * self.Q, m * self.Q + 1)
        return 2 * np.pi * px / self.length_x, 2 * np.pi * qy / self.length_y

    def voxel(self) -> float:
        return self.dx * self.dy * self.dtheta


class Domain(enum.IntEnum):
    SPATIAL = 0
    FREQUENCY = 1


@dataclass
class Se2Field:
    """Complex samples indexed (r, p, q) on a GridSpec, tagged by domain."""

    data: np.ndarray
    grid: GridSpec
    domain: Domain = Domain.SPATIAL
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        self.domain = Domain(self.domain)
        if self.data.shape != self.grid.shape:
            raise Se2Error(f"data shape {self.data.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: GridSpec, domain: Domain = Domain.SPATIAL) -> Se2Field:
        return cls(np.zeros(grid.shape, dtype=complex), grid, domain)

    @classmethod
    def spike(cls, grid: GridSpec, r: int = 0, p: int = 0, q: int = 0) -> Se2Field:
        """Discrete delta of unit mass at lattice index (r, p, q) counted from the center."""
        f = cls.zeros(grid)
        f.data[r + grid.R, p + grid.P, q + grid.Q] = 1.0 / grid.voxel()
        return f

    def copy(self) -> Se2Field:
        return Se2Field(self.data.copy(), self.grid, self.domain, dict(self.meta))

    def real(self, tol: float = 1e-10) -> np.ndarray:
        """Real part, after checking the imaginary part is negligible."""
        scale = max(np.abs(self.data).max(), 1e-300)
        im = np.abs(self.data.imag).max() / scale
        if im > tol:
            raise NumericalError(f"field is not real: relative imaginary part {im:.3e}")
        return self.data.real.copy()

    def mass(self) -> complex:
        if self.domain is Domain.SPATIAL:
            return complex(self.data.sum() * self.grid.voxel())
        return complex(self.data[:, self.grid.P, self.grid.Q].sum() * self.grid.dtheta)

    def _check_compatible(self, other: Se2Field) -> None:
        if other.grid != self.grid or other.domain != self.domain:
            raise Se2Error("fields live on different grids or domains")


def _centered_fft2(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    axes = (-2, -1)
    a = np.fft.ifftshift(a, axes=axes)
    a = np.fft.ifft2(a, axes=axes) if inverse else np.fft.fft2(a, axes=axes)
    return np.fft.fftshift(a, axes=axes)


def cdft(U: Se2Field) -> Se2Field:
    """Centered DFT of every orientation slice (unnormalized forward sums)."""
    if U.domain is not Domain.SPATIAL:
        raise Se2Error("cdft expects a spatial field")
    return Se2Field(_centered_fft2(U.data), U.grid, Domain.FREQUENCY, dict(U.meta))


def cdft_inverse(F: Se2Field) -> Se2Field:
    """Inverse centered DFT, including the 1/((2P+1)(2Q+1)) factor."""
    if F.domain is not Domain.FREQUENCY:
        raise Se2Error("cdft_inverse expects a frequency field")
    return Se2Field(_centered_fft2(F.data, inverse=True), F.grid, Domain.SPATIAL, dict(F.meta))


def to_spatial(F: Se2Field) -> Se2Field:
    """Samples of the continuous inverse Fourier transform on the spatial lattice."""
    out = cdft_inverse(F)
    out.data /= F.grid.dx * F.grid.dy
    return out


def to_frequency(U: Se2Field) -> Se2Field:
    """Riemann-sum approximation of the continuous Fourier transform."""
    out = cdft(U)
    out.data *= U.grid.dx * U.grid.dy
    return out


def dc_normalize(U: Se2Field) -> Se2Field:
    """Scale so that the sum of DC components times dtheta equals one."""
    m = U.mass()
    if abs(m) < 1e-300 or not np.isfinite(m):
        raise Se2Error("cannot normalize a field with zero total mass")
    out = U.copy()
    out.data /= m
    return out


def xy_marginal(U: Se2Field) -> np.ndarray:
    if U.domain is not Domain.SPATIAL:
        raise Se2Error("xy_marginal expects a spatial field")
    return U.data.real.sum(axis=0) * U.grid.dtheta


def _rotate_slices(K: np.ndarray, angle: float, grid: GridSpec, order: int) -> np.ndarray:
    """Samples of x -> K(R_angle^{-1} x, .) on the lattice, per orientation slice."""
    turns = angle / (np.pi / 2)
    if abs(turns - round(turns)) < 1e-12 and grid.P == grid.Q and grid.dx == grid.dy:
        # R_{pi/2}^{-1}(x, y) = (y, -x): out[p, q] = K[q, -p] = rot90(K) with axes (p, q)
        return np.rot90(K, k=int(round(turns)) % 4, axes=(-2, -1)).copy()
    c, s = math.cos(angle), math.sin(angle)
    xs = grid.xs[:, None] / grid.dx
    ys = grid.ys[None, :] / grid.dy
    u = c * xs + s * ys
    v = -s * xs + c * ys
    coords = np.array([u + grid.P, v + grid.Q])
    out = np.empty_like(K)
    for r in range(K.shape[0]):
        re = ndimage.map_coordinates(K[r].real, coords, order=order, mode="constant", cval=0.0)
        im = ndimage.map_coordinates(K[r].imag, coords, order=order, mode="constant", cval=0.0)
        out[r] = re + 1j * im
    return out


def se2_convolve(K: Se2Field, U: Se2Field, boundary: str = "zero", order: int = 3) -> Se2Field:
    """SE(2) group convolution with midpoint quadrature.

    ``W(x, th) = sum K(R_{th'}^{-1}(x - x'), th - th') U(x', th') dx dy dth``.
    Rotated kernel samples come from spline interpolation of the given ``order``.
    """
    K._check_compatible(U)
    if K.domain is not Domain.SPATIAL:
        raise Se2Error("se2_convolve works on spatial fields")
    if boundary not in ("zero", "periodic"):
        raise Se2Error(f"unknown boundary {boundary!r}")
    g = K.grid
    n_o, nx, ny = g.shape
    if boundary == "zero":
        sx, sy = 2 * nx - 1, 2 * ny - 1
    else:
        sx, sy = nx, ny
    Uf = np.fft.fft2(U.data, s=(sx, sy))
    acc = np.zeros((n_o, sx, sy), dtype=complex)
    for j in range(n_o):
        if not np.any(U.data[j]):
            continue
        Kj = _rotate_slices(K.data, g.thetas[j], g, order)
        # theta - theta_j on the lattice is a cyclic shift by j - R
        Kj = np.roll(Kj, j - g.R, axis=0)
        if boundary == "zero":
            Kf = np.fft.fft2(np.fft.ifftshift(np.pad(Kj, ((0, 0), (g.P, g.P), (g.Q, g.Q))), axes=(-2, -1)))
        else:
            Kf = np.fft.fft2(np.fft.ifftshift(Kj, axes=(-2, -1)))
        acc += Kf * Uf[j]
    W = np.fft.ifft2(acc)[:, :nx, :ny] if boundary == "zero" else np.fft.ifft2(acc)
    return Se2Field(W * g.voxel(), g, Domain.SPATIAL)


def se2_convolve_direct(K: Se2Field, U: Se2Field, order: int = 3) -> Se2Field:
    """Reference O(N^6) evaluation of the zero-padded SE(2) convolution (tiny grids only)."""
    K._check_compatible(U)
    g = K.grid
    n_o, nx, ny = g.shape
    W = np.zeros(g.shape, dtype=complex)
    for j in range(n_o):
        Kj = np.roll(_rotate_slices(K.data, g.thetas[j], g, order), j - g.R, axis=0)
        for a in range(nx):
            for b in range(ny):
                u = U.data[j, a, b]
                if u == 0:
                    continue
                for i in range(nx):
                    for k in range(ny):
                        di, dk = i - a + g.P, k - b + g.Q
                        if 0 <= di < nx and 0 <= dk < ny:
                            W[:, i, k] += Kj[:, di, dk] * u
    return Se2Field(W * g.voxel(), g, Domain.SPATIAL)


def shift_rotate(U: Se2Field, g: GroupElement, order: int = 3) -> Se2Field:
    """Left action (L_g U)(h) = U(g^{-1} h) for lattice-aligned rotation angles."""
    grid = U.grid
    m = g.theta / grid.dtheta
    if abs(m - round(m)) > 1e-9:
        raise Se2Error("rotation must be a multiple of the angular step")
    rot = _rotate_slices(U.data, g.theta, grid, order)
    rot = np.roll(rot, int(round(m)), axis=0)
    shift = (g.x / grid.dx, g.y / grid.dy)
    if shift != (0.0, 0.0):
        for r in range(rot.shape[0]):
            re = ndimage.shift(rot[r].real, shift, order=order, mode="constant")
            im = ndimage.shift(rot[r].imag, shift, order=order, mode="constant")
            rot[r] = re + 1j * im
    return Se2Field(rot, grid, U.domain)


_SKF_MAGIC = b"SKF1"
_SKF_HEADER = struct.Struct("<4sIiiiidd")


def write_skf(path, U: Se2Field) -> None:
    """Write a field in the portable SKF format (little-endian, theta slowest)."""
    g = U.grid
    header = _SKF_HEADER.pack(_SKF_MAGIC, int(U.domain), g.P, g.Q, g.R, g.oversample, g.length_x, g.length_y)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(U.data, dtype="<c16").tobytes())


def read_skf(path) -> Se2Field:
    raw = Path(path).read_bytes()
    if len(raw) < _SKF_HEADER.size:
        raise Se2Error("file too short for an SKF header")
    magic, dom, P, Q, R, ov, lx, ly = _SKF_HEADER.unpack_from(raw)
    if magic != _SKF_MAGIC:
        raise Se2Error(f"bad SKF magic {magic!r}")
    if dom not in (0, 1):
        raise Se2Error(f"bad SKF domain flag {dom}")
    grid = GridSpec(P, Q, R, ov, lx, ly)
    n = int(np.prod(grid.shape))
    body = raw[_SKF_HEADER.size:]
    if len(body) != 16 * n:
        raise Se2Error(f"SKF payload has {len(body)} bytes, expected {16 * n}")
    data = np.frombuffer(body, dtype="<c16").reshape(grid.shape).astype(complex)
    return Se2Field(data, grid, Domain(dom))
