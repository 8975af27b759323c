"""Monte Carlo sampling of SE(2) random walks and kernel histograms.

One Euler-Maruyama step reads

    x     += dt (a1 cos - a2 sin) + sqrt(dt) (s1 e1 cos - s2 e2 sin)
    y     += dt (a1 sin + a2 cos) + sqrt(dt) (s1 e1 sin + s2 e2 cos)
    theta += dt a3 + sqrt(dt) s3 e3

with ``s_i = sqrt(2 D_ii)`` and standard normal ``e_i``. Paths are simulated in
chunks of fixed size; chunk ``c`` draws from a PCG64 stream spawned from
``SeedSequence(seed, spawn_key=(c,))``, so path ``i`` is reproducible from the
seed and its index alone, and results do not depend on the number of worker
threads. Chunks run in threads (the compiled kernels release the GIL) and their
histograms are merged in chunk order.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import (
    Case,
    DiffusionParams,
    Domain,
    GridSpec,
    GroupElement,
    Se2Error,
    Se2Field,
    dc_normalize,
    to_frequency,
    to_spatial,
)


LAW_FIXED, LAW_EXPONENTIAL, LAW_GAMMA = 0, 1, 2


@dataclass(frozen=True)
class TimeLaw:
    """Travelling time distribution: fixed, exponential with rate alpha, or Gamma(k, rate)."""

    kind: str
    rate: float = 0.0
    k: int = 1
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "exponential", "gamma"):
            raise Se2Error(f"unknown time law {self.kind!r}")
        if self.kind == "fixed" and self.t < 0:
            raise Se2Error("fixed time must be >= 0")
        if self.kind != "fixed" and self.rate <= 0:
            raise Se2Error("the rate of a random time law must be positive")
        if int(self.k) != self.k or self.k < 1:
            raise Se2Error("Gamma order k must be an integer >= 1")

    @classmethod
    def fixed(cls, t: float) -> TimeLaw:
        return cls("fixed", t=float(t))

    @classmethod
    def exponential(cls, rate: float) -> TimeLaw:
        return cls("exponential", rate=float(rate))

    @classmethod
    def gamma(cls, k: int, rate: float) -> TimeLaw:
        return cls("gamma", rate=float(rate), k=int(k))

    @classmethod
    def parse(cls, text: str, alpha: float) -> TimeLaw:
        """``exp``, ``gamma:k`` or ``fixed:t`` as used on the command line."""
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        if name in ("exp", "exponential"):
            return cls.exponential(alpha)
        if name == "gamma":
            return cls.gamma(int(arg or 1), alpha)
        if name == "fixed":
            if not arg:
                raise Se2Error("fixed time law needs a time, e.g. fixed:5")
            return cls.fixed(float(arg))
        raise Se2Error(f"unknown time law {text!r}")

    @property
    def code(self) -> int:
        return {"fixed": LAW_FIXED, "exponential": LAW_EXPONENTIAL, "gamma": LAW_GAMMA}[self.kind]

    @property
    def mean(self) -> float:
        return self.t if self.kind == "fixed" else self.k / self.rate

    @property
    def variance(self) -> float:
        return 0.0 if self.kind == "fixed" else self.k / self.rate ** 2


@dataclass(frozen=True)
class WalkConfig:
    dt: float = 0.02
    n_paths: int = 100_000
    time_law: TimeLaw = field(default_factory=lambda: TimeLaw.exponential(0.05))
    index_set: tuple[int, ...] | None = None
    seed: int = 0
    chunk_size: int = 4096
    tail_tol: float = 1e-4
    record: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise Se2Error("dt must be positive")
        if self.n_paths < 1:
            raise Se2Error("n_paths must be >= 1")
        if self.index_set is not None and tuple(sorted(self.index_set)) not in ((1, 3), (1, 2, 3)):
            raise Se2Error("index set must be {1,3} or {1,2,3}")
        if not 0 <= self.seed < 2 ** 64:
            raise Se2Error("seed must fit in 64 bits")
        if self.chunk_size < 1:
            raise Se2Error("chunk_size must be >= 1")

    def sigmas(self, p: DiffusionParams) -> tuple[float, float, float]:
        idx = self.index_set or ((1, 2, 3) if p.D22 > 0 else (1, 3))
        s = [math.sqrt(2 * d) for d in p.D]
        if 2 not in idx:
            s[1] = 0.0
        return s[0], s[1], s[2]


@dataclass
class PathBatch:
    """End states (and optionally trajectories) of a batch of paths."""

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    T: np.ndarray
    stream: np.ndarray
    trajectories: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.size


def threads() -> int:
    """Worker count from ``SE2LAB_THREADS`` (default 1)."""
    v = os.environ.get("SE2LAB_THREADS")
    return max(1, int(v)) if v else 1


def chunk_generator(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk,))))


# compiled kernels


@njit(inline="always")
def _rotate(c, s, d):
    """(cos, sin) of theta + d from those of theta; short Taylor series for small d."""
    if abs(d) > 0.3:
        cd, sd = math.cos(d), math.sin(d)
    else:
        d2 = d * d
        sd = d * (1.0 - d2 / 6.0 * (1.0 - d2 / 20.0 * (1.0 - d2 / 42.0)))
        cd = 1.0 - d2 / 2.0 * (1.0 - d2 / 12.0 * (1.0 - d2 / 30.0 * (1.0 - d2 / 56.0)))
    return c * cd - s * sd, s * cd + c * sd


@njit(inline="always")
def _step(gen, x, y, th, c, s, h, sq, a1, a2, a3, s1, s2, s3):
    dxi = h * a1
    if s1 != 0.0:
        dxi += sq * s1 * gen.standard_normal()
    deta = h * a2
    if s2 != 0.0:
        deta += sq * s2 * gen.standard_normal()
    dth = h * a3
    if s3 != 0.0:
        dth += sq * s3 * gen.standard_normal()
    x += dxi * c - deta * s
    y += dxi * s + deta * c
    c, s = _rotate(c, s, dth)
    return x, y, th + dth, c, s


@njit(inline="always")
def _travel_time(gen, law, rate, k, t_fixed):
    if law == LAW_FIXED:
        return t_fixed
    T = 0.0
    for _ in range(k):
        T += gen.standard_exponential()
    return T / rate


@njit(inline="always")
def _voxel(x, y, th, inv_dx, inv_dy, inv_dth, P, Q, R):
    """Flat voxel index of the nearest lattice point, or -1 outside the frame."""
    ix = int(math.floor(x * inv_dx + 0.5)) + P
    iy = int(math.floor(y * inv_dy + 0.5)) + Q
    if ix < 0 or iy < 0 or ix > 2 * P or iy > 2 * Q:
        return -1
    n = 2 * R + 1
    ir = (int(math.floor(th * inv_dth + 0.5)) + R) % n
    return (ir * (2 * P + 1) + ix) * (2 * Q + 1) + iy


@njit(nogil=True, cache=True, fastmath=True)
def _chunk_end(gen, count, x0, y0, th0, dt, law, rate, k, t_fixed, a1, a2, a3, s1, s2, s3, out):
    """End states at the sampled travelling time; out has shape (count, 4) = (x, y, theta, T)."""
    sq = math.sqrt(dt)
    for i in range(count):
        T = _travel_time(gen, law, rate, k, t_fixed)
        n = int(T / dt)
        last = T - n * dt
        x, y, th = x0, y0, th0
        c, s = math.cos(th), math.sin(th)
        for j in range(n):
            x, y, th, c, s = _step(gen, x, y, th, c, s, dt, sq, a1, a2, a3, s1, s2, s3)
            if j % 64 == 63:
                c, s = math.cos(th), math.sin(th)
        if last > 0:
            x, y, th, c, s = _step(gen, x, y, th, c, s, last, math.sqrt(last), a1, a2, a3, s1, s2, s3)
        out[i, 0], out[i, 1], out[i, 2], out[i, 3] = x, y, th, T


@njit(nogil=True, cache=True, fastmath=True)
def _chunk_trajectories(gen, count, x0, y0, th0, dt, n, a1, a2, a3, s1, s2, s3, out):
    """Fixed-time paths; out has shape (count, n + 1, 3)."""
    sq = math.sqrt(dt)
    for i in range(count):
        x, y, th = x0, y0, th0
        c, s = math.cos(th), math.sin(th)
        out[i, 0, 0], out[i, 0, 1], out[i, 0, 2] = x, y, th
        for j in range(n):
            x, y, th, c, s = _step(gen, x, y, th, c, s, dt, sq, a1, a2, a3, s1, s2, s3)
            if j % 64 == 63:
                c, s = math.cos(th), math.sin(th)
            out[i, j + 1, 0], out[i, j + 1, 1], out[i, j + 1, 2] = x, y, th


@njit(nogil=True, cache=True, fastmath=True)
def _bin_states(states, hist, inv_dx, inv_dy, inv_dth, P, Q, R):
    flat = hist.ravel()
    for i in range(states.shape[0]):
        v = _voxel(states[i, 0], states[i, 1], states[i, 2], inv_dx, inv_dy, inv_dth, P, Q, R)
        if v >= 0:
            flat[v] += 1.0


@njit(nogil=True, cache=True, fastmath=True)
def _chunk_crossing(gen, count, x0, y0, th0, dt, rate, n_steps, a1, a2, a3, s1, s2, s3,
                    hist, inv_dx, inv_dy, inv_dth, P, Q, R):
    """Bin every time level with trapezoid weights rate exp(-rate t_n) dt."""
    flat = hist.ravel()
    sq = math.sqrt(dt)
    decay = math.exp(-rate * dt)
    for i in range(count):
        x, y, th = x0, y0, th0
        c, s = math.cos(th), math.sin(th)
        v = _voxel(x, y, th, inv_dx, inv_dy, inv_dth, P, Q, R)
        if v >= 0:
            flat[v] += 0.5 * rate * dt
        w = rate * dt
        for j in range(n_steps):
            x, y, th, c, s = _step(gen, x, y, th, c, s, dt, sq, a1, a2, a3, s1, s2, s3)
            if j % 64 == 63:
                c, s = math.cos(th), math.sin(th)
            w *= decay
            v = _voxel(x, y, th, inv_dx, inv_dy, inv_dth, P, Q, R)
            if v >= 0:
                flat[v] += w


def _check_dt(cfg: WalkConfig, p: DiffusionParams) -> None:
    if math.sqrt(2 * p.D33 * cfg.dt) >= math.pi / 4:
        raise Se2Error("dt too large: angular step sqrt(2 D33 dt) must stay below pi/4")


def _drift(p: DiffusionParams, reverse: bool) -> tuple[float, float, float]:
    sgn = -1.0 if reverse else 1.0
    return sgn * p.a1, sgn * p.a2, sgn * p.a3


def _chunks(cfg: WalkConfig):
    starts = range(0, cfg.n_paths, cfg.chunk_size)
    return [(c, min(cfg.chunk_size, cfg.n_paths - s0)) for c, s0 in enumerate(starts)]


def _map_chunks(fn, chunks):
    """Apply ``fn(chunk_id, count)`` to every chunk, yielding results in chunk order."""
    n = threads()
    if n == 1:
        for c in chunks:
            yield fn(*c)
        return
    with ThreadPoolExecutor(max_workers=n) as ex:
        for w0 in range(0, len(chunks), n):
            yield from ex.map(lambda c: fn(*c), chunks[w0:w0 + n])


def sample_paths(cfg: WalkConfig, p: DiffusionParams, g0: GroupElement = GroupElement(0.0, 0.0, 0.0),
                 reverse: bool = False) -> PathBatch:
    """End states of ``cfg.n_paths`` walks started at ``g0``.

    With ``cfg.record`` and a fixed time law the full trajectories are kept,
    shape ``(n_paths, n_steps + 1, 3)``.
    """
    _check_dt(cfg, p)
    law = cfg.time_law
    s1, s2, s3 = cfg.sigmas(p)
    a1, a2, a3 = _drift(p, reverse)
    chunks = _chunks(cfg)
    if cfg.record:
        if law.kind != "fixed":
            raise Se2Error("trajectories are recorded for the fixed time law only")
        n = int(round(law.t / cfg.dt))

        def run(c, count):
            out = np.empty((count, n + 1, 3))
            _chunk_trajectories(chunk_generator(cfg.seed, c), count, g0.x, g0.y, g0.theta, cfg.dt, n,
                                a1, a2, a3, s1, s2, s3, out)
            return out

        traj = np.concatenate(list(_map_chunks(run, chunks)))
        end = traj[:, -1]
        return PathBatch(end[:, 0].copy(), end[:, 1].copy(), end[:, 2].copy(), np.full(cfg.n_paths, n * cfg.dt),
                         np.arange(cfg.n_paths) // cfg.chunk_size, traj)

    def run(c, count):
        out = np.empty((count, 4))
        _chunk_end(chunk_generator(cfg.seed, c), count, g0.x, g0.y, g0.theta, cfg.dt, law.code, law.rate, law.k,
                   law.t, a1, a2, a3, s1, s2, s3, out)
        return out

    out = np.concatenate(list(_map_chunks(run, chunks)))
    return PathBatch(out[:, 0], out[:, 1], out[:, 2], out[:, 3], np.arange(cfg.n_paths) // cfg.chunk_size)


def kernel_histogram(cfg: WalkConfig, p: DiffusionParams, grid: GridSpec,
                     g0: GroupElement = GroupElement(0.0, 0.0, 0.0), reverse: bool = False,
                     estimator: str | None = None) -> Se2Field:
    """Normalised voxel histogram of the walk started at ``g0``.

    ``estimator`` is ``"crossing"`` (every time level of every path is binned
    with weight ``rate exp(-rate t_n) dt``, exponential law only) or ``"end"``
    (end states at the sampled travelling time). The default is crossing for the
    exponential law and end states otherwise. ``reverse`` flips the drift, which
    gives the adjoint process.
    """
    _check_dt(cfg, p)
    law = cfg.time_law
    if estimator is None:
        estimator = "crossing" if law.kind == "exponential" else "end"
    if estimator not in ("crossing", "end"):
        raise Se2Error(f"unknown estimator {estimator!r}")
    if estimator == "crossing" and law.kind != "exponential":
        raise Se2Error("path crossing accumulation needs the exponential time law")
    s1, s2, s3 = cfg.sigmas(p)
    a1, a2, a3 = _drift(p, reverse)
    geo = (1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dtheta, grid.P, grid.Q, grid.R)

    if estimator == "crossing":
        n_steps = int(math.ceil(-math.log(cfg.tail_tol) / (law.rate * cfg.dt)))

        def run(c, count):
            h = np.zeros(grid.shape)
            _chunk_crossing(chunk_generator(cfg.seed, c), count, g0.x, g0.y, g0.theta, cfg.dt, law.rate, n_steps,
                            a1, a2, a3, s1, s2, s3, h, *geo)
            return h
    else:

        def run(c, count):
            out = np.empty((count, 4))
            _chunk_end(chunk_generator(cfg.seed, c), count, g0.x, g0.y, g0.theta, cfg.dt, law.code, law.rate,
                       law.k, law.t, a1, a2, a3, s1, s2, s3, out)
            h = np.zeros(grid.shape)
            _bin_states(out, h, *geo)
            return h

    hist = np.zeros(grid.shape)
    for h in _map_chunks(run, _chunks(cfg)):
        hist += h
    if hist.sum() <= 0:
        raise Se2Error("empty histogram: no path ended inside the grid")
    f = Se2Field(hist / (cfg.n_paths * grid.voxel()), grid, Domain.SPATIAL)
    f.meta.update(method="mc", paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed, law=law.kind, estimator=estimator,
                  captured=float(hist.sum() / cfg.n_paths))
    return f


def histogram_from_paths(batch: PathBatch, grid: GridSpec) -> Se2Field:
    """Normalised end-state histogram of an existing batch."""
    h = np.zeros(grid.shape)
    states = np.stack([batch.x, batch.y, batch.theta, batch.T], axis=1)
    _bin_states(states, h, 1.0 / grid.dx, 1.0 / grid.dy, 1.0 / grid.dtheta, grid.P, grid.Q, grid.R)
    return Se2Field(h / (len(batch) * grid.voxel()), grid, Domain.SPATIAL)


def gaussian_blur(U: Se2Field, s: float) -> Se2Field:
    """Multiply every orientation slice by exp(-s |omega|^2) in the frequency domain."""
    if s == 0:
        return U.copy()
    wx, wy = U.grid.frequencies(False)
    G = np.exp(-s * (wx[:, None] ** 2 + wy[None, :] ** 2))
    F = to_frequency(U)
    F.data *= G[None]
    out = to_spatial(F)
    out.data = out.data.real + 0j
    out.meta = dict(U.meta)
    return out


def kernel_mc(grid: GridSpec, p: DiffusionParams, case=Case.ENHANCEMENT, paths: int = 1_000_000, dt: float = 0.02,
              seed: int = 0, time_law: str | TimeLaw = "exp", estimator: str | None = None, **kw) -> Se2Field:
    """DC-normalised Monte Carlo kernel with the Gaussian blur exp(-s rho^2) applied to the histogram."""
    Case.parse(case)
    law = time_law if isinstance(time_law, TimeLaw) else TimeLaw.parse(time_law, p.alpha)
    cfg = WalkConfig(dt=dt, n_paths=int(paths), time_law=law, seed=int(seed), **kw)
    H = kernel_histogram(cfg, p, grid, estimator=estimator)
    out = dc_normalize(gaussian_blur(H, p.s))
    out.meta.update(H.meta)
    return out


def completion_field(p: DiffusionParams, g0: GroupElement, g1: GroupElement, k: int, grid: GridSpec,
                     rate: float | None = None, paths: int = 1_000_000, dt: float = 0.02, seed: int = 0,
                     smooth: float = 0.0) -> Se2Field:
    """Product of the forward field from ``g0`` and the adjoint field from ``g1``.

    Both fields are Gamma(k, rate) end-state histograms; ``rate`` defaults to
    ``alpha k``. The adjoint walk runs with reversed drift. ``smooth`` is an
    optional Gaussian scale s applied to both factors before multiplying.
    """
    rate = p.alpha * k if rate is None else rate
    law = TimeLaw.gamma(k, rate)
    fwd = kernel_histogram(WalkConfig(dt=dt, n_paths=paths, time_law=law, seed=seed), p, grid, g0)
    bwd = kernel_histogram(WalkConfig(dt=dt, n_paths=paths, time_law=law, seed=seed + 1), p, grid, g1, reverse=True)
    if smooth:
        fwd, bwd = gaussian_blur(fwd, smooth), gaussian_blur(bwd, smooth)
    out = Se2Field(fwd.data.real * bwd.data.real, grid, Domain.SPATIAL)
    out.meta.update(method="completion-field", k=k, rate=rate, paths=paths)
    return out


def _grid_norms(grid: GridSpec, p: DiffusionParams) -> np.ndarray:
    """Homogeneous norm of every lattice point relative to the identity, in pixels."""
    if p.D11 <= 0 or p.D33 <= 0:
        raise Se2Error("the homogeneous norm needs D11 > 0 and D33 > 0")
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    out = np.empty(grid.shape)
    for r, th in enumerate(grid.thetas):
        if th == 0:
            c1, c2, c3 = X, Y, 0.0
        else:
            xi = X * math.cos(th) + Y * math.sin(th)
            eta = -X * math.sin(th) + Y * math.cos(th)
            den = 4.0 * math.sin(th / 2.0) ** 2
            c1, c2, c3 = th * (Y - eta) / den, th * (xi - X) / den, th
        inner = c1 ** 2 / p.D11 + c3 ** 2 / p.D33
        out[r] = (inner ** 2 + c2 ** 2 / (p.D11 * p.D33)) ** 0.25
    return out / grid.dx


def shell_profile(field: Se2Field, p: DiffusionParams, r_min: float = 2.0, r_max: float = 10.0, n_shells: int = 12):
    """Median field value on log-spaced shells of the homogeneous norm; returns (radii, values, counts)."""
    U = field if field.domain is Domain.SPATIAL else to_spatial(field)
    v = U.data.real
    r = _grid_norms(U.grid, p)
    edges = np.geomspace(r_min, r_max, n_shells + 1)
    radii, vals, counts = [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi)
        if sel.sum() == 0:
            continue
        radii.append(math.sqrt(lo * hi))
        vals.append(float(np.median(v[sel])))
        counts.append(int(sel.sum()))
    return np.array(radii), np.array(vals), np.array(counts)


def singularity_order(field: Se2Field, p: DiffusionParams, r_min: float = 2.0, r_max: float = 10.0) -> float:
    """Least-squares slope of log(value) against log|g| over shells in [r_min, r_max] pixels.

    ``|g|`` is the homogeneous norm (square root of the weighted modulus).
    """
    radii, vals, counts = shell_profile(field, p, r_min, r_max)
    ok = vals > 0
    if ok.sum() < 3:
        raise Se2Error("insufficient shell samples for a power fit")
    return float(np.polyfit(np.log(radii[ok]), np.log(vals[ok]), 1)[0])


def inner_shell_ratio(field: Se2Field, p: DiffusionParams, r_max: float = 2.0) -> float:
    """Max over median of the field on the innermost shell |g| < r_max (pixels)."""
    U = field if field.domain is Domain.SPATIAL else to_spatial(field)
    sel = _grid_norms(U.grid, p) < r_max
    v = U.data.real[sel]
    med = float(np.median(v))
    if med <= 0:
        raise Se2Error("innermost shell has non-positive median")
    return float(v.max() / med)
