"""Error measures, asymptotic formulas and comparison tables."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import special

from .core import (
    Case,
    DiffusionParams,
    Domain,
    GridSpec,
    GroupElement,
    Se2Error,
    Se2Field,
    to_frequency,
    weighted_modulus,
)

C_INTERVAL = (0.5, 2.0 ** 0.25)


@dataclass(frozen=True)
class ErrorReport:
    case: str
    method: str
    K: int
    domain: str
    error_pct: float


def _in_domain(U: Se2Field, domain: Domain) -> np.ndarray:
    if U.domain == domain:
        return U.data
    if domain == Domain.FREQUENCY:
        return to_frequency(U).data
    from .core import to_spatial

    return to_spatial(U).data


def relative_error(exact: Se2Field, approx: Se2Field, K: int = 1, domain: Domain | str | None = None) -> float:
    """Relative l_K error after l1 normalisation of both fields in the comparison domain.

    Returns a fraction (multiply by 100 for percent).
    """
    if K not in (1, 2):
        raise Se2Error("K must be 1 or 2")
    exact._check_compatible(approx)
    if domain is None:
        domain = exact.domain
    elif isinstance(domain, str):
        domain = Domain.FREQUENCY if domain.lower().startswith("f") else Domain.SPATIAL
    e = np.asarray(_in_domain(exact, domain)).ravel()
    a = np.asarray(_in_domain(approx, domain)).ravel()
    ne, na = np.abs(e).sum(), np.abs(a).sum()
    if ne == 0 or na == 0:
        raise Se2Error("cannot normalise a zero field")
    e, a = e / ne, a / na
    return float(np.linalg.norm(e - a, K) / np.linalg.norm(e, K))


def error_table(exact: Se2Field, approximations: Mapping[str, Se2Field], case: str = "enh") -> list[ErrorReport]:
    """All four (norm, domain) cells for every approximation."""
    out = []
    for name, U in approximations.items():
        for K in (1, 2):
            for dom in (Domain.SPATIAL, Domain.FREQUENCY):
                err = relative_error(exact, U, K, dom)
                out.append(ErrorReport(case, name, K, "spatial" if dom == Domain.SPATIAL else "fourier", 100 * err))
    return out


def write_report_csv(reports: Iterable[ErrorReport], path) -> None:
    reports = list(reports)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["case", "method", "K", "domain", "error_pct"])
        w.writeheader()
        for r in reports:
            row = asdict(r)
            row["error_pct"] = f"{r.error_pct:.4f}"
            w.writerow(row)


def read_report_csv(path) -> list[ErrorReport]:
    with open(path, newline="") as fh:
        return [
            ErrorReport(r["case"], r["method"], int(r["K"]), r["domain"], float(r["error_pct"]))
            for r in csv.DictReader(fh)
        ]


# asymptotics, all in the unit-mass normalisation (int R_hat(0, theta) dtheta = 1)


def asymptote_enhancement(rho, theta, p: DiffusionParams):
    """Resolvent along omega_xi (phi = 0) for small D33/D11.

    Freezing cos^2(phi - theta) = 1 gives the line resolvent
    ``alpha exp(-kappa |theta|) / (2 D33 kappa)`` with
    ``kappa^2 = (rho^2 D11 + alpha) / D33``.
    """
    rho, theta = np.asarray(rho, float), np.asarray(theta, float)
    kappa = np.sqrt((rho ** 2 * p.D11 + p.alpha) / p.D33)
    return p.alpha * np.exp(-kappa * np.abs(theta)) / (2 * p.D33 * kappa)


def asymptote_enhancement_fundamental(rho, theta, p: DiffusionParams):
    """First two terms of the alpha -> 0 limit: 1/(2 rho sqrt(D11 D33)) - |theta|/(2 D33)."""
    rho, theta = np.asarray(rho, float), np.asarray(theta, float)
    return 1.0 / (2 * rho * np.sqrt(p.D11 * p.D33)) - np.abs(theta) / (2 * p.D33)


def asymptote_completion(rho, theta, p: DiffusionParams):
    """Completion resolvent along omega_xi: kappa^2 = (alpha + i a1 rho) / D33.

    With ``alpha = 0`` the prefactor is taken as 1 (fundamental solution), which
    shows the pole of order 1/2 at rho = 0.
    """
    rho, theta = np.asarray(rho, float), np.asarray(theta, float)
    kappa = np.sqrt((p.alpha + 1j * p.a1 * rho) / p.D33)
    src = p.alpha if p.alpha > 0 else 1.0
    return src * np.exp(-kappa * np.abs(theta)) / (2 * p.D33 * kappa)


def homogeneous_norm(g: GroupElement, p: DiffusionParams) -> float:
    """Square root of ``weighted_modulus``; scales like a distance along e_xi."""
    return math.sqrt(weighted_modulus(g, p))


def gamma_kernel_asymptote(g: GroupElement | float, p: DiffusionParams, C: float = 1.0, k: int | None = None) -> float:
    """Small-|g| asymptote of the Gamma-time resolvent of order k.

    ``2^(1-k) / (pi D11 D33 (k-1)!) alpha^k (|g| C)^(k-2) K_{2-k}(|g| C sqrt(alpha))``
    with ``|g|`` the homogeneous norm. ``g`` may also be given directly as that norm.
    """
    k = p.k if k is None else k
    lo, hi = C_INTERVAL
    if not lo <= C <= hi:
        raise Se2Error(f"C must lie in [{lo}, {hi:.4f}]")
    if k < 1:
        raise Se2Error("k must be >= 1")
    r = float(g) if not isinstance(g, GroupElement) else homogeneous_norm(g, p)
    z = r * C * math.sqrt(p.alpha)
    pref = 2.0 ** (1 - k) / (math.pi * p.D11 * p.D33 * math.factorial(k - 1)) * p.alpha ** k
    if r == 0:
        if k >= 3:
            # (rC)^(k-2) K_{k-2}(z) -> 2^(k-3) (k-3)! alpha^(-(k-2)/2)
            return pref * 2.0 ** (k - 3) * math.factorial(k - 3) * p.alpha ** (-(k - 2) / 2)
        return math.inf
    return float(pref * (r * C) ** (k - 2) * special.kv(2 - k, z))


def radial_power_fit(r: np.ndarray, v: np.ndarray) -> float:
    """Least-squares slope of log|v| against log r."""
    r, v = np.asarray(r, float).ravel(), np.abs(np.asarray(v)).ravel()
    ok = (r > 0) & (v > 0)
    if ok.sum() < 2:
        raise Se2Error("need at least two positive samples for a power fit")
    return float(np.polyfit(np.log(r[ok]), np.log(v[ok]), 1)[0])


# comparison drivers


def build_kernel(method: str, grid: GridSpec, p: DiffusionParams, case="enh", **opts) -> Se2Field:
    """Spatial, DC-normalised kernel from any method name used on the command line."""
    case = Case.parse(case)
    if method in ("exact1", "exact2", "exact3"):
        from .exact import sample_kernel

        return sample_kernel(grid, p, case, method, **opts)
    if method == "fbt":
        from .fourier_solver import kernel_fbt_spatial

        return kernel_fbt_spatial(grid, p, case, **opts)
    if method in ("fd-explicit", "fd-implicit"):
        from . import fd_solver

        return fd_solver.kernel_fd(grid, p, case, scheme=method.split("-")[1], **opts)
    if method == "mc":
        from . import stochastic

        return stochastic.kernel_mc(grid, p, case, **opts)
    raise Se2Error(f"unknown method {method!r}")


@dataclass
class CompareConfig:
    case: str
    params: DiffusionParams
    grid: GridSpec
    methods: tuple[str, ...] = ("fbt",)
    reference: str = "exact3"
    options: Mapping[str, dict] | None = None


def compare_report(cfg: CompareConfig, builder: Callable = build_kernel) -> list[ErrorReport]:
    opts = dict(cfg.options or {})
    ref = builder(cfg.reference, cfg.grid, cfg.params, cfg.case, **opts.get(cfg.reference, {}))
    approx = {m: builder(m, cfg.grid, cfg.params, cfg.case, **opts.get(m, {})) for m in cfg.methods}
    return error_table(ref, approx, Case.parse(cfg.case).value)


def sigma_sweep(cfg: CompareConfig, sigmas: Iterable[float], builder: Callable = build_kernel) -> list[tuple[float, ErrorReport]]:
    """Error table for each spatial blur scale sigma (s = sigma^2 / 2)."""
    out = []
    for sig in sigmas:
        c = CompareConfig(cfg.case, cfg.params.with_(s=sig ** 2 / 2), cfg.grid, cfg.methods, cfg.reference, cfg.options)
        out.extend((float(sig), r) for r in compare_report(c, builder))
    return out
