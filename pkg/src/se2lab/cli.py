"""Command line interface: ``se2lab <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import __version__
from .core import (
    Case,
    DiffusionParams,
    Domain,
    GridSpec,
    GroupElement,
    NumericalError,
    Se2Error,
    Se2Field,
    read_skf,
    to_frequency,
    to_spatial,
    write_skf,
    xy_marginal,
)

log = logging.getLogger("se2lab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
METHODS = ("exact1", "exact2", "exact3", "fbt", "fd-explicit", "fd-implicit", "mc")


def _floats(text: str, n: int, name: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise Se2Error(f"--{name} expects {n} comma separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise Se2Error(f"--{name} expects {n} comma separated numbers, got {text!r}")
    return vals


def _params(case: Case, D: str | None, a: str | None, alpha: float, k: int, s: float) -> DiffusionParams:
    if D is None:
        D = "1,0,0.05" if case is Case.ENHANCEMENT else "0,0,0.08"
    if a is None:
        a = "0,0,0" if case is Case.ENHANCEMENT else "1,0,0"
    d, av = _floats(D, 3, "D"), _floats(a, 3, "a")
    return DiffusionParams(D11=d[0], D22=d[1], D33=d[2], a1=av[0], a2=av[1], a3=av[2], alpha=alpha, k=k, s=s)


def _grid(Ns: int, No: int, oversample: int) -> GridSpec:
    if Ns < 3 or No < 3:
        raise Se2Error("--Ns and --No must be at least 3")
    return GridSpec.from_counts(Ns, No, oversample)


def _blur(s: str, oversample: int) -> float:
    """``auto`` picks the inner scale sigma = 2 / (0.9 oversample pi) pixels, s = sigma^2 / 2."""
    if s == "auto":
        from .exact import inner_scale_sigma

        return inner_scale_sigma(oversample, 0.9) ** 2 / 2
    try:
        v = float(s)
    except ValueError:
        raise Se2Error(f"--s expects a number or 'auto', got {s!r}") from None
    if v < 0:
        raise Se2Error("--s must be >= 0")
    return v


def _write_manifest(path: Path, command: str, argv: list[str], **resolved) -> None:
    def plain(v):
        if isinstance(v, (DiffusionParams, GridSpec)):
            return asdict(v)
        if isinstance(v, Case):
            return v.value
        if isinstance(v, Path):
            return str(v)
        return v

    doc = {"command": command, "argv": argv, "version": __version__, "resolved": {k: plain(v) for k, v in resolved.items()}}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _marginal_pgm(U: Se2Field, path: Path) -> None:
    from .oscore import write_image

    sp = U if U.domain is Domain.SPATIAL else to_spatial(U)
    write_image(path, xy_marginal(sp).T[::-1], bits=16)


def _build(method: str, grid: GridSpec, p: DiffusionParams, case: Case, opts: dict) -> Se2Field:
    from .analysis import build_kernel

    if method.startswith("exact") and p.alpha == 0:
        from .exact import fundamental_solution

        log.warning("alpha = 0: fundamental solution, the frequency kernel has a pole at omega = 0")
        return fundamental_solution(grid, p, case, method)
    return build_kernel(method, grid, p, case, **opts)


def _method_options(method: str, N, dt, tmax, paths, time_law, seed) -> dict:
    if method == "fbt":
        return {} if N is None else {"N": N}
    if method.startswith("fd"):
        o = {} if dt is None else {"dt": dt}
        if tmax is not None:
            o["T_max"] = tmax
        return o
    if method == "mc":
        if paths is not None and paths < 1:
            raise Se2Error("--paths must be >= 1")
        o = {"seed": seed, "time_law": time_law}
        if paths is not None:
            o["paths"] = paths
        if dt is not None:
            o["dt"] = dt
        return o
    return {}


common_case = click.option("--case", type=click.Choice(["enh", "com"]), default="enh", show_default=True)
common_D = click.option("--D", "D", default=None, help="D11,D22,D33")
common_a = click.option("--a", "a", default=None, help="a1,a2,a3")
common_alpha = click.option("--alpha", type=float, default=0.05, show_default=True)


@click.group()
@click.version_option(__version__)
@click.option("--threads", type=int, default=None, help="Worker threads (overrides SE2LAB_THREADS).")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, threads, verbose):
    """Green's functions of SE(2) contour enhancement and completion."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if threads is not None:
        if threads < 1:
            raise Se2Error("--threads must be >= 1")
        os.environ["SE2LAB_THREADS"] = str(threads)
    ctx.obj = {"argv": list(ctx.obj or [])}


@main.command()
@click.option("--method", type=click.Choice(METHODS), default="exact3", show_default=True)
@common_case
@common_D
@common_a
@common_alpha
@click.option("--k", type=int, default=1, show_default=True, help="Gamma order (fbt, mc).")
@click.option("--Ns", "Ns", type=int, default=128, show_default=True)
@click.option("--No", "No", type=int, default=48, show_default=True)
@click.option("--oversample", type=int, default=1, show_default=True)
@click.option("--s", "s", default="0.5", show_default=True, help="Gaussian scale s or 'auto'.")
@click.option("--N", "N", type=int, default=None, help="FBT harmonic cutoff (default 2R).")
@click.option("--dt", type=float, default=None)
@click.option("--tmax", type=float, default=None)
@click.option("--paths", type=int, default=None)
@click.option("--time-law", default="exp", show_default=True, help="exp, gamma:k or fixed:t")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("kernel.skf"), show_default=True)
@click.option("--pgm", type=click.Path(path_type=Path), default=None, help="xy-marginal image.")
@click.option("--frequency", is_flag=True, help="Store the frequency field instead of the spatial kernel.")
@click.pass_context
def kernel(ctx, method, case, D, a, alpha, k, Ns, No, oversample, s, N, dt, tmax, paths, time_law, seed, out, pgm, frequency):
    """Compute a kernel and write it as SKF."""
    case = Case.parse(case)
    sv = _blur(s, oversample)
    p = _params(case, D, a, alpha, k, sv)
    grid = _grid(Ns, No, oversample)
    if method == "mc" and k > 1 and time_law == "exp":
        time_law = f"gamma:{k}"
    opts = _method_options(method, N, dt, tmax, paths, time_law, seed)
    t0 = time.perf_counter()
    U = _build(method, grid, p, case, opts)
    elapsed = time.perf_counter() - t0
    U = to_frequency(U) if frequency and U.domain is Domain.SPATIAL else U
    write_skf(out, U)
    if pgm is not None:
        _marginal_pgm(U, pgm)
    _write_manifest(Path(str(out) + ".json"), "kernel", ctx.obj["argv"], method=method, case=case, params=p,
                    grid=grid, options=opts, out=out, seconds=round(elapsed, 3))
    click.echo(f"wrote {out} ({method}, {elapsed:.1f} s)")


@main.command()
@click.option("--exact", "exact_path", type=click.Path(path_type=Path, exists=True), default=None)
@click.option("--approx", "approx_paths", multiple=True, type=click.Path(path_type=Path, exists=True))
@common_case
@click.option("--methods", default="fbt", show_default=True)
@click.option("--reference", default="exact3", show_default=True)
@common_D
@common_a
@common_alpha
@click.option("--Ns", "Ns", type=int, default=None)
@click.option("--No", "No", type=int, default=None)
@click.option("--s", "s", default="0.5", show_default=True)
@click.option("--sigmas", default=None, help="Comma separated sigma_s values for a sweep.")
@click.option("--N", "N", type=int, default=None)
@click.option("--paths", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), default=Path("report.csv"), show_default=True)
@click.pass_context
def compare(ctx, exact_path, approx_paths, case, methods, reference, D, a, alpha, Ns, No, s, sigmas, N, paths, seed, csv_path):
    """Relative l1/l2 errors in both domains, as a CSV table."""
    from .analysis import CompareConfig, ErrorReport, compare_report, error_table, sigma_sweep, write_report_csv

    case = Case.parse(case)
    if exact_path is not None:
        if not approx_paths:
            raise Se2Error("--exact needs at least one --approx")
        E = read_skf(exact_path)
        approx = {Path(ap).stem: read_skf(ap) for ap in approx_paths}
        reports = error_table(E, approx, case.value)
        write_report_csv(reports, csv_path)
        _write_manifest(Path(str(csv_path) + ".json"), "compare", ctx.obj["argv"], exact=exact_path,
                        approx=list(map(str, approx_paths)))
    else:
        Ns = Ns or (128 if case is Case.ENHANCEMENT else 192)
        No = No or (48 if case is Case.ENHANCEMENT else 72)
        p = _params(case, D, a, alpha, 1, _blur(s, 1))
        grid = _grid(Ns, No, 1)
        mlist = tuple(m.strip() for m in methods.split(",") if m.strip())
        for m in mlist + (reference,):
            if m not in METHODS:
                raise Se2Error(f"unknown method {m!r}")
        mlist = tuple(m for m in mlist if m != reference)
        opts = {m: _method_options(m, N, None, None, paths, "exp", seed) for m in mlist}
        cfg = CompareConfig(case.value, p, grid, mlist, reference, opts)
        if sigmas:
            sweep = sigma_sweep(cfg, [float(v) for v in sigmas.split(",")])
            with open(csv_path, "w") as fh:
                fh.write("sigma,case,method,K,domain,error_pct\n")
                for sig, r in sweep:
                    fh.write(f"{sig},{r.case},{r.method},{r.K},{r.domain},{r.error_pct:.4f}\n")
            reports = [r for _, r in sweep]
        else:
            reports = compare_report(cfg)
            write_report_csv(reports, csv_path)
        _write_manifest(Path(str(csv_path) + ".json"), "compare", ctx.obj["argv"], case=case, params=p, grid=grid,
                        methods=list(mlist), reference=reference, sigmas=sigmas)
    for r in reports:
        click.echo(f"{r.method:12s} K={r.K} {r.domain:8s} {r.error_pct:8.3f}%")


def _element(text: str) -> GroupElement:
    return GroupElement(*_floats(text, 3, "g"))


@main.command("completion-field")
@click.option("--g0", required=True, help="x,y,theta of the source.")
@click.option("--g1", required=True, help="x,y,theta of the sink.")
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--D33", "D33", type=float, default=0.1, show_default=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--rate", type=float, default=None, help="Gamma rate (default alpha k).")
@click.option("--Ns", "Ns", type=int, default=128, show_default=True)
@click.option("--No", "No", type=int, default=36, show_default=True)
@click.option("--paths", type=int, default=200_000, show_default=True)
@click.option("--dt", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("completion.skf"), show_default=True)
@click.option("--pgm", type=click.Path(path_type=Path), default=None)
@click.pass_context
def completion_field_cmd(ctx, g0, g1, k, D33, alpha, rate, Ns, No, paths, dt, seed, out, pgm):
    """Product of forward and adjoint Gamma-time fields between two oriented points."""
    from .stochastic import completion_field

    if paths < 1:
        raise Se2Error("--paths must be >= 1")
    p = DiffusionParams.completion(D33, alpha)
    grid = _grid(Ns, No, 1)
    C = completion_field(p, _element(g0), _element(g1), k, grid, rate=rate, paths=paths, dt=dt, seed=seed)
    write_skf(out, C)
    _marginal_pgm(C, pgm or out.with_suffix(".pgm"))
    _write_manifest(Path(str(out) + ".json"), "completion-field", ctx.obj["argv"], params=p, grid=grid, g0=g0, g1=g1,
                    k=k, rate=rate if rate is not None else alpha * k, paths=paths, dt=dt, seed=seed)
    click.echo(f"wrote {out}")


@main.command()
@click.argument("action", type=click.Choice(["transform", "reconstruct", "enhance"]))
@click.option("--image", type=click.Path(path_type=Path, exists=True), required=True)
@click.option("--No", "No", type=int, default=11, show_default=True, help="Orientations (rounded down to odd).")
@click.option("--varrho", type=float, default=0.9, show_default=True)
@click.option("--kernel", "kernel_path", type=click.Path(path_type=Path, exists=True), default=None)
@click.option("--score", type=click.Path(path_type=Path, exists=True), default=None, help="Score SKF for reconstruct.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def oscore(ctx, action, image, No, varrho, kernel_path, score, out):
    """Orientation score transform, reconstruction and linear enhancement."""
    from . import oscore as osc

    f = osc.read_image(image)
    spec = osc.build_wavelets(No, varrho, f.shape)
    if action == "transform":
        write_skf(out, osc.transform(f, spec))
    elif action == "reconstruct":
        U = read_skf(score) if score is not None else osc.transform(f, spec)
        osc.write_image(out, osc.reconstruct(U, spec))
    else:
        if kernel_path is None:
            raise Se2Error("enhance needs --kernel")
        osc.write_image(out, osc.enhance(f, spec, read_skf(kernel_path)))
    _write_manifest(Path(str(out) + ".json"), "oscore", ctx.obj["argv"], action=action, image=image,
                    n_orientations=spec.n_orientations, varrho=varrho, kernel=kernel_path)
    click.echo(f"wrote {out}")


def _complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise Se2Error(f"not a complex number: {text!r}") from None


@main.command()
@click.argument("action", type=click.Choice(["eval"]), default="eval")
@click.option("--a", "a", required=True, help="Characteristic value a (complex allowed, e.g. -4+0.5j).")
@click.option("--q-re", "q_re", type=float, required=True)
@click.option("--q-im", "q_im", type=float, default=0.0, show_default=True)
@click.option("--z", "z", default="0", show_default=True, help="Comma separated real points.")
@click.option("--N", "N", type=int, default=32, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), default=None, help="Write here instead of stdout.")
def mathieu(action, a, q_re, q_im, z, N, csv_path):
    """Evaluate ce, se and me_(+/-)nu at points z as CSV; nu goes to stderr."""
    from . import mathieu as mth

    zs = np.array(_floats(z, len(z.split(",")), "z"))
    sol = mth.mathieu_solution(_complex(a), complex(q_re, q_im), N=N)
    cols = {k: mth.evaluate(sol, zs, k) for k in ("ce", "se", "me_plus", "me_minus")}
    lines = ["z," + ",".join(f"{k}_re,{k}_im" for k in cols)]
    for i, zv in enumerate(zs):
        lines.append(f"{float(zv)!r}," + ",".join(f"{float(v[i].real)!r},{float(v[i].imag)!r}" for v in cols.values()))
    text = "\n".join(lines) + "\n"
    if csv_path is None:
        click.echo(text, nl=False)
    else:
        Path(csv_path).write_text(text)
    click.echo(f"nu={complex(sol.nu)} resonant={mth.is_resonant(sol.nu)}", err=True)


@main.command()
@common_case
@common_D
@common_alpha
@click.option("--rho", default="0.5,1,2,4", show_default=True)
@click.option("--theta", type=float, default=0.0, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), default=Path("asymptotics.csv"), show_default=True)
def asymptotics(case, D, alpha, rho, theta, csv_path):
    """Exact frequency kernel along omega_xi against its small-D33 asymptote."""
    from .analysis import asymptote_completion, asymptote_enhancement, asymptote_enhancement_fundamental
    from .exact import kernel_hat

    case = Case.parse(case)
    p = _params(case, D, None, alpha, 1, 0.0)
    rhos = np.array([float(v) for v in rho.split(",")])
    if np.any(rhos <= 0):
        raise Se2Error("--rho values must be positive")
    exact = np.array([kernel_hat((r, 0.0), theta, p, case) for r in rhos]).ravel()
    if case is Case.ENHANCEMENT:
        asym = asymptote_enhancement_fundamental(rhos, theta, p) if alpha == 0 else asymptote_enhancement(rhos, theta, p)
    else:
        asym = asymptote_completion(rhos, theta, p)
    rel = np.abs(exact - asym) / np.abs(exact)
    with open(csv_path, "w") as fh:
        fh.write("rho,theta,exact_re,exact_im,asymptote_re,asymptote_im,rel_diff\n")
        for r, e, s_, d in zip(rhos, exact, asym, rel):
            fh.write(f"{r},{theta},{e.real},{e.imag},{np.real(s_)},{np.imag(s_)},{d}\n")
    for r, d in zip(rhos, rel):
        click.echo(f"rho={r:g} rel_diff={d:.4f}")


@main.command()
@click.argument("manifest", type=click.Path(path_type=Path, exists=True))
def replay(manifest):
    """Re-run the command recorded in a manifest."""
    argv = json.loads(Path(manifest).read_text())["argv"]
    code = run(argv)
    if code:
        sys.exit(code)


def run(argv: list[str] | None = None) -> int:
    """Entry point returning the exit code instead of exiting."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        main.main(args=argv, prog_name="se2lab", standalone_mode=False, obj=argv)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_INVALID
    except click.exceptions.Abort:
        return EXIT_INVALID
    except Se2Error as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_INVALID
    except NumericalError as e:
        click.echo(f"numerical failure: {e}", err=True)
        return EXIT_NUMERICAL
    except SystemExit as e:
        return int(e.code or 0)
    return EXIT_OK


def entry() -> None:
    sys.exit(run())


if __name__ == "__main__":
    entry()
