"""Command-line driver.

Exit codes: 0 success, 1 failed assumption, 2 I/O or format error, 3 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .asymcheck import qtilde_membership, large_rho_residual, write_residual_csv
from .model import EigenSolverError, SpecFormatError, load_spec, sector_geometry, validate
from .numerics import IntegrationError
from .reconstruct import (ReconstructionConfig, ReconstructionError, plan_quadrature, reconstruct_q,
                          sample_ray)
from .spectral import boundary_values, characteristic_minimum, sector_samples, write_samples
from .unperturbed import nondegeneracy_all
from .weyl import SingularCharacteristicError

EXIT_OK, EXIT_ASSUMPTION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3
THREADS_ENV = "WEYLREC_THREADS"


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items, threads: int) -> list:
    """Ordered map; results are collected in input order so outputs do not depend on scheduling."""
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# commands ----------------------------------------------------------------------

def cmd_validate(args) -> int:
    spec = load_spec(args.spec)
    report = validate(spec)
    lines = [f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in report.checks]
    lines += [f"warning: {w}" for w in report.warnings]
    data = {"checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in report.checks],
            "warnings": list(report.warnings)}
    code = EXIT_OK
    if report.ok:
        lines.append("mu: " + ", ".join(f"{m:.10g}" for m in report.mu))
        geom = sector_geometry(spec.b)
        lines.append(f"sectors: {geom.N}")
        conds = nondegeneracy_all(spec)
        data["mu"] = [_pair(m) for m in report.mu]
        data["sectors"] = []
        for s, c in zip(geom.sectors, conds):
            lines.append(f"  sector {s.index}: ({s.start:.6f}, {s.end:.6f}) order {[i + 1 for i in s.order]}"
                         f" min|Delta_0k| = {c.margin:.6e}")
            data["sectors"].append({"index": s.index, "start": s.start, "end": s.end,
                                    "order": [i + 1 for i in s.order],
                                    "delta0": [_pair(v) for v in c.values], "ok": c.ok})
        if not all(c.ok for c in conds):
            lines.append("FAIL nondegeneracy: Delta_0k vanishes on some sector")
            code = EXIT_ASSUMPTION
        mem = qtilde_membership(spec)
        data["qtilde_integrable"] = mem.ok
        if not mem.ok:
            lines.append("note: q~ not integrable at the origin: " + "; ".join(mem.failures()))
    else:
        code = EXIT_NUMERICAL if report.numerical_failure else EXIT_ASSUMPTION
    print("\n".join(lines))
    if args.out:
        _dump(_out(args) / "validate.json", data)
    return code


def _require_valid(spec) -> int | None:
    report = validate(spec)
    if not report.ok:
        for c in report.failed():
            print(f"FAIL {c.name}: {c.detail}", file=sys.stderr)
        return EXIT_NUMERICAL if report.numerical_failure else EXIT_ASSUMPTION
    return None


def cmd_forward(args) -> int:
    spec = load_spec(args.spec)
    bad = _require_valid(spec)
    if bad is not None:
        return bad
    out = _out(args)
    geom = sector_geometry(spec.b)
    ts = np.geomspace(args.rho_min, args.rho_max, args.rho_count)
    samples = _map(lambda nu: boundary_values(spec, nu, args.x_grid, ts, geom), range(1, geom.N + 1),
                   _threads(args))
    count = write_samples(out / "samples.jsonl", samples)
    mins = []
    for s in geom.sectors:
        rhos = sector_samples(s, args.sector_samples, args.rho_max)
        mins.append(float(characteristic_minimum(spec, s, rhos, x=float(args.x_grid[0])).min()))
    floor = args.floor
    summary = {"samples": count, "rays": geom.N, "x_grid": list(args.x_grid), "rho": ts.tolist(),
               "sector_min_delta": mins, "delta_floor": floor,
               "ray_min_delta": [s.delta_min for s in samples],
               "max_P_hat": [float(np.max(np.abs(s.P_hat))) for s in samples]}
    _dump(out / "forward_summary.json", summary)
    for s, m in zip(geom.sectors, mins):
        print(f"sector {s.index}: min|Delta_k| = {m:.6e}")
    print(f"wrote {count} samples")
    return EXIT_OK if min(mins) > floor else EXIT_ASSUMPTION


def cmd_verify_asymptotics(args) -> int:
    spec = load_spec(args.spec)
    bad = _require_valid(spec)
    if bad is not None:
        return bad
    out = _out(args)
    geom = sector_geometry(spec.b)
    if args.ray is not None:
        omega = complex(np.exp(1j * args.ray))
    else:
        omega = geom.sector(args.sector).bisector
    radii = []
    r = args.rho_min
    while r <= args.rho_max * (1 + 1e-12):
        radii.append(r)
        r *= 2
    if len(radii) < 2:
        print("need at least two radii between --rho-min and --rho-max", file=sys.stderr)
        return EXIT_IO
    try:
        geom.locate(omega)
    except ValueError:
        print("the requested direction lies on a separation ray; use an interior ray", file=sys.stderr)
        return EXIT_IO
    results = large_rho_residual(spec, args.x_grid, omega, radii, geom)
    write_residual_csv(out / "residuals.csv", results)
    verdicts = [r.passes(args.tol) for r in results]
    _dump(out / "verify_summary.json", {
        "ray_angle": float(np.angle(omega)), "radii": radii, "threshold": args.tol,
        "results": [{"x": r.x, "offdiag": r.offdiag.tolist(), "qhat_norm": r.qhat_norm,
                     "decreasing": r.decreasing, "passed": v} for r, v in zip(results, verdicts)]})
    for r, v in zip(results, verdicts):
        print(f"x = {r.x:g}: final {r.offdiag[-1]:.3e} vs {args.tol:g}*|qh| = {args.tol * r.qhat_norm:.3e}"
              f" {'pass' if v else 'FAIL'}")
    return EXIT_OK if all(verdicts) else EXIT_NUMERICAL


def cmd_reconstruct(args) -> int:
    spec = load_spec(args.spec)
    bad = _require_valid(spec)
    if bad is not None:
        return bad
    out = _out(args)
    geom = sector_geometry(spec.b)
    config = ReconstructionConfig(r_schedule=tuple(args.r_schedule), delta=args.delta)
    xs = np.asarray(args.x_grid, dtype=float)
    quad = plan_quadrature(geom, xs, config)
    rays = _map(lambda nu: sample_ray(spec, geom, nu, xs, quad, config), range(1, geom.N + 1), _threads(args))
    res = reconstruct_q(spec, xs, config, geom, quad, rays)
    n = spec.n
    err = res.error()
    with open(out / "reconstruction.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "i", "j", "re_q", "im_q", "re_true", "im_true", "error"])
        for ix, x in enumerate(xs):
            for i in range(n):
                for j in range(n):
                    q, t = res.q[ix, i, j], res.true_q[ix, i, j]
                    w.writerow([f"{x:.12g}", i + 1, j + 1, f"{q.real:.12e}", f"{q.imag:.12e}",
                                f"{t.real:.12e}", f"{t.imag:.12e}", f"{err[ix, i, j]:.12e}"])
    with open(out / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "r", "partial_norm", "smoothed_norm", "residual", "amplitude"])
        for h in res.history:
            for ix, x in enumerate(xs):
                w.writerow([f"{x:.12g}", f"{h.r:.12g}", f"{np.max(np.abs(h.partial[ix])):.12e}",
                            f"{np.max(np.abs(h.smoothed[ix])):.12e}", f"{h.residual[ix]:.12e}",
                            f"{h.amplitude[ix]:.12e}"])
    mre = res.max_relative_error
    diag = float(np.max(np.abs(np.diagonal(res.q, axis1=-2, axis2=-1))))
    converged = bool(np.all(res.converged))
    passed = converged and (args.tol is None or (mre is not None and mre <= args.tol))
    _dump(out / "summary.json", {
        "x_grid": xs.tolist(), "r_schedule": list(config.r_schedule), "delta": config.delta, "max_relative_error": mre,
        "max_diagonal": diag, "converged": converged, "converged_per_x": res.converged.tolist(),
        "min_delta": res.delta_min, "inner_bound": res.inner_bound.tolist(), "tolerance": args.tol,
        "passed": passed})
    print(f"max relative error {mre:.3e}, max diagonal {diag:.1e}, converged {converged}")
    if not converged:
        print("oscillation of the truncated integrals is not decreasing; no limit reported as converged",
              file=sys.stderr)
    return EXIT_OK if passed else EXIT_NUMERICAL


# parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weylrec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--spec", required=True, help="system JSON file")
        sp.add_argument("--out", required=out_required, default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")

    v = sub.add_parser("validate", help="check the standing assumptions")
    common(v, out_required=False)
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("forward", help="jump of P on every separation ray")
    common(f)
    f.add_argument("--x-grid", type=_floats, default=[0.5, 1.0, 2.0])
    f.add_argument("--rho-max", type=float, default=80.0)
    f.add_argument("--rho-min", type=float, default=0.1)
    f.add_argument("--rho-count", type=int, default=16)
    f.add_argument("--sector-samples", type=int, default=20)
    f.add_argument("--floor", type=float, default=1e-8)
    f.set_defaults(func=cmd_forward)

    a = sub.add_parser("verify-asymptotics", help="large-rho residual along an interior ray")
    common(a)
    a.add_argument("--x-grid", type=_floats, default=[0.5, 1.0, 2.0])
    a.add_argument("--rho-max", type=float, default=80.0)
    a.add_argument("--rho-min", type=float, default=10.0)
    a.add_argument("--ray", type=float, default=None, help="ray angle in radians (default: bisector)")
    a.add_argument("--sector", type=int, default=1)
    a.add_argument("--tol", type=float, default=0.05, help="final residual threshold relative to |qh|")
    a.set_defaults(func=cmd_verify_asymptotics)

    r = sub.add_parser("reconstruct", help="potential from the jump of P")
    common(r)
    r.add_argument("--x-grid", type=_floats, default=[0.5, 1.0, 2.0])
    r.add_argument("--r-schedule", type=_floats, default=[10.0, 20.0, 40.0, 80.0])
    r.add_argument("--delta", type=float, default=ReconstructionConfig.delta,
                   help="inner cutoff; the integral over [0, delta] is extrapolated")
    r.add_argument("--tol", type=float, default=None, help="fail when the max relative error exceeds this")
    r.set_defaults(func=cmd_reconstruct)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SpecFormatError, FileNotFoundError, IsADirectoryError, PermissionError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SingularCharacteristicError,) as exc:
        print(f"assumption failed: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (IntegrationError, EigenSolverError, ReconstructionError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
