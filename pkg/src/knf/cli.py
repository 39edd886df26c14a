"""Command-line entry point ``knf``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .cnoidal import CnoidalWave, build_cnoidal
from .kdv_flow import SolverConfig, Trajectory, evolve_kdv
from .fourier_core import FourierField, l2_norm
from .normal_form import (NFContext, bound_report, convergence_order, fredholm_sigma_min,
                          ktilde_norm, verify_dbp_identity)

log = logging.getLogger("knf")

DEFAULT_A = 8.0


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True, default=float)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    print(text)


def _load_wave(path: str | None, a: float = DEFAULT_A) -> CnoidalWave:
    if path:
        return CnoidalWave.from_json(Path(path).read_text())
    return build_cnoidal(a, 0.0)


def cmd_cnoidal(args) -> int:
    wave = build_cnoidal(args.a, args.c, args.tol, args.samples)
    data = wave.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(data, indent=1))
    summary = {"a": wave.a, "c": wave.c, "mean": wave.mean, "f0": wave.f0,
               "residual": wave.residual, "roots": list(wave.roots or [])}
    print(json.dumps(summary, indent=1))
    return 0 if wave.residual < args.max_residual else 1


def cmd_evolve(args) -> int:
    cfg = SolverConfig(args.N, args.dt, args.T, args.dealias, args.monitor_every)
    init = FourierField.from_json(Path(args.init).read_text()).resize(args.N) if args.init else None
    wave = CnoidalWave.from_json(Path(args.wave).read_text()) if args.wave else None
    if wave is None and init is None:
        raise SystemExit("evolve needs --wave, --init or both")
    q0 = FourierField.zeros(args.N, False)
    if wave is not None:
        q0 = q0 + wave.field(args.N)
    if init is not None:
        q0 = q0 + init
    traj = evolve_kdv(q0, cfg)
    traj.save(args.out)
    if args.wave:
        (Path(args.out) / "wave.json").write_text(Path(args.wave).read_text())
    _dump({"samples": len(traj), "energy_drift": float(traj.energy_drift[-1]),
           "momentum_change": float(np.ptp(traj.momentum))}, None)
    return 0


def cmd_nf_verify(args) -> int:
    traj = Trajectory.load(args.traj)
    wave_path = args.wave or (Path(args.traj) / "wave.json")
    wave = CnoidalWave.from_json(Path(wave_path).read_text())
    ctx = NFContext(wave.Phi, wave.mean, N=traj.N)
    spacing = float(np.min(np.diff(traj.times)))
    centre = float(traj.times[len(traj) // 2])
    probes = [spacing * m for m in args.multiples]
    rows = []
    for h in probes:
        res = verify_dbp_identity(traj, ctx, h, [centre], args.table)
        rows.append({"dt_probe": h, "t": centre, "abs_residual": float(res.abs_residual[0]),
                     "rel_residual": float(res.rel_residual[0])})
    order = convergence_order([r["dt_probe"] for r in rows], [r["rel_residual"] for r in rows])
    passed = abs(order - 2.0) <= args.order_tol
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "identity.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    _dump({"table": args.table, "rows": rows, "order": order, "passed": passed},
          args.out and str(Path(args.out) / "identity.json"))
    return 0 if passed else 1


def cmd_nf_bounds(args) -> int:
    wave = _load_wave(args.wave)
    ctx = NFContext(wave.Phi, wave.mean, N=args.N)
    rep = bound_report(ctx, args.s, args.trials, args.seed).bounds
    passed = not any(rep["chain_violations"].values()) and not any(rep["constant_violations"].values())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bounds.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "max_ratio", "violations"])
            for k, r in rep["chain_max_ratio"].items():
                w.writerow([k, r, rep["chain_violations"][k]])
            for k, r in rep["constant_max_ratio"].items():
                w.writerow([k, r / rep["assembled_constants"][k], rep["constant_violations"][k]])
    _dump(dict(rep, passed=passed), args.out and str(Path(args.out) / "bounds.json"))
    return 0 if passed else 1


def cmd_nf_fredholm(args) -> int:
    wave = _load_wave(args.wave)
    ctx = NFContext(wave.Phi, wave.mean, N=2 * args.N)
    sig = {n: fredholm_sigma_min(ctx, n, args.s) for n in (args.N, 2 * args.N)}
    norm = ktilde_norm(ctx, 2 * args.N, args.s)
    phi_norm = l2_norm(wave.Phi)
    change = abs(sig[2 * args.N] - sig[args.N]) / sig[args.N]
    passed = min(sig.values()) > 0 and change < 0.1 and norm <= 2 * phi_norm
    _dump({"s": args.s, "sigma_min": {str(k): v for k, v in sig.items()}, "relative_change": change,
           "ktilde_norm": norm, "two_phi_l2": 2 * phi_norm, "passed": passed}, args.out)
    return 0 if passed else 1


def cmd_suite(args) -> int:
    summary = harness.run_suite(args.config, args.out, args.jobs)
    for name, chk in summary.checks.items():
        print(f"{'PASS' if chk['passed'] else 'FAIL'}  {name}: {chk['value']:.4g} (limit {chk['limit']})")
    print("verdict:", "PASS" if summary.passed else "FAIL")
    return 0 if summary.passed else 1


def cmd_run(args) -> int:
    spec = harness.ExperimentSpec.from_json(Path(args.spec).read_text())
    rec = harness.run_superposition(spec)
    out = args.out or str(Path(args.spec).with_suffix(""))
    rec.save(out)
    zero = max(rec.err_L[0], rec.gap[0])
    print(json.dumps({"out": out, "eps": rec.eps, "err_L_T": float(rec.err_L[-1]),
                      "gap_T": float(rec.gap[-1]), "zero_at_t0": zero}, indent=1))
    return 0 if zero <= harness.ACCEPTANCE_DEFAULTS["zero_tol"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="knf", description="Cnoidal waves, KdV evolution and normal-form checks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cnoidal", help="build a 2*pi-periodic cnoidal wave")
    c.add_argument("--a", type=float, default=DEFAULT_A)
    c.add_argument("--c", type=float, default=0.0)
    c.add_argument("--tol", type=float, default=1e-12)
    c.add_argument("--samples", type=int, default=256)
    c.add_argument("--max-residual", type=float, default=1e-8)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cnoidal)

    e = sub.add_parser("evolve", help="evolve wave + perturbation under KdV")
    e.add_argument("--wave")
    e.add_argument("--init")
    e.add_argument("--N", type=int, default=128)
    e.add_argument("--dt", type=float, default=1e-4)
    e.add_argument("--T", type=float, default=1.0)
    e.add_argument("--dealias", default="pad-3/2", choices=["pad-3/2", "truncate-2/3"])
    e.add_argument("--monitor-every", type=int, default=100)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evolve)

    nf = sub.add_parser("nf", help="normal-form checks").add_subparsers(dest="nf_command", required=True)
    v = nf.add_parser("verify", help="finite-difference check of the normal-form identity")
    v.add_argument("--traj", required=True)
    v.add_argument("--wave")
    v.add_argument("--table", default="derived", choices=["derived", "displayed"])
    v.add_argument("--multiples", type=int, nargs="+", default=[1, 2, 4, 8])
    v.add_argument("--order-tol", type=float, default=0.1)
    v.add_argument("--out")
    v.set_defaults(func=cmd_nf_verify)

    b = nf.add_parser("bounds", help="explicit-constant inequalities over random v")
    b.add_argument("--s", type=float, default=0.25)
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--N", type=int, default=32)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--wave")
    b.add_argument("--out")
    b.set_defaults(func=cmd_nf_bounds)

    f = nf.add_parser("fredholm", help="smallest singular value of I + K~")
    f.add_argument("--s", type=float, default=0.25)
    f.add_argument("--N", type=int, default=32)
    f.add_argument("--wave")
    f.add_argument("--out")
    f.set_defaults(func=cmd_nf_fredholm)

    s = sub.add_parser("suite", help="run an experiment matrix from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_suite)

    r = sub.add_parser("run", help="run one experiment from a JSON spec")
    r.add_argument("--spec", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
