"""High-frequency perturbation experiments around a cnoidal wave.

A cell evolves q0 = phi + g under KdV, where g has unit l2 norm and lives on
the band N0 <= |k| <= 2 N0, so its H^{-s} size eps shrinks like N0^{-s}. The
record tracks how far q - phi stays from the free evolution e^{tL} g and from
the modified linear evolution e^{tL1} g.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .cnoidal import CnoidalWave, build_cnoidal
from .kdv_flow import SolverConfig, airy_flow, evolve_kdv, galilean_shift, modified_flow
from .fourier_core import FourierField, sobolev_norm

log = logging.getLogger(__name__)

SOLVER_FLOOR = 1e-9
# band-band interactions oscillate at up to 3*k*k1*k2 <= 48*N0^3 in the
# interaction frame; the stepper is resolved once that times dt is below ~4
PHASE_BUDGET = 4.0


def resolved_dt(N0: int, T: float = 1.0, samples: int = 11) -> float:
    """Largest step with 48 N0^3 dt <= PHASE_BUDGET that tiles the sample interval."""
    interval = T / (samples - 1)
    target = PHASE_BUDGET / (48.0 * N0**3)
    return interval / int(np.ceil(interval / target - 1e-9))
SERIES_COLUMNS = ("t", "err_L", "err_L1", "gap", "energy_drift")


@dataclass(frozen=True)
class ExperimentSpec:
    """One cell: data law (s, N0, seed), wave (a, c) and solver settings."""

    s: float = 0.25
    N0: int = 16
    seed: int = 0
    a: float = 8.0
    c: float = 0.0
    N: int = 256
    dt: float | None = None
    T: float = 1.0
    samples: int = 11
    l1_method: str = "expm"
    zero_data: bool = False

    def __post_init__(self):
        if not 0 < self.s < 0.5:
            raise ValueError(f"s must lie in (0, 1/2), got {self.s}")
        if self.N0 < 4:
            raise ValueError(f"N0 must be >= 4, got {self.N0}")
        if 2 * self.N0 > self.N // 2:
            raise ValueError(f"band top 2*N0={2 * self.N0} exceeds N/2={self.N // 2}")
        if self.samples < 2:
            raise ValueError("need at least two time samples")
        if self.dt is None:
            object.__setattr__(self, "dt", resolved_dt(self.N0, self.T, self.samples))
        per = self.T / (self.samples - 1) / self.dt
        if abs(per - round(per)) > 1e-6 * per:
            raise ValueError(f"dt={self.dt} does not tile the sample interval {self.T / (self.samples - 1)}")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.samples)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict | str) -> "ExperimentSpec":
        if isinstance(data, str):
            data = json.loads(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class GrowthFit:
    """err(t) <= C1 exp(C2 t) eps fitted on samples above the floor."""

    C1: float
    C2: float
    residual: float
    n_used: int
    vacuous: bool = False

    @property
    def quality(self) -> float:
        return self.residual

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentRecord:
    spec: ExperimentSpec
    eps: float
    times: np.ndarray
    err_L: np.ndarray
    err_L1: np.ndarray
    gap: np.ndarray
    energy_drift: np.ndarray
    fits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "eps": self.eps,
            "series": {name: [float(x) for x in getattr(self, name)] for name in SERIES_COLUMNS
                       if name != "t"} | {"t": [float(x) for x in self.times]},
            "fits": {k: f.to_json() for k, f in self.fits.items()},
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, data: dict | str) -> "ExperimentRecord":
        if isinstance(data, str):
            data = json.loads(data)
        ser = data["series"]
        return cls(ExperimentSpec.from_json(data["spec"]), float(data["eps"]),
                   np.array(ser["t"]), np.array(ser["err_L"]), np.array(ser["err_L1"]),
                   np.array(ser["gap"]), np.array(ser["energy_drift"]),
                   {k: GrowthFit(**v) for k, v in data.get("fits", {}).items()},
                   data.get("meta", {}))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "record.json").write_text(self.dumps())
        with open(path / "series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            for row in zip(self.times, self.err_L, self.err_L1, self.gap, self.energy_drift):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentRecord":
        return cls.from_json((Path(path) / "record.json").read_text())


def generate_hf_data(N0: int, s: float, seed: int, N: int) -> tuple[FourierField, float]:
    """Unit-l2 mean-zero g on N0 <= |k| <= 2 N0 with independent uniform phases.

    Returns g and its measured homogeneous H^{-s} norm eps.
    """
    if N0 < 1 or 2 * N0 > N:
        raise ValueError(f"band [{N0}, {2 * N0}] does not fit in N={N}")
    rng = np.random.default_rng(seed)
    band = np.arange(N0, 2 * N0 + 1)
    pos = np.zeros(N + 1, dtype=complex)
    pos[band] = np.exp(2j * np.pi * rng.random(band.size))
    pos /= np.sqrt(2 * np.sum(np.abs(pos) ** 2))
    g = FourierField.from_positive(pos, True)
    return g, sobolev_norm(g, s, "homogeneous")


@lru_cache(maxsize=8)
def stationary_wave(a: float) -> CnoidalWave:
    return build_cnoidal(a, 0.0)


def run_superposition(spec: ExperimentSpec, wave: CnoidalWave | None = None) -> ExperimentRecord:
    """Evolve phi + g and compare with e^{tL} g and e^{tL1} g at the sample times.

    With spec.c != 0 the wave moves: the data phi + c + g is evolved and the
    Galilean map is undone before comparing.
    """
    wave = stationary_wave(spec.a) if wave is None else wave
    N = spec.N
    if spec.zero_data:
        g, eps = FourierField.zeros(N), 0.0
    else:
        g, eps = generate_hf_data(spec.N0, spec.s, spec.seed, N)
    phi = wave.field(N)
    stride = round(spec.T / (spec.samples - 1) / spec.dt)
    cfg = SolverConfig(N, spec.dt, spec.T, monitor_every=max(stride, 1))
    shift = FourierField.from_modes(N, {0: spec.c}, False)
    traj = evolve_kdv(phi + g + shift, cfg)
    if spec.c:
        traj = galilean_shift(traj, -spec.c)
    lin = modified_flow(g, spec.T, wave, cfg, method=spec.l1_method)
    if not np.allclose(traj.times, lin.times, rtol=0, atol=1e-12):
        raise RuntimeError("KdV and linear-flow sample times disagree")
    err_L, err_L1, gap = [], [], []
    for i, t in enumerate(traj.times):
        u = traj.coeffs[i] - phi.coeffs
        free = airy_flow(g, t, wave.mean).coeffs
        mod = lin.coeffs[i]
        err_L.append(np.linalg.norm(u - free))
        err_L1.append(np.linalg.norm(u - mod))
        gap.append(np.linalg.norm(mod - free))
    rec = ExperimentRecord(spec, eps, traj.times.copy(), np.array(err_L), np.array(err_L1),
                           np.array(gap), traj.energy_drift)
    for name in ("err_L", "err_L1", "gap"):
        rec.fits[name] = fit_growth(rec, name)
    rec.meta = {"wave_mean": wave.mean, "wave_residual": wave.residual,
                "energy_drift_T": float(traj.energy_drift[-1])}
    return rec


def fit_growth(record, which: str = "err_L", floor: float = SOLVER_FLOOR,
               eps: float | None = None) -> GrowthFit:
    """Least-squares line through log(err(t)/eps) against t.

    ``record`` is an ExperimentRecord or a (times, errors) pair. Samples at or
    below 10 * floor are dropped; with fewer than four left the bound holds
    vacuously.
    """
    if isinstance(record, ExperimentRecord):
        t, err = record.times, getattr(record, which)
        eps = record.eps if eps is None else eps
    else:
        t, err = (np.asarray(x, float) for x in record)
    use = err > 10 * floor
    if not eps or use.sum() < 4:
        return GrowthFit(float("nan"), float("nan"), float("nan"), int(use.sum()), True)
    y = np.log(err[use] / eps)
    A = np.vstack([np.ones(use.sum()), t[use]]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return GrowthFit(float(np.exp(coef[0])), float(coef[1]), resid, int(use.sum()))


# ---------------------------------------------------------------------- suite

SUITE_KEYS = {
    "suite": {"s": float, "N0": int, "seed": int, "T": float},
    "solver": {"N": int, "dt": float, "samples": int, "l1_method": str},
    "wave": {"a": float, "c": float},
    "acceptance": {"ratio_spread": float, "c2_tolerance": float, "zero_tol": float},
}
ACCEPTANCE_DEFAULTS = {"ratio_spread": 3.0, "c2_tolerance": 0.25, "zero_tol": 1e-12}


def _split(raw: str, conv):
    return [conv(x) for x in raw.replace(",", " ").split()]


def load_suite_config(path: str | Path) -> dict:
    """Parse the suite file: list-valued [suite] keys span the matrix.

    Unknown sections or keys raise ValueError.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    text = Path(path).read_text()
    cp.read_string(text)
    cfg = {"matrix": {}, "fixed": {}, "acceptance": dict(ACCEPTANCE_DEFAULTS)}
    for section in cp.sections():
        if section not in SUITE_KEYS:
            raise ValueError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SUITE_KEYS[section]:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            conv = SUITE_KEYS[section][key]
            if section == "suite":
                cfg["matrix"][key] = _split(raw, conv)
            elif section == "acceptance":
                cfg["acceptance"][key] = conv(raw)
            else:
                cfg["fixed"][key] = conv(raw.strip())
    return cfg


def suite_cells(cfg: dict) -> list[ExperimentSpec]:
    matrix = cfg["matrix"]
    keys = ["s", "N0", "seed", "T"]
    values = [matrix.get(k, [getattr(ExperimentSpec, k)]) for k in keys]
    if any(len(v) == 0 for v in values):
        return []
    return [ExperimentSpec(**dict(zip(keys, combo)), **cfg["fixed"])
            for combo in itertools.product(*values)]


def cell_name(spec: ExperimentSpec) -> str:
    return f"s{spec.s:g}_N0{spec.N0}_seed{spec.seed}_T{spec.T:g}"


def _run_cell(spec: ExperimentSpec, out_dir: str | None):
    start = time.perf_counter()
    try:
        rec = run_superposition(spec)
        if out_dir is not None:
            rec.save(Path(out_dir) / cell_name(spec))
        return spec, rec, None, time.perf_counter() - start
    except Exception as exc:  # isolate the cell, keep the suite going
        log.error("cell %s failed: %s", cell_name(spec), exc)
        return spec, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}", \
            time.perf_counter() - start


@dataclass
class SuiteSummary:
    rows: list
    checks: dict
    passed: bool
    records: dict = field(default_factory=dict)


def evaluate_cells(records: list, acceptance: dict) -> dict:
    """Acceptance checks over completed cells, grouped by (s, T)."""
    checks = {}
    groups = {}
    for rec in records:
        groups.setdefault((rec.spec.s, rec.spec.T), []).append(rec)
    for (s, T), recs in sorted(groups.items()):
        tag = f"s={s:g},T={T:g}"
        zero = max(max(r.err_L[0], r.gap[0], r.err_L1[0]) for r in recs)
        checks[f"{tag}: zero at t=0"] = {"value": zero, "limit": acceptance["zero_tol"],
                                         "passed": zero <= acceptance["zero_tol"]}
        ratios = [r.err_L[-1] / r.eps for r in recs]
        spread = max(ratios) / min(ratios)
        checks[f"{tag}: err_L(T)/eps spread"] = {"value": spread, "limit": acceptance["ratio_spread"],
                                                "passed": spread <= acceptance["ratio_spread"]}
        for name in ("err_L", "gap"):
            levels = {}
            for r in recs:
                fit = r.fits[name]
                if not fit.vacuous:
                    levels.setdefault(r.spec.N0, []).append(fit.C2)
            if len(levels) < 2:
                continue
            means = np.array([np.mean(v) for v in levels.values()])
            centre = float(np.mean(means))
            dev = float(np.max(np.abs(means - centre)) / abs(centre))
            checks[f"{tag}: {name} C2 stability"] = {
                "value": dev, "limit": acceptance["c2_tolerance"],
                "passed": dev <= acceptance["c2_tolerance"],
                "per_level": {int(k): float(np.mean(v)) for k, v in levels.items()}}
    return checks


SUMMARY_COLUMNS = ("cell", "s", "N0", "seed", "T", "status", "eps", "err_L_T", "err_L_T_over_eps",
                   "C1_err_L", "C2_err_L", "gap_T_over_eps", "C1_gap", "C2_gap", "runtime_s",
                   "message")


def run_suite(config: str | Path | dict, out_dir: str | Path | None = None,
              jobs: int = 1) -> SuiteSummary:
    """Run every cell of the matrix, write records and summary.csv, and judge acceptance."""
    cfg = load_suite_config(config) if not isinstance(config, dict) else config
    cells = suite_cells(cfg)
    out = None if out_dir is None else str(out_dir)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells, [out] * len(cells)))
    else:
        results = [_run_cell(c, out) for c in cells]
    rows, records = [], {}
    for spec, rec, err, runtime in results:
        row = {"cell": cell_name(spec), "s": spec.s, "N0": spec.N0, "seed": spec.seed,
               "T": spec.T, "status": "ok" if rec else "failed", "runtime_s": round(runtime, 3),
               "message": "" if rec else err.splitlines()[0]}
        if rec is not None:
            records[row["cell"]] = rec
            row.update(eps=rec.eps, err_L_T=rec.err_L[-1], err_L_T_over_eps=rec.err_L[-1] / rec.eps,
                       C1_err_L=rec.fits["err_L"].C1, C2_err_L=rec.fits["err_L"].C2,
                       gap_T_over_eps=rec.gap[-1] / rec.eps, C1_gap=rec.fits["gap"].C1,
                       C2_gap=rec.fits["gap"].C2)
        rows.append(row)
    checks = evaluate_cells(list(records.values()), cfg["acceptance"])
    failed_cells = [r["cell"] for r in rows if r["status"] != "ok"]
    if failed_cells:
        checks["all cells completed"] = {"value": len(failed_cells), "limit": 0, "passed": False,
                                         "failed": failed_cells}
    passed = all(c["passed"] for c in checks.values())
    if out is not None:
        with open(Path(out) / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            w.writeheader()
            for row in rows:
                w.writerow({k: row.get(k, "") for k in SUMMARY_COLUMNS})
        (Path(out) / "verdict.json").write_text(
            json.dumps({"passed": passed, "checks": checks}, indent=1, default=float))
    return SuiteSummary(rows, checks, passed, records)
