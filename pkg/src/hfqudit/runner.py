"""Run orchestration: one directory per run with manifest, config, results.

Result files (JSON and CSV) contain only deterministic quantities so that a
rerun with the same config and seed reproduces them byte for byte; timings
and timestamps live in ``manifest.json``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, named_state
from .model import TWO_PI, ModelConstants
from .optimizer import optimize_phases
from .propagation import ControlWaveform, point_fidelities, propagate, read_waveform, waveform_to_csv
from .semi_analytic import semi_analytic_ensemble
from .tomography import DetuningProfile, RegionTargets, evaluate_profile

log = logging.getLogger(__name__)

SCAN_HEADER = ("param", "value", "mean_fidelity", "min_fidelity")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _fmt(x) -> str:
    return format(float(x), ".17g")


class RunDirectory:
    """Output directory that records a checksum for every file it writes."""

    def __init__(self, path, config: RunConfig):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.outputs: dict[str, str] = {}
        self.inputs: dict[str, str] = {}
        self.manifest = {
            "tool": "hfqudit", "version": __version__, "mode": config.mode,
            "config_sha256": config.digest(), "seed": config.seed, "threads": config.threads,
            "started_utc": _now(), "finished_utc": None, "status": "running",
            "wall_time_s": None, "inputs": self.inputs, "outputs": self.outputs, "timings": {},
        }
        self._write_manifest()
        self.write_text("config.json", config.canonical_json() + "\n")

    def _write_manifest(self):
        with open(self.path / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_text(self, name: str, text: str) -> Path:
        p = self.path / name
        with open(p, "w", newline="") as fh:
            fh.write(text)
        self.outputs[name] = sha256_file(p)
        return p

    def write_json(self, name: str, data) -> Path:
        return self.write_text(name, json.dumps(data, indent=1, sort_keys=True) + "\n")

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
        return self.write_text(name, buf.getvalue())

    def record_input(self, path):
        self.inputs[str(path)] = sha256_file(path)

    def finalize(self, status: str, wall_time: float, extra: dict | None = None):
        self.manifest.update(status=status, finished_utc=_now(), wall_time_s=wall_time)
        if extra:
            self.manifest.update(extra)
        self._write_manifest()


def default_run_dir(config: RunConfig) -> Path:
    return Path(config.output_dir) / f"{config.mode}-{config.digest()[:10]}-seed{config.seed}"


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# --- evaluation helpers ------------------------------------------------------

def fine_grid_fidelities(waveform: ControlWaveform, target, config: RunConfig,
                         constants: ModelConstants) -> np.ndarray:
    """Fidelities on the evaluation grid, shaped ``(n_eps_rf, n_eps_uw, n_delta)``."""
    grid = config.grid.evaluation_grid(constants, target)
    return point_fidelities(waveform, grid, constants).reshape(config.grid.evaluation_shape())


def scan_rows(fids: np.ndarray, config: RunConfig) -> list:
    """One row per evaluated value of each varying axis.

    ``fids`` has shape ``(targets, n_eps_rf, n_eps_uw, n_delta)``; the mean is
    taken over targets and the other two axes, the minimum over the same set.
    """
    rows = []
    axes = list(config.grid.axes().items())
    varying = [k for k, (_, ax) in enumerate(axes) if len(ax.eval_values()) > 1]
    for k in (varying or range(len(axes))):
        name, ax = axes[k]
        moved = np.moveaxis(fids, k + 1, 0)
        for i, v in enumerate(ax.eval_values()):
            block = moved[i]
            rows.append((name, float(v), float(block.mean()), float(block.min())))
    return rows


def _target_record(index, seed, coarse, fine, duration):
    return {"index": index, "seed": seed, "coarse_fidelity": float(coarse),
            "fine_mean_fidelity": float(fine.mean()), "fine_min_fidelity": float(fine.min()),
            "duration_s": float(duration)}


def _summary(records) -> dict:
    return {"targets": records,
            "mean_fine_fidelity": float(np.mean([r["fine_mean_fidelity"] for r in records])),
            "min_fine_fidelity": float(np.min([r["fine_min_fidelity"] for r in records])),
            "mean_duration_s": float(np.mean([r["duration_s"] for r in records]))}


# --- modes -------------------------------------------------------------------

def _optimize_one(args):
    config, index, target = args
    constants = config.constants()
    grid = config.grid.optimization_grid(constants, target)
    opt = config.optimizer
    return optimize_phases(grid, constants, n_steps=config.schedule.n_steps(constants.dt),
                           seed=config.seed + index, starts=opt.starts,
                           target_fidelity=opt.target_fidelity, max_iter=opt.max_iter,
                           gtol=opt.grad_tol, stop_at_target=opt.stop_at_target)


def _semi_one(args):
    config, index, target = args
    constants = config.constants()
    grid = config.grid.optimization_grid(constants, target)
    s = config.semi
    return semi_analytic_ensemble(grid, s.threshold, constants, seed=config.seed + index,
                                  restarts=s.restarts, max_pairs=s.max_pairs, n_steps=s.substeps,
                                  perturb=s.perturb, rf_desired=s.rf_desired)


def _solve_targets(config: RunConfig, rd: RunDirectory, method: str):
    """Optimize every target, write per-target files, return waveforms and fine-grid data."""
    constants = config.constants()
    targets = config.targets.states(config.seed)
    seeds = config.targets.seeds(config.seed) if config.targets.kind == "haar" else [None] * len(targets)
    jobs = [(config, i, t) for i, t in enumerate(targets)]
    t0 = time.perf_counter()
    # process pools only pay off across targets; starts run serially inside each job
    results = _map(_optimize_one if method == "full" else _semi_one, jobs, config.threads)
    rd.manifest["timings"][f"{method}_solve_s"] = time.perf_counter() - t0
    waveforms, records, fine_all = [], [], []
    for i, (res, target) in enumerate(zip(results, targets)):
        rd.write_text(f"waveform_{i}.csv", waveform_to_csv(res.waveform))
        wf = read_waveform(rd.path / f"waveform_{i}.csv")
        if method == "full":
            data = res.to_json()
            coarse = res.fidelity
            rd.manifest["timings"][f"target_{i}_wall_time_s"] = res.wall_time
            rd.write_json(f"result_{i}.json", data)
        else:
            data = res.to_json()
            coarse = res.coarse_fidelity
            rd.write_json(f"sequence_{i}.json", data)
        fine = fine_grid_fidelities(wf, target, config, constants)
        fine_all.append(fine)
        waveforms.append(wf)
        records.append(_target_record(i, seeds[i], coarse, fine, wf.total_duration))
        log.info("target %d: coarse %.5f, fine mean %.5f, fine min %.5f, %.3f ms", i, coarse,
                 fine.mean(), fine.min(), wf.total_duration * 1e3)
    return waveforms, records, np.array(fine_all)


def run_optimize_full(config: RunConfig, rd: RunDirectory) -> dict:
    _, records, _ = _solve_targets(config, rd, "full")
    summary = _summary(records)
    rd.write_json("summary.json", summary)
    return summary


def run_synthesize_semi(config: RunConfig, rd: RunDirectory) -> dict:
    _, records, _ = _solve_targets(config, rd, "semi")
    summary = _summary(records)
    rd.write_json("summary.json", summary)
    return summary


def run_scan(config: RunConfig, rd: RunDirectory) -> dict:
    """Fidelity versus each inhomogeneity, averaged over the other two and the targets."""
    constants = config.constants()
    if config.scan.waveforms:
        targets = config.targets.states(config.seed)
        if len(targets) != len(config.scan.waveforms):
            raise ValueError("scan.waveforms needs one waveform per target")
        fines, records = [], []
        for i, (path, t) in enumerate(zip(config.scan.waveforms, targets)):
            rd.record_input(path)
            wf = read_waveform(path)
            fine = fine_grid_fidelities(wf, t, config, constants)
            fines.append(fine)
            records.append(_target_record(i, None, float("nan"), fine, wf.total_duration))
        fines = np.array(fines)
    else:
        _, records, fines = _solve_targets(config, rd, config.scan.method)
    rows = scan_rows(fines, config)
    rd.write_csv("scan.csv", SCAN_HEADER, rows)
    summary = _summary(records)
    summary["scan_rows"] = len(rows)
    rd.write_json("summary.json", summary)
    return summary


def tomography_setup(config: RunConfig):
    tc = config.tomography
    profile = DetuningProfile(TWO_PI * tc.delta0_hz, tc.a_m, tc.m)
    centers = tc.region_centers_hz or [0.0, tc.delta0_hz]
    targets = RegionTargets(tuple(named_state(n) for n in tc.region_targets),
                            tuple(TWO_PI * c for c in centers),
                            tuple(TWO_PI * o for o in tc.offsets_hz))
    return profile, targets


def region_stats(table, lo: float, hi: float) -> dict:
    sel = (table.x_m >= lo) & (table.x_m <= hi)
    return {"x_min_m": lo, "x_max_m": hi, "max_abs_fz": float(np.max(np.abs(table.fz[sel]))),
            "min_fz2": float(np.min(table.fz2[sel])), "max_fz2": float(np.max(table.fz2[sel]))}


def run_tomography(config: RunConfig, rd: RunDirectory) -> dict:
    constants = config.constants()
    tc = config.tomography
    profile, targets = tomography_setup(config)
    opt = config.optimizer
    res = optimize_phases(targets.grid(), constants, duration=tc.duration_s, seed=config.seed,
                          starts=opt.starts, target_fidelity=opt.target_fidelity,
                          max_iter=opt.max_iter, gtol=opt.grad_tol,
                          stop_at_target=opt.stop_at_target, threads=config.threads)
    rd.manifest["timings"]["optimize_s"] = res.wall_time
    rd.write_json("result.json", res.to_json())
    rd.write_text("waveform.csv", waveform_to_csv(res.waveform))
    wf = read_waveform(rd.path / "waveform.csv")
    positions = np.linspace(0.0, tc.x_max_m, tc.positions)
    table = evaluate_profile(wf, positions, profile, constants, targets)
    rd.write_csv("profile.csv", table.header(), table.rows())
    summary = {"objective": res.fidelity, "n_steps": len(wf), "duration_s": wf.total_duration,
               "region1": region_stats(table, 0.0, 0.3e-3),
               "region2": region_stats(table, 0.6e-3, 1.0e-3)}
    rd.write_json("summary.json", summary)
    return summary


def run_haar_sample(config: RunConfig, rd: RunDirectory) -> dict:
    from .optimizer import haar_random_state

    base = config.seed if config.targets.seed is None else config.targets.seed
    states = []
    for i in range(config.haar.count):
        psi = haar_random_state(config.haar.dim, [base, i])
        states.append({"seed": [base, i], "amplitudes": [[float(c.real), float(c.imag)] for c in psi]})
    rd.write_json("targets.json", {"dim": config.haar.dim, "states": states})
    return {"count": len(states)}


def reversal_defect(waveform: ControlWaveform, delta: float, constants: ModelConstants,
                    eps_rf: float = 0.0, eps_uw: float = 0.0) -> float:
    """``max |U(w^-1, -D) - U(w, D)^+|``; zero up to rounding for any waveform."""
    from .model import InhomogeneityPoint

    fwd = propagate(waveform, InhomogeneityPoint(eps_rf, eps_uw, delta), constants)
    back = propagate(waveform.inverse(), InhomogeneityPoint(eps_rf, eps_uw, -delta), constants)
    return float(np.max(np.abs(back - fwd.conj().T)))


FIDELITY_TOL = 1e-12
REVERSAL_TOL = 1e-10


class ChecksumError(ValueError):
    pass


class VerificationError(ValueError):
    pass


def run_verify(config: RunConfig, rd: RunDirectory) -> dict:
    """Re-simulate a stored waveform; the independent checker for stored results."""
    vc = config.verify
    constants = config.constants()
    path = Path(vc.waveform)
    rd.record_input(path)
    report: dict = {"waveform": str(path)}
    manifest_path = Path(vc.manifest) if vc.manifest else path.parent / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path) as fh:
            recorded = json.load(fh).get("outputs", {})
        expected = recorded.get(path.name)
        actual = sha256_file(path)
        report["checksum"] = {"expected": expected, "actual": actual}
        if expected is not None and expected != actual:
            raise ChecksumError(f"{path}: checksum mismatch with {manifest_path}")
    wf = read_waveform(path)
    targets = config.targets.states(config.seed)
    if vc.target_index >= len(targets):
        raise ValueError(f"target_index {vc.target_index} out of range for {len(targets)} targets")
    target = targets[vc.target_index]
    coarse = config.grid.optimization_grid(constants, target)
    per_point = point_fidelities(wf, coarse, constants)
    report["coarse_mean_fidelity"] = float(coarse.weights @ per_point)
    fine = fine_grid_fidelities(wf, target, config, constants)
    report["fine_mean_fidelity"] = float(fine.mean())
    report["fine_min_fidelity"] = float(fine.min())
    if vc.result:
        rd.record_input(vc.result)
        with open(vc.result) as fh:
            stored = np.array(json.load(fh)["per_point_fidelity"])
        if stored.shape != per_point.shape:
            raise ValueError("stored per-point fidelities do not match the configured grid")
        report["max_stored_deviation"] = float(np.max(np.abs(stored - per_point)))
    report["reversal_defect"] = reversal_defect(wf, float(np.max(np.abs(coarse.delta))), constants,
                                                float(coarse.eps_rf[-1]), float(coarse.eps_uw[-1]))
    failures = []
    if report.get("max_stored_deviation", 0.0) > FIDELITY_TOL:
        failures.append(f"stored fidelities differ by {report['max_stored_deviation']:.3g}")
    if not constants.rf_residual and report["reversal_defect"] > REVERSAL_TOL:
        failures.append(f"reversal identity violated by {report['reversal_defect']:.3g}")
    report["passed"] = not failures
    rd.write_json("report.json", report)
    if failures:
        raise VerificationError("; ".join(failures))
    return report


RUNNERS = {
    "optimize-full": run_optimize_full,
    "synthesize-semi": run_synthesize_semi,
    "scan": run_scan,
    "tomography": run_tomography,
    "haar-sample": run_haar_sample,
    "verify": run_verify,
}


def run(config: RunConfig, out_dir=None) -> tuple[Path, dict]:
    """Execute a run and return ``(run_directory, summary)``."""
    out = Path(out_dir) if out_dir is not None else default_run_dir(config)
    rd = RunDirectory(out, config)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("hfqudit")
    root.addHandler(handler)
    root.setLevel(min(root.level or logging.INFO, logging.INFO))
    t0 = time.perf_counter()
    try:
        summary = RUNNERS[config.mode](config, rd)
    except Exception:
        rd.finalize("failed", time.perf_counter() - t0)
        raise
    finally:
        root.removeHandler(handler)
        handler.close()
    rd.finalize("ok", time.perf_counter() - t0)
    return out, summary
