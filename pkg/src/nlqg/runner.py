"""Experiment registry and deterministic run execution.

A run writes its data files plus ``summary.json`` (deterministic) and
``manifest.json`` (adds timing and hashes; written last, atomically).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .cosmo import (
    BModel,
    CosmoParams,
    CosmoState,
    Tolerances,
    b_sign_intervals,
    energy_conditions,
    integrate,
    reconstruct_b,
)
from .dg import (
    DGParams,
    PairParams,
    RSpec,
    evolve,
    evolve_pair,
    fidelity,
    gaussian_packet,
    plane_wave,
    suggest_dt,
)
from .entanglement import (
    EPRSpec,
    causal_channel_demo,
    delta1_sweep,
    make_epr,
    resolvable_s_max,
)
from .errors import ConfigError, NumericalInstability, UnphysicalState
from .field import GridSpec, Observable, WaveField, purity, save_field
from .trajectory import Trajectory, format_float

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_INSTABILITY = 3
EXIT_UNPHYSICAL = 4

STATUS_BY_CODE = {
    EXIT_OK: "ok",
    EXIT_FAILURE: "error",
    EXIT_VALIDATION: "validation-failure",
    EXIT_INSTABILITY: "numerical-instability",
    EXIT_UNPHYSICAL: "unphysical-termination",
}


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    outputs: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return STATUS_BY_CODE[self.exit_code]


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json_atomic(path: Path, payload: dict) -> Path:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _grid(cfg: ExperimentConfig) -> GridSpec:
    return GridSpec(cfg["grid.dim"], cfg["grid.points"], cfg["grid.length"])


def _cos_potential(grid: GridSpec, amplitude: float) -> np.ndarray | None:
    if amplitude == 0:
        return None
    x = grid.coords()[0]
    return amplitude * (1.0 - np.cos(2.0 * np.pi * x / grid.length))


def _dg_params(cfg: ExperimentConfig, D: float, grid: GridSpec, V0: float = 0.0) -> DGParams:
    return DGParams(
        hbar=cfg["dg.hbar"],
        mass=cfg["dg.mass"],
        D=D,
        R=RSpec(cfg["dg.r1"], cfg["dg.r2"], cfg["dg.r3"], cfg["dg.r4"], cfg["dg.r5"]),
        potential=_cos_potential(grid, V0),
        floor_rel=cfg["dg.floor_rel"],
        allow_negative_D=cfg["dg.allow_negative_D"],
    )


def _dt(cfg: ExperimentConfig, grid: GridSpec, params) -> float:
    if cfg["dg.dt"] > 0:
        return cfg["dg.dt"]
    return suggest_dt(grid, params) * cfg["dg.dt_scale"]


def _observables(cfg: ExperimentConfig, grid: GridSpec) -> dict[str, Observable]:
    L = grid.length
    table = {
        "x": lambda: Observable.position(grid, lambda *c: c[0]),
        "x2": lambda: Observable.position(grid, lambda *c: sum(ci**2 for ci in c)),
        "cos": lambda: Observable.position(grid, lambda *c: np.cos(2 * np.pi * c[0] / L)),
        "p": lambda: Observable.momentum(grid, lambda *k: cfg["dg.hbar"] * k[0]),
        "p2": lambda: Observable.momentum(grid, lambda *k: cfg["dg.hbar"] ** 2 * sum(ki**2 for ki in k)),
    }
    return {name: table[name]() for name in cfg["dg.observables"]}


def _epr_spec(cfg: ExperimentConfig, grid: GridSpec) -> EPRSpec:
    sc = cfg["epr.sigma_c"] or 4.0 * grid.dx
    se = cfg["epr.sigma_env"] or grid.length / 8.0
    return EPRSpec(sc, se, grid, cfg["epr.center"])


def _initial_pair(cfg: ExperimentConfig, grid: GridSpec) -> WaveField:
    if cfg["epr.state"] == "epr":
        return make_epr(_epr_spec(cfg, grid))
    a, b = _product_factors(cfg, grid)
    return WaveField.product(a, b)


def _product_factors(cfg, grid):
    sig = cfg["epr.product_sigma"]
    a = gaussian_packet(grid, sig, cfg["epr.center"])
    b = gaussian_packet(grid, sig, cfg["epr.center"], cfg["epr.product_k_b"])
    return a, b


def _b_observable(cfg: ExperimentConfig, grid: GridSpec) -> Observable:
    L, m = grid.length, cfg["epr.observable_mode"]
    funcs = {
        "cos": lambda *c: np.cos(2 * np.pi * m * c[0] / L),
        "x": lambda *c: c[0],
        "x2": lambda *c: sum(ci**2 for ci in c),
        "one": lambda *c: np.ones_like(c[0]),
    }
    return Observable.position(grid, funcs[cfg["epr.observable"]])


def _cosmo_params(cfg: ExperimentConfig) -> CosmoParams:
    if cfg["cosmo.b_table_t"]:
        model = BModel.tabulated(cfg["cosmo.b_table_t"], cfg["cosmo.b_table_b"])
    else:
        model = BModel.constant(cfg["cosmo.b0"])
    return CosmoParams(kappa0=cfg["cosmo.kappa0"], w=cfg["cosmo.w"], b_model=model)


def _cosmo_integrate(cfg: ExperimentConfig) -> Trajectory:
    initial = CosmoState(cfg["cosmo.t0"], cfg["cosmo.a0"], cfg["cosmo.rho_m0"], cfg["cosmo.rho_ph0"])
    tol = Tolerances(cfg["cosmo.rtol"], cfg["cosmo.atol"], cfg["cosmo.sample_dt"], cfg["cosmo.a_max"])
    return integrate(initial, _cosmo_params(cfg), cfg["cosmo.t_final"], tol)


def _intervals_json(intervals):
    return [{"t_start": a, "t_end": b, "sign": s} for a, b, s in intervals]


# ---------------------------------------------------------------------------
# experiments: each returns (outputs, summary, details, exit_code)


def run_evolve(cfg: ExperimentConfig, out: Path):
    grid = _grid(cfg)
    params = _dg_params(cfg, cfg["dg.D"], grid, cfg["dg.V0"])
    if cfg["dg.initial"] == "gaussian":
        psi0 = gaussian_packet(grid, cfg["dg.sigma0"], cfg["dg.x0"], cfg["dg.k0"])
    else:
        psi0 = plane_wave(grid, cfg["dg.mode"])
    dt = _dt(cfg, grid, params)
    traj, final = evolve(psi0, params, cfg["dg.t_final"], dt, cfg["dg.sample_every"], _observables(cfg, grid))
    outputs = [traj.to_csv(out / "trajectory.csv")]
    if cfg["output.checkpoint"]:
        outputs += save_field(final, out / "final_field")
    summary = {
        "dt": traj.meta["dt"],
        "suggested_dt": suggest_dt(grid, params),
        "steps": traj.meta["steps"],
        "norm_initial": float(traj["norm"][0]),
        "norm_final": float(traj["norm"][-1]),
        "norm_drift": float(traj["norm"][-1] - traj["norm"][0]),
        "var_x_final": float(traj["var_x"][-1]),
    }
    return outputs, summary, {}, EXIT_OK


def run_evolve_pair(cfg: ExperimentConfig, out: Path):
    grid = _grid(cfg)
    pp = PairParams(
        _dg_params(cfg, cfg["dg.D_a"], grid, cfg["dg.V_a"]),
        _dg_params(cfg, cfg["dg.D_b"], grid),
    )
    phi0 = _initial_pair(cfg, grid)
    dt = _dt(cfg, grid, pp)
    res = evolve_pair(phi0, pp, cfg["dg.t_final"], dt, cfg["dg.sample_every"])
    traj = res.trajectory
    table = Trajectory(["t", "norm", "purity_b"], np.column_stack([traj["t"], traj["norm"], [purity(r) for r in res.rho_b]]))
    outputs = [table.to_csv(out / "trajectory.csv")]
    if cfg["output.checkpoint"]:
        outputs += save_field(res.final, out / "final_field")
    summary = {
        "dt": traj.meta["dt"],
        "steps": traj.meta["steps"],
        "norm_drift": float(traj["norm"][-1] - traj["norm"][0]),
        "purity_b_initial": float(table["purity_b"][0]),
        "purity_b_final": float(table["purity_b"][-1]),
    }
    if cfg["epr.state"] == "product":
        a0, b0 = _product_factors(cfg, grid)
        ta, fa = evolve(a0, pp.params_a, cfg["dg.t_final"], dt)
        tb, fb = evolve(b0, pp.params_b, cfg["dg.t_final"], dt)
        summary["factorization_fidelity"] = fidelity(res.final, WaveField.product(fa, fb))
    return outputs, summary, {}, EXIT_OK


def run_causal_channel(cfg: ExperimentConfig, out: Path):
    grid = _grid(cfg)
    pb = _dg_params(cfg, cfg["dg.D_b"], grid)
    pp1 = PairParams(_dg_params(cfg, cfg["dg.D_a"], grid, cfg["dg.V_a"]), pb)
    pp2 = PairParams(_dg_params(cfg, cfg["dg.D_a_alt"], grid, cfg["dg.V_a_alt"]), pb)
    phi0 = _initial_pair(cfg, grid)
    dt = _dt(cfg, grid, pp1) if cfg["dg.dt"] > 0 else min(_dt(cfg, grid, pp1), _dt(cfg, grid, pp2))
    traj = causal_channel_demo(phi0, pp1, pp2, cfg["dg.t_final"], dt, cfg["dg.sample_every"])
    outputs = [traj.to_csv(out / "trace_distance.csv")]
    d = traj["trace_distance"]
    threshold = cfg["epr.threshold"]
    summary = {
        "dt": traj.meta["dt"],
        "steps": traj.meta["steps"],
        "max_trace_distance": float(d.max()),
        "final_trace_distance": float(d[-1]),
        "threshold": threshold,
        "exceeds_threshold": bool(d.max() > threshold),
        "first_exceed_time": float(traj["t"][np.argmax(d > threshold)]) if d.max() > threshold else None,
    }
    return outputs, summary, {}, EXIT_OK


def run_epr_delta1(cfg: ExperimentConfig, out: Path):
    grid = _grid(cfg)
    phi = make_epr(_epr_spec(cfg, grid))
    s_max = cfg["epr.s_max"] or resolvable_s_max(grid)
    s_min = cfg["epr.s_min"] or s_max / 10.0
    s_list = np.geomspace(s_min, s_max, cfg["epr.s_count"])
    B = _b_observable(cfg, grid)
    pb = _dg_params(cfg, cfg["dg.D_b"], grid)
    res = delta1_sweep(phi, cfg["epr.q"], cfg["epr.p"], s_list, B, pb)
    table = Trajectory(["s", "delta1"], np.column_stack([res.s_values, res.delta1_values]))
    outputs = [table.to_csv(out / "delta1.csv")]
    summary = {
        "fitted_slope": res.fitted_slope,
        "fitted_intercept": res.fitted_intercept,
        "slope_stderr": res.slope_stderr,
        "fit_r2": res.fit_r2,
        "predicted_slope": res.predicted_slope,
        "slope_ratio": res.slope_ratio if res.predicted_slope else None,
        "n": grid.dim,
    }
    return outputs, summary, {}, EXIT_OK


def run_cosmo_integrate(cfg: ExperimentConfig, out: Path):
    traj = _cosmo_integrate(cfg)
    outputs = [traj.to_csv(out / "trajectory.csv")]
    params = _cosmo_params(cfg)
    t = traj["t"]
    b_in = np.array([params.b_model(ti) for ti in t])
    summary = {
        "termination": traj.meta["termination"],
        "t_end": traj.meta["t_end"],
        "a_end": float(traj["a"][-1]),
        "samples": len(traj),
        "b_sign_intervals": _intervals_json(b_sign_intervals(t, b_in, cfg["cosmo.eta"])),
    }
    code = EXIT_UNPHYSICAL if traj.meta["termination"] == "unphysical" else EXIT_OK
    return outputs, summary, {"termination": traj.meta["termination"]}, code


def run_cosmo_reconstruct_b(cfg: ExperimentConfig, out: Path):
    params = _cosmo_params(cfg)
    outputs = []
    inputs = {}
    if cfg["cosmo.trajectory"]:
        src = Path(cfg["cosmo.trajectory"])
        if not src.is_absolute() and not src.exists() and cfg.source is not None:
            src = cfg.source.parent / src
        if not src.is_file():
            raise ConfigError(f"trajectory file {str(src)!r} does not exist", key="cosmo.trajectory")
        traj = Trajectory.from_csv(src)
        inputs[str(src)] = _sha256(src)
        termination = "input"
    else:
        traj = _cosmo_integrate(cfg)
        outputs.append(traj.to_csv(out / "trajectory.csv"))
        termination = traj.meta["termination"]
        if termination == "unphysical":
            return outputs, {"termination": termination}, {"termination": termination}, EXIT_UNPHYSICAL
    btab = reconstruct_b(traj, params)
    outputs.append(btab.to_csv(out / "b.csv"))
    t, b = btab["t"], btab["b"]
    summary = {
        "termination": termination,
        "samples": len(btab),
        "b_sign_intervals": _intervals_json(b_sign_intervals(t, b, cfg["cosmo.eta"])),
        "b_min": float(b.min()),
        "b_max": float(b.max()),
        "positive_somewhere": bool(np.any(b > cfg["cosmo.eta"])),
    }
    if not cfg["cosmo.trajectory"]:
        truth = np.array([params.b_model(ti) for ti in t])
        summary["max_interior_error"] = float(np.max(np.abs(b[1:-1] - truth[1:-1])))
    return outputs, summary, {"inputs": inputs}, EXIT_OK


def run_energy_check(cfg: ExperimentConfig, out: Path):
    rows = [energy_conditions(r, p) for r, p in zip(cfg["cosmo.rho"], cfg["cosmo.p"])]
    path = out / "energy_conditions.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("rho,p,weak,dominant\n")
        for r in rows:
            fh.write(f"{format_float(r.rho)},{format_float(r.p)},{str(r.weak).lower()},{str(r.dominant).lower()}\n")
    summary = {"cases": [{"rho": r.rho, "p": r.p, "weak": r.weak, "dominant": r.dominant} for r in rows]}
    return [path], summary, {}, EXIT_OK


REGISTRY: dict[str, Callable] = {
    "evolve": run_evolve,
    "evolve-pair": run_evolve_pair,
    "epr-delta1": run_epr_delta1,
    "causal-channel": run_causal_channel,
    "cosmo-integrate": run_cosmo_integrate,
    "cosmo-reconstruct-b": run_cosmo_reconstruct_b,
    "energy-check": run_energy_check,
}


# ---------------------------------------------------------------------------


def resolve_out_dir(cfg: ExperimentConfig, out: str | Path | None) -> Path:
    if out:
        return Path(out)
    if cfg["output.dir"]:
        return Path(cfg["output.dir"])
    root = os.environ.get("NLQG_OUT")
    if root:
        return Path(root) / cfg.experiment
    return Path("nlqg-runs") / cfg.experiment


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> RunResult:
    """Execute ``cfg`` and write outputs, ``summary.json`` and ``manifest.json``."""
    out_dir = resolve_out_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    outputs: list[Path] = []
    summary: dict[str, Any] = {}
    details: dict[str, Any] = {}
    try:
        outputs, summary, details, code = REGISTRY[cfg.experiment](cfg, out_dir)
    except ConfigError as exc:
        code, details = EXIT_VALIDATION, {"error": str(exc)}
    except NumericalInstability as exc:
        code = EXIT_INSTABILITY
        details = {"error": str(exc), "aborting_step": exc.step, "aborting_time": exc.time}
    except UnphysicalState as exc:
        code, details = EXIT_UNPHYSICAL, {"error": str(exc)}
    except ValueError as exc:
        code, details = EXIT_VALIDATION, {"error": str(exc)}
    duration = time.perf_counter() - t0

    if code == EXIT_OK or summary:
        summary = {
            "experiment": cfg.experiment,
            "tool_version": __version__,
            "config": cfg.resolved(),
            "results": summary,
        }
        outputs.append(_write_json_atomic(out_dir / "summary.json", summary))

    inputs = {}
    if cfg.source is not None:
        inputs[str(cfg.source)] = _sha256(cfg.source)
    inputs.update(details.pop("inputs", {}) if isinstance(details.get("inputs"), dict) else {})
    manifest = {
        "tool": "nlqg",
        "tool_version": __version__,
        "experiment": cfg.experiment,
        "config": cfg.resolved(),
        "input_hashes": inputs,
        "outputs": [{"path": p.name, "sha256": _sha256(p), "bytes": p.stat().st_size} for p in outputs],
        "started_utc": started.isoformat(),
        "duration_s": duration,
        "status": STATUS_BY_CODE[code],
        "exit_code": code,
        "details": details,
    }
    if cfg.experiment == "causal-channel":
        manifest["calibrated_threshold"] = cfg["epr.threshold"]
    _write_json_atomic(out_dir / "manifest.json", manifest)
    log.info("%s finished with status %s in %.2fs", cfg.experiment, manifest["status"], duration)
    return RunResult(code, out_dir, outputs, summary.get("results", {}), details)
