"""Experiment configuration: TOML files with one section per module.

Every key is declared in :data:`SCHEMA`; anything else is rejected with the
key path and source line so typos never silently fall back to a default.
Some experiments start from different defaults (see :data:`EXPERIMENT_DEFAULTS`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

EXPERIMENTS = (
    "evolve",
    "evolve-pair",
    "epr-delta1",
    "causal-channel",
    "cosmo-integrate",
    "cosmo-reconstruct-b",
    "energy-check",
)

SECTIONS = ("grid", "dg", "epr", "cosmo", "output")


@dataclass(frozen=True)
class Key:
    kind: type
    default: Any
    doc: str
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


KEYS: dict[str, Key] = {
    # grid
    "grid.dim": Key(int, 1, "spatial dimension per particle", lambda v: v in (1, 2), "must be 1 or 2"),
    "grid.points": Key(int, 512, "samples per axis (power of two recommended)", lambda v: v >= 8, "must be >= 8"),
    "grid.length": Key(float, 40.0, "box length per axis", _pos, "must be > 0"),
    # dg
    "dg.hbar": Key(float, 1.0, "reduced Planck constant", _pos, "must be > 0"),
    "dg.mass": Key(float, 1.0, "particle mass", _pos, "must be > 0"),
    "dg.D": Key(float, 0.0, "DG diffusion coefficient (one-particle runs)"),
    "dg.D_a": Key(float, 0.0, "DG coefficient of particle a (pair runs)"),
    "dg.D_b": Key(float, 0.0, "DG coefficient of particle b (pair runs, Delta_1)"),
    "dg.D_a_alt": Key(float, 0.0, "particle-a DG coefficient in the second causal-channel variant"),
    "dg.allow_negative_D": Key(bool, False, "permit D < 0 (ill-posed, no stability promise)"),
    "dg.r1": Key(float, 0.0, "coefficient of div(j)/rho in R"),
    "dg.r2": Key(float, 0.0, "coefficient of lap(rho)/rho in R"),
    "dg.r3": Key(float, 0.0, "coefficient of j^2/rho^2 in R"),
    "dg.r4": Key(float, 0.0, "coefficient of j.grad(rho)/rho^2 in R"),
    "dg.r5": Key(float, 0.0, "coefficient of |grad rho|^2/rho^2 in R"),
    "dg.floor_rel": Key(float, 1e-12, "density floor relative to mean(|psi|^2)", _pos, "must be > 0"),
    "dg.V0": Key(float, 0.0, "amplitude of V(x) = V0 (1 - cos(2 pi x / L)) (one-particle runs)"),
    "dg.V_a": Key(float, 0.0, "particle-a potential amplitude (pair runs, first variant)"),
    "dg.V_a_alt": Key(float, 8.0, "particle-a potential amplitude in the second causal-channel variant"),
    "dg.t_final": Key(float, 2.0, "evolution end time", _nonneg, "must be >= 0"),
    "dg.dt": Key(float, 0.0, "time step; 0 selects the suggested step", _nonneg, "must be >= 0"),
    "dg.dt_scale": Key(float, 1.0, "multiplier applied to the suggested step when dg.dt = 0", _pos, "must be > 0"),
    "dg.sample_every": Key(int, 100, "steps between trajectory samples", lambda v: v >= 1, "must be >= 1"),
    "dg.initial": Key(str, "gaussian", "initial one-particle state", lambda v: v in ("gaussian", "plane_wave"), "must be gaussian or plane_wave"),
    "dg.sigma0": Key(float, 1.0, "gaussian density standard deviation", _pos, "must be > 0"),
    "dg.x0": Key(float, 0.0, "gaussian centre"),
    "dg.k0": Key(float, 0.0, "gaussian carrier wavenumber"),
    "dg.mode": Key(int, 1, "plane-wave mode number (k = 2 pi mode / L)"),
    "dg.observables": Key(list, [], "extra diagnostics: any of x, x2, cos, p, p2"),
    # epr
    "epr.state": Key(str, "epr", "two-particle initial state", lambda v: v in ("epr", "product"), "must be epr or product"),
    "epr.sigma_c": Key(float, 0.0, "correlation width; 0 selects 4 cells", _nonneg, "must be >= 0"),
    "epr.sigma_env": Key(float, 0.0, "envelope width; 0 selects box/8", _nonneg, "must be >= 0"),
    "epr.center": Key(float, 0.0, "centre x0 of the EPR envelope"),
    "epr.product_sigma": Key(float, 1.0, "density width of both factors of the product control", _pos, "must be > 0"),
    "epr.product_k_b": Key(float, 0.0, "carrier wavenumber of the b factor of the product control"),
    "epr.q": Key(float, 0.0, "position outcome on particle a"),
    "epr.p": Key(float, 0.0, "momentum outcome on particle a (commensurate with the box)"),
    "epr.s_min": Key(float, 0.0, "smallest sharpness; 0 selects s_max/10", _nonneg, "must be >= 0"),
    "epr.s_max": Key(float, 0.0, "largest sharpness; 0 selects the resolvability limit", _nonneg, "must be >= 0"),
    "epr.s_count": Key(int, 8, "number of sharpness values (geometric spacing)", lambda v: v >= 4, "must be >= 4"),
    "epr.observable": Key(str, "cos", "observable B on particle b", lambda v: v in ("cos", "x", "x2", "one"), "must be cos, x, x2 or one"),
    "epr.observable_mode": Key(int, 1, "mode m of B = cos(2 pi m x / L)"),
    "epr.threshold": Key(float, 1e-3, "causal-channel detection threshold on the trace distance", _pos, "must be > 0"),
    # cosmo
    "cosmo.kappa0": Key(float, math.sqrt(3.0), "gravitational coupling kappa0 (kappa0^2 = 3 gives H^2 = rho)", _pos, "must be > 0"),
    "cosmo.w": Key(float, -1.2, "phantom equation-of-state parameter"),
    "cosmo.b0": Key(float, 0.0, "constant coupling b"),
    "cosmo.b_table_t": Key(list, [], "times of a tabulated b(t) (overrides b0 when non-empty)"),
    "cosmo.b_table_b": Key(list, [], "values of a tabulated b(t)"),
    "cosmo.t0": Key(float, 0.0, "initial time"),
    "cosmo.a0": Key(float, 1.0, "initial scale factor", _pos, "must be > 0"),
    "cosmo.rho_m0": Key(float, 0.3, "initial matter density", _nonneg, "must be >= 0"),
    "cosmo.rho_ph0": Key(float, 0.7, "initial phantom density", _nonneg, "must be >= 0"),
    "cosmo.t_final": Key(float, 1.0, "integration end time"),
    "cosmo.rtol": Key(float, 1e-11, "relative tolerance", _pos, "must be > 0"),
    "cosmo.atol": Key(float, 1e-14, "absolute tolerance", _pos, "must be > 0"),
    "cosmo.sample_dt": Key(float, 0.002, "output sampling interval", _pos, "must be > 0"),
    "cosmo.a_max": Key(float, 1e6, "scale factor at which a big rip is declared", _pos, "must be > 0"),
    "cosmo.eta": Key(float, 1e-8, "dead band |b| <= eta classified as zero", _nonneg, "must be >= 0"),
    "cosmo.trajectory": Key(str, "", "input trajectory CSV for reconstruct-b (empty: integrate first)"),
    "cosmo.rho": Key(list, [1.0, 1.0, 1.0, 1.0, 1.0], "energy densities for energy-check"),
    "cosmo.p": Key(list, [0.0, -1.0, -1.2, 1.0 / 3.0, 2.0], "pressures for energy-check"),
    # output
    "output.dir": Key(str, "", "output directory (empty: --out, then $NLQG_OUT, then ./nlqg-runs)"),
    "output.checkpoint": Key(bool, True, "write final wavefields in the binary checkpoint format"),
}

EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "evolve": {},
    "evolve-pair": {"grid.points": 128, "grid.length": 20.0, "dg.t_final": 1.0, "dg.sample_every": 400},
    "causal-channel": {
        "grid.points": 128,
        "grid.length": 20.0,
        "dg.D_b": 0.1,
        "dg.t_final": 1.5,
        "dg.sample_every": 200,
    },
    "epr-delta1": {"grid.points": 256, "grid.length": 40.0, "dg.D_b": 0.05},
    "cosmo-integrate": {},
    "cosmo-reconstruct-b": {},
    "energy-check": {},
}


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict[str, Any]
    source: Path | None = None
    source_text: str | None = field(default=None, repr=False)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def resolved(self) -> dict[str, Any]:
        """Nested dict of every key, suitable for echoing into manifests."""
        out: dict[str, Any] = {"experiment": self.experiment}
        for k in sorted(self.values):
            sec, name = k.split(".", 1)
            out.setdefault(sec, {})[name] = self.values[k]
        return out


def defaults_for(experiment: str) -> dict[str, Any]:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}", key="experiment")
    values = {k: (list(spec.default) if isinstance(spec.default, list) else spec.default) for k, spec in KEYS.items()}
    values.update(EXPERIMENT_DEFAULTS[experiment])
    return values


def _locate(text: str | None, dotted: str) -> int | None:
    """Best-effort 1-based line number of ``dotted`` in TOML source."""
    if not text:
        return None
    section, _, name = dotted.rpartition(".")
    current = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", line)
        if m:
            current = m.group(1)
            continue
        m = re.match(r"^([A-Za-z0-9_.\-\"' ]+?)\s*=", line)
        if not m:
            continue
        key = m.group(1).replace('"', "").replace("'", "").replace(" ", "")
        full = f"{current}.{key}" if current else key
        if full == dotted or (not section and key == name):
            return lineno
    return None


def _flatten(data: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in data.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, path + "."))
        else:
            out[path] = v
    return out


def _coerce(key: str, value: Any, line: int | None) -> Any:
    spec = KEYS[key]
    kind = spec.kind
    ok = True
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            ok = False
        else:
            value = float(value)
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            else:
                ok = False
    elif kind is bool:
        ok = isinstance(value, bool)
    elif kind is str:
        ok = isinstance(value, str)
    elif kind is list:
        ok = isinstance(value, list)
        if ok and key != "dg.observables":
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
                ok = False
            else:
                value = [float(x) for x in value]
        elif ok:
            ok = all(isinstance(x, str) and x in ("x", "x2", "cos", "p", "p2") for x in value)
    if not ok:
        raise ConfigError(f"expected {kind.__name__}, got {value!r}", key=key, line=line)
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{spec.rule} (got {value!r})", key=key, line=line)
    return value


def _validate(values: dict[str, Any], text: str | None) -> None:
    # cross-key constraints
    if values["dg.D"] < 0 or values["dg.D_a"] < 0 or values["dg.D_b"] < 0 or values["dg.D_a_alt"] < 0:
        if not values["dg.allow_negative_D"]:
            bad = next(k for k in ("dg.D", "dg.D_a", "dg.D_b", "dg.D_a_alt") if values[k] < 0)
            raise ConfigError("negative D needs dg.allow_negative_D = true", key=bad, line=_locate(text, bad))
    if len(values["cosmo.b_table_t"]) != len(values["cosmo.b_table_b"]):
        raise ConfigError("b_table_t and b_table_b differ in length", key="cosmo.b_table_b", line=_locate(text, "cosmo.b_table_b"))
    if len(values["cosmo.rho"]) != len(values["cosmo.p"]):
        raise ConfigError("rho and p lists differ in length", key="cosmo.p", line=_locate(text, "cosmo.p"))


def build_config(
    data: dict[str, Any],
    experiment: str | None = None,
    text: str | None = None,
    source: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Validate a parsed mapping (plus overrides) against the schema."""
    flat = _flatten(data)
    file_exp = flat.pop("experiment", None)
    if file_exp is not None and not isinstance(file_exp, str):
        raise ConfigError("experiment must be a string", key="experiment", line=_locate(text, "experiment"))
    if experiment and file_exp and experiment != file_exp:
        raise ConfigError(
            f"config names experiment {file_exp!r} but {experiment!r} was requested",
            key="experiment",
            line=_locate(text, "experiment"),
        )
    exp = experiment or file_exp
    if not exp:
        raise ConfigError("no experiment given (set experiment = \"...\" or use a subcommand)", key="experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}", key="experiment", line=_locate(text, "experiment")
        )
    values = defaults_for(exp)
    for key, value in flat.items():
        if key not in KEYS:
            raise ConfigError("unknown key", key=key, line=_locate(text, key))
        values[key] = _coerce(key, value, _locate(text, key))
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError("unknown key (from --override)", key=key)
        values[key] = _coerce(key, value, None)
    _validate(values, text)
    return ExperimentConfig(exp, values, source, text)


def parse_config(path: str | Path, experiment: str | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read and validate a TOML config file; defaults fill every missing key."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    text = path.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    return build_config(data, experiment, text, path, overrides)


def parse_override(item: str) -> tuple[str, Any]:
    """``key=value`` with ``value`` read as a TOML literal, else as a bare string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key, raw = key.strip(), raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def dump_defaults(experiment: str) -> str:
    """Commented TOML listing every key with its default for ``experiment``."""
    values = defaults_for(experiment)
    lines = [f'experiment = "{experiment}"', ""]
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, spec in KEYS.items():
            if not key.startswith(section + "."):
                continue
            lines.append(f"# {spec.doc}")
            lines.append(f"{key.split('.', 1)[1]} = {_toml_value(values[key])}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)
