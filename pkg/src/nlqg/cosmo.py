"""Flat FRW universe with matter and phantom energy exchanging energy at rate b.

    H^2         = (kappa0^2 / 3) (rho_m + rho_ph)
    rho_m'  + 3 H rho_m        = -b rho_m
    rho_ph' + 3 gamma H rho_ph = +b rho_m,      gamma = w + 1

With Omega_m = rho_m / rho the system implies the identity

    b = 3 w H (1 - Omega_m) - Omega_m' / Omega_m

which :func:`reconstruct_b` evaluates on sampled trajectories.

Units default to kappa0^2 = 3, so H^2 equals the total density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NumericalInstability
from .trajectory import Trajectory

TRAJECTORY_COLUMNS = ["t", "a", "H", "rho_m", "rho_ph", "omega_m"]
OMEGA_MIN = 1e-6


@dataclass(frozen=True)
class BModel:
    """Coupling b(t): constant ``b0`` or a table interpolated linearly.

    Outside the tabulated range the end values are held.
    """

    b0: float = 0.0
    t_table: tuple[float, ...] | None = None
    b_table: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.t_table is None) != (self.b_table is None):
            raise ValueError("tabulated b needs both t_table and b_table")
        if self.t_table is not None:
            t = np.asarray(self.t_table, dtype=float)
            b = np.asarray(self.b_table, dtype=float)
            if t.shape != b.shape or t.size < 2:
                raise ValueError("t_table and b_table need equal length >= 2")
            if np.any(np.diff(t) <= 0):
                raise ValueError("t_table must be strictly increasing")
            object.__setattr__(self, "t_table", tuple(t.tolist()))
            object.__setattr__(self, "b_table", tuple(b.tolist()))

    @classmethod
    def constant(cls, b0: float) -> "BModel":
        return cls(b0=float(b0))

    @classmethod
    def tabulated(cls, t: Sequence[float], b: Sequence[float]) -> "BModel":
        return cls(t_table=tuple(t), b_table=tuple(b))

    @property
    def is_tabulated(self) -> bool:
        return self.t_table is not None

    def __call__(self, t: float) -> float:
        if self.t_table is None:
            return self.b0
        return float(np.interp(t, self.t_table, self.b_table))


@dataclass(frozen=True)
class CosmoParams:
    kappa0: float = math.sqrt(3.0)
    w: float = -1.2
    b_model: BModel = field(default_factory=BModel)

    def __post_init__(self):
        if not self.kappa0 > 0:
            raise ValueError("kappa0 must be > 0")

    @property
    def gamma(self) -> float:
        return self.w + 1.0


@dataclass(frozen=True)
class CosmoState:
    t: float
    a: float
    rho_m: float
    rho_ph: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("scale factor must be > 0")
        if self.rho_m < 0 or self.rho_ph < 0:
            raise ValueError("densities must be >= 0")

    @property
    def rho(self) -> float:
        return self.rho_m + self.rho_ph

    @property
    def omega_m(self) -> float:
        return self.rho_m / self.rho


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-11
    atol: float = 1e-14
    sample_dt: float = 0.002
    a_max: float = 1e6

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be > 0")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be > 0")
        if not self.a_max > 0:
            raise ValueError("a_max must be > 0")


@dataclass(frozen=True)
class EnergyConditionReport:
    weak: bool
    dominant: bool
    rho: float
    p: float


def hubble(state: CosmoState, params: CosmoParams) -> float:
    """Expanding-branch Hubble rate."""
    total = state.rho_m + state.rho_ph
    if total < 0:
        raise ValueError("negative total density")
    return math.sqrt(params.kappa0**2 / 3.0 * total)


def cosmo_rhs(state: CosmoState, params: CosmoParams) -> tuple[float, float, float]:
    """``(da/dt, drho_m/dt, drho_ph/dt)``."""
    h = hubble(state, params)
    b = params.b_model(state.t)
    return (
        state.a * h,
        -(3.0 * h + b) * state.rho_m,
        -3.0 * params.gamma * h * state.rho_ph + b * state.rho_m,
    )


def integrate(
    initial: CosmoState,
    params: CosmoParams,
    t_final: float,
    tolerances: Tolerances | None = None,
) -> Trajectory:
    """Integrate with an embedded 8(5,3) Runge-Kutta pair, sampling every ``sample_dt``.

    Stops early with ``meta["termination"]`` set to ``"big_rip"`` once ``a``
    reaches ``a_max`` or ``"unphysical"`` when a density turns negative; the
    stopping state is appended as the final row.
    """
    tol = tolerances or Tolerances()
    t0 = initial.t
    if not t_final >= t0:
        raise ValueError("t_final must be >= initial time")
    k2 = params.kappa0**2 / 3.0
    gamma = params.gamma
    bfun = params.b_model

    def rhs(t, y):
        a, rm, rp = y
        h = math.sqrt(max(k2 * (rm + rp), 0.0))
        b = bfun(t)
        return [a * h, -(3.0 * h + b) * rm, -3.0 * gamma * h * rp + b * rm]

    def rip(t, y):
        return y[0] - tol.a_max

    rip.terminal, rip.direction = True, 1

    def matter_negative(t, y):
        return y[1] + tol.atol

    def phantom_negative(t, y):
        return y[2] + tol.atol

    for ev in (matter_negative, phantom_negative):
        ev.terminal, ev.direction = True, -1

    n_samples = int(math.floor((t_final - t0) / tol.sample_dt + 1e-9))
    t_eval = t0 + tol.sample_dt * np.arange(n_samples + 1)
    if t_final - t_eval[-1] > 1e-9 * max(1.0, abs(t_final)):
        t_eval = np.append(t_eval, t_final)
    y0 = [initial.a, initial.rho_m, initial.rho_ph]

    termination = "t_final_reached"
    if initial.a >= tol.a_max:
        ts, ys = np.array([t0]), np.array([y0]).T
        termination = "big_rip"
    elif t_final == t0:
        ts, ys = np.array([t0]), np.array([y0]).T
    else:
        sol = solve_ivp(
            rhs,
            (t0, t_final),
            y0,
            method="DOP853",
            t_eval=t_eval,
            events=(rip, matter_negative, phantom_negative),
            rtol=tol.rtol,
            atol=tol.atol,
        )
        if sol.status == -1:
            raise NumericalInstability(f"cosmology integration failed: {sol.message}")
        ts, ys = sol.t, sol.y
        if sol.status == 1:
            if sol.t_events[0].size:
                termination, te, ye = "big_rip", sol.t_events[0][0], sol.y_events[0][0]
            else:
                idx = 1 if sol.t_events[1].size else 2
                termination, te, ye = "unphysical", sol.t_events[idx][0], sol.y_events[idx][0]
            if ts.size == 0 or te > ts[-1]:
                ts = np.append(ts, te)
                ys = np.column_stack([ys, ye]) if ys.size else np.asarray(ye).reshape(3, 1)

    a, rm, rp = ys
    rho = rm + rp
    h = np.sqrt(np.maximum(k2 * rho, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = np.where(rho > 0, rm / rho, np.nan)
    data = np.column_stack([ts, a, h, rm, rp, omega])
    return Trajectory(list(TRAJECTORY_COLUMNS), data, meta={"termination": termination, "t_end": float(ts[-1])})


def b_from_omega(H, omega_m, omega_dot, w: float):
    """Coupling implied by ``(H, Omega_m, dOmega_m/dt)``."""
    H, omega_m, omega_dot = map(np.asarray, (H, omega_m, omega_dot))
    return 3.0 * w * H * (1.0 - omega_m) - omega_dot / omega_m


def reconstruct_b(traj: Trajectory, params: CosmoParams) -> Trajectory:
    """Tabulate b(t) from sampled ``H`` and ``Omega_m``.

    ``dOmega_m/dt`` uses second-order centered differences inside and
    second-order one-sided differences at both ends.
    """
    if len(traj) < 5:
        raise ValueError("reconstruct_b needs at least 5 samples")
    t = traj["t"]
    omega = traj["omega_m"]
    if not np.all(np.isfinite(omega)) or np.min(omega) < OMEGA_MIN:
        raise ValueError(f"Omega_m falls below {OMEGA_MIN}; b reconstruction would divide by ~0")
    omega_dot = np.gradient(omega, t, edge_order=2)
    b = b_from_omega(traj["H"], omega, omega_dot, params.w)
    return Trajectory(["t", "b"], np.column_stack([t, b]))


def b_sign_intervals(t: Sequence[float], b: Sequence[float], eta: float = 1e-8) -> list[tuple[float, float, int]]:
    """Maximal runs of constant sign of b; ``|b| <= eta`` counts as zero.

    Neighbouring runs meet at the midpoint between their bordering samples.
    """
    t = np.asarray(t, dtype=float)
    b = np.asarray(b, dtype=float)
    if t.size == 0 or t.shape != b.shape:
        raise ValueError("need a non-empty table with matching t and b")
    signs = np.where(np.abs(b) <= eta, 0, np.sign(b)).astype(int)
    out = []
    start = 0
    for i in range(1, t.size + 1):
        if i == t.size or signs[i] != signs[start]:
            lo = t[0] if start == 0 else 0.5 * (t[start - 1] + t[start])
            hi = t[-1] if i == t.size else 0.5 * (t[i - 1] + t[i])
            out.append((float(lo), float(hi), int(signs[start])))
            start = i
    return out


def energy_conditions(rho: float, p: float) -> EnergyConditionReport:
    """Perfect-fluid weak and dominant energy conditions (inclusive bounds)."""
    weak = rho >= 0 and rho + p >= 0
    dominant = rho >= abs(p)
    return EnergyConditionReport(weak=bool(weak), dominant=bool(dominant), rho=float(rho), p=float(p))
