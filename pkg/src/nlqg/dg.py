"""Doebner-Goldin evolution on periodic grids.

The one-particle equation integrated here is

    i hbar d_t psi = -(hbar^2/2m) lap psi
                     + i D hbar (lap psi + |grad psi|^2 / |psi|^2 psi)
                     + R(psi) psi + V psi,

so that ``d_t rho = -div j + D lap rho``. ``|psi|^2`` in the denominators is
floored at ``floor_rel * mean(|psi|^2)``; the floor scales with the field,
which keeps the right-hand side exactly homogeneous of degree one.

Two-particle (separating) evolution sums one such operator per particle, each
differentiating only its own coordinates but dividing by the shared
``|Phi|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NumericalInstability
from .field import (
    DensityMatrix,
    GridSpec,
    Observable,
    WaveField,
    _k_along,
    partial_trace_b,
    spectral_derivatives,
)
from .trajectory import Trajectory

DEFAULT_FLOOR = 1e-12
NORM_JUMP = 0.1
DT_SAFETY = 0.1


@dataclass(frozen=True)
class RSpec:
    """Coefficients of ``R = c1 div(j)/rho + c2 lap(rho)/rho + c3 j^2/rho^2
    + c4 j.grad(rho)/rho^2 + c5 |grad rho|^2/rho^2``."""

    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    c5: float = 0.0

    @property
    def coefficients(self) -> tuple[float, ...]:
        return (self.c1, self.c2, self.c3, self.c4, self.c5)

    def is_zero(self) -> bool:
        return not any(self.coefficients)


@dataclass(frozen=True, eq=False)
class DGParams:
    """Physical constants for one particle species.

    ``potential`` is an optional real V(x) sampled on the one-particle grid.
    Negative ``D`` (backward diffusion) is ill-posed and needs
    ``allow_negative_D=True``.
    """

    hbar: float = 1.0
    mass: float = 1.0
    D: float = 0.0
    R: RSpec = field(default_factory=RSpec)
    potential: np.ndarray | None = None
    floor_rel: float = DEFAULT_FLOOR
    allow_negative_D: bool = False

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError("hbar must be > 0")
        if not self.mass > 0:
            raise ValueError("mass must be > 0")
        if self.D < 0 and not self.allow_negative_D:
            raise ValueError("D < 0 requires allow_negative_D=True")
        if not self.floor_rel > 0:
            raise ValueError("floor_rel must be > 0")
        if self.potential is not None:
            v = np.asarray(self.potential, dtype=np.float64)
            if not np.all(np.isfinite(v)):
                raise ValueError("potential must be finite")
            object.__setattr__(self, "potential", v)

    def is_linear(self) -> bool:
        return self.D == 0 and self.R.is_zero()


@dataclass(frozen=True)
class PairParams:
    """Separating two-particle evolution, ``H = H_a + H_b`` with no coupling."""

    params_a: DGParams
    params_b: DGParams
    coupling: str = "none"

    def __post_init__(self):
        if self.coupling != "none":
            raise ValueError("only uncoupled (separating) pair evolutions are supported")


# ---------------------------------------------------------------------------
# right-hand side


def _r_functional(psi, grads, lap, rho_eps, coeffs, hbar, mass):
    c1, c2, c3, c4, c5 = coeffs
    conj = np.conj(psi)
    j = [(hbar / mass) * np.imag(conj * g) for g in grads]
    grad_rho = [2.0 * np.real(conj * g) for g in grads]
    grad_sq = sum(np.abs(g) ** 2 for g in grads)
    div_j = (hbar / mass) * np.imag(conj * lap)
    lap_rho = 2.0 * np.real(conj * lap) + 2.0 * grad_sq
    r = np.zeros(psi.shape)
    inv = 1.0 / rho_eps
    if c1:
        r += c1 * div_j * inv
    if c2:
        r += c2 * lap_rho * inv
    if c3:
        r += c3 * sum(ji * ji for ji in j) * inv**2
    if c4:
        r += c4 * sum(ji * gi for ji, gi in zip(j, grad_rho)) * inv**2
    if c5:
        r += c5 * sum(gi * gi for gi in grad_rho) * inv**2
    return r


def r_functional(psi: WaveField, p: DGParams) -> np.ndarray:
    """Real functional R(psi) sampled on the grid (one-particle field)."""
    grads, lap = spectral_derivatives(psi.amplitudes, psi.grid, range(psi.grid.dim))
    rho = np.abs(psi.amplitudes) ** 2
    rho_eps = rho + p.floor_rel * rho.mean()
    return _r_functional(psi.amplitudes, grads, lap, rho_eps, p.R.coefficients, p.hbar, p.mass)


def _species_rhs(psi, grid, axes, p: DGParams, rho_eps, potential_shape):
    if not p.R.is_zero():
        grads, lap = spectral_derivatives(psi, grid, axes)
        out = (1j * p.hbar / (2.0 * p.mass) + p.D) * lap
        if p.D != 0:
            out += p.D * (sum(np.abs(g) ** 2 for g in grads) / rho_eps) * psi
        r = _r_functional(psi, grads, lap, rho_eps, p.R.coefficients, p.hbar, p.mass)
        out -= (1j / p.hbar) * r * psi
    else:
        # fast path: one forward transform per axis, Laplacian folded into a
        # single multiplier, gradients only when the DG bracket is active
        coef = 1j * p.hbar / (2.0 * p.mass) + p.D
        out = 0
        grad_sq = 0
        for axis in axes:
            k = _k_along(grid, psi.ndim, axis)
            psi_hat = np.fft.fft(psi, axis=axis)
            out = out + np.fft.ifft((-coef * k**2) * psi_hat, axis=axis)
            if p.D != 0:
                g = np.fft.ifft(1j * k * psi_hat, axis=axis)
                grad_sq = grad_sq + (g.real**2 + g.imag**2)
        if p.D != 0:
            out += (p.D * grad_sq / rho_eps) * psi
    if p.potential is not None:
        out -= (1j / p.hbar) * p.potential.reshape(potential_shape) * psi
    return out


def _one_particle_rhs(grid: GridSpec, p: DGParams) -> Callable[[np.ndarray], np.ndarray]:
    axes = tuple(range(grid.dim))

    def rhs(psi):
        rho_eps = None
        if not p.is_linear():
            rho = psi.real**2 + psi.imag**2
            rho_eps = rho + p.floor_rel * rho.mean()
        return _species_rhs(psi, grid, axes, p, rho_eps, grid.shape)

    return rhs


def _pair_rhs(grid: GridSpec, pp: PairParams) -> Callable[[np.ndarray], np.ndarray]:
    d = grid.dim
    axes_a, axes_b = tuple(range(d)), tuple(range(d, 2 * d))
    shape_a = grid.shape + (1,) * d
    shape_b = (1,) * d + grid.shape
    # one shared floor for both species, taken from the smaller configured value
    floor = min(pp.params_a.floor_rel, pp.params_b.floor_rel)

    linear = pp.params_a.is_linear() and pp.params_b.is_linear()

    def rhs(phi):
        rho_eps = None
        if not linear:
            rho = phi.real**2 + phi.imag**2
            rho_eps = rho + floor * rho.mean()
        return _species_rhs(phi, grid, axes_a, pp.params_a, rho_eps, shape_a) + _species_rhs(
            phi, grid, axes_b, pp.params_b, rho_eps, shape_b
        )

    return rhs


def dg_rhs(psi: WaveField, p: DGParams) -> WaveField:
    """Time derivative ``d_t psi`` of a one-particle field."""
    if psi.particle_count != 1:
        raise ValueError("dg_rhs expects a one-particle field")
    out = _one_particle_rhs(psi.grid, p)(psi.amplitudes)
    if not np.all(np.isfinite(out)):
        raise NumericalInstability("non-finite DG right-hand side; field under-resolved or floor too small")
    return psi.with_amplitudes(out)


def pair_rhs(phi: WaveField, pp: PairParams) -> WaveField:
    if phi.particle_count != 2:
        raise ValueError("pair_rhs expects a two-particle field")
    return phi.with_amplitudes(_pair_rhs(phi.grid, pp)(phi.amplitudes))


# ---------------------------------------------------------------------------
# stepping


def _rk4(y: np.ndarray, rhs, dt: float) -> np.ndarray:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _checked_rk4(y, rhs, dt, step=None, t=None):
    with np.errstate(over="ignore", invalid="ignore"):
        y_new = _rk4(y, rhs, dt)
    if not np.all(np.isfinite(y_new)):
        raise NumericalInstability("non-finite field after RK4 step", step, t)
    n0 = np.vdot(y, y).real
    n1 = np.vdot(y_new, y_new).real
    if abs(n1 - n0) > NORM_JUMP * n0:
        raise NumericalInstability(
            f"norm changed by {abs(n1 - n0) / n0:.3g} in one step (limit {NORM_JUMP})", step, t
        )
    return y_new


def step_rk4(psi: WaveField, p: DGParams | PairParams, dt: float) -> WaveField:
    """One classical RK4 step. The result is not renormalized."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if isinstance(p, PairParams):
        rhs = _pair_rhs(psi.grid, p)
    else:
        rhs = _one_particle_rhs(psi.grid, p)
    return psi.with_amplitudes(_checked_rk4(psi.amplitudes, rhs, dt))


def suggest_dt(grid: GridSpec, p: DGParams | PairParams, safety: float = DT_SAFETY) -> float:
    """Heuristic stable step ``safety / sum(hbar k^2/2m + |D| k^2)`` at the largest |k|."""
    k2 = grid.dim * grid.k_max**2
    species = [p.params_a, p.params_b] if isinstance(p, PairParams) else [p]
    rate = sum(q.hbar * k2 / (2.0 * q.mass) + abs(q.D) * k2 for q in species)
    return safety / rate


def _n_steps(t_final: float, dt: float) -> tuple[int, float]:
    if t_final < 0 or not dt > 0:
        raise ValueError("need t_final >= 0 and dt > 0")
    if t_final == 0:
        return 0, dt
    n = int(np.ceil(t_final / dt - 1e-9))
    return n, t_final / n


def _moments(psi: np.ndarray, grid: GridSpec, cell: float):
    rho = np.abs(psi) ** 2
    norm = rho.sum() * cell
    coords = grid.coords()
    mean = [float((c * rho).sum() * cell / norm) for c in coords]
    var = sum(float(((c - m) ** 2 * rho).sum() * cell / norm) for c, m in zip(coords, mean))
    return float(norm), mean[0], var


def evolve(
    psi0: WaveField,
    p: DGParams,
    t_final: float,
    dt: float,
    sample_every: int = 1,
    observables: Mapping[str, Observable] | None = None,
) -> tuple[Trajectory, WaveField]:
    """Integrate ``psi0`` to ``t_final`` with RK4.

    ``dt`` is an upper bound; the actual step is ``t_final / ceil(t_final/dt)``.
    Every ``sample_every`` steps (and at the end) the trajectory records
    ``t, norm, mean_x, var_x`` and each observable's expectation in the
    normalized state. ``var_x`` sums the variances over all axes.
    """
    if psi0.particle_count != 1:
        raise ValueError("evolve expects a one-particle field; use evolve_pair")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    observables = dict(observables or {})
    grid, cell = psi0.grid, psi0.cell_volume
    rhs = _one_particle_rhs(grid, p)
    n, h = _n_steps(t_final, dt)

    def sample(t, y):
        norm, mx, vx = _moments(y, grid, cell)
        row = [t, norm, mx, vx]
        rho = np.abs(y) ** 2
        for obs in observables.values():
            if obs.kind == "position":
                row.append(float((obs.samples * rho).sum() * cell / norm))
            else:
                yh = np.abs(np.fft.fftn(y)) ** 2
                row.append(float((obs.samples * yh).sum() / yh.sum()))
        return row

    y = psi0.amplitudes
    rows = [sample(0.0, y)]
    for i in range(1, n + 1):
        y = _checked_rk4(y, rhs, h, step=i, t=i * h)
        if i % sample_every == 0 or i == n:
            rows.append(sample(i * h, y))
    columns = ["t", "norm", "mean_x", "var_x", *observables.keys()]
    traj = Trajectory.from_rows(columns, rows, meta={"steps": n, "dt": h})
    return traj, psi0.with_amplitudes(y)


@dataclass
class PairRun:
    """Result of :func:`evolve_pair`."""

    trajectory: Trajectory
    rho_b: list[DensityMatrix]
    final: WaveField


def evolve_pair(
    phi0: WaveField,
    pp: PairParams,
    t_final: float,
    dt: float,
    sample_every: int = 1,
    record_rho: bool = True,
) -> PairRun:
    """Separating two-particle evolution; records norm and ``rho_b`` at samples.

    ``rho_b`` snapshots are taken from the normalized field so that norm drift
    does not masquerade as a change of the reduced state.
    """
    if phi0.particle_count != 2:
        raise ValueError("evolve_pair expects a two-particle field")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    rhs = _pair_rhs(phi0.grid, pp)
    n, h = _n_steps(t_final, dt)
    cell = phi0.cell_volume
    rows, snaps = [], []

    def sample(t, y):
        norm = float(np.vdot(y, y).real * cell)
        rows.append([t, norm])
        if record_rho:
            snaps.append(partial_trace_b(phi0.with_amplitudes(y / np.sqrt(norm))))

    y = phi0.amplitudes
    sample(0.0, y)
    for i in range(1, n + 1):
        y = _checked_rk4(y, rhs, h, step=i, t=i * h)
        if i % sample_every == 0 or i == n:
            sample(i * h, y)
    traj = Trajectory.from_rows(["t", "norm"], rows, meta={"steps": n, "dt": h})
    return PairRun(traj, snaps, phi0.with_amplitudes(y))


# ---------------------------------------------------------------------------
# diagnostics


def continuity_residual(
    psi_before: WaveField,
    psi_after: WaveField,
    dt: float,
    p: DGParams,
    include_diffusion: bool = True,
) -> float:
    """Max-norm of ``(rho1 - rho0)/dt + div j - D lap rho`` at the midpoint field.

    ``include_diffusion=False`` drops the ``D lap rho`` term (ablation control).
    """
    if psi_before.grid != psi_after.grid:
        raise ValueError("fields live on different grids")
    grid = psi_before.grid
    mid = 0.5 * (psi_before.amplitudes + psi_after.amplitudes)
    grads, lap = spectral_derivatives(mid, grid, range(grid.dim))
    conj = np.conj(mid)
    div_j = (p.hbar / p.mass) * np.imag(conj * lap)
    lap_rho = 2.0 * np.real(conj * lap) + 2.0 * sum(np.abs(g) ** 2 for g in grads)
    drho = (np.abs(psi_after.amplitudes) ** 2 - np.abs(psi_before.amplitudes) ** 2) / dt
    res = drho + div_j
    if include_diffusion:
        res = res - p.D * lap_rho
    return float(np.max(np.abs(res)))


def fidelity(f: WaveField, g: WaveField) -> float:
    """``|(f, g)|^2 / (|f|^2 |g|^2)``."""
    ov = np.vdot(f.amplitudes, g.amplitudes)
    return float(abs(ov) ** 2 / (np.vdot(f.amplitudes, f.amplitudes).real * np.vdot(g.amplitudes, g.amplitudes).real))


def gaussian_packet(grid: GridSpec, sigma: float, x0: float = 0.0, k0: float = 0.0) -> WaveField:
    """Normalized ``exp(-(x-x0)^2/(4 sigma^2) + i k0 x)``; density variance sigma^2 per axis."""
    coords = grid.coords()
    arg = sum(-((c - x0) ** 2) / (4.0 * sigma**2) for c in coords)
    phase = k0 * coords[0]
    return WaveField(grid, np.exp(arg + 1j * phase)).normalized()


def plane_wave(grid: GridSpec, mode: int | Sequence[int]) -> WaveField:
    """Normalized commensurate plane wave ``exp(i k.x)`` with ``k = 2 pi mode / L``."""
    modes = [mode] * grid.dim if np.isscalar(mode) else list(mode)
    coords = grid.coords()
    phase = sum(2.0 * np.pi * m / grid.length * c for m, c in zip(modes, coords))
    return WaveField(grid, np.exp(1j * phase)).normalized()
