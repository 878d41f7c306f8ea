"""Regularized EPR states, measurement collapse and the first-order rate gap.

The two-particle EPR state is the double gaussian

    phi(xa, xb) ~ exp(-|xa - xb|^2 / (4 sc^2) - |xa + xb - 2 x0|^2 / (4 se^2)),

real and even, so its total momentum vanishes by symmetry. Position collapse
on particle a multiplies by the pointer ``exp(-s |xa - q|^2)`` and integrates
particle a out; momentum collapse projects particle a on ``exp(i p xa / hbar)``.
``(phi, B phi)`` means the expectation of ``I (x) B`` in ``phi``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .dg import DGParams, PairParams, _checked_rk4, _n_steps, _pair_rhs, dg_rhs
from .errors import CollapseError
from .field import (
    GridSpec,
    Observable,
    WaveField,
    inner_product,
    marginal_density_b,
    partial_trace_b,
    trace_distance,
)
from .trajectory import Trajectory

VANISHING_NORM = 1e-10


@dataclass(frozen=True)
class EPRSpec:
    sigma_c: float
    sigma_env: float
    grid: GridSpec
    center: float = 0.0

    def __post_init__(self):
        if not 0 < self.sigma_c < self.sigma_env:
            raise ValueError("need 0 < sigma_c < sigma_env")
        dx = self.grid.dx
        if self.sigma_c < 4 * dx * (1 - 1e-12):
            raise ValueError(f"sigma_c={self.sigma_c} below 4 cells ({4 * dx})")
        if self.sigma_env > self.grid.length / 8 * (1 + 1e-12):
            raise ValueError(f"sigma_env={self.sigma_env} above box/8 ({self.grid.length / 8})")


@dataclass(frozen=True)
class MeasurementSpec:
    """Measurement on particle a: ``kind`` is "position" (outcome q, sharpness s)
    or "momentum" (outcome p)."""

    kind: str
    outcome: float | tuple[float, ...]
    resolution: float | None = None

    def __post_init__(self):
        if self.kind not in ("position", "momentum"):
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        if self.kind == "position" and not (self.resolution and self.resolution > 0):
            raise ValueError("position measurements need resolution s > 0")


@dataclass
class Delta1Result:
    s_values: list[float]
    delta1_values: list[float]
    fitted_slope: float
    fitted_intercept: float
    fit_r2: float
    predicted_slope: float
    slope_stderr: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def slope_ratio(self) -> float:
        return self.fitted_slope / self.predicted_slope if self.predicted_slope else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slope_ratio"] = self.slope_ratio
        return d


def _periodic_offsets(grid: GridSpec, center) -> tuple[np.ndarray, ...]:
    """Minimum-image displacements of every grid node from ``center``."""
    centers = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    out = []
    for c, x in zip(centers, grid.coords()):
        d = x - c
        out.append(d - grid.length * np.round(d / grid.length))
    return tuple(out)


def make_epr(spec: EPRSpec) -> WaveField:
    """Normalized double-gaussian EPR state on ``spec.grid`` (both particles)."""
    g = spec.grid
    d = g.dim
    x = g.x
    # |xa - xb|^2 and |xa + xb - 2 x0|^2 separate over Cartesian axes
    u = x[:, None] - x[None, :]
    v = x[:, None] + x[None, :] - 2.0 * spec.center
    factor = np.exp(-(u**2) / (4 * spec.sigma_c**2) - v**2 / (4 * spec.sigma_env**2))
    if d == 1:
        amp = factor
    else:
        # axes (a1, a2, b1, b2)
        amp = factor[:, None, :, None] * factor[None, :, None, :]
    return WaveField(g, amp.astype(np.complex128), particle_count=2).normalized()


def _collapse(phi: WaveField, weights_a: np.ndarray, scale: float) -> WaveField:
    g = phi.grid
    n = g.size
    mat = phi.amplitudes.reshape(n, n)
    psi_b = (weights_a.reshape(-1) @ mat) * g.cell_volume
    out = WaveField(g, psi_b.reshape(g.shape))
    nrm = out.norm()
    # Cauchy-Schwarz: |psi_b| <= |w| |phi|
    if not nrm > (VANISHING_NORM * scale) ** 2 * phi.norm():
        raise CollapseError("post-measurement state has vanishing norm; outcome outside the support")
    return out.normalized()


def resolvable_s_max(grid: GridSpec) -> float:
    """Largest sharpness whose pointer width 1/sqrt(2s) still spans two cells."""
    return 1.0 / (8.0 * grid.dx**2)


def collapse_position(phi: WaveField, q, s: float) -> WaveField:
    """State of particle b after a gaussian position reading ``q`` on particle a."""
    if phi.particle_count != 2:
        raise ValueError("collapse needs a two-particle field")
    if not s > 0:
        raise ValueError("s must be > 0")
    if 1.0 / np.sqrt(2.0 * s) < 2.0 * phi.grid.dx * (1 - 1e-12):
        raise ValueError(f"s={s} not resolvable: pointer width below two cells (s_max={resolvable_s_max(phi.grid):.6g})")
    offsets = _periodic_offsets(phi.grid, q)
    pointer = np.exp(-s * sum(o**2 for o in offsets))
    scale = np.sqrt(np.sum(pointer**2) * phi.grid.cell_volume)
    return _collapse(phi, pointer, scale)


def collapse_momentum(phi: WaveField, p, hbar: float = 1.0) -> WaveField:
    """State of particle b after reading momentum ``p`` on particle a."""
    if phi.particle_count != 2:
        raise ValueError("collapse needs a two-particle field")
    g = phi.grid
    ks = np.broadcast_to(np.asarray(p, dtype=float) / hbar, (g.dim,))
    modes = ks * g.length / (2 * np.pi)
    if np.any(np.abs(modes - np.round(modes)) > 1e-9):
        raise ValueError(f"momentum {p} is not commensurate with the box (k L / 2 pi = {modes})")
    phase = sum(k * c for k, c in zip(ks, g.coords()))
    wave = np.exp(-1j * phase)
    return _collapse(phi, wave, np.sqrt(g.length**g.dim))


def first_order_rate(psi: WaveField, B: Observable, p: DGParams) -> float:
    """``d/dt (psi(t), B psi(t))`` at t = 0 under the DG equation."""
    dpsi = dg_rhs(psi, p)
    return 2.0 * inner_product(dpsi, B.apply(psi)).real


def delta1(phi: WaveField, q, p, s: float, B: Observable, params_b: DGParams) -> float:
    """Rate gap between post-position(q, s) and post-momentum(p) states of particle b."""
    psi_q = collapse_position(phi, q, s)
    psi_p = collapse_momentum(phi, p, hbar=params_b.hbar)
    return first_order_rate(psi_q, B, params_b) - first_order_rate(psi_p, B, params_b)


def expectation_b(phi: WaveField, B: Observable) -> float:
    """``(phi, (I (x) B) phi)`` for a normalized two-particle state."""
    if B.kind == "position":
        return float(np.sum(marginal_density_b(phi) * B.samples) * phi.grid.cell_volume)
    rho = partial_trace_b(phi).entries
    g = phi.grid
    # B is diagonal in the DFT basis: Tr(rho B) = sum_k B(k) <k|rho|k>
    f = np.fft.fftn(rho.reshape(g.shape * 2), axes=tuple(range(g.dim)))
    f = np.fft.ifftn(f, axes=tuple(range(g.dim, 2 * g.dim)))
    diag = f.reshape(g.size, g.size).diagonal().real
    return float(np.sum(B.samples.reshape(-1) * diag))


def delta1_sweep(phi: WaveField, q, p, s_list: Sequence[float], B: Observable, params_b: DGParams) -> Delta1Result:
    """Delta_1 over ``s_list`` with a least-squares line through the upper half."""
    s_arr = np.asarray(s_list, dtype=float)
    if s_arr.size < 4:
        raise ValueError("s_list needs at least 4 entries")
    if np.any(np.diff(s_arr) < 0):
        raise ValueError("s_list must be ascending")
    values = np.array([delta1(phi, q, p, s, B, params_b) for s in s_arr])
    upper = slice(s_arr.size // 2, None)
    xs, ys = s_arr[upper], values[upper]
    if np.ptp(xs) == 0:
        raise ValueError("degenerate fit: all s values in the fit window are equal")
    fit = stats.linregress(xs, ys)
    if np.ptp(ys) == 0:
        r2 = 1.0  # a perfectly flat line is fitted exactly
    else:
        r2 = float(min(max(fit.rvalue**2, 0.0), 1.0))
    predicted = 4.0 * phi.grid.dim * params_b.D * expectation_b(phi, B)
    return Delta1Result(
        s_values=[float(s) for s in s_arr],
        delta1_values=[float(v) for v in values],
        fitted_slope=float(fit.slope),
        fitted_intercept=float(fit.intercept),
        fit_r2=r2,
        predicted_slope=float(predicted),
        slope_stderr=float(fit.stderr),
    )


def causal_channel_demo(
    initial: WaveField | EPRSpec,
    pp1: PairParams,
    pp2: PairParams,
    t: float,
    dt: float,
    sample_every: int = 1,
) -> Trajectory:
    """Trace distance between ``rho_b`` under two a-side variants of the same pair.

    The two runs share the b-side parameters; only particle a differs. Both
    runs step in lockstep with identical step sizes.
    """
    if not _same_b_side(pp1.params_b, pp2.params_b):
        raise ValueError("the two parameter sets must agree on the b side")
    phi0 = make_epr(initial) if isinstance(initial, EPRSpec) else initial
    if phi0.particle_count != 2:
        raise ValueError("causal channel needs a two-particle initial state")
    rhs1, rhs2 = _pair_rhs(phi0.grid, pp1), _pair_rhs(phi0.grid, pp2)
    n, h = _n_steps(t, dt)
    rows = []
    cell = phi0.cell_volume

    def rho_b(y):
        return partial_trace_b(phi0.with_amplitudes(y / np.sqrt(np.vdot(y, y).real * cell)))

    y1 = y2 = phi0.amplitudes
    rows.append([0.0, trace_distance(rho_b(y1), rho_b(y2))])
    for i in range(1, n + 1):
        y1 = _checked_rk4(y1, rhs1, h, step=i, t=i * h)
        y2 = _checked_rk4(y2, rhs2, h, step=i, t=i * h)
        if i % sample_every == 0 or i == n:
            rows.append([i * h, trace_distance(rho_b(y1), rho_b(y2))])
    return Trajectory.from_rows(["t", "trace_distance"], rows, meta={"steps": n, "dt": h})


def _same_b_side(a: DGParams, b: DGParams) -> bool:
    same_v = (a.potential is None and b.potential is None) or (
        a.potential is not None and b.potential is not None and np.array_equal(a.potential, b.potential)
    )
    return (a.hbar, a.mass, a.D, a.R, a.floor_rel) == (b.hbar, b.mass, b.D, b.R, b.floor_rel) and same_v


def ratio_estimate(D: float, mass: float, hbar: float, s: float, L: float) -> float:
    """Nonlinear-to-linear effect size ``D / (hbar/2m) * s * L^2``."""
    for name, v in (("D", D), ("mass", mass), ("hbar", hbar), ("s", s), ("L", L)):
        if not v > 0:
            raise ValueError(f"{name} must be > 0")
    return D / (hbar / (2.0 * mass)) * s * L**2
