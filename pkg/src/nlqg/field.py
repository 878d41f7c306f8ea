"""Periodic grids, complex wavefields and the spectral operators built on them.

Conventions
-----------
* Grid nodes sit at ``x_j = -L/2 + j*dx`` along every axis, ``dx = L/points``.
* Derivatives are spectral (multiplication by ``i k`` in Fourier space).
* The inner product is conjugate-linear in its *first* argument,
  ``(f, g) = sum conj(f) * g * cell_volume``.
* A two-particle field over a ``dim``-dimensional box stores amplitudes with
  shape ``(points,)*dim + (points,)*dim``; the leading ``dim`` axes belong to
  particle a, the trailing ones to particle b.
* Momentum-space observables list their samples in FFT order
  (``numpy.fft.fftfreq`` ordering) along every axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

MIN_POINTS = 8
NORM_TOL = 1e-8


@dataclass(frozen=True)
class GridSpec:
    """Periodic box with ``points`` samples per axis in ``dim`` dimensions."""

    dim: int = 1
    points: int = 256
    length: float = 40.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if int(self.points) != self.points or self.points < MIN_POINTS:
            raise ValueError(f"points must be an integer >= {MIN_POINTS}, got {self.points}")
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError(f"length must be > 0, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.points

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points**self.dim

    @property
    def x(self) -> np.ndarray:
        """1D node coordinates shared by every axis."""
        return -0.5 * self.length + self.dx * np.arange(self.points)

    @property
    def k(self) -> np.ndarray:
        """1D angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.dx)

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    def coords(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis."""
        return tuple(np.meshgrid(*([self.x] * self.dim), indexing="ij"))

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.k] * self.dim), indexing="ij"))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "points": self.points, "length": self.length}


@dataclass(frozen=True, eq=False)
class WaveField:
    """Complex amplitudes of a one- or two-particle state on a periodic grid."""

    grid: GridSpec
    amplitudes: np.ndarray
    particle_count: int = 1

    def __post_init__(self):
        if self.particle_count not in (1, 2):
            raise ValueError(f"particle_count must be 1 or 2, got {self.particle_count}")
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        expected = self.grid.shape * self.particle_count
        if amp.shape != expected:
            raise ValueError(f"amplitude shape {amp.shape} does not match grid {expected}")
        if not np.all(np.isfinite(amp)):
            raise ValueError("wavefield contains non-finite values")
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable[..., np.ndarray]) -> "WaveField":
        """Sample a one-particle field ``func(*coords)`` on the grid."""
        values = np.broadcast_to(func(*grid.coords()), grid.shape)
        return cls(grid, np.array(values, dtype=np.complex128))

    @classmethod
    def product(cls, psi_a: "WaveField", psi_b: "WaveField") -> "WaveField":
        """Tensor product ``psi_a (x) psi_b`` as a two-particle field."""
        _require_same_grid(psi_a, psi_b)
        if psi_a.particle_count != 1 or psi_b.particle_count != 1:
            raise ValueError("product needs two one-particle fields")
        amp = np.multiply.outer(psi_a.amplitudes, psi_b.amplitudes)
        return cls(psi_a.grid, amp, particle_count=2)

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_volume**self.particle_count

    @property
    def ndim(self) -> int:
        return self.grid.dim * self.particle_count

    def particle_axes(self, particle: int | str = "all") -> tuple[int, ...]:
        d = self.grid.dim
        if particle == "all":
            return tuple(range(self.ndim))
        particle = {"a": 1, "b": 2}.get(particle, particle)
        if particle not in (1, 2) or particle > self.particle_count:
            raise ValueError(f"invalid particle selector {particle!r}")
        start = (particle - 1) * d
        return tuple(range(start, start + d))

    def norm(self) -> float:
        """Squared L2 norm, ``sum |psi|^2 * cell_volume``."""
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.cell_volume)

    def normalized(self) -> "WaveField":
        n = self.norm()
        if n <= 0:
            raise ValueError("cannot normalize a zero field")
        return self.with_amplitudes(self.amplitudes / np.sqrt(n))

    def with_amplitudes(self, amplitudes: np.ndarray) -> "WaveField":
        return WaveField(self.grid, amplitudes, self.particle_count)

    def __mul__(self, z: complex) -> "WaveField":
        return self.with_amplitudes(self.amplitudes * z)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Observable:
    """Self-adjoint operator given as a real multiplier.

    ``kind`` is ``"position"`` (samples are B(x) on the grid) or ``"momentum"``
    (samples are B(k) in FFT order).
    """

    kind: Literal["position", "momentum"]
    samples: np.ndarray

    def __post_init__(self):
        if self.kind not in ("position", "momentum"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        s = np.asarray(self.samples)
        if np.iscomplexobj(s):
            if np.any(s.imag != 0):
                raise ValueError("observable samples must be real")
            s = s.real
        s = np.array(s, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise ValueError("observable samples must be finite")
        object.__setattr__(self, "samples", s)

    @classmethod
    def position(cls, grid: GridSpec, func: Callable[..., np.ndarray]) -> "Observable":
        return cls("position", np.broadcast_to(func(*grid.coords()), grid.shape))

    @classmethod
    def momentum(cls, grid: GridSpec, func: Callable[..., np.ndarray]) -> "Observable":
        return cls("momentum", np.broadcast_to(func(*grid.wavenumbers()), grid.shape))

    def shifted(self, c: float) -> "Observable":
        """``B + c * identity``."""
        return Observable(self.kind, self.samples + c)

    def apply(self, field: WaveField) -> WaveField:
        """Return ``B psi`` for a one-particle field."""
        if field.particle_count != 1:
            raise ValueError("observables act on one-particle fields")
        if self.samples.shape != field.grid.shape:
            raise ValueError("observable does not match the field grid")
        if self.kind == "position":
            return field.with_amplitudes(self.samples * field.amplitudes)
        psi_hat = np.fft.fftn(field.amplitudes)
        return field.with_amplitudes(np.fft.ifftn(self.samples * psi_hat))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Reduced density matrix in the normalized grid-point basis.

    ``entries[i, j] = <x_i| rho |x_j>`` with unit matrix trace; ``i`` runs over
    the flattened one-particle grid in row-major order.
    """

    entries: np.ndarray
    grid: GridSpec
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        rho = np.asarray(self.entries, dtype=np.complex128)
        n = self.grid.size
        if rho.shape != (n, n):
            raise ValueError(f"density matrix shape {rho.shape} does not match grid ({n}, {n})")
        if self.check:
            if np.max(np.abs(rho - rho.conj().T)) > 1e-12:
                raise ValueError("density matrix is not Hermitian")
            tr = np.trace(rho).real
            if abs(tr - 1.0) > 1e-10:
                raise ValueError(f"density matrix trace {tr!r} differs from 1")
        object.__setattr__(self, "entries", rho)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def is_positive(self, tol: float = 1e-10) -> bool:
        return bool(self.eigenvalues().min() >= -tol)

    def diagonal_density(self) -> np.ndarray:
        """Position density rho(x, x) as a field-shaped array (integrates to 1)."""
        return self.entries.diagonal().real.reshape(self.grid.shape) / self.grid.cell_volume


# ---------------------------------------------------------------------------
# spectral operators


def _require_same_grid(f: WaveField, g: WaveField) -> None:
    if f.grid != g.grid or f.particle_count != g.particle_count:
        raise ValueError("fields live on different grids")


def _k_along(grid: GridSpec, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = grid.points
    return grid.k.reshape(shape)


def spectral_derivatives(
    psi: np.ndarray, grid: GridSpec, axes: Sequence[int]
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradient components along ``axes`` and the Laplacian over ``axes``.

    Works on raw arrays so the time steppers avoid wrapper overhead.
    """
    grads = []
    lap = np.zeros_like(psi)
    for axis in axes:
        k = _k_along(grid, psi.ndim, axis)
        psi_hat = np.fft.fft(psi, axis=axis)
        grads.append(np.fft.ifft(1j * k * psi_hat, axis=axis))
        lap += np.fft.ifft(-(k**2) * psi_hat, axis=axis)
    return grads, lap


def gradient(field: WaveField, axis: int) -> WaveField:
    """Spectral derivative of ``field`` along ``axis``."""
    if not 0 <= axis < field.ndim:
        raise ValueError(f"axis {axis} out of range for a field with {field.ndim} axes")
    grads, _ = spectral_derivatives(field.amplitudes, field.grid, [axis])
    return field.with_amplitudes(grads[0])


def laplacian(field: WaveField, particle: int | str = "all") -> WaveField:
    """Spectral Laplacian over the coordinates of ``particle`` (1/"a", 2/"b" or "all")."""
    axes = field.particle_axes(particle)
    k2 = sum(_k_along(field.grid, field.ndim, a) ** 2 for a in axes)
    psi_hat = np.fft.fftn(field.amplitudes, axes=axes)
    return field.with_amplitudes(np.fft.ifftn(-k2 * psi_hat, axes=axes))


def inner_product(f: WaveField, g: WaveField) -> complex:
    """``(f, g)``, conjugate-linear in ``f``."""
    _require_same_grid(f, g)
    return complex(np.vdot(f.amplitudes, g.amplitudes) * f.cell_volume)


def expectation(field: WaveField, obs: Observable) -> float:
    """``(psi, B psi)`` for a normalized one-particle field."""
    n = field.norm()
    if abs(n - 1.0) > NORM_TOL:
        raise ValueError(f"expectation needs a normalized field (norm {n:.12g}); normalize first")
    if obs.samples.shape != field.grid.shape:
        raise ValueError("observable does not match the field grid")
    if obs.kind == "position":
        return float(np.sum(obs.samples * np.abs(field.amplitudes) ** 2) * field.cell_volume)
    psi_hat = np.fft.fftn(field.amplitudes)
    # Parseval: sum |psi|^2 = sum |psi_hat|^2 / N
    return float(np.sum(obs.samples * np.abs(psi_hat) ** 2) * field.cell_volume / field.grid.size)


def density_and_current(field: WaveField, params) -> tuple[np.ndarray, list[np.ndarray]]:
    """Probability density and current ``j = (hbar/m) Im(conj(psi) grad psi)``.

    ``params`` only needs ``hbar`` and ``mass`` attributes.
    """
    if field.particle_count != 1:
        raise ValueError("density_and_current expects a one-particle field")
    psi = field.amplitudes
    grads, _ = spectral_derivatives(psi, field.grid, range(field.grid.dim))
    rho = np.abs(psi) ** 2
    j = [(params.hbar / params.mass) * np.imag(np.conj(psi) * g) for g in grads]
    return rho, j


# ---------------------------------------------------------------------------
# reduced states


def _amplitude_matrix(phi: WaveField) -> np.ndarray:
    """Two-particle amplitudes as an orthonormal-basis coefficient matrix c[a, b]."""
    if phi.particle_count != 2:
        raise ValueError("expected a two-particle field")
    n = phi.grid.size
    return phi.amplitudes.reshape(n, n) * np.sqrt(phi.cell_volume)


def partial_trace_b(phi: WaveField) -> DensityMatrix:
    """Reduced state of particle b, ``rho_b = Tr_a |phi><phi|``."""
    nrm = phi.norm() if phi.particle_count == 2 else None
    if nrm is None:
        raise ValueError("partial_trace_b expects a two-particle field")
    if abs(nrm - 1.0) > NORM_TOL:
        raise ValueError(f"partial_trace_b needs a normalized field (norm {nrm:.12g})")
    c = _amplitude_matrix(phi)
    rho = c.T @ c.conj()
    # exact hermiticity; the matmul is Hermitian only to rounding
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho, phi.grid)


def marginal_density_b(phi: WaveField) -> np.ndarray:
    """Position density of particle b, integrating to the field norm."""
    d = phi.grid.dim
    axes = tuple(range(d))
    return np.sum(np.abs(phi.amplitudes) ** 2, axis=axes) * phi.grid.cell_volume


def purity(rho: DensityMatrix) -> float:
    """``Tr rho^2``."""
    m = rho.entries
    return float(np.real(np.vdot(m.conj().T, m)))


def schmidt_coefficients(phi: WaveField) -> np.ndarray:
    """Squared singular values of the amplitude matrix (sum to the norm)."""
    return np.linalg.svd(_amplitude_matrix(phi), compute_uv=False) ** 2


def trace_distance(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    """``1/2 sum |eig(rho1 - rho2)|``."""
    if rho1.entries.shape != rho2.entries.shape:
        raise ValueError("density matrices have different sizes")
    diff = rho1.entries - rho2.entries
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def pure_state(psi: WaveField) -> DensityMatrix:
    """``|psi><psi|`` for a normalized one-particle field."""
    c = psi.amplitudes.reshape(-1) * np.sqrt(psi.cell_volume)
    c = c / np.linalg.norm(c)
    return DensityMatrix(np.outer(c, c.conj()), psi.grid)


# ---------------------------------------------------------------------------
# serialization: row-major over axes, (re, im) interleaved


def _header(field: WaveField) -> dict:
    return {
        "grid": field.grid.to_dict(),
        "particle_count": field.particle_count,
        "ordering": "row-major over axes; real/imag interleaved; float64 little-endian",
    }


def save_field(field: WaveField, path: str | Path) -> list[Path]:
    """Write ``field`` as ``<path>.bin`` + ``<path>.json``, or CSV if ``path`` ends in ``.csv``.

    Returns the list of files written.
    """
    path = Path(path)
    flat = np.ascontiguousarray(field.amplitudes).reshape(-1)
    if path.suffix == ".csv":
        h = _header(field)
        with open(path, "w", newline="\n") as fh:
            fh.write("# " + json.dumps(h, sort_keys=True) + "\n")
            fh.write("re,im\n")
            for z in flat:
                fh.write(f"{z.real:.17g},{z.imag:.17g}\n")
        return [path]
    bin_path = path.with_suffix(".bin")
    meta_path = path.with_suffix(".json")
    flat.astype("<c16").view("<f8").tofile(bin_path)
    meta_path.write_text(json.dumps(_header(field), sort_keys=True, indent=2) + "\n")
    return [bin_path, meta_path]


def load_field(path: str | Path) -> WaveField:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            header = json.loads(fh.readline()[1:].strip())
            data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
        flat = data[:, 0] + 1j * data[:, 1]
    else:
        header = json.loads(path.with_suffix(".json").read_text())
        flat = np.fromfile(path.with_suffix(".bin"), dtype="<f8").view("<c16")
    grid = GridSpec(**header["grid"])
    pc = header["particle_count"]
    return WaveField(grid, flat.reshape(grid.shape * pc), pc)
