"""Desk-scale numerical laboratory for nonlinear quantum mechanics and
two-fluid phantom cosmology.

Subpackages are thin on purpose; the public surface lives in four modules:

* :mod:`nlqg.field`        grids, wavefields, spectral operators, density matrices
* :mod:`nlqg.dg`           Doebner-Goldin right-hand side and RK4 stepping
* :mod:`nlqg.entanglement` EPR states, collapse, first-order rate differences
* :mod:`nlqg.cosmo`        FRW matter/phantom system and coupling reconstruction
"""

__version__ = "0.1.0"

from .errors import (
    CollapseError,
    ConfigError,
    NumericalInstability,
    UnphysicalState,
)
from .field import (
    DensityMatrix,
    GridSpec,
    Observable,
    WaveField,
    density_and_current,
    expectation,
    gradient,
    inner_product,
    laplacian,
    partial_trace_b,
    purity,
    trace_distance,
)
from .trajectory import Trajectory

__all__ = [
    "__version__",
    "CollapseError",
    "ConfigError",
    "NumericalInstability",
    "UnphysicalState",
    "DensityMatrix",
    "GridSpec",
    "Observable",
    "WaveField",
    "Trajectory",
    "density_and_current",
    "expectation",
    "gradient",
    "inner_product",
    "laplacian",
    "partial_trace_b",
    "purity",
    "trace_distance",
]
