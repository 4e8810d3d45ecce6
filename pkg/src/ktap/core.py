"""Grids, population states, moments and the evolution right-hand sides.

Indexing
--------
Formulas and every public index argument (``p``, ``h``, ``k``, ``i``, ``r``)
use 1-based class and subsystem numbers.  Arrays are 0-based: class ``i``
of subsystem ``p`` is ``f[p - 1, i - 1]``.  :func:`to_offset` is the only
place that converts between the two.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class InvalidParameterError(ValueError):
    """A model parameter violates its documented domain."""


def to_offset(index: int, size: int, name: str = "index") -> int:
    """Map a 1-based index to a 0-based array offset, checking range."""
    if isinstance(index, bool) or not isinstance(index, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {index!r}")
    if not 1 <= index <= size:
        raise IndexError(f"{name}={index} out of range 1..{size}")
    return int(index) - 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def _uniform_lattice(size: int) -> np.ndarray:
    # (2i - size - 1)/(size - 1): integer numerator keeps the lattice exactly
    # symmetric about zero.
    i = np.arange(1, size + 1)
    return (2 * i - size - 1) / (size - 1)


@dataclass(frozen=True)
class ActivityGrid:
    """Uniform wealth grid on [-1, 1] with an odd number of classes."""

    n: int
    u: np.ndarray = field(repr=False)
    delta_u: float

    @property
    def centre(self) -> int:
        """1-based index of the neutral class u = 0."""
        return (self.n + 1) // 2


@dataclass(frozen=True)
class OpinionLattice:
    """Political-stance lattice; v_1 = -1 is strongest opposition."""

    m: int
    v: np.ndarray = field(repr=False)


def build_wealth_grid(n: int) -> ActivityGrid:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise InvalidParameterError(f"n must be an integer, got {n!r}")
    if n < 3 or n % 2 == 0:
        raise InvalidParameterError(f"n must be odd and >= 3, got {n}")
    n = int(n)
    return ActivityGrid(n=n, u=_frozen(_uniform_lattice(n)), delta_u=2.0 / (n - 1))


def build_opinion_lattice(m: int) -> OpinionLattice:
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)):
        raise InvalidParameterError(f"m must be an integer, got {m!r}")
    if m < 1 or m % 2 == 0:
        raise InvalidParameterError(f"m must be odd and >= 1, got {m}")
    m = int(m)
    v = np.zeros(1) if m == 1 else _uniform_lattice(m)
    return OpinionLattice(m=m, v=_frozen(v))


@dataclass(frozen=True)
class PopulationState:
    """Occupancies ``f[p, i]`` (m x n) at time ``t``.  Immutable."""

    f: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        f = np.array(self.f, dtype=np.float64, copy=True)
        if f.ndim == 1:
            f = f[None, :]
        if f.ndim != 2:
            raise ValueError(f"state must be an m x n matrix, got shape {f.shape}")
        f.flags.writeable = False
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "t", float(self.t))

    @property
    def m(self) -> int:
        return self.f.shape[0]

    @property
    def n(self) -> int:
        return self.f.shape[1]

    @property
    def marginal(self) -> np.ndarray:
        """Wealth distribution aggregated over subsystems."""
        return self.f.sum(axis=0)

    def min_occupancy(self) -> float:
        return float(self.f.min())


@dataclass(frozen=True)
class MomentWeights:
    """Weights over wealth classes for the weighted moments.

    ``indicator`` marks the 0/1 weights that count poor or wealthy classes;
    those are exempt from the unit-integral normalization that the other
    weights are expected to satisfy (see :meth:`is_unit_integral`).
    """

    w: np.ndarray
    indicator: bool = False

    def __post_init__(self):
        w = _frozen(np.asarray(self.w, dtype=np.float64).ravel())
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidParameterError("moment weights must be finite and nonnegative")
        object.__setattr__(self, "w", w)

    def is_unit_integral(self, grid: ActivityGrid, tol: float = 1e-12) -> bool:
        return abs(float(self.w.sum()) * grid.delta_u - 1.0) <= tol

    @classmethod
    def ones(cls, n: int) -> "MomentWeights":
        return cls(np.ones(n))

    @classmethod
    def unit(cls, grid: ActivityGrid) -> "MomentWeights":
        """Constant weight with unit discrete integral."""
        return cls(np.full(grid.n, 1.0 / (grid.n * grid.delta_u)))

    @classmethod
    def poor(cls, grid: ActivityGrid) -> "MomentWeights":
        return cls((grid.u < 0).astype(float), indicator=True)

    @classmethod
    def wealthy(cls, grid: ActivityGrid) -> "MomentWeights":
        return cls((grid.u > 0).astype(float), indicator=True)


def mass(state: PopulationState, p: int | None = None) -> float:
    """Total mass, or the mass of subsystem ``p`` (1-based)."""
    if p is None:
        return float(state.f.sum())
    return float(state.f[to_offset(p, state.m, "p")].sum())


def moment(state: PopulationState, p: int, l: int, weights: MomentWeights, grid: ActivityGrid) -> float:
    """Weighted moment sum_i u_i**l f^p_i w_i of subsystem ``p``."""
    if l < 0:
        raise InvalidParameterError(f"moment order must be >= 0, got {l}")
    _check_grid(state, grid)
    if weights.w.shape[0] != grid.n:
        raise ValueError("weights length does not match the grid")
    row = state.f[to_offset(p, state.m, "p")]
    return float(np.sum(grid.u**l * row * weights.w))


def mean_wealth(state: PopulationState, grid: ActivityGrid) -> float:
    """sum_p sum_i u_i f^p_i (the conserved average wealth U)."""
    _check_grid(state, grid)
    return float(state.marginal @ grid.u)


def _check_grid(state: PopulationState, grid: ActivityGrid) -> None:
    if state.n != grid.n:
        raise ValueError(f"state has {state.n} classes, grid has {grid.n}")


def _check_local(B: np.ndarray) -> None:
    n = B.shape[0]
    h = np.arange(n)[:, None, None]
    i = np.arange(n)[None, None, :]
    if np.any((np.abs(i - h) > 1) & (B != 0)):
        raise ValueError("wealth table has transitions beyond neighbouring classes")


def rhs_single(state: PopulationState, kernel, rate) -> np.ndarray:
    """df/dt for the single-subsystem model (m = 1).

    gain_i = sum_{h,k} eta_hk B_hk(i) f_h f_k, loss_i = f_i sum_k eta_ik f_k.
    """
    if state.m != 1:
        raise ValueError(f"rhs_single needs m = 1, got m = {state.m}")
    B, eta = _wealth_arrays(state, kernel, rate)
    return _kernels.rhs(state.f, B, eta, np.ones((state.n, 1, 1)))


def rhs_multi(state: PopulationState, wealth_kernel, opinion_kernel, rate) -> np.ndarray:
    """df/dt for the model with transitions across subsystems.

    Uses the factorized table B_hk(i) * Bhat_h^p(r) and a subsystem-blind
    encounter rate, so the six-index sum reduces to two contractions.
    """
    B, eta = _wealth_arrays(state, wealth_kernel, rate)
    Bhat = opinion_kernel.Bhat
    if Bhat.shape != (state.n, state.m, state.m):
        raise ValueError(f"opinion table shape {Bhat.shape} does not match state (m={state.m}, n={state.n})")
    return _kernels.rhs(state.f, B, eta, Bhat)


def _wealth_arrays(state, kernel, rate):
    B = kernel.B
    eta = rate.eta
    n = state.n
    if B.shape != (n, n, n) or eta.shape != (n, n):
        raise ValueError(f"kernel/rate dimensions {B.shape}, {eta.shape} do not match n={n}")
    _check_local(B)
    return B, eta
