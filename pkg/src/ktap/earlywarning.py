"""Distance of a run from an expected asymptotic state, and its turnround."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PopulationState
from .integrator import Trajectory, integrate
from .wealth import Control


class StationarityError(RuntimeError):
    """The reference run did not settle before its horizon."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class NormSpec:
    """Nonnegative class weights of the weighted L1 distance."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).ravel()
        if w.size == 0 or np.any(w < 0) or not np.any(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("norm weights must be finite, nonnegative and not all zero")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n: int) -> "NormSpec":
        return cls(np.ones(n))


@dataclass(frozen=True)
class ReferenceDistribution:
    f_tilde: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        f = np.array(self.f_tilde, dtype=np.float64)
        if f.ndim == 1:
            f = f[None, :]
        if np.any(f < 0):
            raise ValueError("reference occupancies must be nonnegative")
        f.flags.writeable = False
        object.__setattr__(self, "f_tilde", f)


def weighted_l1(f, g, norm: NormSpec) -> float:
    """sum_i |f_i - g_i| w_i."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != g.shape or f.shape != norm.w.shape:
        raise ValueError(f"length mismatch: {f.shape}, {g.shape}, weights {norm.w.shape}")
    return float(np.sum(np.abs(f - g) * norm.w))


def _per_subsystem(f: np.ndarray, ref: np.ndarray, norm: NormSpec) -> np.ndarray:
    if f.shape[-2:] != ref.shape:
        raise ValueError(f"state shape {f.shape[-2:]} does not match reference {ref.shape}")
    if ref.shape[1] != norm.w.shape[0]:
        raise ValueError("norm weights do not match the number of classes")
    return np.sum(np.abs(f - ref) * norm.w, axis=-1)


def dbs(state: PopulationState, reference: ReferenceDistribution, norm: NormSpec) -> float:
    """Largest weighted L1 distance between state and reference over subsystems."""
    return float(_per_subsystem(state.f, reference.f_tilde, norm).max())


@dataclass(frozen=True)
class DbsSeries:
    t: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.t)


def dbs_series(trajectory: Trajectory, reference: ReferenceDistribution, norm: NormSpec) -> DbsSeries:
    d = _per_subsystem(trajectory.states, reference.f_tilde, norm).max(axis=-1)
    return DbsSeries(t=np.array(trajectory.times, dtype=float), d=d)


@dataclass(frozen=True)
class TurnroundSignal:
    t_min: float
    d_min: float
    d_final: float
    rise_ratio: float
    index_min: int


def detect_turnround(series, times=None) -> TurnroundSignal | None:
    """Interior global minimum followed by a rise.

    ``series`` is a :class:`DbsSeries` or a sequence of distances (then
    ``times`` defaults to sample indices).  Returns None unless the first
    global minimum sits strictly inside the series, lies below the initial
    value and the final value exceeds it.
    """
    if isinstance(series, DbsSeries):
        t, d = series.t, series.d
    else:
        d = np.asarray(series, dtype=float)
        t = np.arange(len(d), dtype=float) if times is None else np.asarray(times, dtype=float)
    if len(d) < 3:
        raise ValueError("turnround detection needs at least 3 samples")
    j = int(np.argmin(d))
    d_min, d_final = float(d[j]), float(d[-1])
    if j == 0 or j == len(d) - 1 or not d_final > d_min or not d_min < d[0]:
        return None
    ratio = math.inf if d_min == 0 else d_final / d_min
    return TurnroundSignal(t_min=float(t[j]), d_min=d_min, d_final=d_final, rise_ratio=ratio, index_min=j)


def build_reference_constant_gamma(scenario) -> ReferenceDistribution:
    """Stationary state of the scenario's constant-gamma twin.

    ``scenario`` is a :class:`ktap.scenario.ScenarioConfig`; its run with the
    critical distance held at gamma0 must become stationary before t_max.
    """
    model = scenario.build_model().with_control(Control.CONSTANT)
    traj = integrate(scenario.initial_state(), model, scenario.integrator)
    if traj.stationary_time is None:
        residual = float(traj.rhs_max[-1])
        raise StationarityError(
            f"constant-gamma twin of {scenario.name!r} not stationary by t={traj.times[-1]:g} "
            f"(max |df/dt| = {residual:.3e}, tolerance {scenario.integrator.stationarity_tol:g})",
            residual,
        )
    return ReferenceDistribution(
        traj.states[-1],
        provenance=f"constant-gamma twin of {scenario.name} (gamma={scenario.wealth.gamma0}), "
                   f"stationary at t={traj.stationary_time:.17g}",
    )
