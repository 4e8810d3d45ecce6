"""Fixed-step time integration with conservation and stationarity monitoring."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import ActivityGrid, OpinionLattice, PopulationState, build_opinion_lattice, build_wealth_grid
from .politics import OpinionKernel, PoliticsParams, build_opinion_kernel
from .wealth import Control, WealthGameParams, kernel_tables

log = logging.getLogger(__name__)


class NumericalFailure(ArithmeticError):
    """Integration produced non-finite occupancies."""

    def __init__(self, message: str, indices=(), t: float | None = None):
        super().__init__(message)
        self.indices = list(indices)
        self.t = t


class Method(str, enum.Enum):
    RK4 = "rk4"
    EULER = "euler"


@dataclass(frozen=True)
class IntegratorConfig:
    method: Method = Method.RK4
    dt: float = 0.01
    t_max: float = 200.0
    sample_every: int = 10
    stationarity_tol: float = 1e-8
    conservation_tol: float = 1e-9
    negativity_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.dt > 0 or not self.t_max > 0:
            raise ValueError(f"dt and t_max must be positive (dt={self.dt}, t_max={self.t_max})")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError(f"sample_every must be a positive integer, got {self.sample_every}")
        object.__setattr__(self, "sample_every", int(self.sample_every))
        for name in ("stationarity_tol", "conservation_tol", "negativity_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass(frozen=True)
class Model:
    """Bound right-hand side: grids, game parameters and opinion table."""

    grid: ActivityGrid
    lattice: OpinionLattice
    wealth: WealthGameParams
    opinion: OpinionKernel
    # stacked (B, eta) for gamma = 0..n; None means the cached standard tables
    custom_tables: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def tables(self):
        if self.custom_tables is not None:
            return self.custom_tables
        return kernel_tables(self.grid.n, float(self.wealth.mu), float(self.wealth.eta0))

    @property
    def variable(self) -> bool:
        return self.wealth.control is Control.VARIABLE

    def with_control(self, control: Control) -> "Model":
        w = self.wealth
        return Model(self.grid, self.lattice,
                     WealthGameParams(w.gamma0, w.S0, w.mu, w.eta0, control), self.opinion,
                     self.custom_tables)

    def evaluate(self, f: np.ndarray) -> tuple[np.ndarray, int]:
        """(df/dt, gamma) at occupancy matrix ``f``."""
        B_all, eta_all = self.tables
        df, g, _ = _kernels.model_rhs(f, B_all, eta_all, self.opinion.Bhat,
                                      self.wealth.gamma0, self.wealth.S0, self.variable)
        return df, g

    def rhs(self, f: np.ndarray) -> np.ndarray:
        return self.evaluate(f)[0]

    def gamma(self, f: np.ndarray) -> int:
        return self.evaluate(f)[1]


def build_model(n: int, m: int, wealth: WealthGameParams, beta: float = 0.0, u0: float = 0.0) -> Model:
    """Assemble a model; ``u0`` selects the opinion-table branch."""
    grid = build_wealth_grid(n)
    lattice = build_opinion_lattice(m)
    wealth.check_grid(n)
    opinion = build_opinion_kernel(grid, PoliticsParams(beta=beta, m=m, u0=u0))
    return Model(grid, lattice, wealth, opinion)


@dataclass
class Trajectory:
    """Sampled states with aligned diagnostics.

    ``states[j]`` is the occupancy matrix at ``times[j]``; ``gamma`` and
    ``rhs_max`` are evaluated at the same sample.
    """

    times: np.ndarray
    states: np.ndarray
    gamma: np.ndarray
    rhs_max: np.ndarray
    grid: ActivityGrid
    config: IntegratorConfig
    stationary_time: float | None = None
    clamp_count: int = 0
    gamma_switch_steps: int = 0
    mass: np.ndarray = field(init=False, repr=False)
    mean_wealth: np.ndarray = field(init=False, repr=False)
    n_minus: np.ndarray = field(init=False, repr=False)
    n_plus: np.ndarray = field(init=False, repr=False)
    S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        F = self.states.sum(axis=1)
        total = F.sum(axis=1)
        centre = (self.grid.n - 1) // 2
        self.mass = total
        self.mean_wealth = F @ self.grid.u
        with np.errstate(invalid="ignore", divide="ignore"):
            self.n_minus = np.where(total > 0, F[:, :centre].sum(axis=1) / total, 0.0)
            self.n_plus = np.where(total > 0, F[:, centre + 1:].sum(axis=1) / total, 0.0)
        self.S = self.n_minus - self.n_plus

    def __len__(self) -> int:
        return len(self.times)

    @property
    def samples(self) -> list[PopulationState]:
        return [PopulationState(f, t) for t, f in zip(self.times, self.states)]

    @property
    def final(self) -> PopulationState:
        return PopulationState(self.states[-1], self.times[-1])


def step(state: PopulationState, model: Model, config: IntegratorConfig) -> PopulationState:
    """Advance ``state`` by one explicit step of ``config.method``."""
    _check_dims(state, model)
    B_all, eta_all = model.tables
    method = _kernels.RK4 if config.method is Method.RK4 else _kernels.EULER
    new, _, _ = _kernels.advance(state.f, B_all, eta_all, model.opinion.Bhat, model.wealth.gamma0,
                                 model.wealth.S0, model.variable, method, config.dt)
    if not np.all(np.isfinite(new)):
        bad = [tuple(int(x) + 1 for x in idx) for idx in np.argwhere(~np.isfinite(new))]
        raise NumericalFailure(f"non-finite occupancies at (p,i)={bad[:10]}", bad, state.t + config.dt)
    return PopulationState(new, state.t + config.dt)


def integrate(initial: PopulationState, model: Model, config: IntegratorConfig) -> Trajectory:
    """Step until ``t_max`` or until max |df/dt| drops below the stationarity tolerance.

    Conservation and negativity alarms are logged and recorded, never raised.
    """
    _check_dims(initial, model)
    nsteps = config.n_steps
    if nsteps < 1:
        raise ValueError(f"horizon t_max={config.t_max} is shorter than one step dt={config.dt}")
    B_all, eta_all = model.tables
    method = _kernels.RK4 if config.method is Method.RK4 else _kernels.EULER
    times, states, gammas, rmax, stat, failed, clamps, switches = _kernels.integrate(
        initial.f, B_all, eta_all, model.opinion.Bhat, model.wealth.gamma0, model.wealth.S0,
        model.variable, method, config.dt, nsteps, config.sample_every, config.stationarity_tol,
    )
    if failed >= 0:
        bad = [tuple(int(x) + 1 for x in idx) for idx in np.argwhere(~np.isfinite(states[-1]))]
        t_fail = initial.t + failed * config.dt
        raise NumericalFailure(f"non-finite occupancies at t={t_fail:g}, (p,i)={bad[:10]}", bad, t_fail)
    traj = Trajectory(
        times=initial.t + times,
        states=states,
        gamma=gammas,
        rhs_max=rmax,
        grid=model.grid,
        config=config,
        stationary_time=None if stat < 0 else initial.t + stat * config.dt,
        clamp_count=clamps,
        gamma_switch_steps=switches,
    )
    if clamps:
        log.warning("critical distance clamped to [0, n] in %d evaluations", clamps)
    report = conservation_report(traj)
    for line in report.alarms():
        log.warning(line)
    return traj


def _check_dims(state: PopulationState, model: Model) -> None:
    if state.n != model.grid.n or state.m != model.lattice.m:
        raise ValueError(f"state is {state.m}x{state.n}, model expects {model.lattice.m}x{model.grid.n}")


def detect_stationary(trajectory: Trajectory, tol: float) -> float | None:
    """Earliest sample time with max |df/dt| < tol, or None."""
    hits = np.flatnonzero(trajectory.rhs_max < tol)
    return float(trajectory.times[hits[0]]) if hits.size else None


@dataclass
class ConservationReport:
    mass_drift: float
    mean_wealth_drift: float
    min_occupancy: float
    conservation_tol: float
    negativity_tol: float

    @property
    def mass_ok(self) -> bool:
        return self.mass_drift <= self.conservation_tol

    @property
    def mean_wealth_ok(self) -> bool:
        return self.mean_wealth_drift <= self.conservation_tol

    @property
    def negativity_ok(self) -> bool:
        return self.min_occupancy >= -self.negativity_tol

    @property
    def passed(self) -> bool:
        return self.mass_ok and self.mean_wealth_ok and self.negativity_ok

    def alarms(self) -> list[str]:
        out = []
        if not self.mass_ok:
            out.append(f"mass drift {self.mass_drift:.3e} exceeds {self.conservation_tol:g}")
        if not self.mean_wealth_ok:
            out.append(f"mean-wealth drift {self.mean_wealth_drift:.3e} exceeds {self.conservation_tol:g}")
        if not self.negativity_ok:
            out.append(f"occupancy {self.min_occupancy:.3e} below -{self.negativity_tol:g}")
        return out

    def as_dict(self) -> dict:
        return {
            "mass_drift": self.mass_drift,
            "mean_wealth_drift": self.mean_wealth_drift,
            "min_occupancy": self.min_occupancy,
            "passed": self.passed,
        }


def conservation_report(trajectory: Trajectory) -> ConservationReport:
    cfg = trajectory.config
    return ConservationReport(
        mass_drift=float(np.max(np.abs(trajectory.mass - trajectory.mass[0]))),
        mean_wealth_drift=float(np.max(np.abs(trajectory.mean_wealth - trajectory.mean_wealth[0]))),
        min_occupancy=float(trajectory.states.min()),
        conservation_tol=cfg.conservation_tol,
        negativity_tol=cfg.negativity_tol,
    )
