"""Cooperation/competition wealth game with a distribution-driven critical distance."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import _kernels
from .core import ActivityGrid, InvalidParameterError, PopulationState, build_wealth_grid, to_offset

log = logging.getLogger(__name__)


class Control(str, enum.Enum):
    """Critical-distance policy: fixed at gamma0, or driven by the social gap."""

    CONSTANT = "constant"
    VARIABLE = "variable"


@dataclass(frozen=True)
class WealthGameParams:
    gamma0: int
    S0: float = 0.0
    mu: float = 0.3
    eta0: float = 1.0
    control: Control = Control.VARIABLE

    def __post_init__(self):
        object.__setattr__(self, "control", Control(self.control))
        if isinstance(self.gamma0, bool) or int(self.gamma0) != self.gamma0 or self.gamma0 < 0:
            raise InvalidParameterError(f"gamma0 must be a nonnegative integer, got {self.gamma0!r}")
        object.__setattr__(self, "gamma0", int(self.gamma0))
        if not 0.0 < self.mu <= 1.0:
            raise InvalidParameterError(f"mu must lie in (0, 1], got {self.mu}")
        if not abs(self.S0) < 1.0:
            raise InvalidParameterError(f"S0 must lie in (-1, 1), got {self.S0}")
        if not self.eta0 > 0.0:
            raise InvalidParameterError(f"eta0 must be positive, got {self.eta0}")

    def check_grid(self, n: int) -> None:
        if self.gamma0 > n:
            raise InvalidParameterError(f"gamma0={self.gamma0} exceeds n={n}")


@dataclass(frozen=True)
class SocialGap:
    n_minus: float
    n_plus: float
    s: float


@dataclass(frozen=True)
class EncounterRate:
    eta: np.ndarray = field(repr=False)
    gamma: int
    mu: float
    eta0: float


@dataclass(frozen=True)
class WealthKernel:
    """Transition table ``B[h, k, i]`` (0-based) for one critical distance.

    ``sigma[h, k]`` is the mean class shift of a candidate in h meeting a
    field particle in k, ``epsilon[h, k]`` its sign.
    """

    n: int
    gamma: int
    B: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    epsilon: np.ndarray = field(repr=False)


def social_gap(state: PopulationState) -> SocialGap:
    """Poor and wealthy mass fractions of the aggregate wealth marginal.

    The neutral class is in neither group.  Fractions are relative to the
    current total mass.
    """
    n = state.n
    if n % 2 == 0:
        raise InvalidParameterError("social gap needs an odd number of classes")
    F = state.marginal
    total = float(F.sum())
    centre = (n - 1) // 2
    if total <= 0.0:
        return SocialGap(0.0, 0.0, 0.0)
    n_minus = float(F[:centre].sum()) / total
    n_plus = float(F[centre + 1:].sum()) / total
    return SocialGap(n_minus, n_plus, float(_kernels.gap_of_marginal(np.ascontiguousarray(F))))


def critical_distance(s: float, params: WealthGameParams, n: int) -> int:
    """Critical distance for social gap ``s``.

    Variable control floors the quadratic through (S0, gamma0), (1, n) and
    (-1, 0); out-of-range results are clamped to [0, n] and logged.
    """
    if params.control is Control.CONSTANT:
        return params.gamma0
    if not -1.0 <= s <= 1.0:
        raise InvalidParameterError(f"social gap must lie in [-1, 1], got {s}")
    g, clamped = _kernels.gamma_from_gap(float(s), int(n), int(params.gamma0), float(params.S0))
    if clamped:
        log.warning("critical distance clamped to %d (s=%r, gamma0=%d, S0=%r)", g, s, params.gamma0, params.S0)
    return int(g)


def alpha(h: int, k: int, n: int) -> float:
    """Interaction probability |k - h| / (n - 1) for 1-based classes h, k."""
    to_offset(h, n, "h")
    to_offset(k, n, "k")
    return abs(k - h) / (n - 1)


def _check_gamma(n: int, gamma: int) -> int:
    if isinstance(gamma, bool) or int(gamma) != gamma or not 0 <= gamma <= n:
        raise InvalidParameterError(f"gamma must be an integer in [0, {n}], got {gamma!r}")
    return int(gamma)


@lru_cache(maxsize=None)
def _kernel_cached(n: int, gamma: int) -> WealthKernel:
    B = np.zeros((n, n, n))
    eps = np.zeros((n, n), dtype=np.int64)
    last = n - 1
    for h in range(n):
        for k in range(n):
            # 1 - (1 - a) is a in a form whose complement is exact, so the
            # stored pair (a, 1 - a) sums to exactly 1 in rational arithmetic
            a = 1.0 - (1.0 - abs(k - h) / (n - 1))
            if h == k:
                B[h, k, h] = 1.0
            elif abs(k - h) <= gamma:
                # competition: the poorer candidate loses, the richer one gains;
                # extreme classes neither move nor make others move
                if h in (0, last) or (h < k and k == last) or (h > k and k == 0):
                    B[h, k, h] = 1.0
                elif h < k:
                    B[h, k, h - 1] = a
                    B[h, k, h] = 1.0 - a
                    eps[h, k] = -1
                else:
                    B[h, k, h] = 1.0 - a
                    B[h, k, h + 1] = a
                    eps[h, k] = 1
            elif h < k:
                # cooperation: the poorer candidate gains, the richer one gives
                B[h, k, h] = 1.0 - a
                B[h, k, h + 1] = a
                eps[h, k] = 1
            else:
                B[h, k, h - 1] = a
                B[h, k, h] = 1.0 - a
                eps[h, k] = -1
    dist = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    sigma = eps * (1.0 - (1.0 - dist / (n - 1))) * (2.0 / (n - 1))
    for a_ in (B, sigma, eps):
        a_.flags.writeable = False
    return WealthKernel(n=n, gamma=gamma, B=B, sigma=sigma, epsilon=eps)


def build_wealth_kernel(n: int, gamma: int) -> WealthKernel:
    """Transition table of the cooperation/competition game.

    |k - h| = gamma counts as competition.  Kernels are cached per (n, gamma)
    and returned read-only.
    """
    build_wealth_grid(n)
    return _kernel_cached(int(n), _check_gamma(n, gamma))


def build_encounter_rate(n: int, gamma: int, mu: float, eta0: float = 1.0) -> EncounterRate:
    if not 0.0 < mu <= 1.0:
        raise InvalidParameterError(f"mu must lie in (0, 1], got {mu}")
    if not eta0 > 0.0:
        raise InvalidParameterError(f"eta0 must be positive, got {eta0}")
    gamma = _check_gamma(n, gamma)
    dist = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    eta = np.where(dist <= gamma, eta0, mu * eta0).astype(np.float64)
    eta.flags.writeable = False
    return EncounterRate(eta=eta, gamma=gamma, mu=float(mu), eta0=float(eta0))


@lru_cache(maxsize=64)
def kernel_tables(n: int, mu: float, eta0: float) -> tuple[np.ndarray, np.ndarray]:
    """Stacked wealth tables and encounter rates for gamma = 0..n."""
    B_all = np.stack([build_wealth_kernel(n, g).B for g in range(n + 1)])
    eta_all = np.stack([build_encounter_rate(n, g, mu, eta0).eta for g in range(n + 1)])
    B_all.flags.writeable = False
    eta_all.flags.writeable = False
    return B_all, eta_all


@dataclass
class CheckResult:
    passed: bool
    max_violation: float
    where: tuple[int, int] | None = None  # 1-based (h, k) of the worst entry


@dataclass
class ConservationConditions:
    row_sums: CheckResult
    mean_shift: CheckResult
    antisymmetry: CheckResult
    total_shift: CheckResult

    @property
    def passed(self) -> bool:
        return all(c.passed for c in (self.row_sums, self.mean_shift, self.antisymmetry, self.total_shift))

    def lines(self) -> list[str]:
        out = []
        for label, c in (("sum_i B_hk(i) = 1", self.row_sums),
                         ("sum_i u_i B_hk(i) - u_h = sigma_hk", self.mean_shift),
                         ("sigma_hk + sigma_kh = 0", self.antisymmetry),
                         ("sum_hk sigma_hk = 0", self.total_shift)):
            loc = f" at (h,k)={c.where}" if c.where and not c.passed else ""
            out.append(f"{'PASS' if c.passed else 'FAIL'}  {label}  max violation {c.max_violation:.3e}{loc}")
        return out


def _worst(viol: np.ndarray, tol: float) -> CheckResult:
    idx = np.unravel_index(int(np.argmax(viol)), viol.shape)
    worst = float(viol[idx])
    return CheckResult(worst <= tol, worst, (int(idx[0]) + 1, int(idx[1]) + 1))


def verify_conservation_conditions(kernel: WealthKernel, grid: ActivityGrid, tol: float = 1e-14) -> ConservationConditions:
    """Check the four sufficient conditions for mass and mean-wealth conservation.

    Row sums, antisymmetry and the total shift are evaluated exactly
    (rational arithmetic on the stored doubles); the mean shift uses exact
    rationals as well, so on dyadic grids (n - 1 a power of two) every
    violation of a valid kernel is exactly 0.
    """
    n = grid.n
    B = kernel.B
    sigma = kernel.sigma
    if B.shape != (n, n, n):
        raise ValueError("kernel and grid sizes differ")
    u = [Fraction(x) for x in grid.u]
    rows = np.zeros((n, n))
    shift = np.zeros((n, n))
    for h in range(n):
        for k in range(n):
            col = [Fraction(x) for x in B[h, k]]
            rows[h, k] = abs(float(sum(col) - 1))
            mean = sum(ui * b for ui, b in zip(u, col))
            shift[h, k] = abs(float(mean - u[h] - Fraction(sigma[h, k])))
    anti = np.abs(sigma + sigma.T)
    total = abs(math.fsum(sigma.ravel()))
    return ConservationConditions(
        row_sums=_worst(rows, tol),
        mean_shift=_worst(shift, tol),
        antisymmetry=_worst(anti, tol),
        total_shift=CheckResult(total <= tol, total),
    )
