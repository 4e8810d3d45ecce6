"""Support/opposition dynamics across functional subsystems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ActivityGrid, InvalidParameterError, to_offset
from .wealth import WealthKernel


@dataclass(frozen=True)
class PoliticsParams:
    beta: float
    m: int
    u0: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 0.5:
            raise InvalidParameterError(f"beta must lie in [0, 1/2], got {self.beta}")
        if self.m < 1 or self.m % 2 == 0:
            raise InvalidParameterError(f"m must be odd and >= 1, got {self.m}")


@dataclass(frozen=True)
class OpinionKernel:
    """``Bhat[h, p, r]``: probability that a candidate of wealth class h in
    subsystem p ends in subsystem r (0-based)."""

    Bhat: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.Bhat.shape[0]

    @property
    def m(self) -> int:
        return self.Bhat.shape[1]

    @classmethod
    def identity(cls, n: int, m: int) -> "OpinionKernel":
        Bhat = np.broadcast_to(np.eye(m), (n, m, m)).copy()
        Bhat.flags.writeable = False
        return cls(Bhat)


def build_opinion_kernel(grid: ActivityGrid, params: PoliticsParams) -> OpinionKernel:
    """Opinion transition table; branch chosen by sign(U0) and sign(u_h).

    Poor candidates of a poor society drift towards opposition, wealthy
    candidates of a wealthy society towards support; the two mixed cases
    walk symmetrically with reflecting ends.  u_h = 0 counts as
    nonnegative.  With m = 1 there is nowhere to go and the table is 1.
    """
    n, m = grid.n, params.m
    # on the 2**-53 lattice beta, 2 beta, 1 - beta and 1 - 2 beta are all
    # exact doubles, so every row sums to exactly 1
    beta = round(float(params.beta) * 2.0**53) / 2.0**53
    if m == 1:
        return OpinionKernel.identity(n, 1)
    poor_society = params.u0 < 0
    Bhat = np.zeros((n, m, m))
    for h in range(n):
        poor = grid.u[h] < 0
        for p in range(m):
            if poor_society and poor:
                if p == 0:
                    Bhat[h, p, 0] = 1.0
                else:
                    Bhat[h, p, p - 1] = 2 * beta
                    Bhat[h, p, p] = 1 - 2 * beta
            elif not poor_society and not poor:
                if p == m - 1:
                    Bhat[h, p, p] = 1.0
                else:
                    Bhat[h, p, p] = 1 - 2 * beta
                    Bhat[h, p, p + 1] = 2 * beta
            elif p == 0:
                Bhat[h, p, 0] = 1 - beta
                Bhat[h, p, 1] = beta
            elif p == m - 1:
                Bhat[h, p, p - 1] = beta
                Bhat[h, p, p] = 1 - beta
            else:
                Bhat[h, p, p - 1] = beta
                Bhat[h, p, p] = 1 - 2 * beta
                Bhat[h, p, p + 1] = beta
    Bhat.flags.writeable = False
    return OpinionKernel(Bhat)


@dataclass(frozen=True)
class CombinedKernel:
    """Factorized joint table B_hk(i) * Bhat_h^p(r); never materialized."""

    wealth: WealthKernel
    opinion: OpinionKernel

    def __post_init__(self):
        if self.wealth.n != self.opinion.n:
            raise ValueError("wealth and opinion tables disagree on n")

    def normalization_deviation(self) -> float:
        """max over (h, k, p) of |sum_{i,r} B_hk(i) Bhat_h^p(r) - 1|."""
        wsum = self.wealth.B.sum(axis=2)  # (h, k)
        osum = self.opinion.Bhat.sum(axis=2)  # (h, p)
        return float(np.abs(wsum[:, :, None] * osum[:, None, :] - 1.0).max())


def combined_kernel_entry(ck: CombinedKernel, p: int, q: int, h: int, k: int, i: int, r: int) -> float:
    """Joint transition probability for 1-based indices; ``q`` only range-checked."""
    n, m = ck.wealth.n, ck.opinion.m
    p0, _ = to_offset(p, m, "p"), to_offset(q, m, "q")
    h0, k0, i0 = to_offset(h, n, "h"), to_offset(k, n, "k"), to_offset(i, n, "i")
    r0 = to_offset(r, m, "r")
    return float(ck.wealth.B[h0, k0, i0] * ck.opinion.Bhat[h0, p0, r0])


@dataclass
class OpinionNormalization:
    passed: bool
    max_row_deviation: float
    worst_row: tuple[int, int] | None  # 1-based (h, p)
    locality_violations: list[tuple[int, int, int]]  # 1-based (h, p, r)
    negative_or_above_one: list[tuple[int, int, int]]

    def lines(self) -> list[str]:
        status = "PASS" if self.passed else "FAIL"
        out = [f"{status}  sum_r Bhat_h^p(r) = 1  max deviation {self.max_row_deviation:.3e}"
               + (f" at (h,p)={self.worst_row}" if self.max_row_deviation > 0 else "")]
        if self.locality_violations:
            out.append(f"FAIL  mass outside p-1..p+1 at {self.locality_violations[:5]}")
        if self.negative_or_above_one:
            out.append(f"FAIL  entries outside [0,1] at {self.negative_or_above_one[:5]}")
        return out


def verify_opinion_normalization(kernel: OpinionKernel, tol: float = 1e-15) -> OpinionNormalization:
    Bhat = kernel.Bhat
    n, m, _ = Bhat.shape
    dev = np.abs(Bhat.sum(axis=2) - 1.0)
    h, p = np.unravel_index(int(np.argmax(dev)), dev.shape)
    worst = float(dev[h, p])
    pp = np.arange(m)[None, :, None]
    rr = np.arange(m)[None, None, :]
    far = (np.abs(rr - pp) > 1) & (Bhat != 0)
    bad_range = (Bhat < 0) | (Bhat > 1)
    loc = [tuple(int(x) + 1 for x in idx) for idx in np.argwhere(far)]
    rng = [tuple(int(x) + 1 for x in idx) for idx in np.argwhere(bad_range)]
    return OpinionNormalization(
        passed=worst <= tol and not loc and not rng,
        max_row_deviation=worst,
        worst_row=(int(h) + 1, int(p) + 1),
        locality_violations=loc,
        negative_or_above_one=rng,
    )
