"""Hot loops: RHS evaluation and fixed-step time integration.

Array conventions (0-based): ``f[p, i]`` occupancy of subsystem p, wealth
class i; ``B[h, k, i]`` wealth transition table; ``eta[h, k]`` encounter
rate; ``Bhat[h, p, r]`` opinion transition table.  ``B_all``/``eta_all``
stack the wealth tables for every critical distance 0..n along axis 0.

Every function here exists in a numba loop form (``*_loops``) and a
vectorized numpy form (``*_numpy``); the public names dispatch on
``_backend.USE_NUMBA``.  Wealth tables must be local: ``B[h, k, i] = 0``
unless ``|i - h| <= 1``.  The loop kernels rely on it.
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import USE_NUMBA, njit

# Added before flooring the critical distance so that values that are
# integers up to rounding (gamma(S0) = gamma0, gamma(1) = n) land on them.
GAMMA_SNAP = 1e-9

EULER = 0
RK4 = 1


@njit
def gamma_from_gap(s, n, gamma0, s0):
    """Floored quadratic critical distance, clamped to [0, n].

    Returns ``(gamma, clamped)``.
    """
    x = (2.0 * gamma0 * (s * s - 1.0) - n * (s0 + 1.0) * (s * s - s0)) / (
        2.0 * (s0 * s0 - 1.0)
    ) + 0.5 * n * s
    g = math.floor(x + GAMMA_SNAP)
    if g < 0:
        return 0, True
    if g > n:
        return n, True
    return int(g), False


@njit
def gap_of_marginal(F):
    """Social gap of a wealth marginal, normalized by its total mass."""
    n = F.shape[0]
    centre = (n - 1) // 2
    total = 0.0
    poor = 0.0
    rich = 0.0
    for i in range(n):
        total += F[i]
        if i < centre:
            poor += F[i]
        elif i > centre:
            rich += F[i]
    if total <= 0.0:
        return 0.0
    return (poor - rich) / total


@njit
def _state_gamma(f, n, gamma0, s0, variable):
    if not variable:
        return gamma0, False
    F = np.zeros(n)
    for p in range(f.shape[0]):
        for i in range(n):
            F[i] += f[p, i]
    return gamma_from_gap(gap_of_marginal(F), n, gamma0, s0)


# ---------------------------------------------------------------- numba path


def _rhs_loops_py(f, B, eta, Bhat, out):
    m, n = f.shape
    F = np.zeros(n)
    for p in range(m):
        for i in range(n):
            F[i] += f[p, i]
    # G[h, i] = sum_k eta_hk B_hk(i) F_k ; L[h] = sum_k eta_hk F_k
    G = np.zeros((n, n))
    L = np.zeros(n)
    for h in range(n):
        lo = max(h - 1, 0)
        hi = min(h + 2, n)
        for k in range(n):
            w = eta[h, k] * F[k]
            L[h] += w
            for i in range(lo, hi):
                G[h, i] += w * B[h, k, i]
    for r in range(m):
        for i in range(n):
            out[r, i] = -f[r, i] * L[i]
    for p in range(m):
        plo = max(p - 1, 0)
        phi = min(p + 2, m)
        for h in range(n):
            x = f[p, h]
            if x == 0.0:
                continue
            lo = max(h - 1, 0)
            hi = min(h + 2, n)
            for r in range(plo, phi):
                b = Bhat[h, p, r] * x
                if b == 0.0:
                    continue
                for i in range(lo, hi):
                    out[r, i] += b * G[h, i]


def _model_rhs_loops_py(f, B_all, eta_all, Bhat, gamma0, s0, variable, out):
    n = f.shape[1]
    g, clamped = _state_gamma(f, n, gamma0, s0, variable)
    _rhs_loops(f, B_all[g], eta_all[g], Bhat, out)
    return g, clamped


def _max_abs(a):
    r = 0.0
    for x in a.ravel():
        v = abs(x)
        if v > r:
            r = v
    return r


def _all_finite(a):
    for x in a.ravel():
        if not np.isfinite(x):
            return False
    return True


def _advance_loops_py(f, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt, k1, k2, k3, k4, tmp):
    """One step from ``f`` given ``k1 = RHS(f)``; returns (new f, clamps, switched)."""
    if method == EULER:
        return f + dt * k1, 0, False
    g1, _ = _state_gamma(f, f.shape[1], gamma0, s0, variable)
    tmp[:] = f + 0.5 * dt * k1
    g2, c2 = _model_rhs_loops(tmp, B_all, eta_all, Bhat, gamma0, s0, variable, k2)
    tmp[:] = f + 0.5 * dt * k2
    g3, c3 = _model_rhs_loops(tmp, B_all, eta_all, Bhat, gamma0, s0, variable, k3)
    tmp[:] = f + dt * k3
    g4, c4 = _model_rhs_loops(tmp, B_all, eta_all, Bhat, gamma0, s0, variable, k4)
    new = f + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    switched = g2 != g1 or g3 != g1 or g4 != g1
    return new, int(c2) + int(c3) + int(c4), switched


def _integrate_loops_py(f0, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt, nsteps, every, stat_tol):
    m, n = f0.shape
    cap = nsteps // every + 2
    times = np.empty(cap)
    states = np.empty((cap, m, n))
    gammas = np.empty(cap, dtype=np.int64)
    rmax = np.empty(cap)
    k1 = np.empty((m, n))
    k2 = np.empty((m, n))
    k3 = np.empty((m, n))
    k4 = np.empty((m, n))
    tmp = np.empty((m, n))
    f = f0.copy()
    ns = 0
    clamps = 0
    switches = 0
    stationary = -1
    failed = -1
    step = 0
    while True:
        g, c = _model_rhs_loops(f, B_all, eta_all, Bhat, gamma0, s0, variable, k1)
        clamps += int(c)
        r = _max_abs(k1)
        still = r < stat_tol
        if step == 0 or step % every == 0 or step == nsteps or still:
            times[ns] = step * dt
            states[ns] = f
            gammas[ns] = g
            rmax[ns] = r
            ns += 1
        if still:
            stationary = step
            break
        if step == nsteps:
            break
        f, c, sw = _advance_loops(f, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt, k1, k2, k3, k4, tmp)
        clamps += c
        if sw:
            switches += 1
        step += 1
        if not _all_finite(f):
            failed = step
            states[ns] = f
            break
    extra = 1 if failed >= 0 else 0
    return times[:ns], states[: ns + extra], gammas[:ns], rmax[:ns], stationary, failed, clamps, switches


if USE_NUMBA:
    _rhs_loops = njit(_rhs_loops_py)
    _model_rhs_loops = njit(_model_rhs_loops_py)
    _max_abs = njit(_max_abs)
    _all_finite = njit(_all_finite)
    _advance_loops = njit(_advance_loops_py)
    _integrate_loops = njit(_integrate_loops_py)
else:
    _rhs_loops = _rhs_loops_py
    _model_rhs_loops = _model_rhs_loops_py
    _advance_loops = _advance_loops_py
    _integrate_loops = _integrate_loops_py


# ---------------------------------------------------------------- numpy path


def _rhs_numpy(f, B, eta, Bhat):
    F = f.sum(axis=0)
    G = np.einsum("hk,hki->hi", eta * F[None, :], B)
    X = np.einsum("hpr,ph->rh", Bhat, f)
    return X @ G - f * (eta @ F)[None, :]


def _model_rhs_numpy(f, B_all, eta_all, Bhat, gamma0, s0, variable):
    g, clamped = _state_gamma(f, f.shape[1], gamma0, s0, variable)
    return _rhs_numpy(f, B_all[g], eta_all[g], Bhat), g, clamped


def _advance_numpy(f, k1, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt):
    if method == EULER:
        return f + dt * k1, 0, False
    g1, _ = _state_gamma(f, f.shape[1], gamma0, s0, variable)
    k2, g2, c2 = _model_rhs_numpy(f + 0.5 * dt * k1, B_all, eta_all, Bhat, gamma0, s0, variable)
    k3, g3, c3 = _model_rhs_numpy(f + 0.5 * dt * k2, B_all, eta_all, Bhat, gamma0, s0, variable)
    k4, g4, c4 = _model_rhs_numpy(f + dt * k3, B_all, eta_all, Bhat, gamma0, s0, variable)
    new = f + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return new, int(c2) + int(c3) + int(c4), not (g1 == g2 == g3 == g4)


def _integrate_numpy(f0, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt, nsteps, every, stat_tol):
    times, states, gammas, rmax = [], [], [], []
    f = f0.copy()
    clamps = switches = 0
    stationary = failed = -1
    step = 0
    while True:
        k1, g, c = _model_rhs_numpy(f, B_all, eta_all, Bhat, gamma0, s0, variable)
        clamps += int(c)
        r = float(np.abs(k1).max())
        still = r < stat_tol
        if step == 0 or step % every == 0 or step == nsteps or still:
            times.append(step * dt)
            states.append(f)
            gammas.append(g)
            rmax.append(r)
        if still:
            stationary = step
            break
        if step == nsteps:
            break
        f, c, sw = _advance_numpy(f, k1, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt)
        clamps += c
        switches += int(sw)
        step += 1
        if not np.all(np.isfinite(f)):
            failed = step
            states.append(f)
            break
    return (
        np.array(times, dtype=float),
        np.array(states).reshape(len(states), *f0.shape),
        np.array(gammas, dtype=np.int64),
        np.array(rmax, dtype=float),
        stationary,
        failed,
        clamps,
        switches,
    )


# ---------------------------------------------------------------- dispatch


def rhs(f, B, eta, Bhat):
    """Evaluate the multi-subsystem RHS for one fixed wealth table."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if USE_NUMBA:
        out = np.empty_like(f)
        _rhs_loops(f, B, eta, Bhat, out)
        return out
    return _rhs_numpy(f, B, eta, Bhat)


def model_rhs(f, B_all, eta_all, Bhat, gamma0, s0, variable):
    """RHS with the critical distance taken from ``f``; returns (df, gamma, clamped)."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if USE_NUMBA:
        out = np.empty_like(f)
        g, c = _model_rhs_loops(f, B_all, eta_all, Bhat, int(gamma0), float(s0), bool(variable), out)
        return out, int(g), bool(c)
    out, g, c = _model_rhs_numpy(f, B_all, eta_all, Bhat, int(gamma0), float(s0), bool(variable))
    return out, int(g), bool(c)


def advance(f, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt):
    """One explicit step; returns (new f, clamp count, gamma switched within step)."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    k1, _, c1 = model_rhs(f, B_all, eta_all, Bhat, gamma0, s0, variable)
    if USE_NUMBA:
        shape = f.shape
        new, c, sw = _advance_loops(
            f, B_all, eta_all, Bhat, int(gamma0), float(s0), bool(variable), int(method), float(dt),
            k1, np.empty(shape), np.empty(shape), np.empty(shape), np.empty(shape),
        )
    else:
        new, c, sw = _advance_numpy(f, k1, B_all, eta_all, Bhat, int(gamma0), float(s0), bool(variable), int(method), float(dt))
    return new, int(c) + int(c1), bool(sw)


def integrate(f0, B_all, eta_all, Bhat, gamma0, s0, variable, method, dt, nsteps, every, stat_tol):
    """Fixed-step integration with sampling and stationarity stop.

    Returns ``(times, states, gammas, rhs_max, stationary_step,
    failed_step, clamp_count, switch_steps)``; step indices are -1 when
    the event did not occur.  On failure the last entry of ``states`` is
    the non-finite state.
    """
    f0 = np.ascontiguousarray(f0, dtype=np.float64)
    args = (f0, B_all, eta_all, Bhat, int(gamma0), float(s0), bool(variable), int(method),
            float(dt), int(nsteps), int(every), float(stat_tol))
    if USE_NUMBA:
        res = _integrate_loops(*args)
    else:
        res = _integrate_numpy(*args)
    times, states, gammas, rmax, stationary, failed, clamps, switches = res
    return times, states, gammas, rmax, int(stationary), int(failed), int(clamps), int(switches)
