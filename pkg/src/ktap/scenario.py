"""Scenario configuration, shipped presets, single runs and parameter sweeps.

Config grammar
--------------
One ``key = value`` per line; ``#`` starts a comment outside quoted
strings; blank lines are ignored.  Keys are dotted paths (``wealth.mu``).
Values are JSON literals (numbers, ``true``/``false``, double-quoted
strings, arrays) or bare identifiers (``variable``, ``rk4``,
``refs/steady.txt``) and bracketed identifier lists
(``[trajectory_csv, plotdata]``).  An optional ``preset = <name>`` line
starts from a shipped scenario; later keys override it.  Every key may
appear at most once.

Keys and defaults::

    name                      "scenario"
    grid.n                    required
    grid.m                    1
    wealth.gamma0             (n - 1) // 2
    wealth.S0                 0.0
    wealth.mu                 0.3
    wealth.eta0               1.0
    wealth.control            variable          (constant | variable)
    politics.beta             0.4
    initial.preset            u0_neutral        (u0_neutral | u0_poor | uniform)
    initial.matrix            m x n array (replaces initial.preset)
    initial.normalized        true
    initial.U0                optional; must match the initial mean wealth
    integrator.method         rk4               (rk4 | euler)
    integrator.dt             0.01
    integrator.t_max          200.0
    integrator.sample_every   10
    integrator.stationarity_tol  1e-8
    integrator.conservation_tol  1e-9
    integrator.negativity_tol    1e-9
    norm.weights              optional length-n array; default all ones
    earlywarning.enabled      false
    earlywarning.reference    twin              (twin | path to a steady-state file)
    outputs                   [trajectory_csv, steady_state, plotdata]
                              (+ dbs_csv, which needs earlywarning)
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from . import files
from .core import InvalidParameterError, PopulationState, build_wealth_grid
from .earlywarning import (
    NormSpec,
    ReferenceDistribution,
    build_reference_constant_gamma,
    dbs_series,
    detect_turnround,
)
from .integrator import IntegratorConfig, Method, Model, build_model, conservation_report, integrate
from .politics import PoliticsParams
from .wealth import Control, WealthGameParams

log = logging.getLogger(__name__)

OUTPUTS = ("trajectory_csv", "steady_state", "dbs_csv", "plotdata")
INITIAL_PRESETS = ("u0_neutral", "u0_poor", "uniform")
POOR_U0 = -0.4
POOR_GAP = 8 / 15


class ConfigError(ValueError):
    """Malformed or invalid scenario/sweep document."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 field: str | None = None):
        self.message = message
        self.line = line
        self.column = column
        self.field = field
        super().__init__(str(self))

    def __str__(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}" + (f", column {self.column}" if self.column is not None else ""))
        if self.field:
            where.append(self.field)
        return (": ".join(where) + ": " if where else "") + self.message


class ScenarioRunError(RuntimeError):
    """A scenario failed; ``cause`` is the underlying exception."""

    def __init__(self, name: str, cause: BaseException):
        super().__init__(f"scenario {name!r}: {type(cause).__name__}: {cause}")
        self.name = name
        self.cause = cause


# ---------------------------------------------------------------- lexing

_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*\Z")
_IDENT = re.compile(r"[A-Za-z0-9_.\-/+]+\Z")


def _strip_comment(line: str) -> str:
    in_str = escaped = False
    for j, ch in enumerate(line):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:j]
    return line


def _reject_constant(name):
    raise ValueError(f"{name} is not allowed")


def _parse_value(text: str, line: int, col: int):
    if not text:
        raise ConfigError("missing value", line, col)
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except ValueError as exc:
        if _IDENT.match(text):
            return text
        if text.startswith("[") and text.endswith("]"):
            parts = [p.strip() for p in text[1:-1].split(",")]
            if all(_IDENT.match(p) for p in parts):
                return parts
        pos = getattr(exc, "pos", 0)
        msg = getattr(exc, "msg", str(exc))
        raise ConfigError(f"cannot parse value {text!r} ({msg})", line, col + pos) from None


def parse_document(text: str) -> tuple[dict[str, Any], dict[str, int]]:
    """Split a document into ``{key: value}`` and ``{key: line}``."""
    items: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", lineno, len(body) - len(body.lstrip()) + 1)
        key_part, _, value_part = body.partition("=")
        key = key_part.strip()
        key_col = len(key_part) - len(key_part.lstrip()) + 1
        if not _KEY.match(key):
            raise ConfigError(f"malformed key {key!r}", lineno, key_col)
        if key in items:
            raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", lineno, key_col)
        value_col = len(key_part) + 2 + len(value_part) - len(value_part.lstrip())
        items[key] = _parse_value(value_part.strip(), lineno, value_col)
        lines[key] = lineno
    return items, lines


# ---------------------------------------------------------------- value checks

def _int(v, key):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
        raise ConfigError(f"expected an integer, got {v!r}", field=key)
    return int(v)


def _float(v, key):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {v!r}", field=key)
    return float(v)


def _bool(v, key):
    if not isinstance(v, bool):
        raise ConfigError(f"expected true or false, got {v!r}", field=key)
    return v


def _str(v, key):
    if not isinstance(v, str) or not v:
        raise ConfigError(f"expected a non-empty string, got {v!r}", field=key)
    return v


def _choice(options):
    def check(v, key):
        if v not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {v!r}", field=key)
        return v
    return check


def _vector(v, key):
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a non-empty array of numbers", field=key)
    return tuple(_float(x, key) for x in v)


def _matrix(v, key):
    if isinstance(v, list) and v and not isinstance(v[0], list):
        v = [v]
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise ConfigError("expected an array of rows", field=key)
    return tuple(_vector(r, key) for r in v)


def _outputs(v, key):
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, list):
        raise ConfigError("expected a list of output names", field=key)
    out = tuple(_choice(OUTPUTS)(x, key) for x in v)
    if len(set(out)) != len(out):
        raise ConfigError("output listed twice", field=key)
    return out


KEYS = {
    "name": _str,
    "grid.n": _int,
    "grid.m": _int,
    "wealth.gamma0": _int,
    "wealth.S0": _float,
    "wealth.mu": _float,
    "wealth.eta0": _float,
    "wealth.control": _choice(tuple(c.value for c in Control)),
    "politics.beta": _float,
    "initial.preset": _choice(INITIAL_PRESETS),
    "initial.matrix": _matrix,
    "initial.normalized": _bool,
    "initial.U0": _float,
    "integrator.method": _choice(tuple(m.value for m in Method)),
    "integrator.dt": _float,
    "integrator.t_max": _float,
    "integrator.sample_every": _int,
    "integrator.stationarity_tol": _float,
    "integrator.conservation_tol": _float,
    "integrator.negativity_tol": _float,
    "norm.weights": _vector,
    "earlywarning.enabled": _bool,
    "earlywarning.reference": _str,
    "outputs": _outputs,
}


# ---------------------------------------------------------------- initial distributions

@lru_cache(maxsize=None)
def _poor_profile(n: int) -> tuple[float, ...]:
    """Smoothest (maximum-entropy) distribution with mass 1, U = -0.4, S = 8/15.

    The solution has the form f_i ~ exp(a u_i + b s_i) with s_i = +1 on
    poor classes, -1 on wealthy ones and 0 at the centre.
    """
    from scipy.optimize import root

    u = build_wealth_grid(n).u
    sgn = np.sign(-u)

    def profile(x):
        z = x[0] * u + x[1] * sgn
        w = np.exp(z - z.max())
        return w / w.sum()

    def residual(x):
        f = profile(x)
        return [u @ f - POOR_U0, sgn @ f - POOR_GAP]

    # judged by the residual: hybr may stop on "no further improvement" at machine precision
    sol = root(residual, [-1.0, 0.0], method="hybr", options={"xtol": 1e-14})
    f = profile(sol.x)
    if max(abs(r) for r in residual(sol.x)) > 1e-12:
        raise ConfigError(f"no distribution on n={n} classes has U0={POOR_U0} and S={POOR_GAP:.6g}",
                          field="initial.preset")
    return tuple(float(x) for x in f)


def initial_profile(preset: str, n: int) -> np.ndarray:
    """Normalized wealth distribution of a named initial preset.

    ``u0_neutral`` and ``uniform`` put 1/n in every class (symmetric, U0 = 0);
    ``u0_poor`` is the smooth poverty-skewed profile of :func:`_poor_profile`.
    """
    if preset in ("u0_neutral", "uniform"):
        return np.full(n, 1.0 / n)
    if preset == "u0_poor":
        return np.array(_poor_profile(n))
    raise ConfigError(f"unknown initial preset {preset!r}", field="initial.preset")


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    m: int = 1
    name: str = "scenario"
    gamma0: int | None = None
    S0: float = 0.0
    mu: float = 0.3
    eta0: float = 1.0
    control: Control = Control.VARIABLE
    beta: float = 0.4
    initial_preset: str | None = "u0_neutral"
    initial_matrix_rows: tuple[tuple[float, ...], ...] | None = None
    normalized: bool = True
    declared_u0: float | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    norm_weights: tuple[float, ...] | None = None
    earlywarning: bool = False
    reference: str = "twin"
    outputs: tuple[str, ...] = ("trajectory_csv", "steady_state", "plotdata")

    def __post_init__(self):
        object.__setattr__(self, "control", Control(self.control))
        if self.gamma0 is None:
            object.__setattr__(self, "gamma0", (self.n - 1) // 2 if self.n >= 1 else 0)
        self._validate()

    def _validate(self):
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(msg, field=key)

        for key, build in (("grid.n", lambda: build_wealth_grid(self.n)),):
            try:
                build()
            except InvalidParameterError as exc:
                raise ConfigError(str(exc), field=key) from None
        need(self.m >= 1 and self.m % 2 == 1, "grid.m", f"m must be odd and >= 1, got {self.m}")
        need(0 <= self.gamma0 <= self.n, "wealth.gamma0", f"gamma0 must lie in [0, n={self.n}], got {self.gamma0}")
        need(abs(self.S0) < 1, "wealth.S0", f"S0 must lie in (-1, 1), got {self.S0}")
        need(0 < self.mu <= 1, "wealth.mu", f"mu must lie in (0, 1], got {self.mu}")
        need(self.eta0 > 0, "wealth.eta0", f"eta0 must be positive, got {self.eta0}")
        need(0 <= self.beta <= 0.5, "politics.beta", f"beta must lie in [0, 1/2], got {self.beta}")
        need((self.initial_preset is None) != (self.initial_matrix_rows is None), "initial",
             "give exactly one of initial.preset and initial.matrix")
        f = self.initial_matrix()
        if self.initial_matrix_rows is not None:
            need(f.shape == (self.m, self.n), "initial.matrix",
                 f"shape {f.shape[0]}x{f.shape[1]} does not match m x n = {self.m}x{self.n}")
            need(bool(np.all(f >= 0)), "initial.matrix", "occupancies must be nonnegative")
        if self.normalized:
            total = math.fsum(f.ravel())
            need(abs(total - 1) <= 1e-12, "initial.matrix" if self.initial_matrix_rows else "initial.normalized",
                 f"declared normalized but mass is {total:.12g}")
        if self.declared_u0 is not None:
            need(abs(self.u0 - self.declared_u0) <= 1e-9, "initial.U0",
                 f"declared U0={self.declared_u0!r} but the initial mean wealth is {self.u0!r}")
        if self.norm_weights is not None:
            need(len(self.norm_weights) == self.n, "norm.weights",
                 f"expected {self.n} weights, got {len(self.norm_weights)}")
            need(all(w >= 0 for w in self.norm_weights) and any(w > 0 for w in self.norm_weights),
                 "norm.weights", "weights must be nonnegative and not all zero")
        need("dbs_csv" not in self.outputs or self.earlywarning, "outputs",
             "dbs_csv needs earlywarning.enabled = true")

    # derived objects

    @property
    def wealth(self) -> WealthGameParams:
        return WealthGameParams(self.gamma0, self.S0, self.mu, self.eta0, self.control)

    @property
    def politics(self) -> PoliticsParams:
        return PoliticsParams(beta=self.beta, m=self.m, u0=self.u0)

    def initial_matrix(self) -> np.ndarray:
        if self.initial_matrix_rows is not None:
            rows = self.initial_matrix_rows
            if len({len(r) for r in rows}) != 1:
                raise ConfigError("rows have different lengths", field="initial.matrix")
            return np.array(rows, dtype=np.float64)
        return np.tile(initial_profile(self.initial_preset, self.n) / self.m, (self.m, 1))

    def initial_state(self) -> PopulationState:
        return PopulationState(self.initial_matrix(), 0.0)

    @property
    def u0(self) -> float:
        """Initial mean wealth; selects the opinion-table branch."""
        # fsum so that symmetric profiles give exactly 0
        F = self.initial_matrix().sum(axis=0)
        return math.fsum(F * build_wealth_grid(self.n).u)

    def build_model(self) -> Model:
        return build_model(self.n, self.m, self.wealth, beta=self.beta, u0=self.u0)

    def norm(self) -> NormSpec:
        return NormSpec(self.norm_weights) if self.norm_weights is not None else NormSpec.uniform(self.n)

    # key/value view

    def to_items(self) -> dict[str, Any]:
        it = self.integrator
        items: dict[str, Any] = {
            "name": self.name,
            "grid.n": self.n,
            "grid.m": self.m,
            "wealth.gamma0": self.gamma0,
            "wealth.S0": self.S0,
            "wealth.mu": self.mu,
            "wealth.eta0": self.eta0,
            "wealth.control": self.control.value,
            "politics.beta": self.beta,
        }
        if self.initial_preset is not None:
            items["initial.preset"] = self.initial_preset
        else:
            items["initial.matrix"] = [list(r) for r in self.initial_matrix_rows]
        items["initial.normalized"] = self.normalized
        if self.declared_u0 is not None:
            items["initial.U0"] = self.declared_u0
        items.update({
            "integrator.method": it.method.value,
            "integrator.dt": it.dt,
            "integrator.t_max": it.t_max,
            "integrator.sample_every": it.sample_every,
            "integrator.stationarity_tol": it.stationarity_tol,
            "integrator.conservation_tol": it.conservation_tol,
            "integrator.negativity_tol": it.negativity_tol,
        })
        if self.norm_weights is not None:
            items["norm.weights"] = list(self.norm_weights)
        items["earlywarning.enabled"] = self.earlywarning
        items["earlywarning.reference"] = self.reference
        items["outputs"] = list(self.outputs)
        return items

    @classmethod
    def from_items(cls, items: dict[str, Any]) -> "ScenarioConfig":
        items = dict(items)
        if "preset" in items:
            base = preset(_str(items.pop("preset"), "preset")).to_items()
            if "initial.matrix" in items:
                base.pop("initial.preset", None)
            if "initial.preset" in items:
                base.pop("initial.matrix", None)
            if "grid.n" in items:
                base.pop("norm.weights", None)
            items = {**base, **items}
        v = {}
        for key, value in items.items():
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}", field=key)
            v[key] = KEYS[key](value, key)
        if "grid.n" not in v:
            raise ConfigError("missing required key", field="grid.n")
        defaults = IntegratorConfig()
        try:
            integ = IntegratorConfig(
                method=v.get("integrator.method", defaults.method),
                dt=v.get("integrator.dt", defaults.dt),
                t_max=v.get("integrator.t_max", defaults.t_max),
                sample_every=v.get("integrator.sample_every", defaults.sample_every),
                stationarity_tol=v.get("integrator.stationarity_tol", defaults.stationarity_tol),
                conservation_tol=v.get("integrator.conservation_tol", defaults.conservation_tol),
                negativity_tol=v.get("integrator.negativity_tol", defaults.negativity_tol),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), field="integrator") from None
        preset_name = v.get("initial.preset")
        if preset_name is None and "initial.matrix" not in v:
            preset_name = "u0_neutral"
        return cls(
            n=v["grid.n"],
            m=v.get("grid.m", 1),
            name=v.get("name", "scenario"),
            gamma0=v.get("wealth.gamma0"),
            S0=v.get("wealth.S0", 0.0),
            mu=v.get("wealth.mu", 0.3),
            eta0=v.get("wealth.eta0", 1.0),
            control=v.get("wealth.control", Control.VARIABLE),
            beta=v.get("politics.beta", 0.4),
            initial_preset=preset_name,
            initial_matrix_rows=v.get("initial.matrix"),
            normalized=v.get("initial.normalized", True),
            declared_u0=v.get("initial.U0"),
            integrator=integ,
            norm_weights=v.get("norm.weights"),
            earlywarning=v.get("earlywarning.enabled", False),
            reference=v.get("earlywarning.reference", "twin"),
            outputs=v.get("outputs", ("trajectory_csv", "steady_state", "plotdata")),
        )

    def with_overrides(self, overrides: dict[str, Any]) -> "ScenarioConfig":
        """Copy with dotted-key overrides applied and re-validated."""
        items = self.to_items()
        if "initial.matrix" in overrides:
            items.pop("initial.preset", None)
        if "initial.preset" in overrides:
            items.pop("initial.matrix", None)
        if "grid.n" in overrides:
            items.pop("norm.weights", None)
            if "wealth.gamma0" not in overrides:
                items.pop("wealth.gamma0", None)
        if "grid.n" in overrides or "grid.m" in overrides or "initial.preset" in overrides:
            items.pop("initial.U0", None)
        items.update(overrides)
        return ScenarioConfig.from_items(items)


def _emit_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return v if _IDENT.match(v) and v not in ("true", "false") and not _looks_numeric(v) else json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_emit_value(x) for x in v) + "]"
    raise TypeError(f"cannot emit {v!r}")


def _looks_numeric(s: str) -> bool:
    try:
        json.loads(s)
        return True
    except ValueError:
        return False


def emit_scenario(config: ScenarioConfig) -> str:
    """Canonical text form; ``parse_scenario(emit_scenario(c)) == c``."""
    lines = [f"# ktap scenario {config.name}"]
    section = None
    for key, value in config.to_items().items():
        head = key.split(".")[0] if "." in key else None
        if head != section and head is not None:
            lines.append("")
            section = head
        elif head is None and section is not None:
            lines.append("")
            section = None
        lines.append(f"{key} = {_emit_value(value)}")
    return "\n".join(lines) + "\n"


def parse_scenario(text: str) -> ScenarioConfig:
    items, lines = parse_document(text)
    try:
        return ScenarioConfig.from_items(items)
    except ConfigError as exc:
        if exc.line is None and exc.field is not None:
            key = exc.field if exc.field in lines else next((k for k in lines if k.startswith(exc.field)), None)
            if key is not None:
                exc.line = lines[key]
        raise


def load_scenario(path) -> ScenarioConfig:
    """Parse a scenario file, or a shipped preset when ``path`` names one."""
    if str(path) in PRESETS and not Path(path).is_file():
        return preset(str(path))
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ---------------------------------------------------------------- shipped presets

_LONG = IntegratorConfig(t_max=400.0)


def _u0_neutral(gamma0: int, m: int = 1, prefix: str = "u0_neutral") -> ScenarioConfig:
    return ScenarioConfig(
        n=9, m=m, name=f"{prefix}_g{gamma0}", gamma0=gamma0, control=Control.VARIABLE,
        initial_preset="u0_neutral", declared_u0=0.0, integrator=_LONG, earlywarning=True,
        outputs=OUTPUTS,
    )


def _u0_poor(gamma0: int, control: Control, m: int = 1, prefix: str = "u0_poor") -> ScenarioConfig:
    ew = control is Control.VARIABLE
    return ScenarioConfig(
        n=9, m=m, name=f"{prefix}_g{gamma0}_{control.value}", gamma0=gamma0, control=control,
        initial_preset="u0_poor", declared_u0=POOR_U0, integrator=_LONG, earlywarning=ew,
        outputs=OUTPUTS if ew else ("trajectory_csv", "steady_state", "plotdata"),
    )


def _preset_table() -> dict:
    table = {}
    for g in (3, 7):
        table[f"u0_neutral_g{g}"] = (lambda g=g: _u0_neutral(g), "U0 = 0, uniform initial, variable gamma")
        table[f"politics_neutral_g{g}"] = (lambda g=g: _u0_neutral(g, m=9, prefix="politics_neutral"),
                                           "as u0_neutral with m = 9 opinion subsystems, beta = 0.4")
        for c in Control:
            table[f"u0_poor_g{g}_{c.value}"] = (lambda g=g, c=c: _u0_poor(g, c),
                                                f"U0 = -0.4, S(0) = 8/15, {c.value} gamma")
            table[f"politics_poor_g{g}_{c.value}"] = (
                lambda g=g, c=c: _u0_poor(g, c, m=9, prefix="politics_poor"),
                f"U0 = -0.4 with m = 9 opinion subsystems, beta = 0.4, {c.value} gamma")
    return dict(sorted(table.items()))


PRESETS = _preset_table()


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name][0]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}", field="preset") from None


def preset_names() -> list[str]:
    return list(PRESETS)


def preset_description(name: str) -> str:
    return PRESETS[name][1]


# ---------------------------------------------------------------- running

def _local_maxima(F: np.ndarray, rel: float = 1e-9) -> list[int]:
    """1-based classes that are strict local maxima of the marginal (plateaus count once)."""
    n = len(F)
    scale = rel * max(float(F.max()), 1e-300)
    out = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and abs(F[j + 1] - F[i]) <= scale:
            j += 1
        left = F[i - 1] if i > 0 else -np.inf
        right = F[j + 1] if j + 1 < n else -np.inf
        if F[i] > left + scale and F[i] > right + scale:
            out.append(i + 1)
        i = j + 1
    return out


def _finite(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def resolve_reference(config: ScenarioConfig, base_dir=None) -> ReferenceDistribution:
    if config.reference == "twin":
        return build_reference_constant_gamma(config)
    path = Path(config.reference)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    ref, _ = files.read_steady_state(path)
    if ref.f_tilde.shape != (config.m, config.n):
        raise ConfigError(f"reference {path} is {ref.f_tilde.shape[0]}x{ref.f_tilde.shape[1]}, "
                          f"scenario is {config.m}x{config.n}", field="earlywarning.reference")
    return ref


def run_scenario(config: ScenarioConfig, out_dir, base_dir=None) -> dict:
    """Integrate a scenario, write its requested files and return a summary.

    Always writes ``scenario.cfg`` (canonical config) and ``summary.json``.
    Failures are re-raised as :class:`ScenarioRunError` carrying the cause.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return _run(config, out, base_dir)
    except ScenarioRunError:
        raise
    except Exception as exc:
        raise ScenarioRunError(config.name, exc) from exc


def _run(config: ScenarioConfig, out: Path, base_dir) -> dict:
    model = config.build_model()
    traj = integrate(config.initial_state(), model, config.integrator)
    report = conservation_report(traj)
    final = traj.states[-1]

    reference = series = signal = None
    if config.earlywarning:
        reference = resolve_reference(config, base_dir)
        series = dbs_series(traj, reference, config.norm())
        signal = detect_turnround(series) if len(series) >= 3 else None

    written = ["scenario.cfg"]
    files._write(out / "scenario.cfg", emit_scenario(config))
    if "trajectory_csv" in config.outputs:
        files.write_trajectory_csv(out / "trajectory.csv", traj, series)
        written.append("trajectory.csv")
    if "steady_state" in config.outputs:
        meta = {
            "name": config.name,
            "t": float(traj.times[-1]),
            "stationary": "true" if traj.stationary_time is not None else "false",
            "residual": float(traj.rhs_max[-1]),
            "control": config.control.value,
            "gamma0": config.gamma0,
            "U0": config.u0,
            "provenance": f"final state of scenario {config.name}",
        }
        files.write_steady_state(out / "steady_state.txt", final, meta)
        written.append("steady_state.txt")
    if "dbs_csv" in config.outputs:
        files.write_dbs_csv(out / "dbs.csv", series)
        written.append("dbs.csv")
    if "plotdata" in config.outputs:
        written += [p.name for p in files.write_plotdata(out, traj, series, model.lattice.v)]

    F = final.sum(axis=0)
    n = config.n
    extreme = [0, 1, n - 2, n - 1] if n >= 5 else [0, n - 1]
    maxima = _local_maxima(F)
    summary = {
        "name": config.name,
        "n": n,
        "m": config.m,
        "control": config.control.value,
        "gamma0": config.gamma0,
        "U0": config.u0,
        "t_final": float(traj.times[-1]),
        "stationary_time": traj.stationary_time,
        "final_residual": float(traj.rhs_max[-1]),
        "samples": len(traj),
        "final": {
            "mass": float(traj.mass[-1]),
            "U": float(traj.mean_wealth[-1]),
            "S": float(traj.S[-1]),
            "gamma": int(traj.gamma[-1]),
            "marginal": [float(x) for x in F],
            "subsystem_mass": [float(x) for x in final.sum(axis=1)],
            "extreme_class_mass": float(F[extreme].sum()),
            "local_maxima": maxima,
            "bimodal": len(maxima) >= 2,
        },
        "initial_extreme_class_mass": float(config.initial_matrix().sum(axis=0)[extreme].sum()),
        "conservation": report.as_dict(),
        "gamma_clamps": traj.clamp_count,
        "gamma_switch_steps": traj.gamma_switch_steps,
        "earlywarning": None,
        "files": sorted(written + ["summary.json"]),
    }
    if config.earlywarning:
        summary["earlywarning"] = {
            "reference": reference.provenance,
            "dbs_initial": float(series.d[0]),
            "dbs_final": float(series.d[-1]),
            "turnround": None if signal is None else {
                "t_min": signal.t_min,
                "d_min": signal.d_min,
                "d_final": signal.d_final,
                "rise_ratio": _finite(signal.rise_ratio),
            },
        }
    files._write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    axes: tuple[tuple[str, tuple], ...]
    output: Path = Path("sweep")
    base_dir: Path | None = None

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("a sweep needs at least one axis", field="axis")
        seen = set()
        for path, values in self.axes:
            if path not in KEYS or path == "name":
                raise ConfigError(f"axis path {path!r} does not name a scenario parameter", field=f"axis.{path}")
            if path in seen:
                raise ConfigError("axis given twice", field=f"axis.{path}")
            seen.add(path)
            if not values:
                raise ConfigError("axis has an empty value list", field=f"axis.{path}")

    def cells(self) -> list[tuple[str, dict[str, Any]]]:
        paths = [p for p, _ in self.axes]
        combos = itertools.product(*(v for _, v in self.axes))
        return [(f"cell_{j:03d}", dict(zip(paths, combo))) for j, combo in enumerate(combos)]

    def configs(self) -> list[tuple[str, dict[str, Any], ScenarioConfig]]:
        return [(cid, ov, self.base.with_overrides(ov)) for cid, ov in self.cells()]


def parse_sweep(text: str, base_dir=None) -> SweepSpec:
    """Sweep document: ``base = <preset or scenario path>``, ``output = <dir>``,
    and one or more ``axis.<key> = [values...]``."""
    items, lines = parse_document(text)
    axes = []
    base = output = None
    for key, value in items.items():
        try:
            if key == "base":
                name = _str(value, key)
                if name in PRESETS:
                    base = preset(name)
                else:
                    path = Path(name)
                    if not path.is_absolute() and base_dir is not None:
                        path = Path(base_dir) / path
                    try:
                        base = load_scenario(path)
                    except OSError as exc:
                        raise ConfigError(f"cannot read base scenario {path}: {exc.strerror}", field=key) from None
            elif key == "output":
                output = Path(_str(value, key))
            elif key.startswith("axis."):
                if not isinstance(value, list):
                    raise ConfigError("axis values must be an array", field=key)
                axes.append((key[len("axis."):], tuple(value)))
            else:
                raise ConfigError(f"unknown sweep key {key!r}", field=key)
        except ConfigError as exc:
            exc.line = exc.line or lines[key]
            raise
    if base is None:
        raise ConfigError("missing required key", field="base")
    try:
        spec = SweepSpec(base, tuple(axes), output or Path("sweep"), Path(base_dir) if base_dir else None)
        spec.configs()
    except ConfigError as exc:
        if exc.field in lines:
            exc.line = lines[exc.field]
        raise
    return spec


def _run_cell(args) -> dict:
    cid, text, cell_dir, base_dir = args
    try:
        summary = run_scenario(parse_scenario(text), cell_dir, base_dir)
        return {"cell": cid, "status": "ok", "summary": summary, "error": ""}
    except ScenarioRunError as exc:
        return {"cell": cid, "status": "failed", "summary": None, "error": f"{type(exc.cause).__name__}: {exc.cause}"}


def run_sweep(spec: SweepSpec, out_dir=None, jobs: int = 1) -> list[dict]:
    """Run every cell into ``<out>/cell_NNN`` and write ``<out>/index.csv``.

    A failing cell is recorded in the index; the sweep goes on.
    """
    out = Path(out_dir) if out_dir is not None else spec.output
    out.mkdir(parents=True, exist_ok=True)
    cells = spec.configs()
    tasks = [(cid, emit_scenario(cfg), str(out / cid), spec.base_dir) for cid, _, cfg in cells]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    paths = [p for p, _ in spec.axes]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell", *paths, "status", "stationary_time", "final_U", "final_S", "final_gamma",
                     "extreme_class_mass", "turnround", "rise_ratio", "error"])
    for (cid, ov, _), res in zip(cells, results):
        s = res["summary"] or {}
        fin = s.get("final", {})
        tr = (s.get("earlywarning") or {}).get("turnround")
        row = [cid, *(_emit_value(ov[p]) for p in paths), res["status"],
               "" if s.get("stationary_time") is None else files.num(s["stationary_time"]),
               files.num(fin["U"]) if fin else "", files.num(fin["S"]) if fin else "",
               fin.get("gamma", ""), files.num(fin["extreme_class_mass"]) if fin else "",
               "" if not s.get("earlywarning") else ("yes" if tr else "no"),
               "" if not tr else (tr["rise_ratio"] if isinstance(tr["rise_ratio"], str) else files.num(tr["rise_ratio"])),
               res["error"]]
        writer.writerow(row)
    files._write(out / "index.csv", buf.getvalue())
    return results
