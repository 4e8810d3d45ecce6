"""Command-line entry point: ``ktap run|sweep|validate|presets``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import filecmp
import logging
import sys
import tempfile
from pathlib import Path

from . import _backend
from .earlywarning import StationarityError
from .integrator import NumericalFailure
from .politics import build_opinion_kernel, verify_opinion_normalization
from .scenario import (
    ConfigError,
    ScenarioRunError,
    emit_scenario,
    load_scenario,
    parse_sweep,
    preset,
    preset_description,
    preset_names,
    run_scenario,
    run_sweep,
)
from .wealth import build_wealth_kernel, verify_conservation_conditions

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("ktap")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ScenarioRunError):
        exc = exc.cause
    if isinstance(exc, (NumericalFailure, StationarityError, ArithmeticError)):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def _overrides(args) -> dict:
    out = {}
    if args.dt is not None:
        out["integrator.dt"] = args.dt
    if args.tmax is not None:
        out["integrator.t_max"] = args.tmax
    return out


def _same_tree(a: Path, b: Path) -> list[str]:
    """Relative paths of files whose bytes differ (or exist on one side only)."""
    diffs = []
    names = {p.relative_to(a) for p in a.rglob("*") if p.is_file()} | {p.relative_to(b) for p in b.rglob("*") if p.is_file()}
    for rel in sorted(names):
        x, y = a / rel, b / rel
        if not (x.is_file() and y.is_file() and filecmp.cmp(x, y, shallow=False)):
            diffs.append(str(rel))
    return diffs


def _check_determinism(run, out: Path) -> int:
    with tempfile.TemporaryDirectory(prefix="ktap-seedless-") as tmp:
        again = Path(tmp) / "rerun"
        run(again)
        diffs = _same_tree(out, again)
    if diffs:
        print(f"nondeterminism: {len(diffs)} file(s) differ between runs: {', '.join(diffs[:10])}", file=sys.stderr)
        return EXIT_NUMERIC
    print("seedless: second run byte-identical")
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_scenario(args.scenario)
    ov = _overrides(args)
    if ov:
        config = config.with_overrides(ov)
    out = Path(args.out or f"runs/{config.name}")
    base_dir = Path(args.scenario).parent if Path(args.scenario).is_file() else None
    summary = run_scenario(config, out, base_dir)
    fin = summary["final"]
    st = summary["stationary_time"]
    print(f"{config.name}: t={summary['t_final']:g} "
          f"{'stationary at t=%g' % st if st is not None else 'not stationary'} "
          f"U={fin['U']:.6f} S={fin['S']:.6f} gamma={fin['gamma']} -> {out}")
    ew = summary["earlywarning"]
    if ew is not None:
        tr = ew["turnround"]
        print(f"  d_BS initial={ew['dbs_initial']:.6g} final={ew['dbs_final']:.6g} "
              + (f"turnround at t={tr['t_min']:g} (d_min={tr['d_min']:.6g}, rise ratio {tr['rise_ratio']})"
                 if tr else "no turnround"))
    if args.seedless:
        return _check_determinism(lambda d: run_scenario(config, d, base_dir), out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    path = Path(args.sweep)
    text = path.read_text(encoding="utf-8")
    spec = parse_sweep(text, base_dir=path.parent)
    ov = _overrides(args)
    if ov:
        spec = type(spec)(spec.base.with_overrides(ov), spec.axes, spec.output, spec.base_dir)
    out = Path(args.out) if args.out else spec.output
    results = run_sweep(spec, out, jobs=args.jobs)
    failed = [r["cell"] for r in results if r["status"] != "ok"]
    print(f"{len(results)} cells, {len(failed)} failed -> {out / 'index.csv'}")
    for r in results:
        if r["status"] != "ok":
            print(f"  {r['cell']}: {r['error']}", file=sys.stderr)
    if args.seedless:
        code = _check_determinism(lambda d: run_sweep(spec, d, jobs=args.jobs), out)
        if code:
            return code
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_validate(args) -> int:
    config = load_scenario(args.scenario)
    model = config.build_model()
    ok = True
    for g in range(config.n + 1):
        report = verify_conservation_conditions(build_wealth_kernel(config.n, g), model.grid)
        ok &= report.passed
        for line in report.lines():
            print(f"gamma={g:<3d} {line}")
    norm = verify_opinion_normalization(build_opinion_kernel(model.grid, config.politics))
    ok &= norm.passed
    for line in norm.lines():
        print(f"opinion   {line}")
    print(f"{config.name}: {'valid' if ok else 'INVALID'} (n={config.n}, m={config.m}, U0={config.u0:.12g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_presets(args) -> int:
    if args.show:
        sys.stdout.write(emit_scenario(preset(args.show)))
        return EXIT_OK
    if args.write:
        target = Path(args.write)
        target.mkdir(parents=True, exist_ok=True)
        for name in preset_names():
            (target / f"{name}.cfg").write_text(emit_scenario(preset(name)), encoding="utf-8")
        print(f"wrote {len(preset_names())} presets to {target}")
        return EXIT_OK
    width = max(map(len, preset_names()))
    for name in preset_names():
        print(f"{name:<{width}}  {preset_description(name)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ktap", description="Kinetic wealth/opinion population scenarios.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory")
        p.add_argument("--dt", type=float, help="override integrator.dt")
        p.add_argument("--tmax", type=float, help="override integrator.t_max")
        p.add_argument("--seedless", action="store_true",
                       help="run twice and fail unless all outputs are byte-identical")

    p = sub.add_parser("run", help="run one scenario (file or preset name)")
    p.add_argument("scenario")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("sweep")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="concurrent cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="parse a scenario and verify its transition tables")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("presets", help="list shipped presets")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--show", metavar="NAME", help="print a preset as a scenario file")
    g.add_argument("--write", metavar="DIR", help="write every preset to DIR/<name>.cfg")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", _backend.BACKEND)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalFailure, StationarityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
