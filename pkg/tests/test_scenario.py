import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ktap import Control, PopulationState, ReferenceDistribution, mean_wealth, social_gap
from ktap.files import read_steady_state, trajectory_header, write_steady_state
from ktap.scenario import (
    PRESETS,
    ConfigError,
    ScenarioConfig,
    ScenarioRunError,
    emit_scenario,
    initial_profile,
    load_scenario,
    parse_scenario,
    parse_sweep,
    preset,
    run_scenario,
    run_sweep,
)

ROOT = Path(__file__).resolve().parents[1]


# parsing

def test_minimal_config_defaults():
    cfg = parse_scenario("grid.n = 3\n")
    assert (cfg.n, cfg.m, cfg.gamma0, cfg.S0, cfg.mu, cfg.eta0) == (3, 1, 1, 0.0, 0.3, 1.0)
    assert cfg.control is Control.VARIABLE and cfg.beta == 0.4
    assert cfg.initial_preset == "u0_neutral" and cfg.normalized
    assert cfg.integrator.dt == 0.01 and cfg.integrator.t_max == 200.0
    assert not cfg.earlywarning and cfg.reference == "twin"
    assert cfg.outputs == ("trajectory_csv", "steady_state", "plotdata")
    assert np.allclose(cfg.initial_matrix(), [[1 / 3] * 3])


def test_neutral_preset_parses_with_zero_mean_wealth():
    cfg = load_scenario(ROOT / "scenarios" / "u0_neutral_g3.cfg")
    assert (cfg.n, cfg.m, cfg.mu, cfg.gamma0, cfg.S0) == (9, 1, 0.3, 3, 0.0)
    assert cfg.u0 == 0.0


def test_poor_initial_profile_constraints():
    f = initial_profile("u0_poor", 9)
    s = PopulationState(f)
    from ktap import build_wealth_grid

    assert f.sum() == pytest.approx(1, abs=1e-15)
    assert mean_wealth(s, build_wealth_grid(9)) == pytest.approx(-0.4, abs=1e-12)
    assert social_gap(s).s == pytest.approx(8 / 15, abs=1e-12)
    assert np.all(f > 0) and np.all(np.diff(f) < 0)


def test_poor_profile_impossible_on_three_classes():
    with pytest.raises(ConfigError):
        initial_profile("u0_poor", 3)


def test_comments_strings_and_identifier_lists():
    text = '''
    # comment line
    name = "a # not a comment"   # trailing comment
    grid.n = 5
    wealth.control = constant
    outputs = [trajectory_csv, plotdata]
    '''
    cfg = parse_scenario(text)
    assert cfg.name == "a # not a comment"
    assert cfg.control is Control.CONSTANT
    assert cfg.outputs == ("trajectory_csv", "plotdata")


def test_explicit_matrix():
    cfg = parse_scenario("grid.n = 3\ngrid.m = 1\ninitial.matrix = [[0.25, 0.5, 0.25]]\ninitial.U0 = 0\n")
    assert cfg.initial_preset is None
    assert cfg.initial_matrix().tolist() == [[0.25, 0.5, 0.25]]


@pytest.mark.parametrize("text,line,col", [
    ("grid.n = 3\nwealth.mu 0.3\n", 2, 1),
    ("grid.n = 3\n  bad key = 1\n", 2, 3),
    ("grid.n = 3\nwealth.mu = [1, \n", 2, 16),
    ("grid.n = 3\ngrid.n = 5\n", 2, 1),
    ("grid.n = 3\nwealth.mu = \n", 2, 13),
])
def test_syntax_errors_are_located(text, line, col):
    with pytest.raises(ConfigError) as info:
        parse_scenario(text)
    assert (info.value.line, info.value.column) == (line, col)
    assert f"line {line}" in str(info.value)


def test_unnormalized_matrix_rejected_with_field():
    with pytest.raises(ConfigError) as info:
        parse_scenario("grid.n = 3\ninitial.matrix = [[0.3, 0.3, 0.3]]\n")
    assert info.value.field == "initial.matrix" and info.value.line == 2
    assert "0.9" in str(info.value)


@pytest.mark.parametrize("text,field", [
    ("grid.n = 4\n", "grid.n"),
    ("grid.n = 3\ngrid.m = 2\n", "grid.m"),
    ("grid.n = 3\nwealth.gamma0 = 4\n", "wealth.gamma0"),
    ("grid.n = 3\nwealth.mu = 0\n", "wealth.mu"),
    ("grid.n = 3\nwealth.S0 = 1\n", "wealth.S0"),
    ("grid.n = 3\npolitics.beta = 0.6\n", "politics.beta"),
    ("grid.n = 3\nwealth.control = sometimes\n", "wealth.control"),
    ("grid.n = 3\nwealth.gamma0 = 1.5\n", "wealth.gamma0"),
    ("grid.n = 3\ninitial.matrix = [[0.5, 0.5]]\ninitial.normalized = true\n", "initial.matrix"),
    ("grid.n = 3\ninitial.matrix = [[0.5, -0.5, 1.0]]\n", "initial.matrix"),
    ("grid.n = 3\ninitial.U0 = 0.5\n", "initial.U0"),
    ("grid.n = 3\ninitial.preset = rich\n", "initial.preset"),
    ("grid.n = 3\nnorm.weights = [1, 1]\n", "norm.weights"),
    ("grid.n = 3\noutputs = [dbs_csv]\n", "outputs"),
    ("grid.n = 3\nintegrator.dt = -1\n", "integrator"),
    ("grid.n = 3\nwealth.speed = 1\n", "wealth.speed"),
    ("grid.m = 3\n", "grid.n"),
    ("preset = nothing\n", "preset"),
])
def test_invariant_errors_name_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_scenario(text)
    assert info.value.field == field


def test_preset_key_with_overrides():
    cfg = parse_scenario("preset = u0_poor_g7_variable\nwealth.gamma0 = 3\nname = x\n")
    assert cfg.gamma0 == 3 and cfg.name == "x" and cfg.initial_preset == "u0_poor"


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_round_trip_every_preset(name):
    cfg = preset(name)
    text = emit_scenario(cfg)
    again = parse_scenario(text)
    assert again == cfg
    assert emit_scenario(again) == text


def test_round_trip_odd_values():
    cfg = ScenarioConfig(n=3, name="has space, and \"quotes\"", S0=0.1 + 0.2, initial_preset=None,
                         initial_matrix_rows=((0.1, 0.7, 0.2),), norm_weights=(1e-300, 2.5, 3.0),
                         reference="true")
    assert parse_scenario(emit_scenario(cfg)) == cfg


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_shipped_files_match_presets(name):
    assert (ROOT / "scenarios" / f"{name}.cfg").read_text() == emit_scenario(preset(name))


def test_preset_contents():
    poor = preset("politics_poor_g3_variable")
    assert (poor.n, poor.m, poor.beta, poor.gamma0, poor.control) == (9, 9, 0.4, 3, Control.VARIABLE)
    assert poor.u0 == pytest.approx(-0.4, abs=1e-12) and poor.earlywarning
    assert not preset("u0_poor_g7_constant").earlywarning
    f = poor.initial_matrix()
    assert np.allclose(f, f[0])  # even political split


def test_overrides_revalidate():
    cfg = preset("u0_poor_g7_variable")
    assert cfg.with_overrides({"wealth.control": "constant"}).control is Control.CONSTANT
    assert cfg.with_overrides({"grid.n": 11}).gamma0 == 5
    with pytest.raises(ConfigError):
        cfg.with_overrides({"wealth.mu": 2.0})


# running

def test_run_outputs(tmp_path, compiled):
    cfg = preset("u0_poor_g7_variable").with_overrides({"integrator.t_max": 20.0, "earlywarning.enabled": False,
                                                        "outputs": ["trajectory_csv", "steady_state", "plotdata"]})
    summary = run_scenario(cfg, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == summary["files"]
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert rows[0] == trajectory_header(1, 9)
    assert len(rows) == 1 + summary["samples"]
    assert b"\r" not in (tmp_path / "trajectory.csv").read_bytes()
    assert parse_scenario((tmp_path / "scenario.cfg").read_text()) == cfg
    data = json.loads((tmp_path / "summary.json").read_text())
    assert data["final"]["U"] == pytest.approx(-0.4, abs=1e-12)
    side = json.loads((tmp_path / "plotdata.json").read_text())
    assert set(side) == {"plot_steady.csv", "plot_subsystems.csv", "plot_series.csv"}


def test_csv_values_round_trip_exactly(tmp_path, compiled):
    cfg = preset("u0_neutral_g3").with_overrides({"integrator.t_max": 1.0, "earlywarning.enabled": False,
                                                  "outputs": ["trajectory_csv"]})
    run_scenario(cfg, tmp_path)
    from ktap import integrate

    traj = integrate(cfg.initial_state(), cfg.build_model(), cfg.integrator)
    table = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
    assert np.array_equal(table[:, 1:10], traj.states[:, 0, :])


def test_header_small_grid():
    assert ",".join(trajectory_header(1, 3)) == "t,f_1_1,f_1_2,f_1_3,mass,U,S,gamma"
    assert trajectory_header(2, 3, True)[-1] == "dBS"


def test_steady_state_round_trip(tmp_path, rng):
    f = rng.random((3, 5)) / 7
    write_steady_state(tmp_path / "ss.txt", f, {"name": "x", "t": 1.5})
    ref, meta = read_steady_state(tmp_path / "ss.txt")
    assert np.array_equal(ref.f_tilde, f)
    assert meta["name"] == "x" and meta["m"] == "3"


def test_steady_state_reader_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("f_1_1 = 0.5\nf_1_3 = 0.5\n")
    with pytest.raises(ValueError):
        read_steady_state(p)
    p.write_text("f_1 = 0.5\n")
    with pytest.raises(ValueError):
        read_steady_state(p)


def test_dbs_rows_match_samples(tmp_path, compiled):
    cfg = preset("u0_poor_g7_variable").with_overrides({"integrator.t_max": 30.0, "earlywarning.reference": "ref.txt"})
    ref = preset("u0_poor_g7_constant")
    from ktap import integrate

    f_ref = integrate(ref.initial_state(), ref.build_model(), ref.integrator).states[-1]
    write_steady_state(tmp_path / "ref.txt", f_ref, {"provenance": "constant run"})
    summary = run_scenario(cfg, tmp_path / "out", base_dir=tmp_path)
    rows = (tmp_path / "out" / "dbs.csv").read_text().splitlines()
    assert rows[0] == "t,dBS" and len(rows) == 1 + summary["samples"]
    assert summary["earlywarning"]["reference"] == "constant run"


def test_reference_file_shape_mismatch(tmp_path, compiled):
    write_steady_state(tmp_path / "ref.txt", np.full((1, 5), 0.2), {})
    cfg = preset("u0_poor_g7_variable").with_overrides({"integrator.t_max": 1.0, "earlywarning.reference": "ref.txt"})
    with pytest.raises(ScenarioRunError) as info:
        run_scenario(cfg, tmp_path / "out", base_dir=tmp_path)
    assert isinstance(info.value.cause, ConfigError)


def test_missing_reference_file(tmp_path, compiled):
    cfg = preset("u0_poor_g7_variable").with_overrides({"integrator.t_max": 1.0, "earlywarning.reference": "nope.txt"})
    with pytest.raises(ScenarioRunError) as info:
        run_scenario(cfg, tmp_path / "out", base_dir=tmp_path)
    assert isinstance(info.value.cause, OSError)


def test_poor_variable_summary_reports_bimodal_and_turnround(tmp_path, compiled):
    s = run_scenario(preset("u0_poor_g7_variable"), tmp_path)
    assert s["final"]["bimodal"] and s["final"]["local_maxima"] == [1, 9]
    assert s["earlywarning"]["turnround"] is not None


def test_neutral_constant_and_variable_steady_states_agree(tmp_path, compiled):
    var = preset("u0_neutral_g3")
    run_scenario(var, tmp_path / "v")
    run_scenario(var.with_overrides({"wealth.control": "constant", "name": var.name}), tmp_path / "c")
    a, _ = read_steady_state(tmp_path / "v" / "steady_state.txt")
    b, _ = read_steady_state(tmp_path / "c" / "steady_state.txt")
    assert np.max(np.abs(a.f_tilde - b.f_tilde)) < 1e-8


# sweeps

SWEEP = """
base = u0_poor_g7_variable
output = grid
axis.wealth.gamma0 = [3, 7]
axis.wealth.control = [constant, variable]
"""


def test_sweep_cells_and_errors():
    spec = parse_sweep(SWEEP)
    cells = spec.cells()
    assert [c for c, _ in cells] == ["cell_000", "cell_001", "cell_002", "cell_003"]
    assert cells[1][1] == {"wealth.gamma0": 3, "wealth.control": "variable"}
    with pytest.raises(ConfigError) as info:
        parse_sweep("base = u0_poor_g7_variable\naxis.wealth.gamma0 = []\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        parse_sweep("base = u0_poor_g7_variable\n")
    with pytest.raises(ConfigError):
        parse_sweep("base = u0_poor_g7_variable\naxis.wealth.colour = [1]\n")
    with pytest.raises(ConfigError):
        parse_sweep("axis.wealth.gamma0 = [1]\n")
    with pytest.raises(ConfigError):
        parse_sweep("base = u0_poor_g7_variable\naxis.wealth.gamma0 = [30]\n")


def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_sweep_runs_and_index(tmp_path, compiled):
    spec = parse_sweep(SWEEP)
    short = {"integrator.t_max": 40.0, "earlywarning.enabled": False, "outputs": ["trajectory_csv", "steady_state"]}
    spec = type(spec)(spec.base.with_overrides(short), spec.axes)
    results = run_sweep(spec, tmp_path / "serial")
    assert [r["status"] for r in results] == ["ok"] * 4
    index = list(csv.DictReader(open(tmp_path / "serial" / "index.csv")))
    assert [r["cell"] for r in index] == ["cell_000", "cell_001", "cell_002", "cell_003"]
    assert index[2]["wealth.gamma0"] == "7" and index[2]["wealth.control"] == "constant"
    # concurrency does not change any byte
    run_sweep(spec, tmp_path / "parallel", jobs=3)
    assert _tree(tmp_path / "serial") == _tree(tmp_path / "parallel")


def test_sweep_records_failures_and_continues(tmp_path, compiled):
    spec = parse_sweep("base = u0_poor_g3_variable\naxis.integrator.t_max = [2.0, 200.0]\n")
    results = run_sweep(spec, tmp_path)
    # t_max = 2 leaves the constant-gamma twin unsettled
    assert results[0]["status"] == "failed" and "StationarityError" in results[0]["error"]
    assert results[1]["status"] == "ok"
    index = list(csv.DictReader(open(tmp_path / "index.csv")))
    assert index[0]["status"] == "failed" and index[0]["error"]


def test_single_cell_sweep_matches_run(tmp_path, compiled):
    spec = parse_sweep("base = u0_poor_g3_variable\naxis.integrator.t_max = [400.0]\n")
    run_sweep(spec, tmp_path / "sweep")
    run_scenario(preset("u0_poor_g3_variable"), tmp_path / "single")
    assert _tree(tmp_path / "sweep" / "cell_000") == _tree(tmp_path / "single")


def test_sweep_base_from_file(tmp_path):
    (tmp_path / "b.cfg").write_text("grid.n = 5\nname = base\n")
    spec = parse_sweep("base = b.cfg\naxis.wealth.mu = [0.5, 1.0]\n", base_dir=tmp_path)
    assert spec.base.name == "base" and len(spec.cells()) == 2


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "scenarios").glob("*.sweep")), ids=lambda p: p.name)
def test_shipped_sweeps_parse(path):
    spec = parse_sweep(path.read_text(), base_dir=path.parent)
    cells = spec.cells()
    assert len(cells) == 4
    assert {(c.gamma0, c.control.value) for _, _, c in spec.configs()} == \
        {(3, "constant"), (3, "variable"), (7, "constant"), (7, "variable")}
