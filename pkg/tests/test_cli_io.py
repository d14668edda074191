import csv
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heisplane import cli
from heisplane.cell_grid import CellSpec, Field, commensurate_grid, make_grid
from heisplane.cli_io import (
    MAGIC,
    ConfigError,
    FieldFormatError,
    dump_field,
    fmt,
    load_field,
    parse_config,
    run_pipeline,
)
from heisplane.heis_core import build_integer_base

MINIMAL = "n = 1\nomega = 1, 0\npotential.kind = quartic\n"

SMALL = MINIMAL + """cell.M = 2
cell.L = 4
grid.ns = 8
grid.na = 64
grid.nt = 8
"""


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.n == 1 and cfg.omega == (1, 0)
    assert (cfg.delta, cfg.M, cfg.p) == (0.1, 10.0, 1)
    assert cfg.analysis.theta == 0.9 and cfg.analysis.theta0 == 0.9
    assert cfg.L > cfg.M
    assert cfg.potential.kind == "quartic" and cfg.potential.d == 2.0
    assert cfg.rational


def test_rational_omega_and_comments():
    cfg = parse_config("# header\nn = 1\nomega = 2/3, 1  # trailing\npotential.kind = power_d\npotential.d = 1.5\n")
    assert [str(x) for x in cfg.omega] == ["2/3", "1"]
    assert cfg.potential.d == 1.5


def test_delta_out_of_range():
    with pytest.raises(ConfigError, match=r"line 4: .*delta must lie in \(0, 1/2\)"):
        parse_config(MINIMAL + "cell.delta = 0.7\n")


def test_duplicate_key_reports_both_lines():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "\ncell.M = 4\ncell.M = 5\n")
    assert exc.value.line == 6
    assert "line 6" in str(exc.value) and "line 5" in str(exc.value)


MALFORMED = [
    ("n = 1\nomega = 1, 0\n", "missing required key 'potential.kind'"),
    (MINIMAL + "cell.wobble = 3\n", "line 4: unknown key"),
    (MINIMAL + "cell.M\n", "line 4: expected 'key = value'"),
    (MINIMAL + "cell.M = \n", "line 4: missing value"),
    (MINIMAL + "cell.M = ten\n", "line 4: bad value"),
    (MINIMAL + "cell.M = -1\n", "line 4: bad value"),
    (MINIMAL + "cell.M = 10\ncell.L = 9\n", "line 5: cell.L=9.0 must exceed"),
    (MINIMAL + "cell.p = 0\n", "line 4: bad value"),
    (MINIMAL + "grid.nt = 4\n", "line 4: bad value"),
    (MINIMAL + "analysis.theta = 1.2\n", "line 4: bad value"),
    (MINIMAL + "analysis.epsilons = 0.5, 1\n", "line 4: analysis.epsilons must decrease"),
    (MINIMAL + "solver.momentum = maybe\n", "line 4: bad value"),
    (MINIMAL + "mode = train\n", "line 4: bad value"),
    (MINIMAL.replace("omega = 1, 0", "omega = 1, 0, 0"), "line 2: omega needs 2 entries"),
    (MINIMAL.replace("omega = 1, 0", "omega = 0, 0"), "line 2: omega must be nonzero"),
    (MINIMAL.replace("omega = 1, 0", "omega = 1, 1/0"), "line 2: bad value"),
    (MINIMAL.replace("omega = 1, 0", "omega = 1, 0.618") + "mode = solve\n", "line 2: decimal omega"),
    (MINIMAL.replace("quartic", "sextic"), "line 3: bad value"),
    (MINIMAL + "potential.d = 1\n", "line 4: quartic potential requires d = 2"),
    (MINIMAL + "potential.mean = 1\npotential.amplitude = 1\n", "line 4: potential.mean must exceed"),
]


@pytest.mark.parametrize("text, message", MALFORMED)
def test_malformed_configs_rejected(text, message):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert message in str(exc.value)


def test_decimal_omega_allowed_for_sequence():
    cfg = parse_config(MINIMAL.replace("omega = 1, 0", "omega = 1, 0.618034") + "mode = sequence\n")
    assert not cfg.rational


@given(st.text(max_size=200))
def test_parser_is_total(text):
    try:
        parse_config(text)
    except ConfigError:
        pass


@given(st.lists(st.sampled_from(["n", "omega", "cell.M", "grid.nt", "potential.kind", "junk"]), max_size=6),
       st.lists(st.text(alphabet="0123456789-./, ae", max_size=8), min_size=6, max_size=6))
def test_parser_is_total_on_keylike_input(keys, vals):
    text = "\n".join(f"{k} = {v}" for k, v in zip(keys, vals))
    try:
        parse_config(text)
    except ConfigError:
        pass


# -- field dumps -------------------------------------------------------------


@pytest.mark.parametrize("omega, res", [((1, 1), (16, 92, 16)), ((1, 0, 0, 1), None)])
def test_dump_round_trip_bitwise(tmp_path, rng, omega, res):
    spec = CellSpec(build_integer_base(omega), M=1.0, L=2.0)
    g = make_grid(spec, res) if res else commensurate_grid(spec, [8, 8, 8], 0.25, 8)
    u = Field(g, rng.uniform(-1, 1, g.shape))
    path = tmp_path / "u.hgpf"
    dump_field(u, path)
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    v = load_field(path)
    assert v.values.tobytes() == u.values.tobytes()
    assert v.grid.shape == g.shape and v.grid.da == g.da and v.grid.base.k == g.base.k
    dump_field(v, tmp_path / "again.hgpf")
    assert (tmp_path / "again.hgpf").read_bytes() == raw


def test_dump_layout(tmp_path, small_grid):
    u = Field(small_grid, np.arange(small_grid.size, dtype=float) / small_grid.size)
    path = tmp_path / "u.hgpf"
    dump_field(u, path)
    raw = path.read_bytes()
    head, _, payload = raw.partition(b"\n\n")
    assert b"resolutions=8,64,8" in head and b"k1=0,1" in head and b"theta=1" in head
    assert np.array_equal(np.frombuffer(payload, "<f8"), u.values.ravel())


def test_truncated_payload(tmp_path, small_grid):
    path = tmp_path / "u.hgpf"
    dump_field(Field(small_grid, np.zeros(small_grid.shape)), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 8 * 24])
    with pytest.raises(FieldFormatError, match="truncated payload: header says 4096 nodes, found 4072"):
        load_field(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.hgpf"
    path.write_bytes(b"HGPF2\n")
    with pytest.raises(FieldFormatError, match="magic"):
        load_field(path)


def test_mismatched_grid_rejected(tmp_path, small_grid, diag_grid):
    path = tmp_path / "u.hgpf"
    dump_field(Field(small_grid, np.zeros(small_grid.shape)), path)
    with pytest.raises(FieldFormatError, match="does not match"):
        load_field(path, diag_grid)
    assert load_field(path, small_grid).grid is small_grid


def test_inconsistent_header(tmp_path, small_grid):
    path = tmp_path / "u.hgpf"
    dump_field(Field(small_grid, np.zeros(small_grid.shape)), path)
    raw = path.read_bytes().replace(b"L=4.0", b"L=5.0")
    path.write_bytes(raw)
    with pytest.raises(FieldFormatError, match="disagrees"):
        load_field(path)


def test_fmt_round_trips_floats(rng):
    for x in rng.normal(size=100) * 10.0 ** rng.integers(-30, 30, size=100):
        assert float(fmt(x)) == x
    assert fmt(True) == "1" and fmt(np.int64(3)) == "3"


# -- pipeline ----------------------------------------------------------------


def test_solve_mode_writes_monotone_trace(tmp_path):
    res = run_pipeline(parse_config(SMALL), tmp_path, "solve")
    assert res.status == 0
    assert (tmp_path / "field.hgpf").exists()
    with open(tmp_path / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "dirichlet", "potential", "total", "step"]
    totals = [float(r[3]) for r in rows[1:]]
    assert all(b <= a + 1e-12 for a, b in zip(totals, totals[1:]))
    u = load_field(tmp_path / "field.hgpf")
    assert u.grid.shape == (8, 64, 8)


def test_analyze_stored_field(tmp_path):
    cfg = parse_config(SMALL + "analysis.radii = 0.5, 0.7, 1\nanalysis.epsilons = 1, 0.5\nanalysis.window = 1\n")
    run_pipeline(cfg, tmp_path / "a", "solve")
    res = run_pipeline(cfg, tmp_path / "b", "analyze", tmp_path / "a" / "field.hgpf")
    assert res.checks["birkhoff"][0] and res.checks["slab_confined"][0]
    for name in ("slab.csv", "birkhoff.csv", "density.csv"):
        assert (tmp_path / "b" / name).exists()
    with open(tmp_path / "b" / "slab.csv") as fh:
        assert next(csv.reader(fh)) == ["theta", "width", "pass"]
    with open(tmp_path / "b" / "birkhoff.csv") as fh:
        assert next(csv.reader(fh)) == ["k", "worst_violation"]


def test_decimal_omega_needs_sequence_mode(tmp_path):
    cfg = parse_config(MINIMAL.replace("omega = 1, 0", "omega = 1, 0.618"))
    with pytest.raises(ConfigError, match="rational omega"):
        run_pipeline(cfg, tmp_path, "solve")


def test_mode_conflict(tmp_path):
    with pytest.raises(ConfigError):
        run_pipeline(parse_config(SMALL + "mode = refine\n"), tmp_path, "solve")


def test_gamma_mode_rows(tmp_path):
    cfg = parse_config(MINIMAL + "cell.M = 4\ncell.L = 6\ngrid.ns = 8\ngrid.na = 240\ngrid.nt = 20\n")
    res = run_pipeline(cfg, tmp_path, "gamma")
    with open(tmp_path / "interface.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["N", "thickness", "confinement", "energy"]
    thick = [float(r[1]) for r in rows[1:]]
    assert len(thick) == 3 and thick[0] > thick[1] > thick[2]
    assert res.status == 0


def test_deterministic_outputs(tmp_path):
    cfg = parse_config(SMALL)
    run_pipeline(cfg, tmp_path / "1", "refine")
    run_pipeline(cfg, tmp_path / "2", "refine")
    for name in ("trace.csv", "field.hgpf"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


# -- command line ------------------------------------------------------------


def test_cli_solve(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL)
    status = cli.main(["solve", "--config", str(cfg), "--out", str(tmp_path / "out"), "--deterministic"])
    assert status == 0
    assert "PASS converged" in capsys.readouterr().out


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(MINIMAL + "cell.delta = 0.7\n")
    assert cli.main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "delta must lie in (0, 1/2)" in capsys.readouterr().err


def test_thread_resolution(monkeypatch):
    p = cli.build_parser()
    monkeypatch.setenv(cli.THREAD_ENV, "6")
    assert cli.resolve_threads(p.parse_args(["solve", "--config", "c", "--out", "o"])) == 6
    assert cli.resolve_threads(p.parse_args(["solve", "--config", "c", "--out", "o", "--threads", "2"])) == 2
    assert cli.resolve_threads(p.parse_args(["solve", "--config", "c", "--out", "o", "--deterministic"])) == 1
    monkeypatch.delenv(cli.THREAD_ENV)
    assert cli.resolve_threads(p.parse_args(["solve", "--config", "c", "--out", "o"])) == 1
    assert os.environ.get(cli.THREAD_ENV) is None
