"""Run configuration, field persistence, CSV reports and the solve/refine/analyze pipeline.

Config files are UTF-8 text with one ``key = value`` per line; keys carry a
dotted section prefix (``cell.M``, ``solver.tol``).  ``#`` starts a comment.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .cell_grid import CellSpec, Field, Grid, commensurate_grid, make_grid
from .heis_core import build_integer_base
from .potential import ModulationSpec, PotentialSpec

logger = logging.getLogger(__name__)

MODES = ("solve", "refine", "analyze", "sequence", "gamma", "verify")
MAGIC = b"HGPF1\n"


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# value parsers


def _int(text: str) -> int:
    v = int(text)
    return v


def _float(text: str) -> float:
    v = float(text)
    if not np.isfinite(v):
        raise ValueError("must be finite")
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _list(conv: Callable) -> Callable:
    def parse(text: str) -> tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return tuple(conv(p) for p in parts)

    return parse


def _number(text: str):
    """Rational 'p/q' or integer stays exact; decimals become floats."""
    t = text.strip()
    if "/" in t or t.lstrip("+-").isdigit():
        return Fraction(t)
    return _float(t)


def _positive(v):
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _nonneg(v):
    if v < 0:
        raise ValueError("must be nonnegative")
    return v


def _unit_open(v):
    if not 0.0 < v < 1.0:
        raise ValueError("must lie in (0, 1)")
    return v


def _delta(v):
    if not 0.0 < v < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    return v


def _d(v):
    if not 0.0 <= v <= 2.0:
        raise ValueError("d must lie in [0, 2]")
    return v


def _kind(text):
    t = text.strip()
    if t not in ("quartic", "power_d", "indicator"):
        raise ValueError(f"unknown potential kind {t!r}")
    return t


def _mode(text):
    t = text.strip()
    if t not in MODES:
        raise ValueError(f"mode must be one of {', '.join(MODES)}")
    return t


def _min_res(v):
    if v < 8:
        raise ValueError("resolutions must be at least 8")
    return v


def _all(check):
    def f(vals):
        for v in vals:
            check(v)
        return vals

    return f


# key -> (parser, validator, default); default None means optional, REQUIRED means required
REQUIRED = object()
SCHEMA: dict = {
    "n": (_int, _positive, REQUIRED),
    "omega": (_list(_number), None, REQUIRED),
    "mode": (_mode, None, None),
    "potential.kind": (_kind, None, REQUIRED),
    "potential.d": (_float, _d, None),
    "potential.ell": (_float, _unit_open, 0.5),
    "potential.mean": (_float, _positive, 1.0),
    "potential.amplitude": (_float, _nonneg, 0.0),
    "potential.frequency": (_list(_int), _all(_positive), None),
    "cell.M": (_float, _positive, 10.0),
    "cell.L": (_float, _positive, None),
    "cell.p": (_int, _positive, 1),
    "cell.delta": (_float, _delta, 0.1),
    "grid.ns": (_int, _min_res, 16),
    "grid.na": (_int, _min_res, None),
    "grid.nt": (_int, _min_res, 8),
    "grid.da": (_float, _positive, 0.1),
    "solver.tol": (_float, _positive, 1e-7),
    "solver.max_iters": (_int, _positive, 20000),
    "solver.seed": (_int, _nonneg, 0),
    "solver.momentum": (_bool, None, True),
    "analysis.theta": (_float, _unit_open, 0.9),
    "analysis.theta0": (_float, _unit_open, 0.9),
    "analysis.radii": (_list(_float), _all(_positive), (4.0, 5.656854249492381, 8.0, 11.313708498984761, 16.0)),
    "analysis.epsilons": (_list(_float), None, (1.0, 0.5, 0.25)),
    "analysis.window": (_float, _positive, 2.0),
    "analysis.kmax": (_int, _positive, 2),
    "analysis.r0": (_float, _positive, 1.0),
    "analysis.M0_bound": (_float, _positive, 8.0),
    "analysis.a_extra": (_float, _nonneg, None),
    "sequence.denominators": (_list(_int), _all(_positive), (2, 5, 13)),
    "gamma.Ns": (_list(_float), _all(_positive), (1.0, 2.0, 4.0)),
}


@dataclass
class AnalysisConfig:
    theta: float = 0.9
    theta0: float = 0.9
    radii: tuple = (4.0, 5.656854249492381, 8.0, 11.313708498984761, 16.0)
    epsilons: tuple = (1.0, 0.5, 0.25)
    window: float = 2.0
    kmax: int = 2
    r0: float = 1.0
    M0_bound: float = 8.0
    a_extra: Optional[float] = None


@dataclass
class RunConfig:
    n: int
    omega: tuple
    potential: PotentialSpec
    M: float = 10.0
    L: float = 14.0
    p: int = 1
    delta: float = 0.1
    ns: int = 16
    na: Optional[int] = None
    nt: int = 8
    da: float = 0.1
    tol: float = 1e-7
    max_iters: int = 20000
    seed: int = 0
    momentum: bool = True
    analysis: AnalysisConfig = dc_field(default_factory=AnalysisConfig)
    mode: Optional[str] = None
    denominators: tuple = (2, 5, 13)
    Ns: tuple = (1.0, 2.0, 4.0)

    @property
    def rational(self) -> bool:
        return all(isinstance(x, Fraction) for x in self.omega)

    def solve_config(self):
        from .solver import SolveConfig

        return SolveConfig(
            max_iters=self.max_iters,
            tol=self.tol,
            seed=self.seed,
            momentum=self.momentum,
            d0_mode=self.potential.kind == "indicator",
        )

    def cell_spec(self, omega=None) -> CellSpec:
        base = build_integer_base(self.omega if omega is None else omega)
        return CellSpec(base, M=self.M, L=self.L, p=self.p, delta=self.delta)

    def build_grid(self, omega=None) -> Grid:
        spec = self.cell_spec(omega)
        ns = [self.ns] * (2 * self.n - 1)
        if self.na is not None:
            return make_grid(spec, tuple(ns) + (self.na, self.nt))
        return commensurate_grid(spec, ns, self.da, self.nt)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration."""
    seen: dict = {}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno)
        if not val:
            raise ConfigError(f"missing value for {key!r}", lineno)
        seen[key] = lineno
        conv, check, _ = SCHEMA[key]
        try:
            v = conv(val)
            if check is not None:
                v = check(v)
        except (ValueError, ZeroDivisionError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        values[key] = v
    for key, (_, _, default) in SCHEMA.items():
        if default is REQUIRED and key not in values:
            raise ConfigError(f"missing required key {key!r}")

    def get(key):
        return values.get(key, SCHEMA[key][2])

    def line_of(key):
        return seen.get(key)

    n = get("n")
    omega = get("omega")
    if len(omega) != 2 * n:
        raise ConfigError(f"omega needs {2 * n} entries for n={n}, got {len(omega)}", line_of("omega"))
    if all(x == 0 for x in omega):
        raise ConfigError("omega must be nonzero", line_of("omega"))
    kind = get("potential.kind")
    d = get("potential.d")
    if d is None:
        d = {"quartic": 2.0, "indicator": 0.0, "power_d": 1.0}[kind]
    freq = get("potential.frequency") or ()
    if freq and len(freq) != 2 * n:
        raise ConfigError(f"potential.frequency needs {2 * n} entries", line_of("potential.frequency"))
    mean, amp = get("potential.mean"), get("potential.amplitude")
    if not mean > amp:
        raise ConfigError("potential.mean must exceed potential.amplitude", line_of("potential.mean"))
    try:
        pot = PotentialSpec(kind=kind, d=d, modulation=ModulationSpec(mean, amp, freq), ell=get("potential.ell"))
    except ValueError as exc:
        raise ConfigError(str(exc), line_of("potential.d") or line_of("potential.kind")) from None
    M = get("cell.M")
    L = get("cell.L")
    if L is None:
        L = M + 4.0
    if not L > M:
        raise ConfigError(f"cell.L={L} must exceed cell.M={M}", line_of("cell.L"))
    mode = get("mode")
    if not all(isinstance(x, Fraction) for x in omega) and mode not in (None, "sequence"):
        raise ConfigError("decimal omega is only allowed in sequence mode; use p/q", line_of("omega"))
    eps = get("analysis.epsilons")
    if any(not 0.0 < e <= 1.0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("analysis.epsilons must decrease within (0, 1]", line_of("analysis.epsilons"))
    radii = get("analysis.radii")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ConfigError("analysis.radii must increase", line_of("analysis.radii"))
    Ns = get("gamma.Ns")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ConfigError("gamma.Ns must increase", line_of("gamma.Ns"))
    analysis = AnalysisConfig(
        theta=get("analysis.theta"),
        theta0=get("analysis.theta0"),
        radii=tuple(radii),
        epsilons=tuple(eps),
        window=get("analysis.window"),
        kmax=get("analysis.kmax"),
        r0=get("analysis.r0"),
        M0_bound=get("analysis.M0_bound"),
        a_extra=get("analysis.a_extra"),
    )
    return RunConfig(
        n=n,
        omega=tuple(omega),
        potential=pot,
        M=M,
        L=L,
        p=get("cell.p"),
        delta=get("cell.delta"),
        ns=get("grid.ns"),
        na=get("grid.na"),
        nt=get("grid.nt"),
        da=get("grid.da"),
        tol=get("solver.tol"),
        max_iters=get("solver.max_iters"),
        seed=get("solver.seed"),
        momentum=get("solver.momentum"),
        analysis=analysis,
        mode=mode,
        denominators=tuple(get("sequence.denominators")),
        Ns=tuple(Ns),
    )


# ---------------------------------------------------------------------------
# field persistence


class FieldFormatError(ValueError):
    pass


def _header(grid: Grid) -> list:
    base = grid.base
    lines = [
        f"n={grid.n}",
        "omega_num=" + ",".join(str(Fraction(x).numerator) for x in base.omega),
        "omega_den=" + ",".join(str(Fraction(x).denominator) for x in base.omega),
    ]
    for j, k in enumerate(base.k, start=1):
        lines.append(f"k{j}=" + ",".join(str(int(v)) for v in k))
    lines += [
        f"theta={base.theta}",
        f"p={grid.p}",
        f"M={grid.spec.M!r}",
        f"L={grid.L!r}",
        f"delta={grid.spec.delta!r}",
        "resolutions=" + ",".join(str(v) for v in grid.shape),
        f"da={grid.da!r}",
    ]
    return lines


def dump_field(field: Field, path) -> None:
    """Write magic, header, blank line, then little-endian binary64 values (tau fastest)."""
    head = "\n".join(_header(field.grid)) + "\n\n"
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(head.encode("utf-8"))
        fh.write(payload)


def _read_header(fh) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise FieldFormatError("bad magic: not a field dump")
    info = {}
    while True:
        line = fh.readline()
        if not line:
            raise FieldFormatError("header not terminated by a blank line")
        text = line.decode("utf-8").rstrip("\n")
        if text == "":
            return info
        key, sep, val = text.partition("=")
        if not sep:
            raise FieldFormatError(f"malformed header line {text!r}")
        info[key] = val


def _grid_from_header(info: dict) -> Grid:
    try:
        n = int(info["n"])
        nums = [int(v) for v in info["omega_num"].split(",")]
        dens = [int(v) for v in info["omega_den"].split(",")]
        omega = tuple(Fraction(a, b) for a, b in zip(nums, dens))
        res = tuple(int(v) for v in info["resolutions"].split(","))
        spec = CellSpec(
            build_integer_base(omega),
            M=float(info["M"]),
            L=float(info["L"]),
            p=int(info["p"]),
            delta=float(info["delta"]),
        )
        ks = [tuple(int(v) for v in info[f"k{j}"].split(",")) for j in range(1, 2 * n + 1)]
        da = float(info["da"])
        theta = int(info["theta"])
    except (KeyError, ValueError) as exc:
        raise FieldFormatError(f"incomplete or malformed header: {exc}") from None
    if len(res) != 2 * n + 1:
        raise FieldFormatError("resolution count does not match n")
    if tuple(ks) != spec.base.k or theta != spec.base.theta:
        raise FieldFormatError("stored basis does not match the basis rebuilt from omega")
    grid = Grid(spec, res[:-2], res[-2], res[-1], da)
    if grid.L != spec.L:
        raise FieldFormatError(f"header L={spec.L!r} disagrees with resolutions and spacing ({grid.L!r})")
    return grid


def _same_layout(a: Grid, b: Grid) -> bool:
    return (
        a.shape == b.shape
        and a.base.k == b.base.k
        and a.base.omega == b.base.omega
        and a.p == b.p
        and a.da == b.da
        and a.spec.M == b.spec.M
        and a.spec.delta == b.spec.delta
    )


def load_field(path, grid: Grid | None = None) -> Field:
    with open(path, "rb") as fh:
        info = _read_header(fh)
        stored = _grid_from_header(info)
        payload = fh.read()
    if grid is not None:
        if not _same_layout(grid, stored):
            raise FieldFormatError("field dump does not match the requested grid")
        stored = grid
    need = stored.size * 8
    if len(payload) < need:
        raise FieldFormatError(f"truncated payload: header says {stored.size} nodes, found {len(payload) // 8}")
    if len(payload) > need:
        raise FieldFormatError("payload longer than the header declares")
    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape(stored.shape)
    return Field(stored, values)


# ---------------------------------------------------------------------------
# CSV


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_trace(path, bundle) -> None:
    write_csv(path, ("iteration", "dirichlet", "potential", "total", "step"), bundle.trace)


def write_density(path, rep) -> None:
    write_csv(path, ("r", "energy", "vol_plus", "vol_minus", "vol_band"), rep.rows())


def write_slab(path, reports) -> None:
    write_csv(path, ("theta", "width", "pass"), [(r.theta, r.width, r.passed) for r in reports])


def write_birkhoff(path, audit) -> None:
    rows = [(" ".join(str(v) for v in e.k), e.violation) for e in audit.entries]
    write_csv(path, ("k", "worst_violation"), rows)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    status: int
    checks: dict
    artifacts: list


def _check(checks: dict, name: str, ok: bool, value) -> None:
    checks[name] = (bool(ok), value)
    logger.info("check %-28s %s (%s)", name, "pass" if ok else "FAIL", fmt(value))


def run_pipeline(cfg: RunConfig, out_dir, mode: str | None = None, field_path=None) -> PipelineResult:
    """Execute one mode and write its artifacts; status 0 iff every configured check passes."""
    from . import analysis as an
    from . import solver as so

    mode = mode or cfg.mode or "solve"
    if cfg.mode is not None and mode != cfg.mode:
        raise ConfigError(f"config says mode={cfg.mode} but {mode} was requested")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scfg = cfg.solve_config()
    checks: dict = {}
    artifacts: list = []

    def emit(name):
        p = out / name
        artifacts.append(p)
        return p

    if mode == "sequence":
        bundles, rep = so.rational_sequence_solve(
            cfg.omega, cfg.denominators, cfg.potential, scfg,
            so.GridRecipe(M=cfg.M, L=cfg.L, p=cfg.p, delta=cfg.delta, da=cfg.da, nt=cfg.nt),
        )
        rows = []
        for i, (q, om) in enumerate(zip(cfg.denominators, rep.omegas)):
            diff = rep.window_differences[i - 1] if i > 0 else float("nan")
            rows.append((q, " ".join(str(x) for x in om), diff))
        write_csv(emit("sequence.csv"), ("q", "omega", "window_difference"), rows)
        _check(checks, "window_differences_decrease", rep.decreasing, len(rep.window_differences))
        for q, b in zip(cfg.denominators, bundles):
            _check(checks, f"converged_q{q}", b.converged, b.residual)
        return PipelineResult(0 if all(ok for ok, _ in checks.values()) else 1, checks, artifacts)

    if not cfg.rational:
        raise ConfigError("this mode needs a rational omega")
    grid = cfg.build_grid()
    logger.info("grid %r", grid)

    if mode == "gamma":
        bundles, rep = so.gamma_sequence_solve(cfg.potential.modulation, cfg.Ns, grid, scfg)
        rows = list(zip(rep.Ns, rep.thickness, rep.confinement, rep.energies))
        write_csv(emit("interface.csv"), ("N", "thickness", "confinement", "energy"), rows)
        _check(checks, "confinement_bounded", max(rep.confinement) <= cfg.analysis.M0_bound, max(rep.confinement))
        _check(
            checks,
            "thickness_decreasing",
            all(b < a for a, b in zip(rep.thickness, rep.thickness[1:])),
            rep.thickness[-1],
        )
        for N, b in zip(cfg.Ns, bundles):
            _check(checks, f"converged_N{fmt(N)}", b.converged, b.residual)
        return PipelineResult(0 if all(ok for ok, _ in checks.values()) else 1, checks, artifacts)

    if mode == "analyze" and field_path is not None:
        u = load_field(field_path, grid)
        bundle = None
    else:
        bundle = so.minimize(so.init_ramp(grid), cfg.potential, scfg)
        if mode in ("refine", "analyze", "verify"):
            bundle = so.birkhoff_refine(bundle, cfg.potential, scfg)
        u = bundle.field
        dump_field(u, emit("field.hgpf"))
        write_trace(emit("trace.csv"), bundle)
        _check(checks, "converged", bundle.converged, bundle.residual)
        trace = np.array([row[3] for row in bundle.trace])
        _check(checks, "energy_monotone", bool(np.all(np.diff(trace) <= 1e-12 * max(1.0, abs(trace[0])))), trace[-1])

    if mode in ("analyze", "verify"):
        a_cfg = cfg.analysis
        slabs = [an.slab_width(u, th, a_cfg.M0_bound) for th in sorted({a_cfg.theta, 1.0 - cfg.delta})]
        write_slab(emit("slab.csv"), slabs)
        _check(checks, "slab_confined", all(s.passed for s in slabs), max(s.width for s in slabs))
        audit = an.birkhoff_audit(u, a_cfg.kmax)
        write_birkhoff(emit("birkhoff.csv"), audit)
        _check(checks, "birkhoff", audit.passed(1e-6), audit.worst)
        radii = [r for r in a_cfg.radii]
        try:
            centre = an.interface_center(u, a_cfg.theta0)
            rep = an.density_profile(u, cfg.potential, centre, radii, theta=0.0, theta0=a_cfg.theta0)
        except ValueError as exc:
            logger.warning("density profile skipped: %s", exc)
            rep = None
        if rep is not None:
            write_density(emit("density.csv"), rep)
            fx = rep.fitted_exponents
            Q = 2 * (cfg.n + 1)
            if mode == "verify":
                for name in ("suplevel_volumes", "sublevel_volumes"):
                    _check(checks, f"exponent_{name}", abs(fx[name].slope - Q) <= 0.4, fx[name].slope)
                for name in ("band_volumes", "ball_energies"):
                    _check(checks, f"exponent_{name}", abs(fx[name].slope - (Q - 1)) <= 0.4, fx[name].slope)
        try:
            dists = an.epsilon_rescale_distance(u, a_cfg.epsilons, a_cfg.theta, a_cfg.window)
            write_csv(emit("epsilon.csv"), ("epsilon", "distance"), zip(a_cfg.epsilons, dists))
            ok = all(b <= 1.1 * a for a, b in zip(dists, dists[1:]))
            _check(checks, "epsilon_nonincreasing", ok, dists[-1])
        except ValueError as exc:
            logger.warning("epsilon rescaling skipped: %s", exc)
        if mode == "verify" and _is_reference(cfg):
            a = grid.node_a
            best = min(
                float(np.max(np.abs(u.values - np.tanh(a - c))))
                for c in np.linspace(-grid.da, grid.da, 21)
            )
            _check(checks, "tanh_match", best <= 5e-2, best)
        if mode == "verify" and bundle is not None and a_cfg.a_extra is not None:
            rep_e = so.enlarge_check(bundle, cfg.potential, scfg, a_cfg.a_extra, threshold=1e-3)
            _check(checks, "enlarge", rep_e.passed, rep_e.sup_difference)

    status = 0 if all(ok for ok, _ in checks.values()) else 1
    if mode == "verify":
        write_csv(
            emit("verify.csv"),
            ("check", "pass", "value"),
            [(k, ok, v) for k, (ok, v) in checks.items()],
        )
    return PipelineResult(status, checks, artifacts)


def _is_reference(cfg: RunConfig) -> bool:
    """Quartic, unmodulated, omega along the first axis: the profile is known in closed form."""
    om = [Fraction(x) for x in cfg.omega]
    return (
        cfg.potential.kind == "quartic"
        and cfg.potential.modulation.amplitude == 0
        and cfg.potential.modulation.mean == 1.0
        and om[0] > 0
        and all(x == 0 for x in om[1:])
    )
