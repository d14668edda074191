"""Constrained minimisation on the cell and the drivers built on it."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .cell_grid import (
    CellSpec,
    Field,
    Grid,
    IncommensurateError,
    commensurate_grid,
    lattice_vector_map,
    read_translated,
)
from .energy import EnergyBreakdown, energy_total, modulation_on, operator
from .heis_core import build_integer_base
from .potential import ModulationSpec, PotentialSpec, well, well_deriv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 20000
    tol: float = 1e-7
    seed: int = 0
    momentum: bool = True
    d0_mode: bool = False  # obstacle formulation for the indicator potential
    max_halvings: int = 60
    refine_sweeps: int = 20
    polish_iters: int = 4000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class MinimizerBundle:
    field: Field
    energy: EnergyBreakdown
    iterations: int
    converged: bool
    refinement_passes: int = 0
    trace: list = dc_field(default_factory=list)  # rows (iteration, dirichlet, potential, total, step)
    residual: float = float("nan")
    M: Optional[float] = None
    delta: Optional[float] = None

    @property
    def grid(self) -> Grid:
        return self.field.grid


# ---------------------------------------------------------------------------
# constraint handling


def init_ramp(grid: Grid) -> Field:
    """u0 = clamp(4 a, -1, 1) with a the slab coordinate."""
    return Field(grid, np.clip(4.0 * grid.node_a, -1.0, 1.0))


def project_constraints(field: Field, M: float | None = None, delta: float | None = None) -> Field:
    lo, hi = field.grid.constraint_bounds(M, delta)
    return Field(field.grid, np.clip(field.values, lo, hi))


def is_feasible(field: Field, M=None, delta=None, atol: float = 1e-14) -> bool:
    lo, hi = field.grid.constraint_bounds(M, delta)
    v = field.values
    return bool(np.all(v >= lo - atol) and np.all(v <= hi + atol))


def _same_grid(u: Field, v: Field) -> None:
    if u.grid is not v.grid and (u.grid.shape != v.grid.shape or u.grid.spec != v.grid.spec):
        raise ValueError("fields live on different grids")


def min_combine(u: Field, v: Field) -> Field:
    _same_grid(u, v)
    return Field(u.grid, np.minimum(u.values, v.values))


def max_combine(u: Field, v: Field) -> Field:
    _same_grid(u, v)
    return Field(u.grid, np.maximum(u.values, v.values))


# ---------------------------------------------------------------------------
# projected gradient descent


class _Objective:
    """Flat-array energy and nodal gradient for one (grid, potential) pair."""

    def __init__(self, grid: Grid, spec: PotentialSpec, obstacle: bool):
        self.grid = grid
        self.spec = spec
        self.op = operator(grid)
        self.w = grid.cell_weight
        self.q = modulation_on(grid, spec).ravel()
        self.obstacle = obstacle
        lap_rows = np.asarray(abs(self.op.GT) @ abs(self.op.G).sum(axis=1)).ravel()[: grid.size]
        curv = 0.0 if obstacle or spec.kind != "quartic" else 8.0 * float(self.q.max())
        self.lipschitz = 2.0 * float(lap_rows.max()) / self.w + curv
        if spec.kind == "power_d" and not obstacle:
            self.lipschitz += 8.0 * float(self.q.max())

    def energy(self, u):
        d = self.op.apply(u)
        return float(d @ d), self.w * float(np.sum(self.q * well(self.spec, u)))

    def gradient(self, u):
        g = 2.0 * self.op.adjoint(self.op.apply(u)) / self.w
        if not self.obstacle:
            g = g + self.q * well_deriv(self.spec, u)
        return g


def _pg_residual(obj: _Objective, u, lo, hi) -> float:
    eta = 1.0 / obj.lipschitz
    return float(np.max(np.abs(np.clip(u - eta * obj.gradient(u), lo, hi) - u)))


def minimize(
    start: Field,
    spec: PotentialSpec,
    cfg: SolveConfig = SolveConfig(),
    M: float | None = None,
    delta: float | None = None,
    momentum: bool | None = None,
) -> MinimizerBundle:
    """Projected gradient descent on the constrained class.

    Steps start at the Gershgorin bound of the Hessian and are halved until
    the sufficient-decrease test holds.  With momentum, a step that would
    raise the energy is discarded and replaced by a plain projected step,
    so the recorded energies never increase.  Convergence is declared when
    the projected step at the reference step size is below ``cfg.tol`` in
    the sup norm.
    """
    grid = start.grid
    obstacle = cfg.d0_mode or not spec.differentiable
    if not spec.differentiable and not cfg.d0_mode:
        logger.info("indicator potential: using the obstacle formulation")
    use_momentum = cfg.momentum if momentum is None else momentum
    lo, hi = (a.ravel() for a in grid.constraint_bounds(M, delta))
    u = np.asarray(start.values, dtype=float).ravel().copy()
    proj = np.clip(u, lo, hi)
    if np.any(proj != u):
        logger.warning("start field is infeasible; projecting (max move %.3g)", np.max(np.abs(proj - u)))
        u = proj
    obj = _Objective(grid, spec, obstacle)
    w = obj.w
    eta = 1.0 / obj.lipschitz

    def total(parts):
        return parts[0] + (0.0 if obstacle else parts[1])

    Eu = obj.energy(u)
    trace = [(0, Eu[0], Eu[1], Eu[0] + Eu[1], 0.0)]
    y = u.copy()
    Ey, gy = Eu, obj.gradient(u)
    theta = 1.0
    converged = False
    residual = float("nan")
    it = 0
    for it in range(1, cfg.max_iters + 1):
        for _ in range(cfg.max_halvings):
            cand = np.clip(y - eta * gy, lo, hi)
            d = cand - y
            Ec = obj.energy(cand)
            bound = total(Ey) + w * float(gy @ d) + w / (2.0 * eta) * float(d @ d)
            if total(Ec) <= bound + 1e-12 * abs(bound):
                break
            eta *= 0.5
        if total(Ec) > total(Eu):
            # momentum overshoot: restart from the current iterate
            y, Ey, gy, theta = u.copy(), Eu, obj.gradient(u), 1.0
            cand = np.clip(u - eta * gy, lo, hi)
            Ec = obj.energy(cand)
            if total(Ec) > total(Eu):
                cand, Ec = u, Eu
        step = float(np.max(np.abs(cand - u)))
        prev, u, Eu = u, cand, Ec
        trace.append((it, Eu[0], Eu[1], Eu[0] + Eu[1], step))
        if step < cfg.tol:
            residual = _pg_residual(obj, u, lo, hi)
            if residual < cfg.tol:
                converged = True
                break
        if use_momentum:
            theta_n = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
            y = np.clip(u + ((theta - 1.0) / theta_n) * (u - prev), lo, hi)
            theta = theta_n
            Ey, gy = obj.energy(y), obj.gradient(y)
        else:
            y, Ey, gy = u, Eu, obj.gradient(u)
    if not converged:
        residual = _pg_residual(obj, u, lo, hi)
        converged = residual < cfg.tol
        if not converged:
            logger.warning("minimize: no convergence after %d iterations (residual %.3g)", it, residual)
    out = Field(grid, u)
    return MinimizerBundle(
        field=out,
        energy=energy_total(out, spec),
        iterations=it,
        converged=converged,
        trace=trace,
        residual=residual,
        M=grid.spec.M if M is None else M,
        delta=grid.spec.delta if delta is None else delta,
    )


# ---------------------------------------------------------------------------
# minimal-minimizer refinement


def omega_dot(grid: Grid, k) -> Fraction:
    return sum((Fraction(int(a)) * b for a, b in zip(k, grid.base.omega)), Fraction(0))


def birkhoff_generators(
    grid: Grid, kmax: int = 2, include_orthogonal: bool = True, exact: bool = False
) -> list:
    """Commensurate lattice vectors with |k|_inf <= kmax and omega.k >= 0.

    Commensurate means the transverse and slab parts of the move land on
    nodes; with ``exact`` the vertical part must as well.
    """
    gens = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=2 * grid.n):
        if not any(k):
            continue
        dot = omega_dot(grid, k)
        if dot < 0 or (dot == 0 and not include_orthogonal):
            continue
        try:
            lattice_vector_map(grid, k, exact=exact)
        except IncommensurateError:
            continue
        gens.append(tuple(k))
    return gens


def _vertical_maps(grid: Grid) -> list:
    """Index maps for the vertical shifts by 2j that are not the identity."""
    maps = []
    steps = 2.0 / grid.dtau
    if abs(steps - round(steps)) > 1e-9:
        return maps
    base = np.arange(grid.size).reshape(grid.shape)
    zero = np.zeros(grid.size)
    for j in range(1, int(round(grid.period / 2.0))):
        m = np.roll(base, -j * int(round(steps)), axis=-1).ravel()
        maps.append((m, m, zero))
    return maps


def min_closure(field: Field, maps: Sequence, max_passes: int = 100000) -> Field:
    """Largest fixed point below ``field`` of u -> min(u, T u) over all maps.

    Each map is a ``(lower, upper, frac)`` triple as returned by
    :func:`lattice_vector_map`.
    """
    v = field.copy()
    for _ in range(max_passes):
        changed = False
        for m in maps:
            t = read_translated(v, m)
            nv = np.minimum(v.values.ravel(), t.ravel())
            if np.any(nv < v.values.ravel()):
                changed = True
                v.values = nv.reshape(v.grid.shape)
        if not changed:
            return v
    raise RuntimeError("min-closure did not stabilise")


def birkhoff_refine(
    bundle: MinimizerBundle,
    spec: PotentialSpec,
    cfg: SolveConfig = SolveConfig(),
    generators: Sequence | None = None,
) -> MinimizerBundle:
    """Min-refinement by translates and vertical shifts, re-minimising after each sweep.

    A sweep replaces u by the smallest function below u that is monotone
    under every generator; the polish afterwards uses plain projected steps,
    which preserve that order on a translation-invariant grid.
    """
    grid = bundle.grid
    if generators is None:
        generators = birkhoff_generators(grid)
    maps = []
    for k in generators:
        if omega_dot(grid, k) < 0:
            raise ValueError(f"generator {k} has omega.k < 0")
        maps.append(tuple(np.ravel(a) for a in lattice_vector_map(grid, k, exact=False)))
    maps.extend(_vertical_maps(grid))
    M, delta = bundle.M, bundle.delta
    current = bundle
    trace = list(bundle.trace)
    passes = 0
    for passes in range(1, cfg.refine_sweeps + 1):
        swept = min_closure(current.field, maps)
        change = float(np.max(np.abs(swept.values - current.field.values)))
        polish_cfg = SolveConfig(
            max_iters=cfg.polish_iters, tol=cfg.tol, momentum=False, d0_mode=cfg.d0_mode
        )
        if change > 1e3 * cfg.tol:
            fast = minimize(swept, spec, cfg, M=M, delta=delta, momentum=cfg.momentum)
            swept = min_closure(fast.field, maps)
        polished = minimize(swept, spec, polish_cfg, M=M, delta=delta, momentum=False)
        trace.extend(polished.trace)
        logger.info(
            "refine pass %d: sweep change %.3g, energy %.12g", passes, change, polished.energy.total
        )
        current = MinimizerBundle(
            field=polished.field,
            energy=polished.energy,
            iterations=current.iterations + polished.iterations,
            converged=polished.converged,
            refinement_passes=passes,
            trace=trace,
            residual=polished.residual,
            M=M,
            delta=delta,
        )
        if change <= cfg.tol:
            break
    return current


@dataclass
class EnlargeReport:
    a_extra: float
    sup_difference: float
    threshold: float
    passed: bool
    bundle: MinimizerBundle


def enlarge_check(
    bundle: MinimizerBundle,
    spec: PotentialSpec,
    cfg: SolveConfig = SolveConfig(),
    a_extra: float = 0.0,
    threshold: float | None = None,
    refine: bool = False,
) -> EnlargeReport:
    """Re-solve with slab half-width M + a_extra on the same grid and compare."""
    if a_extra < 0:
        raise ValueError("a_extra must be nonnegative")
    grid = bundle.grid
    M = bundle.M + a_extra
    if M >= grid.L:
        raise ValueError(f"grid half-extent L={grid.L:.6g} cannot host M={M:.6g}")
    if a_extra == 0:
        other = bundle
    else:
        other = minimize(init_ramp(grid), spec, cfg, M=M, delta=bundle.delta)
        if refine:
            other = birkhoff_refine(other, spec, cfg)
    diff = float(np.max(np.abs(other.field.values - bundle.field.values)))
    thr = 10.0 * cfg.tol if threshold is None else threshold
    return EnlargeReport(a_extra, diff, thr, diff <= thr, other)


# ---------------------------------------------------------------------------
# drivers


@dataclass
class GridRecipe:
    """How drivers lay out the cell for a given direction."""

    M: float = 10.0
    L: float = 12.0
    p: int = 1
    delta: float = 0.1
    da: float = 0.1
    nt: int = 8  # vertical nodes per unit multiplicity
    ns_per_unit: float = 10.0  # transverse nodes per unit length

    def build(self, omega) -> Grid:
        base = build_integer_base(omega)
        spec = CellSpec(base, M=self.M, L=self.L, p=self.p, delta=self.delta)
        knorm2 = sum(int(x) * int(x) for x in base.k[-1])
        # transverse node count: a multiple of |k^{2n}|^2 keeps small lattice shifts on nodes
        length = float(np.max(np.linalg.norm(np.asarray(base.k[:-1], dtype=float), axis=1))) * self.p
        want = max(8, int(np.ceil(self.ns_per_unit * length)))
        unit = knorm2 if base.n == 1 else 1
        ns = unit * int(np.ceil(want / unit))
        return commensurate_grid(spec, [ns] * (2 * base.n - 1), self.da, self.nt * self.p)


def rational_approximation(omega_target, q: int) -> tuple:
    """Componentwise best rational approximations with denominators <= q."""
    return tuple(Fraction(float(x)).limit_denominator(q) for x in omega_target)


@dataclass
class SequenceReport:
    omegas: list
    window_differences: list
    decreasing: bool
    window: tuple


def sample_field(field: Field, z, t) -> np.ndarray:
    """Multilinear interpolation in the node coordinates (s, a, tau)."""
    grid = field.grid
    z = np.atleast_2d(np.asarray(z, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), z.shape[:-1])
    c = grid.kcoords(z)[..., :-1] / grid.p
    ns = np.asarray(grid.ns, dtype=float)
    raw_s = (c + 0.5) * ns
    a = z @ grid.omega_hat
    raw_a = (a + grid.L) / grid.da - 0.5
    s0 = np.floor(raw_s)
    a0 = np.floor(raw_a)
    tau = t - grid.zeta(z)
    out = np.zeros(z.shape[:-1])
    dim_s = len(grid.ns)
    for corner in itertools.product((0, 1), repeat=dim_s + 1):
        cs = s0 + np.asarray(corner[:dim_s])
        ca = a0 + corner[dim_s]
        ws = np.prod(np.where(np.asarray(corner[:dim_s]) == 1, raw_s - s0, 1.0 - (raw_s - s0)), axis=-1)
        wa = np.where(corner[dim_s] == 1, raw_a - a0, 1.0 - (raw_a - a0))
        sc = cs / ns - 0.5
        ac = -grid.L + (ca + 0.5) * grid.da
        zc = grid.z_of(sc, ac)
        # same tau on the corner column, bracketed between vertical nodes
        sidx, _, tau_idx = grid.land(zc, tau + grid.zeta(zc), snap=True)
        t0 = np.floor(tau_idx)
        for up in (0, 1):
            wt = (tau_idx - t0) if up else (1.0 - (tau_idx - t0))
            tgt = grid.flat(sidx, ca.astype(np.int64), (t0 + up).astype(np.int64))
            out += ws * wa * wt * field.padded_read(tgt)
    return out


def window_points(n: int, half: float, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-half, half, size=(count, 2 * n))
    t = rng.uniform(-1.0, 1.0, size=count)
    return z, t


def rational_sequence_solve(
    omega_target,
    denominators: Sequence[int],
    spec: PotentialSpec,
    cfg: SolveConfig = SolveConfig(),
    recipe: GridRecipe = GridRecipe(),
    window: float = 3.0,
    samples: int = 4000,
    refine: bool = True,
):
    """Solve for each rational approximation and compare consecutive solutions on a window."""
    bundles, omegas = [], []
    for q in denominators:
        om = rational_approximation(omega_target, q)
        if all(x == 0 for x in om):
            raise ValueError("rational approximation collapsed to zero")
        if omegas and om == omegas[-1]:
            bundles.append(bundles[-1])
            omegas.append(om)
            continue
        grid = recipe.build(om)
        logger.info("sequence member q=%d omega=%s grid %r", q, om, grid)
        b = minimize(init_ramp(grid), spec, cfg)
        if refine:
            b = birkhoff_refine(b, spec, cfg)
        bundles.append(b)
        omegas.append(om)
    n = len(omega_target) // 2
    z, t = window_points(n, window, samples, cfg.seed)
    vals = [sample_field(b.field, z, t) for b in bundles]
    diffs = [float(np.max(np.abs(v1 - v0))) for v0, v1 in zip(vals, vals[1:])]
    dec = all(b < a for a, b in zip(diffs, diffs[1:]))
    return bundles, SequenceReport(omegas, diffs, dec, (window, samples))


@dataclass
class GammaReport:
    Ns: list
    thickness: list
    confinement: list
    energies: list  # values of the N-scaled functional


def scaled_potential(alpha: ModulationSpec, N: float, ell: float = 0.5) -> PotentialSpec:
    """Potential whose minimisers coincide with those of the N-scaled functional.

    N F^(N)(u) = int |grad_H u|^2 + N^2 alpha^2 (1 - u^2)^2.
    """
    return PotentialSpec(kind="quartic", d=2.0, modulation=alpha, ell=ell, scale=float(N) ** 2,
                         square_modulation=True)


def gamma_sequence_solve(
    alpha_spec: ModulationSpec,
    Ns: Sequence[float],
    grid: Grid,
    cfg: SolveConfig = SolveConfig(),
    refine: bool = False,
    level: float = 0.9,
):
    from .analysis import interface_extract

    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError("Ns must be increasing")
    bundles = []
    rep = GammaReport([], [], [], [])
    for N in Ns:
        ps = scaled_potential(alpha_spec, N)
        b = minimize(init_ramp(grid), ps, cfg)
        if refine:
            b = birkhoff_refine(b, ps, cfg)
        info = interface_extract(b.field, level)
        bundles.append(b)
        rep.Ns.append(float(N))
        rep.thickness.append(info.thickness)
        rep.confinement.append(info.confinement)
        rep.energies.append(b.energy.total / float(N))
    return bundles, rep
