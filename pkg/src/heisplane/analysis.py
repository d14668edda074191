"""Diagnostics on computed minimizers: confinement, density growth, monotonicity, interfaces."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .cell_grid import (
    Field,
    Grid,
    IncommensurateError,
    ball_multiplicity,
    lattice_vector_map,
    read_translated,
)
from .energy import dirichlet_density, potential_density
from .heis_core import GroupPoint, KoranyiBall, gauge_arrays, im_pairing
from .potential import PotentialSpec
from .solver import birkhoff_generators, omega_dot, sample_field

logger = logging.getLogger(__name__)


def level_set(field: Field, theta: float) -> np.ndarray:
    """Boolean node mask of {|u| <= theta}."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    return np.abs(field.values) <= theta


@dataclass
class SlabReport:
    theta: float
    width: float
    M0_bound: float
    passed: bool


def slab_width(field: Field, theta: float, M0_bound: float = np.inf) -> SlabReport:
    mask = level_set(field, theta)
    width = float(np.abs(field.grid.node_a[mask]).max()) if mask.any() else 0.0
    return SlabReport(theta, width, M0_bound, width <= M0_bound)


# ---------------------------------------------------------------------------
# density estimates


@dataclass
class ExponentFit:
    slope: float
    half_width: float  # 95% confidence half-width
    intercept: float

    def within(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi


def loglog_fit(radii, values) -> ExponentFit:
    r = np.asarray(radii, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size < 3 or np.any(v <= 0):
        return ExponentFit(float("nan"), float("nan"), float("nan"))
    res = stats.linregress(np.log(r), np.log(v))
    hw = float(stats.t.ppf(0.975, r.size - 2) * res.stderr)
    return ExponentFit(float(res.slope), hw, float(res.intercept))


@dataclass
class DensityReport:
    center: GroupPoint
    radii: list
    ball_energies: list
    suplevel_volumes: list  # {u >= theta}
    sublevel_volumes: list  # {u <= theta}
    band_volumes: list  # {|u| <= theta0}
    ball_volumes: list
    fitted_exponents: dict = dc_field(default_factory=dict)

    def rows(self):
        return list(
            zip(self.radii, self.ball_energies, self.suplevel_volumes, self.sublevel_volumes, self.band_volumes)
        )


def interface_center(field: Field, theta0: float = 0.9) -> GroupPoint:
    """Node with the smallest |u| among those closest to a = 0."""
    u = np.abs(field.values)
    grid = field.grid
    score = u + 1e-9 * np.abs(grid.node_a)
    idx = np.unravel_index(int(np.argmin(score)), grid.shape)
    if u[idx] > theta0:
        raise ValueError("field has no interface node")
    return GroupPoint(tuple(grid.node_z[idx]), float(grid.node_t[idx]))


def density_profile(
    field: Field,
    spec: PotentialSpec,
    center: GroupPoint,
    radii: Sequence[float],
    theta: float = 0.0,
    theta0: float = 0.9,
    check_center: bool = True,
    fit_min_radius: float | None = None,
) -> DensityReport:
    """Ball energies and phase volumes for growing Koranyi balls on the periodic extension."""
    grid = field.grid
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must increase")
    if check_center:
        uc = float(sample_field(field, np.asarray(center.z)[None, :], center.t)[0])
        if abs(uc) > theta0:
            raise ValueError(f"centre is off the interface (|u| = {abs(uc):.3g} > theta0)")
    u = field.values
    dens = dirichlet_density(field) + potential_density(field, spec)
    w = grid.cell_weight
    sup, sub, band = (u >= theta), (u <= theta), (np.abs(u) <= theta0)
    rep = DensityReport(center, radii, [], [], [], [], [])
    for r in radii:
        mult = ball_multiplicity(grid, center, r)
        rep.ball_energies.append(float(np.sum(mult * dens)))
        rep.suplevel_volumes.append(w * float(np.sum(mult[sup])))
        rep.sublevel_volumes.append(w * float(np.sum(mult[sub])))
        rep.band_volumes.append(w * float(np.sum(mult[band])))
        rep.ball_volumes.append(w * float(mult.sum()))
    rmin = fit_min_radius if fit_min_radius is not None else 0.0
    sel = [i for i, r in enumerate(radii) if r >= rmin]
    rr = [radii[i] for i in sel]
    for name in ("ball_energies", "suplevel_volumes", "sublevel_volumes", "band_volumes", "ball_volumes"):
        vals = getattr(rep, name)
        rep.fitted_exponents[name] = loglog_fit(rr, [vals[i] for i in sel])
    return rep


# ---------------------------------------------------------------------------
# rescaling


def _column_crossings(field: Field, level: float) -> np.ndarray:
    """Interpolated slab coordinate of the first upward crossing of ``level`` in each column."""
    grid = field.grid
    u = np.moveaxis(field.values, -2, -1).reshape(-1, grid.na)
    above = u >= level
    first = np.argmax(above, axis=1)
    out = np.full(u.shape[0], np.nan)
    ok = above.any(axis=1) & (first > 0)
    rows = np.nonzero(ok)[0]
    i1 = first[rows]
    u0, u1 = u[rows, i1 - 1], u[rows, i1]
    frac = np.where(u1 != u0, (level - u0) / np.where(u1 != u0, u1 - u0, 1.0), 0.0)
    out[rows] = grid.a_axis[i1 - 1] + frac * grid.da
    return out


def plane_position(field: Field) -> float:
    """Median over columns of the zero crossing (equal-volume median for uniform columns)."""
    cr = _column_crossings(field, 0.0)
    cr = cr[np.isfinite(cr)]
    if cr.size == 0:
        raise ValueError("field has no zero crossing")
    return float(np.median(cr))


def epsilon_rescale_distance(
    field: Field, epsilons: Sequence[float], theta: float = 0.9, window: float = 2.0
) -> list:
    """Sup distance of {|u_eps| <= theta} to the plane {a = eps c*} inside a fixed window.

    u_eps(z, t) = u(z/eps, t/eps^2) maps the node (z, t) to (eps z, eps^2 t),
    so distances along omega_hat scale by eps.
    """
    grid = field.grid
    eps = [float(e) for e in epsilons]
    if any(not 0.0 < e <= 1.0 for e in eps):
        raise ValueError("epsilons must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must decrease")
    cstar = plane_position(field)
    mask = level_set(field, theta)
    a = grid.node_a
    s = grid.node_s
    out = []
    for e in eps:
        reach = window / e
        if reach > grid.L:
            raise ValueError(f"window {window} at eps={e} needs |a| <= {reach:.6g} > L={grid.L:.6g}")
        sel = mask & (np.abs(a) <= reach)
        for j, ln in enumerate(grid.trans_len):
            if reach < 0.5 * ln:
                sel &= np.abs(s[..., j] * ln) <= reach
        out.append(float(e * np.abs(a[sel] - cstar).max()) if sel.any() else 0.0)
    return out


# ---------------------------------------------------------------------------
# monotonicity


@dataclass
class BirkhoffEntry:
    k: tuple
    omega_dot: float
    violation: float  # >= 0; amount by which monotonicity (or periodicity) fails
    worst_node: Optional[tuple]
    worst_a: float
    exact: bool
    sublevel_violations: int


@dataclass
class BirkhoffAudit:
    entries: list
    worst: float
    worst_k: Optional[tuple]
    sublevel_ok: bool
    theta: float

    def passed(self, tol: float = 1e-6) -> bool:
        return self.worst <= tol and self.sublevel_ok


def birkhoff_audit(field: Field, kmax: int = 2, theta: float = 0.0, tol: float = 1e-9) -> BirkhoffAudit:
    """Check T_k u >= u for omega.k > 0 and T_k u == u for omega.k == 0.

    Also checks the sublevel inclusion (-k, 0) o {u < theta} within {u < theta}
    for omega.k >= 0.
    """
    if kmax < 1:
        raise ValueError("kmax must be at least 1")
    grid = field.grid
    u = field.values
    entries = []
    sub = u < theta
    for k in birkhoff_generators(grid, kmax):
        try:
            lattice_vector_map(grid, k, exact=True)
            exact = True
        except IncommensurateError:
            exact = False
        tk = read_translated(field, lattice_vector_map(grid, k, exact=False))
        dot = omega_dot(grid, k)
        diff = tk - u
        if dot > 0:
            viol = np.maximum(-diff, 0.0)
        else:
            viol = np.abs(diff)
        idx = np.unravel_index(int(np.argmax(viol)), grid.shape)
        worst = float(viol[idx])
        neg = tuple(-x for x in k)
        tneg = read_translated(field, lattice_vector_map(grid, neg, exact=False))
        sub_bad = int(np.count_nonzero(sub & (tneg >= theta + tol)))
        entries.append(
            BirkhoffEntry(
                k=tuple(k),
                omega_dot=float(dot),
                violation=worst,
                worst_node=tuple(int(i) for i in idx) if worst > 0 else None,
                worst_a=float(grid.node_a[idx]),
                exact=exact,
                sublevel_violations=sub_bad,
            )
        )
    if entries:
        top = max(entries, key=lambda e: e.violation)
        worst, worst_k = top.violation, top.k
    else:
        worst, worst_k = 0.0, None
    return BirkhoffAudit(entries, worst, worst_k, all(e.sublevel_violations == 0 for e in entries), theta)


# ---------------------------------------------------------------------------
# clean balls and strips


@dataclass
class CleanBallResult:
    ball: Optional[KoranyiBall]
    radius: float
    passed: bool
    r0: float


def _nearest_bad_distance(grid: Grid, centers_z, centers_t, bad_z, bad_t, cap: float) -> np.ndarray:
    """Koranyi distance from each centre to the nearest periodic image of a bad node (capped)."""
    out = np.full(centers_z.shape[0], cap)
    if bad_z.shape[0] == 0:
        return out
    P = grid.period
    reach = cap
    rng_j = [int(np.ceil(reach / ln)) + 1 for ln in grid.trans_len]
    shifts = [np.asarray(m, dtype=float) @ grid.trans for m in itertools.product(*[range(-r, r + 1) for r in rng_j])]
    chunk = max(1, 4_000_000 // max(1, bad_z.shape[0]))
    for start in range(0, centers_z.shape[0], chunk):
        cz = centers_z[start : start + chunk, None, :]
        ct = centers_t[start : start + chunk, None]
        best = np.full(cz.shape[0], cap)
        for K in shifts:
            zi = bad_z + K
            ti = bad_t + 2.0 * im_pairing(K, bad_z)
            dz = zi[None, :, :] - cz
            if np.sqrt(np.min(np.sum(dz * dz, axis=-1))) > cap:
                continue
            dt = ti[None, :] - ct - 2.0 * im_pairing(cz, zi[None, :, :])
            dt = dt - P * np.round(dt / P)
            d = gauge_arrays(dz, dt).min(axis=1)
            best = np.minimum(best, d)
        out[start : start + chunk] = best
    return out


def clean_ball_search(
    field: Field,
    delta: float,
    a_window: float,
    r0: float = 1.0,
    r_min: float = 0.25,
    max_centers: int = 4096,
    batch: int = 128,
) -> CleanBallResult:
    """Largest ball (radius on a 2^(1/4) ladder, centre on a node) inside the clean set.

    The clean set is {|u| > 1 - delta} intersected with the window |a| <= a_window.
    """
    grid = field.grid
    u = field.values
    a = grid.node_a
    inside = np.abs(a) <= a_window
    bad = (np.abs(u) <= 1.0 - delta) & inside
    cand = inside & ~bad
    if not cand.any():
        return CleanBallResult(None, 0.0, False, r0)
    idx = np.flatnonzero(cand.ravel())
    if idx.size > max_centers:
        idx = idx[np.linspace(0, idx.size - 1, max_centers).astype(np.int64)]
    cz = grid.node_z.reshape(-1, 2 * grid.n)[idx]
    ct = grid.node_t.ravel()[idx]
    ca = a.ravel()[idx]
    room = a_window - np.abs(ca)
    bz = grid.node_z[bad]
    bt = grid.node_t[bad]
    # the Koranyi distance dominates the slab-coordinate gap: use it to prune centres
    ba = np.sort(grid.node_a[bad])
    if ba.size:
        pos = np.clip(np.searchsorted(ba, ca), 1, ba.size) - 1
        gap = np.minimum(np.abs(ca - ba[pos]), np.abs(ca - ba[np.minimum(pos + 1, ba.size - 1)]))
    else:
        gap = np.full(ca.size, np.inf)
    upper = np.minimum(gap, room)
    order = np.argsort(-upper)
    lim, best = -1.0, -1
    for start in range(0, order.size, batch):
        sel = order[start : start + batch]
        if upper[sel[0]] <= lim:
            break
        cap = float(upper[sel].max())
        d = _nearest_bad_distance(grid, cz[sel], ct[sel], bz, bt, cap)
        cand_lim = np.minimum(d, room[sel])
        k = int(np.argmax(cand_lim))
        if cand_lim[k] > lim:
            lim, best = float(cand_lim[k]), int(sel[k])
    if lim < r_min:
        return CleanBallResult(None, 0.0, False, r0)
    k = int(np.floor(4.0 * np.log2(lim / r_min) + 1e-12))
    radius = r_min * 2.0 ** (k / 4.0)
    if radius >= lim and k > 0:  # keep the ball strictly inside
        radius = r_min * 2.0 ** ((k - 1) / 4.0)
    ball = KoranyiBall(GroupPoint(tuple(cz[best]), float(ct[best])), radius)
    return CleanBallResult(ball, radius, radius >= r0, r0)


@dataclass
class Strip:
    lam: float
    phase: int  # +1 or -1


def strip_scan(field: Field, delta: float, M: float | None = None) -> list:
    """Centres lambda in [-M/4, M/4] whose strip |a - lambda| <= 1 lies in one pure phase."""
    grid = field.grid
    M = grid.spec.M if M is None else M
    u = np.moveaxis(field.values, -2, 0).reshape(grid.na, -1)
    col_min = u.min(axis=1)
    col_max = u.max(axis=1)
    out = []
    for lam in grid.a_axis[np.abs(grid.a_axis) <= M / 4.0]:
        rows = np.abs(grid.a_axis - lam) <= 1.0 + 1e-12
        if col_min[rows].min() > 1.0 - delta:
            out.append(Strip(float(lam), 1))
        elif col_max[rows].max() < -1.0 + delta:
            out.append(Strip(float(lam), -1))
    return out


@dataclass
class InterfaceInfo:
    mask: np.ndarray
    thickness: float
    confinement: float


def interface_extract(field: Field, level: float = 0.9) -> InterfaceInfo:
    """The band {|u| <= level}, its largest thickness along omega_hat and its slab width."""
    grid = field.grid
    mask = np.abs(field.values) <= level
    if not mask.any():
        return InterfaceInfo(mask, 0.0, 0.0)
    lo = _column_crossings(field, -level)
    hi = _column_crossings(field, level)
    band_cols = np.moveaxis(mask, -2, -1).reshape(-1, grid.na).any(axis=1)
    thick = np.where(band_cols & np.isfinite(lo) & np.isfinite(hi), hi - lo, 0.0)
    conf = float(np.abs(grid.node_a[mask]).max())
    return InterfaceInfo(mask, float(np.max(thick)), conf)
