"""Discretised fundamental cell with exact twisted-periodic wrapping.

Nodes carry indices ``(i_1, ..., i_{2n-1}, i_a, i_tau)`` and sit at

    z   = sum_j s_j p k^j + a omega_hat
    t   = tau + zeta(z)

with ``s_j`` on a uniform grid of [-1/2, 1/2), ``a`` at cell centres of
[-L, L] and ``tau`` on a uniform grid of [-p Theta, p Theta).  A left
translation by a lattice vector moves ``tau`` by an amount that only
depends on ``z``; grids are built so that every wrap across a transverse
face moves ``tau`` by a whole number of steps.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .heis_core import GroupPoint, IntegerBase, im_pairing

logger = logging.getLogger(__name__)

SNAP = 1e-7  # index values this close to an integer are treated as exact
PAD_LO = -1  # flat-index code for reads below a = -L
PAD_HI = -2  # flat-index code for reads above a = +L


class IncommensurateError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    base: IntegerBase
    M: float = 10.0
    L: float = 14.0
    p: int = 1
    delta: float = 0.1

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError("p must be a positive integer")
        if not 0.0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not self.L > self.M:
            raise ValueError(f"L={self.L} must exceed M={self.M}")

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def half_period(self) -> float:
        return float(self.p * self.base.theta)


class Grid:
    """Immutable node lattice over the cell ``S_omega^p``."""

    def __init__(self, spec: CellSpec, ns: Sequence[int], na: int, nt: int, da: float):
        self.spec = spec
        self.base = spec.base
        self.n = spec.n
        self.p = spec.p
        self.ns = tuple(int(v) for v in ns)
        self.na = int(na)
        self.nt = int(nt)
        self.da = float(da)
        self.L = self.na * self.da / 2.0
        self.ds = tuple(1.0 / v for v in self.ns)
        self.period = 2.0 * spec.half_period
        self.dtau = self.period / self.nt
        self.shape = self.ns + (self.na, self.nt)
        self.size = int(np.prod(self.shape))

        K = self.base.k_matrix
        self.kvec = K  # rows k^1..k^{2n}
        self.knorm2 = np.sum(K * K, axis=1)
        self.omega_hat = self.base.omega_hat
        self.trans = self.p * K[:-1]  # transverse generators p k^j
        self.trans_len = np.linalg.norm(self.trans, axis=1)
        self.theta_last = np.array(
            [self.base.pairing(len(K) - 1, j) for j in range(len(K))], dtype=float
        )

        self.s_axes = [-0.5 + np.arange(m) / m for m in self.ns]
        self.a_axis = -self.L + (np.arange(self.na) + 0.5) * self.da
        self.tau_axis = -spec.half_period + np.arange(self.nt) * self.dtau
        self.cell_weight = (
            self.dtau * self.da * float(np.prod([h * ln for h, ln in zip(self.ds, self.trans_len)]))
        )

    # -- geometry ---------------------------------------------------------

    def __repr__(self):
        return f"Grid(n={self.n}, shape={self.shape}, da={self.da:.6g}, L={self.L:.6g})"

    @property
    def volume(self) -> float:
        return self.cell_weight * self.size

    @property
    def cross_section(self) -> float:
        """Measure of the cell transverse to omega: transverse area times vertical period."""
        return float(np.prod(self.trans_len)) * self.period

    def kcoords(self, z):
        """Coordinates of ``z`` in the (unscaled) integer base."""
        return np.asarray(z, dtype=float) @ self.kvec.T / self.knorm2

    def zeta(self, z):
        c = self.kcoords(z)
        return 2.0 * c[..., -1] * np.sum(c[..., :-1] * self.theta_last[:-1], axis=-1)

    def z_of(self, s, a):
        """Horizontal point for transverse parameters ``s`` (..., 2n-1) and slab coordinate ``a``."""
        s = np.asarray(s, dtype=float)
        return s @ self.trans + np.asarray(a, dtype=float)[..., None] * self.omega_hat

    @cached_property
    def index_grids(self):
        return np.meshgrid(*[np.arange(m) for m in self.shape], indexing="ij")

    @cached_property
    def node_s(self) -> np.ndarray:
        idx = self.index_grids
        return np.stack([self.s_axes[j][idx[j]] for j in range(len(self.ns))], axis=-1)

    @cached_property
    def node_a(self) -> np.ndarray:
        return self.a_axis[self.index_grids[-2]]

    @cached_property
    def node_tau(self) -> np.ndarray:
        return self.tau_axis[self.index_grids[-1]]

    @cached_property
    def node_z(self) -> np.ndarray:
        return self.z_of(self.node_s, self.node_a)

    @cached_property
    def node_t(self) -> np.ndarray:
        return self.node_tau + self.zeta(self.node_z)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.shape, self.cell_weight)

    def constraint_bounds(self, M: float | None = None, delta: float | None = None):
        """Box bounds (lower, upper) defining the constrained class."""
        M = self.spec.M if M is None else M
        delta = self.spec.delta if delta is None else delta
        lo = np.full(self.shape, -1.0)
        hi = np.full(self.shape, 1.0)
        lo[self.node_a >= M] = 1.0 - delta
        hi[self.node_a <= -M] = -1.0 + delta
        return lo, hi

    # -- group action on indices -------------------------------------------

    def tau_offset(self, z, V):
        """Change of the sheared coordinate under the left translation by (V, 0)."""
        V = np.asarray(V, dtype=float)
        return self.zeta(z) + 2.0 * im_pairing(V, z) - self.zeta(z + V)

    def land(self, z, t, snap: bool = True):
        """Reduce points into the cell.

        Returns ``(s_idx, a_idx, tau_idx)``: integer transverse indices,
        fractional slab index (unreduced; may lie outside [0, na)) and
        fractional vertical index reduced to [0, nt).
        With ``snap`` the transverse index is rounded (exact lattice moves);
        otherwise the nearest node is used.
        """
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        c = self.kcoords(z)[..., :-1] / self.p
        raw = (c + 0.5) * np.asarray(self.ns, dtype=float)
        if snap:
            near = np.rint(raw)
            if np.any(np.abs(raw - near) > SNAP):
                raise IncommensurateError("transverse landing point is off the node lattice")
            sidx = near.astype(np.int64)
        else:
            sidx = np.floor(raw + 0.5).astype(np.int64)
        ns = np.asarray(self.ns)
        wraps = np.floor_divide(sidx, ns)
        sidx = sidx - wraps * ns
        Km = wraps.astype(float) @ self.trans
        zr = z - Km
        tr = t - 2.0 * im_pairing(Km, z)
        tau = tr - self.zeta(zr)
        tau_idx = np.mod((tau + self.spec.half_period) / self.dtau, self.nt)
        a = z @ self.omega_hat
        a_idx = (a + self.L) / self.da - 0.5
        return sidx, a_idx, tau_idx

    def flat(self, sidx, aidx, tidx):
        """Flat node index; ``aidx`` outside [0, na) maps to PAD_LO / PAD_HI."""
        sidx = np.asarray(sidx)
        aidx = np.asarray(aidx, dtype=np.int64)
        tidx = np.mod(np.asarray(tidx, dtype=np.int64), self.nt)
        inside = (aidx >= 0) & (aidx < self.na)
        parts = [sidx[..., j] for j in range(sidx.shape[-1])]
        out = np.ravel_multi_index(parts + [np.clip(aidx, 0, self.na - 1), tidx], self.shape)
        out = np.where(inside, out, np.where(aidx < 0, PAD_LO, PAD_HI))
        return out

    def translation_map(self, V, exact: bool = True):
        """Where each node goes under the left translation by (V, 0).

        Returns ``(lower, upper, frac)``: flat indices of the two vertical
        neighbours bracketing the image and the fractional offset in [0, 1)
        towards ``upper``.  With ``exact`` every offset must be a whole number
        of steps.
        """
        V = np.asarray(V, dtype=float)
        z = self.node_z
        z1 = z + V
        sidx, a_idx, _ = self.land(z1, self.node_t, snap=True)
        ai = np.rint(a_idx)
        if np.any(np.abs(a_idx - ai) > SNAP):
            raise IncommensurateError(
                f"slab shift {float(V @ self.omega_hat):.6g} is not a multiple of da={self.da:.6g}"
            )
        # vertical move in index units, computed from z only so every tau-row agrees
        c = self.kcoords(z1)[..., :-1] / self.p
        wraps = np.floor_divide(
            np.rint((c + 0.5) * np.asarray(self.ns, dtype=float)).astype(np.int64),
            np.asarray(self.ns),
        )
        Km = wraps.astype(float) @ self.trans
        shift = (self.tau_offset(z, V) + self.tau_offset(z1, -Km)) / self.dtau
        whole = np.floor(shift)
        frac = shift - whole
        up = frac > 1.0 - SNAP
        whole = np.where(up, whole + 1, whole)
        frac = np.where(up | (frac < SNAP), 0.0, frac)
        if exact and np.any(frac != 0.0):
            raise IncommensurateError(
                f"vertical twist is not a whole number of steps (max remainder {frac.max():.3g})"
            )
        lo_t = self.index_grids[-1] + whole.astype(np.int64)
        ai = ai.astype(np.int64)
        lower = self.flat(sidx, ai, lo_t)
        upper = self.flat(sidx, ai, lo_t + 1)
        return lower, upper, frac

    def char_step(self, j: int, direction: int = 1):
        """Target map for one grid step along the characteristic of generator ``j``.

        This is the left translation by ``(+-ds_j p k^j, 0)``; it generally
        lands between vertical nodes, so ``(target, frac)`` is returned as in
        :meth:`translation_map`.
        """
        if not 0 <= j < len(self.ns):
            raise IndexError(f"transverse direction {j} out of range")
        return self.translation_map(direction * self.ds[j] * self.trans[j], exact=False)

    def coord_step_map(self, j: int, direction: int = 1) -> np.ndarray:
        """Flat map to the coordinate neighbour ``s_j +- ds_j`` at fixed ``(a, tau)``.

        Inside the cell this only moves the transverse index; a node stepped
        past a face is carried back by ``(-+p k^j, 0)``, which shifts ``tau``
        by a whole number of steps on a commensurate grid.
        """
        if not 0 <= j < len(self.ns):
            raise IndexError(f"transverse direction {j} out of range")
        s = self.node_s.copy()
        s[..., j] += direction * self.ds[j]
        zv = self.z_of(s, self.node_a)
        tv = self.node_tau + self.zeta(zv)
        sidx, a_idx, tau_idx = self.land(zv, tv, snap=True)
        ti = np.rint(tau_idx)
        if np.any(np.abs(tau_idx - ti) > SNAP * self.nt):
            raise IncommensurateError("transverse wrap twist is not a whole number of tau steps")
        return self.flat(sidx, np.rint(a_idx).astype(np.int64), ti.astype(np.int64) % self.nt)

    def wrap_twist(self, j: int) -> np.ndarray:
        """Tau shift (in steps) picked up by a +1 wrap across face ``j``, per a-column."""
        a = self.a_axis
        z_hi = self.z_of(np.full((a.size, len(self.ns)), 0.0), a)
        z_hi = z_hi + 0.5 * self.trans[j]
        z_lo = z_hi - self.trans[j]
        shift = self.zeta(z_hi) - 2.0 * im_pairing(self.trans[j], z_hi) - self.zeta(z_lo)
        return shift / self.dtau

    def wrap_index(self, node, j: int, direction: int = 1):
        """Node reached from ``node`` by one coordinate step along generator ``j``."""
        target = self.coord_step_map(j, direction)
        flat_node = np.ravel_multi_index(tuple(node), self.shape)
        return tuple(int(v) for v in np.unravel_index(int(target.ravel()[flat_node]), self.shape))

    # -- point lookup ---------------------------------------------------------

    def lookup(self, z, t):
        """Nearest-node flat indices for arbitrary points (pads coded as PAD_LO / PAD_HI)."""
        sidx, a_idx, tau_idx = self.land(z, t, snap=False)
        ai = np.floor(a_idx + 0.5).astype(np.int64)
        ti = np.floor(tau_idx + 0.5).astype(np.int64)
        return self.flat(sidx, ai, ti)


def twist_quantum(spec: CellSpec, nt: int, na: int) -> float:
    """Smallest slab spacing for which every transverse wrap shifts tau by whole steps.

    The quantum is taken for single lattice steps ``k^j`` rather than the
    cell generators ``p k^j``, so translations by ``k^j`` stay exact on
    enlarged cells too.
    """
    base = spec.base
    last = len(base.k) - 1
    vals = [abs(base.pairing(last, j)) for j in range(last) if base.pairing(last, j) != 0]
    if not vals:
        return 0.0
    g = math.gcd(*vals)
    knorm = float(np.linalg.norm(np.array(base.k[-1], dtype=float)))
    dtau = 2.0 * spec.half_period / nt
    fac = 2.0 if na % 2 == 0 else 1.0
    return fac * knorm * dtau / (4.0 * g)


def _commensurate_da(spec: CellSpec, nt: int, da_target: float) -> float:
    knorm = float(np.linalg.norm(np.array(spec.base.k[-1], dtype=float)))
    q = twist_quantum(spec, nt, 2)
    if q == 0.0:
        return float(da_target)
    steps = max(1, int(round(1.0 / knorm / q)))
    divisors = [d for d in range(1, steps + 1) if steps % d == 0]
    return min((d * q for d in divisors), key=lambda v: abs(np.log(v / da_target)))


def commensurate_resolution(spec: CellSpec, ns, da_target: float, nt: int) -> tuple:
    """Resolutions ``(*ns, N_a, nt)`` for a slab spacing that needs no snapping.

    ``da`` is the multiple of the twist quantum closest to ``da_target`` for
    which a unit lattice step along omega is a whole number of nodes, and
    ``N_a`` the smallest even count covering [-L, L].
    """
    ns = tuple(int(v) for v in np.atleast_1d(ns))
    da = _commensurate_da(spec, nt, da_target)
    na = int(np.ceil(2.0 * spec.L / da - 1e-9))
    na += na % 2
    return ns + (na, int(nt))


def commensurate_grid(spec: CellSpec, ns, da_target: float, nt: int) -> Grid:
    """Grid from :func:`commensurate_resolution` carrying its exact spacing (half-extent >= L)."""
    res = commensurate_resolution(spec, ns, da_target, nt)
    return make_grid(spec, res, da=_commensurate_da(spec, nt, da_target))


def make_grid(spec: CellSpec, resolutions, lattice_shift: bool = True, da: float | None = None) -> Grid:
    """Build a commensurate grid.

    ``resolutions`` is ``(N_s, N_a, N_tau)`` or ``(N_s1, ..., N_s(2n-1), N_a, N_tau)``.
    The slab spacing ``da = 2L/N_a`` is snapped to the nearest multiple of
    :func:`twist_quantum` (preferring values for which a unit lattice step
    along omega is a whole number of nodes when ``lattice_shift``); the
    request fails if that moves ``da`` by more than 5%.  An explicit ``da``
    must itself be a multiple of the quantum and is used as given.
    """
    res = [int(r) for r in resolutions]
    n = spec.n
    if len(res) == 3 and n > 1:
        res = [res[0]] * (2 * n - 1) + res[1:]
    if len(res) != 2 * n + 1:
        raise ValueError(f"expected {2 * n + 1} resolutions, got {len(res)}")
    if min(res) < 8:
        raise ValueError("every resolution must be at least 8")
    ns, na, nt = res[:-2], res[-2], res[-1]
    da_req = 2.0 * spec.L / na
    q = twist_quantum(spec, nt, na)
    if da is not None:
        if q and abs(da / q - round(da / q)) > 1e-9:
            raise IncommensurateError(f"da={da:.6g} is not a multiple of the twist quantum {q:.6g}")
    elif q == 0.0:
        da = da_req
    else:
        a_unit = 1.0 / float(np.linalg.norm(np.array(spec.base.k[-1], dtype=float)))
        kappa0 = max(1, int(round(da_req / q)))
        candidates = sorted({max(1, kappa0 + d) for d in range(-kappa0, kappa0 + 1)},
                            key=lambda k: abs(k * q - da_req))
        chosen = None
        if lattice_shift:
            for kap in candidates:
                ratio = a_unit / (kap * q)
                if abs(ratio - round(ratio)) < 1e-9 and abs(kap * q - da_req) <= 0.05 * da_req:
                    chosen = kap
                    break
        if chosen is None:
            chosen = candidates[0]
        da = chosen * q
        if abs(da - da_req) > 0.05 * da_req:
            raise IncommensurateError(
                f"no commensurate slab spacing within 5% of {da_req:.6g} (quantum {q:.6g}); "
                "raise N_tau or change N_a"
            )
    grid = Grid(spec, ns, na, nt, da)
    if grid.L <= spec.M:
        raise ValueError(f"adjusted half-extent L={grid.L:.6g} no longer exceeds M={spec.M}")
    for j in range(len(ns)):
        for sgn in (1, -1):
            grid.coord_step_map(j, sgn)
    logger.debug("built %r", grid)
    return grid


@dataclass
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            self.values = self.values.reshape(self.grid.shape)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def padded_read(self, target: np.ndarray) -> np.ndarray:
        """Values at flat targets, with the constant pads -1 / +1 outside the slab."""
        flat = self.values.ravel()
        out = flat[np.clip(target, 0, None)]
        out = np.where(target == PAD_LO, -1.0, out)
        return np.where(target == PAD_HI, 1.0, out)


def vertical_shift(field: Field, j: float) -> Field:
    """u(z, t + 2j) re-indexed on the grid (tau is the fastest index)."""
    grid = field.grid
    steps = 2.0 * j / grid.dtau
    k = int(round(steps))
    if abs(steps - k) > SNAP:
        raise IncommensurateError(f"vertical shift 2*{j} is not a multiple of dtau={grid.dtau:.6g}")
    return Field(grid, np.roll(field.values, -k, axis=-1))


def lattice_vector_map(grid: Grid, k, exact: bool = True):
    """Index data for T_k, k an integer 2n-vector: ``(lower, upper, frac)``.

    The transverse and slab parts of the move must land on nodes.  With
    ``exact`` the vertical part must too; otherwise reads are interpolated
    linearly in tau (exact for fields that do not depend on tau).
    """
    k = np.asarray(k, dtype=float)
    if k.shape != (2 * grid.n,):
        raise ValueError(f"lattice vector must have length {2 * grid.n}")
    if np.any(k != np.rint(k)):
        raise ValueError("lattice vectors must have integer entries")
    return grid.translation_map(k, exact=exact)


def read_translated(field: Field, maps) -> np.ndarray:
    lower, upper, frac = maps
    out = field.padded_read(lower)
    if np.any(frac):
        out = (1.0 - frac) * out + frac * field.padded_read(upper)
    return out


def translate_field(field: Field, k, exact: bool = True) -> Field:
    """T_k u(xi) = u((k, 0) o xi), with constant pads beyond the slab."""
    return Field(field.grid, read_translated(field, lattice_vector_map(field.grid, k, exact)))


def ball_multiplicity(grid: Grid, center: GroupPoint, radius: float) -> np.ndarray:
    """Number of periodic images of each node inside a Koranyi ball.

    The field lives on the periodic extension of the cell; summing nodal
    densities times this count integrates over the ball.  Vertical images
    are counted in closed form, transverse images by enumeration.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    z0 = np.asarray(center.z, dtype=float)
    if z0.size != 2 * grid.n:
        raise ValueError("ball centre has the wrong dimension")
    a0 = float(z0 @ grid.omega_hat)
    if a0 - radius < -grid.L or a0 + radius > grid.L:
        raise ValueError(
            f"ball of radius {radius:.6g} at a={a0:.6g} leaves the computational slab |a| <= {grid.L:.6g}"
        )
    z = grid.node_z
    t = grid.node_t
    r4 = radius ** 4
    P = grid.period
    counts = np.zeros(grid.shape, dtype=np.int64)
    s0 = grid.kcoords(z0)[:-1] / grid.p
    ranges = [
        range(int(np.floor(s0[j] - radius / ln - 1)), int(np.ceil(s0[j] + radius / ln + 1)) + 1)
        for j, ln in enumerate(grid.trans_len)
    ]
    for m in itertools.product(*ranges):
        K = np.asarray(m, dtype=float) @ grid.trans
        zi = z + K
        dz = zi - z0
        q = np.sum(dz * dz, axis=-1)
        near = q * q <= r4
        if not near.any():
            continue
        half = np.sqrt(np.clip(r4 - (q * q)[near], 0.0, None))
        base = t[near] + 2.0 * im_pairing(K, z[near]) - center.t - 2.0 * im_pairing(z0, zi[near])
        hi = np.floor((half - base) / P)
        lo = np.ceil((-half - base) / P)
        counts[near] += np.clip(hi - lo + 1, 0, None).astype(np.int64)
    return counts
