"""Discrete horizontal Dirichlet energy, potential term and Euler-Lagrange field.

Horizontal derivatives are taken along characteristics: the difference
quotient along a lattice direction ``b`` is

    (u((h b, 0) o xi) - u(xi)) / h

which is exact for the horizontal field generated by ``b``.  The image of a
node generally falls between two vertical nodes; its squared difference is
split between both with the interpolation weights (a convex split, so the
energy stays a sum of squared node differences with nonnegative weights).
Such an energy is submodular and its quadratic part is an M-matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .cell_grid import PAD_HI, PAD_LO, Field, Grid, ball_multiplicity
from .heis_core import GroupContext, GroupPoint, KoranyiBall, im_pairing
from .potential import PotentialSpec, well, well_deriv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    potential: float
    total: float
    region: Optional[KoranyiBall] = None

    @classmethod
    def of(cls, dirichlet: float, potential: float, region=None) -> "EnergyBreakdown":
        return cls(float(dirichlet), float(potential), float(dirichlet) + float(potential), region)


class DifferenceOperator:
    """Weighted edge-difference matrix ``G`` acting on ``(u, -1, +1)``.

    Row ``e`` of ``G`` is ``sqrt(w_e) (e_tgt - e_src)`` so the Dirichlet
    energy is ``|G u_ext|^2``.  The two trailing columns hold the constant
    pads beyond the slab.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        N = grid.size
        self.N = N
        src_all, tgt_all, w_all = [], [], []
        directions = [(grid.ds[j], grid.trans[j]) for j in range(len(grid.ns))]
        directions.append((grid.da, grid.omega_hat))
        nodes = np.arange(N)
        for h, b in directions:
            coef = grid.cell_weight / (h * h * float(b @ b))
            lower, upper, frac = grid.translation_map(h * b, exact=False)
            for tgt, lam in ((lower.ravel(), 1.0 - frac.ravel()), (upper.ravel(), frac.ravel())):
                keep = lam > 0
                src_all.append(nodes[keep])
                tgt_all.append(tgt[keep])
                w_all.append(coef * lam[keep])
            if h == grid.da:
                # ghost edges entering the slab from the lower pad
                lo2, up2, fr2 = grid.translation_map(-h * b, exact=False)
                for tgt, lam in ((lo2.ravel(), 1.0 - fr2.ravel()), (up2.ravel(), fr2.ravel())):
                    keep = (lam > 0) & (tgt == PAD_LO)
                    src_all.append(np.full(keep.sum(), PAD_LO))
                    tgt_all.append(nodes[keep])
                    w_all.append(coef * lam[keep])
        src = np.concatenate(src_all)
        tgt = np.concatenate(tgt_all)
        w = np.concatenate(w_all)
        src = self._ext(src)
        tgt = self._ext(tgt)
        E = src.size
        rows = np.concatenate([np.arange(E), np.arange(E)])
        cols = np.concatenate([tgt, src])
        sq = np.sqrt(w)
        vals = np.concatenate([sq, -sq])
        self.G = sp.csr_matrix((vals, (rows, cols)), shape=(E, N + 2))
        self.GT = self.G.T.tocsr()
        self.src = src
        self.tgt = tgt
        self.edge_weight = w
        # energy of each edge is charged to its interior endpoint (source unless padded)
        self.owner = np.where(src < N, src, tgt)
        logger.debug("difference operator: %d edges on %d nodes", E, N)

    def _ext(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        out = idx.copy()
        out[idx == PAD_LO] = self.N
        out[idx == PAD_HI] = self.N + 1
        return out

    def extend(self, values, pads=(-1.0, 1.0)) -> np.ndarray:
        return np.concatenate([np.asarray(values, dtype=float).ravel(), pads])

    def apply(self, values, pads=(-1.0, 1.0)) -> np.ndarray:
        """Weighted edge differences ``G u_ext``."""
        return self.G @ self.extend(values, pads)

    def adjoint(self, edges) -> np.ndarray:
        """``G^T e`` restricted to interior nodes."""
        return (self.GT @ edges)[: self.N]


def operator(grid: Grid) -> DifferenceOperator:
    op = grid.__dict__.get("_difference_operator")
    if op is None:
        op = DifferenceOperator(grid)
        grid.__dict__["_difference_operator"] = op
    return op


def modulation_on(grid: Grid, spec: PotentialSpec) -> np.ndarray:
    cache = grid.__dict__.setdefault("_modulation_cache", {})
    key = (spec.modulation, spec.scale, spec.square_modulation)
    if key not in cache:
        cache[key] = spec.weight(grid.node_z)
    return cache[key]


def _check_field(field: Field) -> np.ndarray:
    u = field.values
    if np.any(np.abs(u) > 1.0):
        raise ValueError("field values must satisfy |u| <= 1")
    return u


def dirichlet_density(field: Field) -> np.ndarray:
    """Nodal Dirichlet energy (already multiplied by the quadrature weight)."""
    op = operator(field.grid)
    d = op.apply(field.values)
    dens = np.bincount(op.owner, weights=d * d, minlength=op.N + 2)[: op.N]
    return dens.reshape(field.grid.shape)


def potential_density(field: Field, spec: PotentialSpec) -> np.ndarray:
    u = _check_field(field)
    return field.grid.cell_weight * modulation_on(field.grid, spec) * well(spec, u)


def energy_total(field: Field, spec: PotentialSpec) -> EnergyBreakdown:
    _check_field(field)
    d = operator(field.grid).apply(field.values)
    return EnergyBreakdown.of(float(d @ d), float(potential_density(field, spec).sum()))


def energy_and_gradient(field: Field, spec: PotentialSpec, potential_term: bool = True):
    """Energy breakdown and the raw derivative dE/du (not divided by weights)."""
    u = _check_field(field)
    op = operator(field.grid)
    d = op.apply(u)
    grad = 2.0 * op.adjoint(d)
    pot = potential_density(field, spec)
    if potential_term:
        grad = grad + field.grid.cell_weight * potential_deriv_clamped(spec, field.grid, u).ravel()
    return EnergyBreakdown.of(float(d @ d), float(pot.sum())), grad.reshape(field.grid.shape)


def potential_deriv_clamped(spec: PotentialSpec, grid: Grid, u) -> np.ndarray:
    """F_u on the grid; zero at |u| = 1 where the box constraint is active."""
    return modulation_on(grid, spec) * well_deriv(spec, u)


def kohn_laplacian(field: Field, pads=(-1.0, 1.0)) -> Field:
    """Discrete Kohn Laplacian ``-(1/w) G^T G u``; the pads enter as boundary data."""
    op = operator(field.grid)
    lap = -op.adjoint(op.apply(field.values, pads)) / field.grid.cell_weight
    return Field(field.grid, lap)


def el_gradient(field: Field, spec: PotentialSpec) -> Field:
    """Nodewise first variation ``-2 Lap_H u + F_u``."""
    if not spec.differentiable:
        raise ValueError("indicator potential has no Euler-Lagrange field")
    _, grad = energy_and_gradient(field, spec)
    return Field(field.grid, grad / field.grid.cell_weight)


def horizontal_gradient_field(field: Field) -> np.ndarray:
    """Centred characteristic differences; returns an array of shape ``grid.shape + (2n,)``.

    The image of a node under ``(+-h b, 0)`` is read by linear interpolation
    between the two bracketing vertical nodes.
    """
    grid = field.grid
    directions = [(grid.ds[j], grid.trans[j]) for j in range(len(grid.ns))]
    directions.append((grid.da, grid.omega_hat))
    out = np.zeros(grid.shape + (2 * grid.n,))
    for h, b in directions:
        vals = []
        for sgn in (1, -1):
            lower, upper, frac = grid.translation_map(sgn * h * b, exact=False)
            vals.append((1.0 - frac) * field.padded_read(lower) + frac * field.padded_read(upper))
        deriv = (vals[0] - vals[1]) / (2.0 * h)
        out += deriv[..., None] * (b / float(b @ b))
    return out


def horizontal_gradient(field: Field, node) -> np.ndarray:
    """(X_1 u, .., X_n u, Y_1 u, .., Y_n u) at one node."""
    return horizontal_gradient_field(field)[tuple(node)]


def energy_in_ball(field: Field, spec: PotentialSpec, ball: KoranyiBall) -> EnergyBreakdown:
    """Energy over a Koranyi ball of the periodic extension (node-membership quadrature)."""
    mult = ball_multiplicity(field.grid, ball.center, ball.radius)
    if not mult.any():
        return EnergyBreakdown.of(0.0, 0.0, ball)
    dir_d = dirichlet_density(field)
    pot_d = potential_density(field, spec)
    return EnergyBreakdown.of(float(np.sum(mult * dir_d)), float(np.sum(mult * pot_d)), ball)


# ---------------------------------------------------------------------------
# radial cross-check


@dataclass(frozen=True)
class RadialFunction:
    """v(rho) with its first two derivatives."""

    v: Callable[[float], float]
    dv: Callable[[float], float]
    d2v: Callable[[float], float]

    @classmethod
    def power(cls, m: float) -> "RadialFunction":
        return cls(
            lambda r: r ** m,
            lambda r: m * r ** (m - 1),
            lambda r: m * (m - 1) * r ** (m - 2) if m != 1 else 0.0 * r,
        )

    @classmethod
    def constant(cls, c: float = 1.0) -> "RadialFunction":
        return cls(lambda r: c + 0.0 * r, lambda r: 0.0 * r, lambda r: 0.0 * r)


def kohn_laplacian_radial_check(vfun: RadialFunction, xi: GroupPoint, h: float):
    """(closed-form, finite-difference) values of the Kohn Laplacian of v(rho) at ``xi``.

    The finite difference uses second differences along the flows of the
    horizontal fields, ``v((+-h e, 0) o xi)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    z = np.asarray(xi.z, dtype=float)
    ctx = GroupContext(xi.n)
    r2 = float(z @ z)
    rho = (r2 * r2 + xi.t ** 2) ** 0.25
    if rho == 0.0:
        raise ValueError("radial formula is singular at rho = 0")
    Q = ctx.hom_dim
    exact = (r2 / rho ** 2) * (vfun.d2v(rho) + (Q - 1) / rho * vfun.dv(rho))

    def v_at(zz, tt):
        q = float(zz @ zz)
        return vfun.v((q * q + tt * tt) ** 0.25)

    centre = v_at(z, xi.t)
    total = 0.0
    for e in np.eye(2 * xi.n):
        fwd = v_at(z + h * e, xi.t + 2.0 * float(im_pairing(h * e, z)))
        bwd = v_at(z - h * e, xi.t - 2.0 * float(im_pairing(h * e, z)))
        total += (fwd - 2.0 * centre + bwd) / (h * h)
    return float(exact), float(total)
