"""Double-well potentials F(xi, u) with a lattice-periodic modulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("quartic", "power_d", "indicator")


@dataclass(frozen=True)
class ModulationSpec:
    """value(z) = mean + amplitude * prod_j cos(2 pi freq_j z_j)."""

    mean: float = 1.0
    amplitude: float = 0.0
    frequency: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "frequency", tuple(int(f) for f in self.frequency))
        if self.amplitude < 0:
            raise ValueError("modulation amplitude must be >= 0")
        if any(f < 1 for f in self.frequency):
            raise ValueError("modulation frequencies must be positive integers")

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.amplitude == 0.0:
            return np.full(z.shape[:-1], float(self.mean))
        freq = self.frequency or (1,) * z.shape[-1]
        if len(freq) != z.shape[-1]:
            raise ValueError(f"need {z.shape[-1]} frequencies, got {len(freq)}")
        phase = z * np.asarray(freq, dtype=float)
        # reduce to [-1/2, 1/2] first so integer shifts of z cancel exactly
        phase = phase - np.round(phase)
        return self.mean + self.amplitude * np.prod(np.cos(2 * np.pi * phase), axis=-1)

    @property
    def lower(self) -> float:
        return self.mean - self.amplitude

    @property
    def upper(self) -> float:
        return self.mean + self.amplitude


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "quartic"
    d: float = 2.0
    modulation: ModulationSpec = field(default_factory=ModulationSpec)
    ell: float = 0.5
    scale: float = 1.0  # multiplies the modulation (used by the N-scaled functional)
    square_modulation: bool = False  # Q = alpha^2 when the modulation describes alpha

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.d <= 2.0:
            raise ValueError("d must lie in [0, 2]")
        if self.kind == "quartic" and self.d != 2:
            raise ValueError("quartic potential requires d = 2")
        if self.kind == "indicator" and self.d != 0:
            raise ValueError("indicator potential requires d = 0")
        if self.kind == "power_d" and not 0.0 < self.d < 2.0:
            raise ValueError("power_d potential requires d in (0, 2)")
        if not 0.0 < self.ell < 1.0:
            raise ValueError("ell must lie in (0, 1)")

    @property
    def differentiable(self) -> bool:
        return self.kind != "indicator"

    def weight(self, z) -> np.ndarray:
        q = self.modulation.value(z)
        if self.square_modulation:
            q = q * q
        return self.scale * q


def _check_range(u, strict: bool) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    bad = np.abs(u) >= 1.0 if strict else np.abs(u) > 1.0
    if np.any(bad):
        raise ValueError("potential arguments must satisfy |u| " + ("< 1" if strict else "<= 1"))
    return u


def well(spec: PotentialSpec, u) -> np.ndarray:
    """The u-dependence of F with unit modulation."""
    u = np.asarray(u, dtype=float)
    if spec.kind == "quartic":
        return (1.0 - u * u) ** 2
    if spec.kind == "power_d":
        return np.clip(1.0 - u * u, 0.0, None) ** spec.d
    return (np.abs(u) < 1.0).astype(float)


def well_deriv(spec: PotentialSpec, u) -> np.ndarray:
    """d/du of :func:`well`; zero where |u| = 1 (the box projection takes over there)."""
    if spec.kind == "indicator":
        raise ValueError("indicator potential has no u-derivative")
    u = np.asarray(u, dtype=float)
    if spec.kind == "quartic":
        return -4.0 * u * (1.0 - u * u)
    s = 1.0 - u * u
    out = np.zeros_like(u)
    inside = s > 0
    out[inside] = -2.0 * spec.d * u[inside] * s[inside] ** (spec.d - 1.0)
    return out


def potential_eval(spec: PotentialSpec, z, u) -> np.ndarray:
    """F(xi, u); only the horizontal part ``z`` of xi enters the modulation."""
    u = _check_range(u, strict=False)
    return spec.weight(z) * well(spec, u)


def potential_deriv(spec: PotentialSpec, z, u) -> np.ndarray:
    if spec.kind == "indicator":
        raise ValueError("indicator potential has no u-derivative")
    u = _check_range(u, strict=True)
    return spec.weight(z) * well_deriv(spec, u)


@dataclass
class StructuralReport:
    passed: bool
    checks: dict
    witnesses: dict
    constants: dict

    def failures(self) -> list:
        return [name for name, ok in self.checks.items() if not ok]


def structural_check(spec: PotentialSpec, us, zs, seed: int = 0) -> StructuralReport:
    """Certify the structural assumptions on sample grids of ``u`` and ``z``.

    Constants in the growth and slope conditions are reported as measured
    infima and must be positive.
    """
    us = np.asarray(us, dtype=float).ravel()
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if us.size == 0 or zs.size == 0:
        raise ValueError("sample sets must be nonempty")
    checks, witnesses, constants = {}, {}, {}

    q = spec.weight(zs)
    checks["modulation_positive"] = bool(np.all(q > 0)) and spec.modulation.lower > 0
    if not checks["modulation_positive"]:
        witnesses["modulation_positive"] = float(min(q.min(), spec.scale * spec.modulation.lower))

    U, Qg = np.meshgrid(np.clip(us, -1, 1), q, indexing="ij")
    F = Qg * well(spec, U)
    checks["nonnegative"] = bool(np.all(F >= 0))
    upper = spec.scale * spec.modulation.upper ** (2 if spec.square_modulation else 1)
    checks["bounded"] = bool(np.all(F <= upper * (1 + 1e-12)))
    constants["sup"] = float(F.max())

    ends = q[None, :] * well(spec, np.array([[-1.0], [1.0]]))
    checks["zero_at_wells"] = bool(np.all(ends == 0))
    interior = np.abs(us) < 1
    zero_inside = np.any(F[interior] <= 0, axis=-1) if interior.any() else np.array([])
    checks["zeros_only_at_wells"] = not bool(np.any(zero_inside))
    if not checks["zeros_only_at_wells"]:
        witnesses["zeros_only_at_wells"] = float(us[interior][np.argmax(zero_inside)])

    gammas = {}
    for th in (0.0, 0.5, 0.9):
        mask = np.abs(us) <= th
        if not mask.any():
            mask = np.abs(us) == np.abs(us).min()
        gammas[th] = float(F[mask].min())
    constants["gamma"] = gammas
    checks["gamma_positive"] = all(g > 0 for g in gammas.values())
    vals = [gammas[th] for th in sorted(gammas)]
    checks["gamma_monotone"] = all(a >= b for a, b in zip(vals, vals[1:]))

    band = (np.abs(us) > spec.ell) & (np.abs(us) < 1)
    if band.any():
        gap = (1.0 - np.abs(us[band]))[:, None]
        growth = F[band] / gap ** spec.d
        constants["growth"] = float(growth.min())
        checks["growth"] = constants["growth"] > 0
    else:
        checks["growth"] = False
        witnesses["growth"] = "no samples with |u| in (ell, 1)"

    if spec.differentiable:
        s = np.abs(us[(np.abs(us) < 1) & (1 - np.abs(us) < spec.ell)])
        s = np.unique(1.0 - s)
        if s.size:
            lo = potential_deriv(spec, zs[None, :, :], (-1.0 + s)[:, None])
            hi = potential_deriv(spec, zs[None, :, :], (1.0 - s)[:, None])
            ratio_lo = lo / s[:, None] ** (spec.d - 1)
            ratio_hi = -hi / s[:, None] ** (spec.d - 1)
            constants["slope"] = float(min(ratio_lo.min(), ratio_hi.min()))
            checks["slope_sign"] = constants["slope"] > 0
        else:
            checks["slope_sign"] = False
            witnesses["slope_sign"] = "no samples within ell of the wells"
        if spec.d == 2 and s.size > 1:
            # F_u increasing near the wells
            order = np.argsort(s)
            hi_side = potential_deriv(spec, zs[None, :, :], (1.0 - s[order])[:, None])
            lo_side = potential_deriv(spec, zs[None, :, :], (-1.0 + s[order])[:, None])
            near = s[order] < min(spec.ell, 0.2)
            inc_hi = np.all(np.diff(hi_side[near], axis=0) <= 1e-14) if near.sum() > 1 else True
            inc_lo = np.all(np.diff(lo_side[near], axis=0) >= -1e-14) if near.sum() > 1 else True
            checks["deriv_increasing_near_wells"] = bool(inc_hi and inc_lo)

    rng = np.random.default_rng(seed)
    shifts = rng.integers(-50, 51, size=zs.shape)
    period_err = float(np.max(np.abs(spec.weight(zs + shifts) - q)))
    constants["period_error"] = period_err
    checks["lattice_periodic"] = period_err <= 1e-12

    return StructuralReport(all(checks.values()), checks, witnesses, constants)
