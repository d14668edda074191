"""Heisenberg group algebra, Koranyi geometry and the integer base of a rational direction.

Points of H^n are stored as ``z`` (length 2n, layout ``x_1..x_n, y_1..y_n``)
plus a vertical coordinate ``t``.  The group law is

    (z, t) o (z', t') = (z + z', t + t' + 2 Im(conj(z) z'))

with ``conj(z) z'`` the complex product summed over the ``n`` components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class GroupContext:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")

    @property
    def hom_dim(self) -> int:
        return 2 * (self.n + 1)

    @property
    def dim(self) -> int:
        return 2 * self.n + 1


@dataclass(frozen=True)
class GroupPoint:
    z: tuple
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        object.__setattr__(self, "t", float(self.t))
        if len(self.z) == 0 or len(self.z) % 2:
            raise ValueError("z must have even positive length 2n")

    @property
    def n(self) -> int:
        return len(self.z) // 2

    @classmethod
    def origin(cls, n: int) -> "GroupPoint":
        return cls((0.0,) * (2 * n), 0.0)

    def as_array(self) -> np.ndarray:
        return np.array(self.z + (self.t,))


@dataclass(frozen=True)
class KoranyiBall:
    center: GroupPoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")


def im_pairing(a, b):
    """Im(conj(a) b) for arrays whose last axis has length 2n (broadcasts)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[-1] // 2
    return np.sum(a[..., :n] * b[..., n:] - a[..., n:] * b[..., :n], axis=-1)


def _check_same(a: GroupPoint, b: GroupPoint) -> None:
    if len(a.z) != len(b.z):
        raise ValueError(f"dimension mismatch: n={a.n} vs n={b.n}")


def group_mul(a: GroupPoint, b: GroupPoint) -> GroupPoint:
    _check_same(a, b)
    za, zb = np.array(a.z), np.array(b.z)
    t = a.t + b.t + 2.0 * float(im_pairing(za, zb))
    return GroupPoint(tuple(za + zb), t)


def group_inv(a: GroupPoint) -> GroupPoint:
    return GroupPoint(tuple(-v for v in a.z), -a.t)


def mul_arrays(z1, t1, z2, t2):
    """Vectorised group law on coordinate arrays; returns ``(z, t)``."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    return z1 + z2, np.asarray(t1) + np.asarray(t2) + 2.0 * im_pairing(z1, z2)


def iterated_action(ks: Sequence[Sequence[float]], xi: GroupPoint) -> GroupPoint:
    """(K_l, 0) o ... o (K_1, 0) o xi via the closed summation formula."""
    z = np.array(xi.z)
    if len(ks) == 0:
        return xi
    K = np.asarray(ks, dtype=float)
    if K.ndim != 2 or K.shape[1] != z.size:
        raise ValueError(f"translation vectors must have length {z.size}")
    im = float(np.sum(im_pairing(K, z)))
    # pairs m < j contribute Im(conj(K_j) K_m)
    partial = np.cumsum(K, axis=0)
    im += float(np.sum(im_pairing(K[1:], partial[:-1])))
    return GroupPoint(tuple(z + K.sum(axis=0)), xi.t + 2.0 * im)


def gauge_arrays(z, t):
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    # normalise by the dilation scale so |z|^4 and t^2 neither underflow nor overflow
    s = np.maximum(np.max(np.abs(z), axis=-1), np.sqrt(np.abs(t)))
    safe = np.where(s > 0, s, 1.0)
    zs = z / safe[..., None]
    ts = t / safe / safe
    r2 = np.sum(zs * zs, axis=-1)
    return np.where(s > 0, s * (r2 * r2 + ts * ts) ** 0.25, 0.0)


def koranyi_gauge(xi: GroupPoint) -> float:
    return float(gauge_arrays(np.array(xi.z), xi.t))


def koranyi_dist(a: GroupPoint, b: GroupPoint) -> float:
    _check_same(a, b)
    return koranyi_gauge(group_mul(group_inv(a), b))


def dist_arrays(center: GroupPoint, z, t):
    """Koranyi distance from ``center`` to each point of the arrays."""
    z0 = np.array(center.z)
    dz = np.asarray(z, dtype=float) - z0
    dt = np.asarray(t, dtype=float) - center.t - 2.0 * im_pairing(z0, z)
    return gauge_arrays(dz, dt)


def ball_volume_estimate(ball: KoranyiBall, samples: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo Lebesgue measure of a Koranyi ball.

    Rejection sampling in the box [-r, r]^{2n} x [-r^2, r^2], which contains
    the ball centred at the origin; left translation preserves Lebesgue
    measure so the centre is irrelevant.
    """
    if samples < 10_000:
        raise ValueError("ball_volume_estimate needs at least 1e4 samples")
    n = ball.center.n
    r = ball.radius
    rng = np.random.default_rng(seed)
    z = rng.uniform(-r, r, size=(samples, 2 * n))
    t = rng.uniform(-r * r, r * r, size=samples)
    inside = gauge_arrays(z, t) <= r
    box = (2 * r) ** (2 * n) * 2 * r * r
    return box * float(np.count_nonzero(inside)) / samples


# ---------------------------------------------------------------------------
# exact lattice arithmetic


def _as_fraction(v) -> Fraction:
    if isinstance(v, bool):
        raise TypeError("booleans are not rational coordinates")
    if isinstance(v, (int, Fraction)):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v.strip())
    raise TypeError(
        f"non-rational coordinate {v!r} ({type(v).__name__}); use int, Fraction or 'p/q'"
    )


def theta_pairing(ki: Sequence, kj: Sequence):
    """Im(conj(ki) kj); exact for integer or Fraction entries."""
    if len(ki) != len(kj) or len(ki) % 2:
        raise ValueError("lattice vectors must share an even length 2n")
    n = len(ki) // 2
    return sum(ki[m] * kj[n + m] - ki[n + m] * kj[m] for m in range(n))


def _dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


def _primitive(v: Sequence[Fraction]) -> tuple:
    den = reduce(_lcm, (x.denominator for x in v), 1)
    ints = [int(x * den) for x in v]
    g = reduce(math.gcd, (abs(x) for x in ints), 0)
    return tuple(x // g for x in ints)


@dataclass(frozen=True)
class IntegerBase:
    """Integer base ``k[0..2n-1]`` adapted to a rational direction ``omega``.

    ``k[:-1]`` span the lattice directions orthogonal to ``omega`` and
    ``k[-1] = q_den * omega``.
    """

    omega: tuple
    k: tuple
    q_den: int
    theta_pairings: tuple
    theta: int
    _float_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.omega) // 2

    @property
    def omega_float(self) -> np.ndarray:
        return np.array([float(x) for x in self.omega])

    @property
    def omega_hat(self) -> np.ndarray:
        w = self.omega_float
        return w / np.linalg.norm(w)

    @property
    def k_matrix(self) -> np.ndarray:
        """Rows are the base vectors as floats."""
        return np.array(self.k, dtype=float)

    def pairing(self, i: int, j: int) -> int:
        return self.theta_pairings[i][j]

    def coordinates(self, vec: Sequence) -> tuple:
        """Exact coordinates of an integer/rational vector in the base."""
        v = [_as_fraction(x) for x in vec]
        return tuple(Fraction(_dot(v, kj), _dot(kj, kj)) for kj in self.k)


def build_integer_base(omega: Sequence) -> IntegerBase:
    """Rational Gram-Schmidt from ``omega`` and the coordinate axes, then integer scaling.

    Transverse vectors are made primitive.  For n >= 2 the first transverse
    pair with a nonzero pairing is ordered so the pairing is positive and
    ``theta`` is the gcd of the nonzero transverse pairings; for n = 1 the
    single transverse vector is oriented so Im(conj(k^2) k^1) > 0 and
    ``theta`` is 1.
    """
    w = [_as_fraction(x) for x in omega]
    if len(w) == 0 or len(w) % 2:
        raise ValueError("omega must have even positive length 2n")
    if all(x == 0 for x in w):
        raise ValueError("omega must be nonzero")
    dim = len(w)
    n = dim // 2

    ortho = [w]
    for i in range(dim):
        if len(ortho) == dim:
            break
        e = [Fraction(int(i == j)) for j in range(dim)]
        for b in ortho:
            c = _dot(e, b) / _dot(b, b)
            e = [x - c * y for x, y in zip(e, b)]
        if any(x != 0 for x in e):
            ortho.append(e)

    q_den = reduce(_lcm, (x.denominator for x in w), 1)
    k_last = tuple(int(x * q_den) for x in w)
    trans = [_primitive(v) for v in ortho[1:]]

    if n == 1:
        if theta_pairing(k_last, trans[0]) < 0:
            trans[0] = tuple(-x for x in trans[0])
        theta = 1
    else:
        pairs = [
            (i, j)
            for i in range(len(trans))
            for j in range(i + 1, len(trans))
            if theta_pairing(trans[i], trans[j]) != 0
        ]
        if not pairs:  # impossible for an orthogonal base when n >= 2
            raise ArithmeticError("no transverse pair with nonzero pairing")
        i, j = pairs[0]
        if theta_pairing(trans[i], trans[j]) < 0:
            trans[i], trans[j] = trans[j], trans[i]
        vals = [
            abs(theta_pairing(a, b)) for a in trans for b in trans if theta_pairing(a, b) != 0
        ]
        theta = reduce(math.gcd, vals)

    ks = tuple(trans) + (k_last,)
    pairings = tuple(tuple(theta_pairing(a, b) for b in ks) for a in ks)
    return IntegerBase(
        omega=tuple(w), k=ks, q_den=q_den, theta_pairings=pairings, theta=theta
    )
