import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisplane.cell_grid import CellSpec, Field, make_grid
from heisplane.energy import (
    RadialFunction,
    dirichlet_density,
    el_gradient,
    energy_and_gradient,
    energy_in_ball,
    energy_total,
    horizontal_gradient,
    kohn_laplacian,
    kohn_laplacian_radial_check,
    operator,
)
from heisplane.heis_core import GroupPoint, KoranyiBall, build_integer_base
from heisplane.potential import ModulationSpec, PotentialSpec

QUARTIC = PotentialSpec()
MODULATED = PotentialSpec(modulation=ModulationSpec(1.5, 0.5, (1, 1)))


def random_field(grid, rng, lo=-1.0, hi=1.0):
    return Field(grid, rng.uniform(lo, hi, grid.shape))


def test_constant_phase_has_zero_energy(small_grid):
    u = Field(small_grid, np.where(small_grid.node_a > 0, 1.0, -1.0))
    e = energy_total(u, QUARTIC)
    # only the jump across a = 0 costs energy
    assert e.potential == 0.0
    v = Field(small_grid, np.ones(small_grid.shape))
    assert energy_total(v, QUARTIC).potential == 0.0
    assert dirichlet_density(v)[:, -1].sum() == 0.0


def test_energy_rejects_out_of_range(small_grid):
    with pytest.raises(ValueError):
        energy_total(Field(small_grid, np.full(small_grid.shape, 1.5)), QUARTIC)


def test_density_sums_to_total(small_grid, rng):
    u = random_field(small_grid, rng)
    assert dirichlet_density(u).sum() == pytest.approx(energy_total(u, QUARTIC).dirichlet, rel=1e-12)


def test_adjoint_consistency(diag_grid, rng):
    op = operator(diag_grid)
    x = rng.normal(size=diag_grid.size + 2)
    y = rng.normal(size=op.G.shape[0])
    lhs = float((op.G @ x) @ y)
    rhs = float(x @ (op.GT @ y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("spec", [QUARTIC, MODULATED, PotentialSpec(kind="power_d", d=1.5)])
def test_gradient_directional_derivative(diag_grid, rng, spec):
    u = random_field(diag_grid, rng, -0.8, 0.8)
    v = rng.normal(size=diag_grid.shape)
    _, g = energy_and_gradient(u, spec)
    exact = float(np.sum(g * v))
    h = 1e-5
    ep = energy_total(Field(diag_grid, u.values + h * v), spec).total
    em = energy_total(Field(diag_grid, u.values - h * v), spec).total
    fd = (ep - em) / (2 * h)
    assert abs(fd - exact) <= 1e-4 * abs(exact)


def test_el_gradient_is_scaled_gradient(small_grid, rng):
    u = random_field(small_grid, rng, -0.5, 0.5)
    _, g = energy_and_gradient(u, QUARTIC)
    assert np.allclose(el_gradient(u, QUARTIC).values * small_grid.cell_weight, g)
    with pytest.raises(ValueError):
        el_gradient(u, PotentialSpec(kind="indicator", d=0.0))


def test_kohn_laplacian_of_linear_field_vanishes(small_grid):
    a = small_grid.node_a
    u = Field(small_grid, a / 8.0)
    lap = kohn_laplacian(u)
    inner = np.abs(a) < small_grid.L - 1
    assert np.max(np.abs(lap.values[inner])) < 1e-10


def test_horizontal_gradient_examples():
    g = make_grid(CellSpec(build_integer_base((1, 0)), M=2.0, L=4.0625), (16, 65, 8))
    node = (g.ns[0] // 2, int(np.argmin(np.abs(g.a_axis - 1.0))), g.nt // 2)
    assert g.node_a[node] == 1.0 and g.node_s[node][0] == 0.0
    # X u = u_x + 2 y u_t, Y u = u_y - 2 x u_t; u = t gives (2y, -2x) = (0, -2) at z = (1, 0)
    t_field = Field(g, np.clip(g.node_t / 8.0, -1, 1))
    assert horizontal_gradient(t_field, node) * 8.0 == pytest.approx([0.0, -2.0], abs=1e-9)
    a_field = Field(g, g.node_a / 4.0)
    assert horizontal_gradient(a_field, node) == pytest.approx([0.25, 0.0], abs=1e-12)


def _ball_field(grid):
    return Field(grid, np.tanh(grid.node_a))


def test_energy_in_ball_grows_with_radius():
    g = make_grid(CellSpec(build_integer_base((1, 0)), M=8, L=10), (16, 80, 8))
    u = _ball_field(g)
    e = [energy_in_ball(u, QUARTIC, KoranyiBall(GroupPoint((0.0, 0.0), 0.0), r)).total for r in (1, 2, 4)]
    assert 0 < e[0] < e[1] < e[2]


def test_radial_closed_form_values():
    xi = GroupPoint((1.0, 0.0), 0.0)
    exact, _ = kohn_laplacian_radial_check(RadialFunction.power(4), xi, 0.1)
    assert exact == 24.0
    exact2, fd2 = kohn_laplacian_radial_check(RadialFunction.power(2), xi, 0.01)
    assert exact2 == 8.0 and fd2 == pytest.approx(8.0, abs=1e-2)
    e0, f0 = kohn_laplacian_radial_check(RadialFunction.constant(3.0), xi, 0.1)
    assert e0 == 0.0 and f0 == 0.0
    with pytest.raises(ValueError):
        kohn_laplacian_radial_check(RadialFunction.power(4), GroupPoint.origin(1), 0.1)


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31))
def test_submodularity(seed):
    grid = make_grid(CellSpec(build_integer_base((1, 1)), M=1.0, L=2.0), (8, 46, 8))
    rng = np.random.default_rng(seed)
    u = random_field(grid, rng)
    v = random_field(grid, rng)
    lo = Field(grid, np.minimum(u.values, v.values))
    hi = Field(grid, np.maximum(u.values, v.values))
    lhs = energy_total(lo, MODULATED).total + energy_total(hi, MODULATED).total
    rhs = energy_total(u, MODULATED).total + energy_total(v, MODULATED).total
    assert lhs <= rhs + 1e-10 * abs(rhs)
    # ordered pair: min/max are the pair itself
    w = Field(grid, np.clip(u.values + np.abs(rng.normal(size=grid.shape)), -1, 1))
    lo = Field(grid, np.minimum(u.values, w.values))
    hi = Field(grid, np.maximum(u.values, w.values))
    assert energy_total(lo, MODULATED).total + energy_total(hi, MODULATED).total == pytest.approx(
        energy_total(u, MODULATED).total + energy_total(w, MODULATED).total, rel=1e-14
    )
