from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisplane.analysis import birkhoff_audit
from heisplane.cell_grid import CellSpec, Field, lattice_vector_map, make_grid, read_translated
from heisplane.energy import energy_total
from heisplane.heis_core import build_integer_base
from heisplane.potential import ModulationSpec, PotentialSpec
from heisplane.solver import (
    GridRecipe,
    SolveConfig,
    birkhoff_generators,
    birkhoff_refine,
    enlarge_check,
    init_ramp,
    is_feasible,
    max_combine,
    min_closure,
    min_combine,
    minimize,
    project_constraints,
    rational_approximation,
    sample_field,
    scaled_potential,
)

MODULATED = PotentialSpec(modulation=ModulationSpec(1.5, 0.5, (1, 1)))


@pytest.fixture(scope="module")
def solved():
    g = make_grid(CellSpec(build_integer_base((1, 1)), M=3.0, L=5.0), (16, 112, 8))
    b = minimize(init_ramp(g), MODULATED, SolveConfig())
    return b


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(tol=0)
    with pytest.raises(ValueError):
        SolveConfig(max_iters=0)


def test_init_ramp(small_grid):
    u = init_ramp(small_grid)
    assert np.array_equal(u.values, np.clip(4 * small_grid.node_a, -1, 1))
    assert is_feasible(u)


def test_projection(small_grid, rng):
    u = Field(small_grid, rng.uniform(-1, 1, small_grid.shape))
    p = project_constraints(u, M=2.0, delta=0.1)
    a = small_grid.node_a
    assert np.all(p.values[a >= 2.0] >= 0.9)
    assert np.all(p.values[a <= -2.0] <= -0.9)
    assert is_feasible(p, 2.0, 0.1)
    assert np.array_equal(project_constraints(p, 2.0, 0.1).values, p.values)


def test_combine_checks_grid(small_grid, diag_grid):
    a = init_ramp(small_grid)
    with pytest.raises(ValueError):
        min_combine(a, init_ramp(diag_grid))
    b = Field(small_grid, np.zeros(small_grid.shape))
    assert np.array_equal(min_combine(a, b).values, np.minimum(a.values, 0))
    assert np.array_equal(max_combine(a, b).values, np.maximum(a.values, 0))


def test_minimize_converges_monotonically(solved):
    assert solved.converged
    totals = np.array([row[3] for row in solved.trace])
    assert np.all(np.diff(totals) <= 1e-12 * totals[0])
    assert is_feasible(solved.field, solved.M, solved.delta)
    assert solved.energy.total == pytest.approx(totals[-1], rel=1e-12)


def test_minimizer_is_stationary(solved):
    """Perturbing the minimiser inside the constraint set does not lower the energy."""
    rng = np.random.default_rng(3)
    u = solved.field
    e0 = solved.energy.total
    for _ in range(5):
        v = project_constraints(Field(u.grid, np.clip(u.values + 1e-3 * rng.normal(size=u.grid.shape), -1, 1)))
        assert energy_total(v, MODULATED).total >= e0 - 1e-9


def test_obstacle_mode_runs():
    g = make_grid(CellSpec(build_integer_base((1, 0)), M=2.0, L=4.0), (8, 64, 8))
    spec = PotentialSpec(kind="indicator", d=0.0)
    b = minimize(init_ramp(g), spec, SolveConfig(d0_mode=True, max_iters=3000))
    assert is_feasible(b.field)
    totals = [row[1] for row in b.trace]
    assert totals[-1] <= totals[0]


def test_generators_respect_orientation(diag_grid):
    gens = birkhoff_generators(diag_grid, kmax=1)
    assert gens
    for k in gens:
        assert k[0] + k[1] >= 0


def test_min_closure_is_monotone(diag_grid, rng):
    u = Field(diag_grid, np.repeat(rng.uniform(-1, 1, diag_grid.shape[:-1])[..., None], diag_grid.nt, axis=-1))
    gens = birkhoff_generators(diag_grid, kmax=1)
    maps = [tuple(np.ravel(a) for a in lattice_vector_map(diag_grid, k, exact=False)) for k in gens]
    v = min_closure(u, maps)
    assert np.all(v.values <= u.values)
    for m in maps:
        assert np.all(read_translated(v, m).reshape(diag_grid.shape) >= v.values - 1e-15)


def test_refine_keeps_energy_and_orders(solved):
    r = birkhoff_refine(solved, MODULATED, SolveConfig())
    assert r.converged
    assert r.refinement_passes >= 1
    assert abs(r.energy.total - solved.energy.total) <= 1e-6 * solved.energy.total
    assert birkhoff_audit(r.field).passed(1e-9)


def test_enlarge_check(solved):
    same = enlarge_check(solved, MODULATED, SolveConfig(), 0.0)
    assert same.passed and same.sup_difference == 0.0
    with pytest.raises(ValueError):
        enlarge_check(solved, MODULATED, SolveConfig(), a_extra=5.0)
    more = enlarge_check(solved, MODULATED, SolveConfig(), 1.0, threshold=1e-3)
    assert more.passed


def test_rational_approximation():
    assert rational_approximation((1, 0.618034), 5) == (Fraction(1), Fraction(3, 5))
    assert rational_approximation((1, 0.618034), 13) == (Fraction(1), Fraction(8, 13))


def test_grid_recipe_builds_commensurate_cells():
    for om in [(1, 0), (1, 2), (2, 3)]:
        g = GridRecipe(M=3, L=5).build(om)
        assert g.L >= 5 and g.shape[0] % sum(x * x for x in g.base.k[-1]) == 0


@settings(max_examples=30)
@given(st.floats(-1.8, 1.8), st.floats(-3.0, 3.0), st.floats(-5, 5))
def test_sample_field_linear_in_a(x, y, t):
    g = make_grid(CellSpec(build_integer_base((1, 0)), M=2.0, L=4.0), (8, 64, 8))
    u = Field(g, g.node_a / 4.0)
    val = sample_field(u, np.array([[x, y]]), t)
    assert val[0] == pytest.approx(x / 4.0, abs=1e-12)


def test_scaled_potential():
    ps = scaled_potential(ModulationSpec(1.5, 0.5, (1, 1)), 2.0)
    assert ps.weight(np.zeros(2)) == 16.0  # N^2 alpha^2 with alpha = 2
