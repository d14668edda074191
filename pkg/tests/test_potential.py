import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heisplane.potential import (
    ModulationSpec,
    PotentialSpec,
    potential_deriv,
    potential_eval,
    structural_check,
    well,
    well_deriv,
)

US = np.linspace(-1, 1, 401)
ZS = np.random.default_rng(0).uniform(-3, 3, size=(64, 2))


def test_quartic_values():
    spec = PotentialSpec()
    assert well(spec, 0.0) == 1.0
    assert well(spec, np.array([-1.0, 1.0])).tolist() == [0.0, 0.0]
    assert potential_eval(spec, [0.0, 0.0], 0.5) == pytest.approx(0.5625)


def test_modulation_value():
    m = ModulationSpec(1.5, 0.5, (1, 1))
    assert m.value(np.zeros(2)) == 2.0
    assert m.value(np.array([0.5, 0.0])) == pytest.approx(1.0)
    assert (m.lower, m.upper) == (1.0, 2.0)


def test_power_d_is_powered_quartic_root():
    spec = PotentialSpec(kind="power_d", d=1.0)
    assert np.allclose(well(spec, US), 1 - US ** 2)


def test_indicator():
    spec = PotentialSpec(kind="indicator", d=0.0)
    assert well(spec, np.array([-1.0, 0.3, 1.0])).tolist() == [0.0, 1.0, 0.0]
    assert not spec.differentiable
    with pytest.raises(ValueError):
        potential_deriv(spec, [0, 0], 0.0)


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="cubic"),
        dict(kind="quartic", d=1.0),
        dict(kind="indicator", d=1.0),
        dict(kind="power_d", d=2.0),
        dict(ell=1.0),
    ],
)
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        PotentialSpec(**kw)


def test_range_checks():
    spec = PotentialSpec()
    with pytest.raises(ValueError):
        potential_eval(spec, [0, 0], 1.5)
    with pytest.raises(ValueError):
        potential_deriv(spec, [0, 0], 1.0)


@pytest.mark.parametrize("spec", [PotentialSpec(), PotentialSpec(kind="power_d", d=1.5)])
def test_derivative_matches_difference(spec):
    u = np.linspace(-0.95, 0.95, 39)
    h = 1e-6
    fd = (well(spec, u + h) - well(spec, u - h)) / (2 * h)
    assert np.allclose(well_deriv(spec, u), fd, atol=1e-6)


@pytest.mark.parametrize(
    "spec",
    [
        PotentialSpec(),
        PotentialSpec(modulation=ModulationSpec(1.5, 0.5, (1, 1))),
        PotentialSpec(kind="power_d", d=1.0),
        PotentialSpec(kind="indicator", d=0.0),
    ],
)
def test_structural_check_passes(spec):
    rep = structural_check(spec, US, ZS)
    assert rep.passed, rep.failures()
    assert rep.constants["period_error"] <= 1e-12


def test_structural_check_flags_nonpositive_modulation():
    spec = PotentialSpec(modulation=ModulationSpec(0.5, 0.5, (1, 1)))
    rep = structural_check(spec, US, ZS)
    assert not rep.passed
    assert "modulation_positive" in rep.failures()


@given(st.floats(-1, 1), st.lists(st.floats(-100, 100), min_size=2, max_size=2), st.tuples(st.integers(-20, 20), st.integers(-20, 20)))
def test_modulation_lattice_periodic(u, z, k):
    spec = PotentialSpec(modulation=ModulationSpec(1.5, 0.5, (1, 2)))
    z = np.array(z)
    a = potential_eval(spec, z, u)
    b = potential_eval(spec, z + np.array(k), u)
    assert abs(a - b) <= 1e-12


@given(st.floats(-1, 1))
def test_potential_symmetric_and_bounded(u):
    spec = PotentialSpec(modulation=ModulationSpec(1.5, 0.5, (1, 1)))
    z = np.array([0.1, 0.3])
    assert potential_eval(spec, z, u) == potential_eval(spec, z, -u)
    assert 0.0 <= potential_eval(spec, z, u) <= spec.modulation.upper
