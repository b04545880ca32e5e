import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from kinsir.core import Density, Grid, make_delta_density, make_uniform_density
from kinsir.equilibria import InverseGamma
from kinsir.errors import DomainError
from kinsir.fokker_planck import FpState, translate
from kinsir.metrics import (
    XI_MAX,
    XI_MIN,
    decay_bound_rate,
    decay_rate_check,
    energy_constant,
    energy_distance,
    energy_to_quasi_equilibrium,
    fourier_samples,
    fourier_transform,
    printed_energy_constant,
    sobolev_minus_p,
)


def _bump(grid, mu, s):
    return Density.normalized(np.exp(-0.5 * ((grid.centers - mu) / s) ** 2), grid)


def test_fourier_unit_mass_and_delta():
    g = Grid(10.0, 1000)
    f = make_uniform_density(3.0, 0.5, g)
    assert fourier_transform(f, 0.0) == pytest.approx(1.0 + 0j, abs=1e-12)
    d = make_delta_density(2.0, g)
    x0 = g.centers[g.cell_index(2.0)]
    xi = np.array([0.3, 1.7, 5.0])
    assert np.allclose(fourier_transform(d, xi), np.exp(-1j * xi * x0), atol=1e-12)


def test_fourier_uniform_zero_at_pi():
    g = Grid(2.0, 200)
    f = Density(np.full(200, 0.5), g)
    assert abs(fourier_transform(f, math.pi)) < 1e-12


def test_fourier_samples_bounds_and_symmetry():
    g = Grid(10.0, 500)
    s = fourier_samples(_bump(g, 4.0, 1.0), n=256)
    assert np.all(np.abs(s.values) <= 1.0 + 1e-12)
    assert np.array_equal(s.at_negative(), np.conj(s.values))


def test_translation_phase():
    g = Grid(10.0, 1000)
    f = _bump(g, 3.0, 0.4)
    shift = 37 * g.dx
    xi = np.array([0.1, 1.0, 3.0])
    assert np.allclose(fourier_transform(translate(f, shift), xi), np.exp(-1j * xi * shift) * fourier_transform(f, xi), atol=1e-10)


def test_sobolev_identical_is_zero():
    g = Grid(10.0, 200)
    f = _bump(g, 5.0, 1.0)
    assert sobolev_minus_p(f, f, 0.75) == 0.0


def test_sobolev_two_points_against_quadrature():
    g = Grid(10.0, 100)
    f, h = make_delta_density(2.05, g), make_delta_density(3.05, g)
    d = g.centers[g.cell_index(3.05)] - g.centers[g.cell_index(2.05)]
    p = 0.75
    oracle = 0.0
    for lo, hi in zip(np.geomspace(XI_MIN, XI_MAX, 200)[:-1], np.geomspace(XI_MIN, XI_MAX, 200)[1:]):
        oracle += quad(lambda x: x ** (-2 * p) * (2 - 2 * math.cos(x * d)), lo, hi, limit=200)[0]
    assert sobolev_minus_p(f, h, p) == pytest.approx(2 * oracle, rel=1e-3)


def test_sobolev_domain():
    g = Grid(10.0, 100)
    f = _bump(g, 5.0, 1.0)
    for p in (0.5, 1.5, 2.0):
        with pytest.raises(DomainError):
            sobolev_minus_p(f, f, p)


def test_energy_two_points():
    g = Grid(10.0, 100)
    f, h = make_delta_density(2.05, g), make_delta_density(5.05, g)
    d = 3.0
    for p in (0.625, 0.75, 0.875, 1.2):
        assert energy_distance(f, h, p) == pytest.approx(2 * d ** (2 * p - 1), rel=1e-10)


def test_energy_identical_is_zero():
    g = Grid(10.0, 300)
    f = _bump(g, 5.0, 1.0)
    assert energy_distance(f, f, 0.75) == 0.0


@settings(max_examples=30, deadline=None)
@given(
    st.floats(2.0, 8.0), st.floats(0.3, 1.5), st.floats(2.0, 8.0), st.floats(0.3, 1.5), st.floats(0.55, 1.45)
)
def test_energy_symmetric_nonnegative(m1, s1, m2, s2, p):
    g = Grid(10.0, 200)
    f, h = _bump(g, m1, s1), _bump(g, m2, s2)
    a, b = energy_distance(f, h, p), energy_distance(h, f, p)
    assert a >= 0.0
    assert a == pytest.approx(b, rel=1e-9, abs=1e-15)


def test_constants():
    assert printed_energy_constant(0.75) == pytest.approx(0.5, rel=1e-14)
    for p in (0.625, 0.75, 0.875):
        assert printed_energy_constant(p) / energy_constant(p) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-12)


@pytest.mark.parametrize("p", [0.625, 0.75, 0.875])
def test_energy_equals_constant_times_sobolev(p):
    """The equivalence holds with the constant for the unnormalized transform."""
    g = Grid(20.0, 2000)
    pairs = [
        (_bump(g, 5.0, 1.0), _bump(g, 6.5, 1.5)),
        (_bump(g, 4.0, 0.8), InverseGamma(6.0, 20.0).cell_averages(g)),
        (InverseGamma(5.0, 8.0).cell_averages(g), InverseGamma(9.0, 30.0).cell_averages(g)),
    ]
    for f, h in pairs:
        assert energy_distance(f, h, p) == pytest.approx(energy_constant(p) * sobolev_minus_p(f, h, p), rel=0.01)


def test_cutoff_estimate_is_small_for_smooth_pairs():
    g = Grid(20.0, 2000)
    value, cutoff = sobolev_minus_p(_bump(g, 5.0, 1.0), _bump(g, 6.0, 1.0), 0.75, return_cutoff=True)
    assert 0 <= cutoff < 1e-3 * value


def test_decay_bound_rate():
    assert decay_bound_rate(0.1, 0.2, 1.0) == pytest.approx(0.225)


def test_decay_check_on_exponential_series():
    t = np.linspace(0, 10, 101)
    ok = decay_rate_check(t, np.exp(-0.3 * t), rate=0.225)
    assert ok.ok and ok.worst_ratio > 1.0
    bad = decay_rate_check(t, np.exp(-0.1 * t), rate=0.225)
    assert not bad.ok


def test_decay_check_records_without_rate():
    rep = decay_rate_check([0, 1, 2], [0.0, 0.0, 0.0])
    assert rep.ok and rep.satisfied is None


def test_energy_series_skips_degenerate_recovered(no_reinfection):
    g = Grid(12.0, 600)
    dens = [make_uniform_density(m, 1 / 120, g) for m in (4.0, 1.0, 0.5)]
    st0 = FpState.initial(*dens, no_reinfection)
    series = energy_to_quasi_equilibrium([st0], ps=(0.75,))
    assert ("R", 0.75) not in series.values
    assert ("S", 0.75) in series.values and series.total(0.75)[0] > 0
