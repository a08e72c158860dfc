import math

import numpy as np
import pytest

from eltrap.errors import ConfigError, FitError, OutOfRangeError
from eltrap.potential import (
    PotentialModel,
    PotentialSamples,
    anharmonic_frequency,
    boltzmann_linewidth_fwhm,
    fit_even_polynomial,
    frequency_at_amplitude,
    load_potential_samples,
    synthesize_samples,
    thermal_amplitude,
    thermal_frequency_bins,
    validity_radius,
    well_depth,
    write_potential_samples,
)

from oracles import period_quadrature, thermal_sigma

W = 2 * math.pi * 619e6
C4 = -1.5e-5


def test_fit_round_trip():
    model = PotentialModel(W, c4=C4, c6=2e-10)
    z = np.linspace(-80, 80, 161)
    fit = fit_even_polynomial(synthesize_samples(model, z, offset=0.3))
    assert fit.model.omega_z == pytest.approx(W, rel=1e-9)
    assert fit.model.c4 == pytest.approx(C4, rel=1e-7)
    assert fit.model.c6 == pytest.approx(2e-10, rel=1e-5)
    assert fit.offset == pytest.approx(0.3, abs=1e-12)
    assert fit.residual_rms < 1e-12


def test_fit_window_restricts_points():
    model = PotentialModel(W, c4=C4)
    z = np.linspace(-100, 100, 201)
    fit = fit_even_polynomial(synthesize_samples(model, z), window=50.0, fit_c6=False)
    assert fit.n_points == 101
    assert fit.model.c4 == pytest.approx(C4, rel=1e-9)


def test_fit_rejects_flat_and_inverted_wells():
    z = np.linspace(-50, 50, 41)
    with pytest.raises(FitError):
        fit_even_polynomial(PotentialSamples("z", z, np.zeros_like(z)))
    with pytest.raises(FitError):
        fit_even_polynomial(PotentialSamples("z", z, -1e-4 * z * z))


def test_file_round_trip(tmp_path):
    model = PotentialModel(W, c4=C4)
    s = synthesize_samples(model, np.linspace(-60, 60, 61))
    path = tmp_path / "map.csv"
    write_potential_samples(path, s, comment="synthetic")
    back = load_potential_samples(path)
    np.testing.assert_allclose(back.potentials, s.potentials, rtol=1e-15)


def test_file_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("coordinate_um, potential_eV\n0, 0\n1, oops\n")
    with pytest.raises(ConfigError) as info:
        load_potential_samples(path)
    assert ":3:" in str(info.value)


def test_series_matches_period_quadrature():
    model = PotentialModel(W, c4=C4)
    for a in (5.0, 17.3, 40.0):
        exact = period_quadrature(C4, 0.0, W, a)
        assert frequency_at_amplitude(model, a) == pytest.approx(exact, rel=1e-4)


@pytest.mark.parametrize("amp", [10.0, 60.0, 120.0])
def test_brute_force_matches_quadrature(amp):
    model = PotentialModel(W, c4=C4, c6=1e-10)
    assert anharmonic_frequency(model, amp) == pytest.approx(
        period_quadrature(C4, 1e-10, W, amp), rel=1e-8)


def test_shift_at_thermal_amplitude():
    model = PotentialModel(W, c4=C4)
    shift = (W - frequency_at_amplitude(model, 17.3)) / (2 * math.pi)
    assert shift == pytest.approx(2.0e6, abs=0.1e6)


def test_out_of_range_amplitude():
    model = PotentialModel(W, c4=C4)
    r = validity_radius(model)
    assert 85 < r < 100
    with pytest.raises(OutOfRangeError):
        frequency_at_amplitude(model, 1.05 * r)
    with pytest.raises(OutOfRangeError):
        anharmonic_frequency(model, 1e4)


def test_thermal_amplitude():
    model = PotentialModel(W)
    assert thermal_amplitude(model, 300) == pytest.approx(thermal_sigma(300, W) * 1e6, rel=1e-12)
    assert thermal_amplitude(model, 300) == pytest.approx(17.3, rel=0.01)


def test_well_depth():
    model = PotentialModel(W, c4=C4)
    # barrier at z^2 = -1/(2 C4): depth = stiffness * z^2 (1 + C4 z^2) = stiffness/(-4 C4)
    assert well_depth(model) == pytest.approx(model.stiffness / (-4 * C4), rel=1e-10)
    assert math.isinf(well_depth(PotentialModel(W)))


def test_frequency_bins():
    model = PotentialModel(W, c4=C4)
    f, w = thermal_frequency_bins(model, 300.0, 64)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(f < 1.0) and np.all(np.diff(f) < 0)
    f0, _ = thermal_frequency_bins(PotentialModel(W), 300.0, 16)
    assert np.all(f0 == 1.0)


def test_linewidth_grows_with_temperature():
    model = PotentialModel(W, c4=C4)
    assert boltzmann_linewidth_fwhm(model, 2950) > boltzmann_linewidth_fwhm(model, 300) > 0
