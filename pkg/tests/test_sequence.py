import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from eltrap.cavity import REFERENCE_CHAIN, CavityMode, CouplingParams, cooling_rate
from eltrap.errors import PhysicsError, ProgramError
from eltrap.mathieu import TrapDrive
from eltrap.potential import PotentialModel
from eltrap.sequence import (
    Acquisition,
    LoadingEvent,
    Segment,
    SequenceProgram,
    Trace,
    compile_sequence,
    noise_only_trace,
    run_sequence,
    sweep_com_frequency,
)

TWO_PI = 2 * math.pi
V = 92.0
DRIVE = TrapDrive.calibrated(TWO_PI * 3.105e9, V, 0.56, reference_secular_frequency=TWO_PI * 619e6)
CAVITY = CavityMode(TWO_PI * 619e6, 1300, 20000, linewidth_override=TWO_PI * 476e3)
N = 1260


def coupling_for(tau):
    g_coll = math.sqrt(CAVITY.kappa / (4 * tau))
    return CouplingParams(g_coll / math.sqrt(N))


def rbw_for(c):
    return 4 * c.g ** 2 / CAVITY.kappa


def program(segments, interval=0.01, loading=(0.25, 0.1, N, 1e5), rbw=1.0):
    ld = None if loading is None else LoadingEvent(*loading)
    return SequenceProgram([Segment(*s) for s in segments], Acquisition(interval, rbw), ld)


def test_program_validation():
    with pytest.raises(ProgramError):
        program([(0, 1, V), (0.5, 2, V)])
    with pytest.raises(ProgramError):
        program([(0, 1, V), (1.5, 2, V)])
    with pytest.raises(ProgramError):
        program([(0, 0, V)])
    with pytest.raises(ProgramError):
        program([(0, 1, V)], loading=(0.95, 0.1, 5, 300))


def test_compile_schedule():
    prog = program([(0, 1, V), (1, 2, 0.9 * V), (2, 3, V, 1.2 * V)])
    sched = compile_sequence(prog, DRIVE)
    assert sched.omega_at(0.5) / TWO_PI == pytest.approx(619e6)
    assert (sched.omega_at(1.5) - sched.omega_at(0.5)) / TWO_PI == pytest.approx(-61.9e6)
    assert (sched.omega_at(3.0) - sched.omega_at(0.5)) / TWO_PI == pytest.approx(123.8e6)
    assert sched.omega_at(2.5) == pytest.approx(0.5 * (sched.omega_at(2.0) + sched.omega_at(3.0)))
    assert len(sched.points()) == 6


@pytest.mark.parametrize("span,interval", [(1.0, 0.01), (1.0, 0.03), (0.7, 0.1), (2.0, 0.25)])
def test_sample_count(span, interval):
    prog = program([(0, span, V)], interval=interval, loading=None)
    tr = run_sequence(prog, DRIVE, CAVITY, coupling_for(0.1), REFERENCE_CHAIN, 0)
    assert len(tr.x) == math.floor(span / interval + 1e-9) + 1
    assert np.all(np.diff(tr.x) > 0)


def test_deterministic_per_seed():
    c = coupling_for(0.1)
    prog = program([(0, 1, V)], rbw=rbw_for(c))
    a = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 7)
    b = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 7)
    d = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 8)
    assert np.array_equal(a.y, b.y) and a.metadata == b.metadata
    assert not np.array_equal(a.y, d.y)


def test_time_translation():
    c = coupling_for(0.1)
    prog = program([(0, 0.5, V), (0.5, 0.75, 0.9 * V), (0.75, 1.5, V)], rbw=rbw_for(c))
    a = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 3)
    b = run_sequence(prog.shifted(2.0), DRIVE, CAVITY, c, REFERENCE_CHAIN, 3)
    np.testing.assert_array_equal(b.x, a.x + 2.0)
    np.testing.assert_array_equal(b.y, a.y)


def test_nothing_loaded_is_noise_only():
    c = coupling_for(0.1)
    prog = program([(0, 5, V)], interval=0.005, loading=(0.2, 0.1, 0, 300), rbw=50.0)
    tr = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 11)
    ref = noise_only_trace(prog, CAVITY, REFERENCE_CHAIN, 12)
    assert ks_2samp(tr.y, ref.y).pvalue > 0.01
    assert np.mean(tr.y) == pytest.approx(tr.metadata["noise_floor_W"], rel=0.05)


def test_noiseless_decay_is_exponential_at_the_cooling_rate():
    tau = 0.1
    c = coupling_for(tau)
    prog = program([(0, 1.0, V)], interval=0.002, rbw=rbw_for(c))
    tr = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 0, noise=False)
    gamma = cooling_rate(c, CAVITY.kappa, N)
    excess = tr.y - tr.metadata["noise_floor_W"]
    sel = (tr.x > 0.35) & (tr.x < 0.9)
    slope = np.polyfit(tr.x[sel], np.log(excess[sel]), 1)[0]
    assert -slope == pytest.approx(gamma, rel=0.02)
    resid = np.log(excess[sel]) - np.polyval(np.polyfit(tr.x[sel], np.log(excess[sel]), 1), tr.x[sel])
    assert np.max(np.abs(resid)) < 1e-3


def test_detuned_epoch_freezes_the_decay():
    tau = 0.05
    c = coupling_for(tau)
    prog = program([(0, 0.4, V), (0.4, 0.8, 0.9 * V), (0.8, 1.0, V)], interval=0.002,
                   rbw=rbw_for(c))
    tr = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 0, noise=False)
    ex = tr.y - tr.metadata["noise_floor_W"]

    def at(t):
        return ex[int(round(t / 0.002))]
    assert at(0.6) < 1e-4 * at(0.398)
    # energy after the epoch equals energy before it, up to the tiny off-resonant rate
    assert at(0.81) / at(0.398) == pytest.approx(math.exp(-(0.012) / tau), rel=0.02)


def test_strong_coupling_is_rejected():
    c = CouplingParams(0.3 * CAVITY.kappa / math.sqrt(N))
    with pytest.raises(PhysicsError):
        run_sequence(program([(0, 1, V)]), DRIVE, CAVITY, c, REFERENCE_CHAIN, 0)


def test_harmonic_sweep_peaks_at_resonance():
    c = coupling_for(1.0)
    prog = program([(0, 0.5, 0.98 * V), (0.5, 4.5, 0.98 * V, 1.02 * V)], interval=0.002,
                   loading=(0.1, 0.1, N, 1e5), rbw=rbw_for(c))
    sp = sweep_com_frequency(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 0, noise=False, substeps=2)
    assert sp.kind == "spectrum_vs_frequency"
    assert sp.metadata["frequency_axis"] == "commanded"
    assert sp.metadata["ramp_crosses_resonance"]
    ex = sp.y - sp.metadata["noise_floor_W"]
    peak = sp.x[np.argmax(ex)]
    step = sp.x[1] - sp.x[0]
    assert abs(peak - 619e6) < 2 * step
    above = sp.x[ex > 0.5 * ex.max()]
    width = above[-1] - above[0]
    assert width == pytest.approx(max(476e3, step), rel=0.1)


def test_sweep_missing_resonance_is_flagged():
    c = coupling_for(1.0)
    prog = program([(0, 0.5, 1.05 * V), (0.5, 1.0, 1.05 * V, 1.1 * V)], rbw=rbw_for(c),
                   loading=(0.1, 0.1, N, 300))
    sp = sweep_com_frequency(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 0)
    assert not sp.metadata["ramp_crosses_resonance"]
    assert sp.metadata["warnings"]


def test_sweep_needs_a_ramp():
    with pytest.raises(ProgramError):
        sweep_com_frequency(program([(0, 1, V)]), DRIVE, CAVITY, coupling_for(1.0), REFERENCE_CHAIN, 0)


def test_broadened_sweep_shifts_to_higher_command():
    c = coupling_for(1.0)
    prog = program([(0, 0.5, V), (0.5, 6.5, V, 1.1 * V)], interval=0.005,
                   loading=(0.1, 0.1, N, 2950), rbw=rbw_for(c))
    pot = PotentialModel(TWO_PI * 619e6, c4=-1.5e-5)
    sp = sweep_com_frequency(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 0, potential=pot,
                             broadening_bins=16, noise=False, substeps=1)
    ex = sp.y - sp.metadata["noise_floor_W"]
    centroid = np.sum(sp.x * ex) / np.sum(ex)
    assert centroid > 619e6 + 476e3
    assert sp.metadata["n_frequency_bins"] == 16


def test_trace_invariants():
    with pytest.raises(ValueError):
        Trace("zero_span_time", [0, 1, 1], [0, 0, 0])
    with pytest.raises(ValueError):
        Trace("zero_span_time", [0, 1], [0])
    with pytest.raises(ValueError):
        Trace("histogram", [0, 1], [0, 1])


def test_thermal_steady_state_snr():
    # N electrons in equilibrium with the 300 K mode: mean excess over the
    # thermal floor is N times the surviving fraction
    c = coupling_for(0.05)
    prog = program([(0, 20, V)], interval=0.002, loading=(0.1, 0.05, N, 300), rbw=rbw_for(c))
    tr = run_sequence(prog, DRIVE, CAVITY, c, REFERENCE_CHAIN, 4, degradation=0.0062)
    m = tr.metadata
    ratio = (tr.window(1, 20).y.mean() - m["noise_floor_W"]) / m["thermal_floor_W"]
    assert ratio == pytest.approx(N * 0.0062, rel=0.1)
    assert ratio == pytest.approx(6.8, rel=0.2)
