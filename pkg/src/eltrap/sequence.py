"""
Measurement sequences: drive-amplitude programs, electron loading, and
zero-span / swept acquisition of the readout-mode power.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import constants

from .cavity import (
    CavityMode,
    CouplingParams,
    FilterChain,
    coupled_mode_matrix,
    discretize_linear_modes,
    noise_floor,
    signal_capture,
    thermal_occupation,
)
from .errors import PhysicsError, ProgramError
from .mathieu import TrapDrive
from .potential import PotentialModel, thermal_frequency_bins

__all__ = [
    "Segment",
    "LoadingEvent",
    "Acquisition",
    "SequenceProgram",
    "Trace",
    "CompiledSchedule",
    "compile_sequence",
    "run_sequence",
    "sweep_com_frequency",
    "spectrum_from_zero_span",
    "noise_only_trace",
]

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class Segment:
    start: float  # s
    end: float  # s
    amplitude: float  # V
    ramp_to: Optional[float] = None  # V at ``end`` for a linear ramp

    @property
    def end_amplitude(self):
        return self.amplitude if self.ramp_to is None else self.ramp_to


@dataclass(frozen=True)
class LoadingEvent:
    time: float  # s
    duration: float  # s
    n_loaded: int
    initial_temperature: float  # K

    @property
    def midpoint(self):
        return self.time + 0.5 * self.duration


@dataclass(frozen=True)
class Acquisition:
    sample_interval: float  # s
    resolution_bandwidth: float  # Hz


@dataclass(frozen=True)
class SequenceProgram:
    segments: tuple
    acquisition: Acquisition
    loading: Optional[LoadingEvent] = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        segs = self.segments
        if not segs:
            raise ProgramError("program has no segments")
        for i, s in enumerate(segs):
            if not s.end - s.start > 0:
                raise ProgramError(f"segment {i} has non-positive duration")
            if s.amplitude < 0 or s.end_amplitude < 0:
                raise ProgramError(f"segment {i} has a negative drive amplitude")
        for i in range(1, len(segs)):
            gap = segs[i].start - segs[i - 1].end
            if gap < -_TIME_EPS:
                raise ProgramError(f"segments {i - 1} and {i} overlap")
            if gap > _TIME_EPS:
                raise ProgramError(f"gap between segments {i - 1} and {i}")
        if not self.acquisition.sample_interval > 0:
            raise ProgramError("sample interval must be positive")
        if not self.acquisition.resolution_bandwidth > 0:
            raise ProgramError("resolution bandwidth must be positive")
        if self.acquisition.sample_interval > self.span:
            raise ProgramError("sample interval longer than the program")
        ld = self.loading
        if ld is not None:
            if not ld.duration > 0:
                raise ProgramError("loading duration must be positive")
            if ld.n_loaded < 0 or ld.initial_temperature < 0:
                raise ProgramError("loading count and temperature must be >= 0")
            if ld.time < self.start or ld.time + ld.duration > self.end:
                raise ProgramError("loading event outside the program span")

    @property
    def start(self):
        return self.segments[0].start

    @property
    def end(self):
        return self.segments[-1].end

    @property
    def span(self):
        return self.end - self.start

    @property
    def n_samples(self):
        return int(math.floor(self.span / self.acquisition.sample_interval + 1e-9)) + 1

    def shifted(self, dt):
        segs = [replace(s, start=s.start + dt, end=s.end + dt) for s in self.segments]
        ld = None if self.loading is None else replace(self.loading, time=self.loading.time + dt)
        return SequenceProgram(segs, self.acquisition, ld)

    def digest(self):
        payload = json.dumps(asdict(self), sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class Trace:
    """Power record: versus time (zero span) or versus COM frequency."""

    kind: str  # "zero_span_time" | "spectrum_vs_frequency"
    x: np.ndarray
    y: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.kind not in ("zero_span_time", "spectrum_vs_frequency"):
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-D and equal length")
        if len(self.x) > 1 and np.any(np.diff(self.x) <= 0):
            raise ValueError("trace x must be strictly increasing")

    def window(self, lo, hi):
        keep = (self.x >= lo) & (self.x <= hi)
        return Trace(self.kind, self.x[keep], self.y[keep], dict(self.metadata))


class CompiledSchedule:
    """Piecewise-linear commanded secular frequency omega_z(t)."""

    def __init__(self, rows):
        self.rows = rows  # (start, end, omega_start, omega_end)
        self._starts = np.array([r[0] for r in rows])

    def omega_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self._starts, t, side="right") - 1, 0, len(self.rows) - 1)
        r = np.array(self.rows)[idx]
        frac = np.clip((t - r[..., 0]) / (r[..., 1] - r[..., 0]), 0.0, 1.0)
        out = r[..., 2] + frac * (r[..., 3] - r[..., 2])
        return float(out) if out.ndim == 0 else out

    def points(self):
        """(time, omega_z) breakpoints; a step shows up as a repeated time."""
        pts = []
        for s, e, w0, w1 in self.rows:
            pts.append((s, w0))
            pts.append((e, w1))
        return pts


def compile_sequence(program: SequenceProgram, drive: TrapDrive) -> CompiledSchedule:
    """Map each segment's amplitude (or ramp) onto omega_z with the drive's
    linear amplitude calibration."""
    rows = []
    for s in program.segments:
        rows.append((s.start, s.end,
                     float(drive.secular_frequency_at(s.amplitude)),
                     float(drive.secular_frequency_at(s.end_amplitude))))
    return CompiledSchedule(rows)


def _ensemble(potential, temperature, n_bins):
    if potential is None or (potential.c4 == 0.0 and potential.c6 == 0.0):
        return np.ones(1), np.ones(1)
    factors, weights = thermal_frequency_bins(potential, temperature, n_bins)
    uniq, inv = np.unique(factors, return_inverse=True)
    w = np.zeros(len(uniq))
    np.add.at(w, inv, weights)
    return uniq, w


def _floor_samples(rng, floor_total, m_dof, n, noise):
    if not noise:
        return np.full(n, floor_total)
    return floor_total * rng.gamma(m_dof, 1.0 / m_dof, size=n)


def run_sequence(program: SequenceProgram, drive: TrapDrive, cavity: CavityMode,
                 coupling: CouplingParams, chain: FilterChain, seed: int, *,
                 potential: Optional[PotentialModel] = None,
                 broadening_bins: int = 64,
                 broadening_temperature: Optional[float] = None,
                 intrinsic_damping: float = 0.0,
                 heating_rate: float = 0.0,
                 degradation: float = 1.0,
                 thermal_share: float = 0.87,
                 substeps: int = 8,
                 noise: bool = True,
                 config_digest: Optional[str] = None) -> Trace:
    """Simulate the readout-mode power for ``program`` (zero-span trace).

    Electrons enter as one or more center-of-mass modes at the loading
    midpoint.  With an anharmonic ``potential`` the ensemble is split into
    ``broadening_bins`` thermal frequency classes, each coupling with
    g sqrt(N_bin).  The linear mode dynamics are propagated exactly over
    ``substeps`` steps per sample, with the detuning held at its substep
    midpoint value.  Each sample is the boxcar mean over its interval of
    the electron-driven power plus a chi-square-distributed noise floor.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    acq = program.acquisition
    t0 = program.start
    # all dynamics run on program-relative time, so a shifted program
    # reproduces the same record
    rel = program.shifted(-t0) if t0 != 0.0 else program
    schedule = compile_sequence(rel, drive)
    n_samples = program.n_samples
    dt = acq.sample_interval / substeps
    omega_c = cavity.resonance_frequency
    kappa = cavity.kappa
    gain_db = chain.readout_gain_db
    gain = 10.0 ** (gain_db / 10.0)
    floor = noise_floor(cavity, acq.resolution_bandwidth, gain_db, thermal_share)
    m_dof = max(1.0, acq.resolution_bandwidth * acq.sample_interval)

    floor_rng, dyn_rng = (np.random.Generator(np.random.Philox(s))
                          for s in np.random.SeedSequence(seed).spawn(2))
    y = _floor_samples(floor_rng, floor.total, m_dof, n_samples, noise)
    excess = np.zeros(n_samples)

    ld = program.loading
    n_loaded = 0 if ld is None else ld.n_loaded
    t_load = None if ld is None else ld.initial_temperature
    t_broad = broadening_temperature if broadening_temperature is not None else (t_load or 0.0)
    factors, weights = _ensemble(potential, t_broad, broadening_bins)

    meta = {
        "seed": int(seed),
        "config_digest": config_digest or "none",
        "program_digest": program.digest(),
        "noise_floor_W": floor.total,
        "thermal_floor_W": floor.thermal,
        "resolution_bandwidth_Hz": acq.resolution_bandwidth,
        "sample_interval_s": acq.sample_interval,
        "n_frequency_bins": int(len(factors)),
        "degradation": degradation,
    }

    if n_loaded > 0:
        g_k = coupling.g * np.sqrt(n_loaded * weights)
        if float(np.sqrt(np.sum(g_k ** 2))) >= 0.25 * kappa:
            raise PhysicsError(
                "collective coupling g sqrt(N) >= kappa/4: the incoherent readout "
                "assumes weak coupling")
        n_total_sub = (n_samples - 1) * substeps
        j_load = int(math.ceil(rel.loading.midpoint / dt - 1e-9))
        j_load = min(max(j_load, 0), n_total_sub + 1)
        n_cav = thermal_occupation(omega_c, cavity.mode_temperature)
        n_e0 = thermal_occupation(omega_c, t_load)
        diffusion = np.zeros(len(factors) + 1)
        if noise:
            diffusion[0] = kappa * n_cav
            diffusion[1:] = heating_rate
            # intrinsic damping pulls toward the loading temperature bath
            if intrinsic_damping:
                diffusion[1:] += intrinsic_damping * n_e0
        readout_scale = (constants.hbar * omega_c * cavity.kappa_ex * gain * degradation
                         * signal_capture(acq.resolution_bandwidth, coupling.g, kappa))
        half_k2 = (0.5 * kappa) ** 2
        g2 = g_k ** 2

        cache = {}

        def propagator(w_cmd):
            hit = cache.get(w_cmd)
            if hit is None:
                if len(cache) > 4096:
                    cache.clear()
                det = w_cmd * factors - omega_c
                m = coupled_mode_matrix(det, g_k, kappa, intrinsic_damping)
                phi, lfac = discretize_linear_modes(m, diffusion, dt)
                hit = (phi, lfac if noise else None, det)
                cache[w_cmd] = hit
            return hit

        def readout(x, det):
            return readout_scale * float(np.sum(g2 * np.abs(x[1:]) ** 2 / (half_k2 + det * det)))

        n_modes = len(factors) + 1
        x = np.zeros(n_modes, dtype=complex)
        if noise:
            x[0] = math.sqrt(n_cav) * _cnormal(dyn_rng, 1)[0]
        phases = dyn_rng.uniform(0.0, 2.0 * math.pi, size=len(factors))
        x[1:] = math.sqrt(n_e0) * np.exp(1j * phases)

        mids = (np.arange(n_total_sub) + 0.5) * dt
        w_mid = np.atleast_1d(schedule.omega_at(mids))
        if j_load == 0:
            det0 = float(schedule.omega_at(0.0)) * factors - omega_c
            excess[0] = readout(x, det0)
        acc = np.zeros(n_samples)
        for j in range(max(j_load, 0), n_total_sub):
            phi, lfac, det = propagator(float(w_mid[j]))
            x = phi @ x
            if lfac is not None:
                x = x + lfac @ _cnormal(dyn_rng, n_modes)
            acc[j // substeps + 1] += readout(x, det)
        excess[1:] += acc[1:] / substeps
        y = y + excess
        meta["electron_quanta_final"] = float(np.sum(np.abs(x[1:]) ** 2 * weights))
        meta["collective_coupling_rad_s"] = float(np.sqrt(np.sum(g2)))

    t = t0 + np.arange(n_samples) * acq.sample_interval
    return Trace("zero_span_time", t, y, meta)


def _cnormal(rng, n):
    z = rng.standard_normal((n, 2))
    return (z[:, 0] + 1j * z[:, 1]) / math.sqrt(2.0)


def noise_only_trace(program: SequenceProgram, cavity: CavityMode, chain: FilterChain,
                     seed: int, thermal_share: float = 0.87) -> Trace:
    """Reference record with nothing trapped (floor statistics only)."""
    acq = program.acquisition
    floor = noise_floor(cavity, acq.resolution_bandwidth, chain.readout_gain_db, thermal_share)
    m_dof = max(1.0, acq.resolution_bandwidth * acq.sample_interval)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed).spawn(2)[0]))
    y = _floor_samples(rng, floor.total, m_dof, program.n_samples, True)
    t = program.start + np.arange(program.n_samples) * acq.sample_interval
    return Trace("zero_span_time", t, y, {"seed": int(seed), "noise_floor_W": floor.total})


def _sweep_segment(program, schedule):
    best, best_span = None, 0.0
    for i, (s, e, w0, w1) in enumerate(schedule.rows):
        if abs(w1 - w0) > best_span:
            best, best_span = i, abs(w1 - w0)
    if best is None:
        raise ProgramError("sweep needs at least one amplitude ramp")
    return best


def spectrum_from_zero_span(trace: Trace, program: SequenceProgram, drive: TrapDrive,
                            cavity: CavityMode, potential: Optional[PotentialModel] = None,
                            broadening_temperature: Optional[float] = None,
                            broadening_bins: int = 64, segment: Optional[int] = None) -> Trace:
    """Re-express the ramp epoch of a zero-span trace against the commanded
    COM frequency (Hz).  The widest ramp is used unless ``segment`` is given."""
    schedule = compile_sequence(program, drive)
    idx = _sweep_segment(program, schedule) if segment is None else segment
    s, e, w0, w1 = schedule.rows[idx]
    if w0 == w1:
        raise ProgramError(f"segment {idx} is not a ramp")
    keep = (trace.x >= s - _TIME_EPS) & (trace.x <= e + _TIME_EPS)
    t, p = trace.x[keep], trace.y[keep]
    f = np.asarray(schedule.omega_at(t)) / (2.0 * math.pi)
    order = np.argsort(f, kind="stable")
    f, p = f[order], p[order]
    uniq = np.concatenate(([True], np.diff(f) > 0))
    f, p = f[uniq], p[uniq]

    t_broad = broadening_temperature
    if t_broad is None and program.loading is not None:
        t_broad = program.loading.initial_temperature
    factors, _ = _ensemble(potential, t_broad or 0.0, broadening_bins)
    wc = cavity.resonance_frequency
    lo, hi = sorted((w0, w1))
    hits = (wc / factors.max() <= hi) and (wc / factors.min() >= lo)
    meta = dict(trace.metadata)
    meta.update({
        "frequency_axis": "commanded",
        "sweep_segment": int(idx),
        "sweep_span_Hz": (hi - lo) / (2.0 * math.pi),
        "ramp_crosses_resonance": bool(hits),
    })
    warnings = list(meta.get("warnings", []))
    if not hits:
        warnings.append("ramp does not cross the cavity resonance")
    meta["warnings"] = warnings
    return Trace("spectrum_vs_frequency", f, p, meta)


def sweep_com_frequency(program: SequenceProgram, drive: TrapDrive, cavity: CavityMode,
                        coupling: CouplingParams, chain: FilterChain, seed: int,
                        **kwargs) -> Trace:
    """Run a ramped program and return power versus commanded COM frequency."""
    segment = kwargs.pop("segment", None)
    trace = run_sequence(program, drive, cavity, coupling, chain, seed, **kwargs)
    return spectrum_from_zero_span(
        trace, program, drive, cavity, potential=kwargs.get("potential"),
        broadening_temperature=kwargs.get("broadening_temperature"),
        broadening_bins=kwargs.get("broadening_bins", 64), segment=segment)
