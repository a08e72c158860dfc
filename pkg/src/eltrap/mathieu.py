"""
Single-axis motion in an oscillating quadrupole field.

The equation of motion along one axis is written in Mathieu form

    d^2x/dtau^2 + (a - 2 q cos 2 tau) x = 0,    tau = Omega t / 2,

so that the secular (slow) angular frequency is ``beta * Omega / 2``.  Two
independent routes to ``beta`` are provided: the classical continued
fraction, and the Floquet multipliers of the one-period monodromy matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import constants
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    InstabilityError,
    InvalidDriveError,
    NoOscillationError,
    ResolutionError,
)

__all__ = [
    "Particle",
    "ELECTRON",
    "TrapDrive",
    "MathieuParams",
    "Trajectory",
    "stability_parameters",
    "beta_continued_fraction",
    "monodromy_matrix",
    "floquet_beta",
    "is_stable",
    "stability_boundary",
    "secular_frequency",
    "adiabatic_secular_frequency",
    "integrate_equation_of_motion",
    "extract_frequency",
    "pseudo_potential",
]


@dataclass(frozen=True)
class Particle:
    charge: float  # C
    mass: float  # kg


ELECTRON = Particle(charge=-constants.e, mass=constants.m_e)


@dataclass(frozen=True)
class TrapDrive:
    """Microwave drive of the trapping mode.

    ``field_gradient_per_volt`` converts pin voltage to the on-axis field
    curvature dE/dx (V/m^2 per V).  The reference pair
    (``reference_voltage``, ``reference_secular_frequency``) is the
    measured resonance condition; the secular frequency at any other
    amplitude follows from it linearly.
    """

    drive_angular_frequency: float
    drive_amplitude: float
    field_gradient_per_volt: float
    reference_voltage: float
    reference_secular_frequency: float
    static_field_gradient: float = 0.0  # V/m^2, sets a != 0

    def __post_init__(self):
        if not self.drive_angular_frequency > 0:
            raise InvalidDriveError(
                f"drive angular frequency must be > 0, got {self.drive_angular_frequency}")
        if self.drive_amplitude < 0:
            raise InvalidDriveError(
                f"drive amplitude must be >= 0, got {self.drive_amplitude}")
        if not self.reference_voltage > 0:
            raise InvalidDriveError("calibration reference voltage must be > 0")
        if self.reference_secular_frequency < 0:
            raise InvalidDriveError("calibration secular frequency must be >= 0")

    @classmethod
    def calibrated(cls, drive_angular_frequency, reference_voltage, q_reference,
                   reference_secular_frequency=None, particle=ELECTRON,
                   drive_amplitude=None):
        """Build a drive whose geometry constant reproduces ``q_reference``
        at ``reference_voltage``.

        If ``reference_secular_frequency`` is omitted it is taken from the
        exact Mathieu solution at ``q_reference``.
        """
        if not drive_angular_frequency > 0:
            raise InvalidDriveError("drive angular frequency must be > 0")
        gradient = (q_reference * particle.mass * drive_angular_frequency ** 2
                    / (2.0 * abs(particle.charge) * reference_voltage))
        if reference_secular_frequency is None:
            reference_secular_frequency = secular_frequency(
                MathieuParams(0.0, q_reference), drive_angular_frequency)
        if drive_amplitude is None:
            drive_amplitude = reference_voltage
        return cls(drive_angular_frequency, drive_amplitude, gradient,
                   reference_voltage, reference_secular_frequency)

    def with_amplitude(self, volts):
        return replace(self, drive_amplitude=volts)

    def secular_frequency_at(self, volts):
        """Calibrated secular angular frequency at pin voltage ``volts``."""
        return self.reference_secular_frequency * np.asarray(volts) / self.reference_voltage

    @property
    def period(self):
        return 2.0 * math.pi / self.drive_angular_frequency


@dataclass(frozen=True)
class MathieuParams:
    a: float = 0.0
    q: float = 0.0


@dataclass
class Trajectory:
    """Uniformly sampled one-axis trajectory (SI units)."""

    time_step: float
    positions: np.ndarray
    velocities: np.ndarray
    drive_angular_frequency: Optional[float] = None
    escaped: bool = False
    escape_time: Optional[float] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.time_step <= 0:
            raise ValueError("time_step must be positive")
        if len(self.positions) != len(self.velocities):
            raise ValueError("positions and velocities differ in length")
        if len(self.positions) < 2:
            raise ValueError("a trajectory needs at least two samples")

    def __len__(self):
        return len(self.positions)

    @property
    def times(self):
        return np.arange(len(self.positions)) * self.time_step

    @property
    def samples(self):
        return list(zip(self.positions.tolist(), self.velocities.tolist()))


def stability_parameters(drive: TrapDrive, particle: Particle = ELECTRON) -> MathieuParams:
    """Mathieu (a, q) for ``particle`` in ``drive``.

    q = 2|Q| G V / (m Omega^2) with G V the field curvature amplitude.
    """
    if not drive.drive_angular_frequency > 0:
        raise InvalidDriveError("drive angular frequency must be > 0")
    if particle.charge == 0 or particle.mass == 0:
        raise InvalidDriveError("particle charge and mass must be nonzero")
    w2 = drive.drive_angular_frequency ** 2
    q = 2.0 * abs(particle.charge) * drive.field_gradient_per_volt * drive.drive_amplitude / (
        particle.mass * w2)
    a = -4.0 * particle.charge * drive.static_field_gradient / (particle.mass * w2)
    return MathieuParams(a=a + 0.0, q=q)


# --------------------------------------------------------------------------
# characteristic exponent


def _cf_tail(beta, a, q, sign, tol):
    """q^2 / ((beta +- 2)^2 - a - q^2/((beta +- 4)^2 - a - ...)), depth grown
    until the value settles to ``tol``."""
    q2 = q * q
    prev = None
    depth = 8
    while depth <= 4096:
        t = 0.0
        for k in range(depth, 0, -1):
            t = q2 / ((beta + sign * 2 * k) ** 2 - a - t)
        if prev is not None and abs(t - prev) <= tol * max(1.0, abs(t)):
            return t
        prev = t
        depth *= 2
    return t


def beta_continued_fraction(params: MathieuParams, tolerance: float = 1e-12) -> float:
    """Characteristic exponent beta from the continued-fraction relation

        beta^2 = a + F(beta; +) + F(beta; -).

    Only the lowest stability region (0 <= beta < 1) is handled.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    a, q = float(params.a), abs(float(params.q))
    if q == 0.0:
        if 0.0 <= a < 1.0:
            return math.sqrt(a)
        bound = "lower (beta^2 < 0)" if a < 0 else "upper (beta >= 1)"
        raise InstabilityError(f"a={a} outside the lowest stability region: {bound} bound", bound)

    tail_tol = tolerance * 1e-3

    def g(beta):
        return beta * beta - a - _cf_tail(beta, a, q, +1, tail_tol) - _cf_tail(beta, a, q, -1, tail_tol)

    lo, hi = 0.0, 1.0 - 1e-12
    g_lo = g(lo)
    if g_lo > 0:
        raise InstabilityError(
            f"(a={a}, q={q}) lies below the lower stability boundary (beta^2 < 0)", "lower")
    # scan for the first sign change; poles of the fraction show up as
    # jumps from +inf to -inf and are skipped
    grid = np.linspace(lo, hi, 201)
    vals = [g_lo] + [g(b) for b in grid[1:]]
    for i in range(1, len(grid)):
        if vals[i - 1] <= 0.0 < vals[i] or vals[i - 1] == 0.0:
            if vals[i - 1] == 0.0:
                return float(grid[i - 1])
            # reject a pole: value must vary smoothly across the bracket
            mid = g(0.5 * (grid[i - 1] + grid[i]))
            if not (vals[i - 1] <= mid <= vals[i]):
                continue
            return float(brentq(g, grid[i - 1], grid[i], xtol=tolerance, rtol=1e-15, maxiter=200))
    raise InstabilityError(
        f"(a={a}, q={q}) lies beyond the upper stability boundary (beta >= 1)", "upper")


def _mathieu_rhs(a, q):
    def rhs(tau, y):
        return (y[1], -(a - 2.0 * q * math.cos(2.0 * tau)) * y[0])
    return rhs


def monodromy_matrix(params: MathieuParams, rtol: float = 1e-12) -> np.ndarray:
    """2x2 state-transition matrix over one drive period (tau from 0 to pi)."""
    rhs = _mathieu_rhs(float(params.a), float(params.q))
    m = np.empty((2, 2))
    for col, y0 in enumerate(((1.0, 0.0), (0.0, 1.0))):
        sol = solve_ivp(rhs, (0.0, math.pi), y0, method="DOP853", rtol=rtol, atol=1e-14)
        m[:, col] = sol.y[:, -1]
    return m


def is_stable(params: MathieuParams) -> bool:
    return abs(np.trace(monodromy_matrix(params))) <= 2.0


def floquet_beta(params: MathieuParams) -> float:
    """beta from the monodromy eigenvalue phase, exp(+-i pi beta)."""
    tr = float(np.trace(monodromy_matrix(params)))
    if abs(tr) > 2.0 + 1e-12:
        raise InstabilityError(
            f"|trace of monodromy| = {abs(tr):.6g} > 2: Floquet multiplier off the unit circle",
            "upper" if params.q else "lower")
    return math.acos(max(-1.0, min(1.0, 0.5 * tr))) / math.pi


def stability_boundary(a: float = 0.0, q_low: float = 0.5, q_high: float = 1.2,
                       tolerance: float = 1e-4) -> float:
    """Bisect for the q at which |trace M| first exceeds 2."""
    if not is_stable(MathieuParams(a, q_low)):
        raise ValueError("q_low must be inside the stability region")
    if is_stable(MathieuParams(a, q_high)):
        raise ValueError("q_high must be outside the stability region")
    while q_high - q_low > tolerance:
        mid = 0.5 * (q_low + q_high)
        if is_stable(MathieuParams(a, mid)):
            q_low = mid
        else:
            q_high = mid
    return 0.5 * (q_low + q_high)


def secular_frequency(params: MathieuParams, omega_drive: float) -> float:
    """omega_z = beta(a, q) * Omega / 2."""
    return beta_continued_fraction(params) * omega_drive / 2.0


def adiabatic_secular_frequency(params: MathieuParams, omega_drive: float) -> float:
    """Lowest-order (pseudo-potential) estimate, beta ~ sqrt(a + q^2/2)."""
    b2 = params.a + params.q ** 2 / 2.0
    if b2 < 0:
        raise InstabilityError("a + q^2/2 < 0: no pseudo-potential confinement", "lower")
    return math.sqrt(b2) * omega_drive / 2.0


# --------------------------------------------------------------------------
# trajectories


def integrate_equation_of_motion(drive: TrapDrive, initial, duration: float,
                                 time_step: Optional[float] = None,
                                 particle: Particle = ELECTRON,
                                 field_profile: Optional[Callable[[float], float]] = None,
                                 escape_radius: float = 200e-6) -> Trajectory:
    """Fixed-step velocity-Verlet integration of

        x'' = (Q/m) [V E1(x) cos(Omega t) + G_dc x]

    where E1 is the field per volt (linear, ``field_gradient_per_volt * x``,
    unless ``field_profile`` is given).  Runs internally in tau = Omega t/2.

    An excursion beyond ``escape_radius`` stops the run and is reported on
    the returned trajectory, not raised.
    """
    omega = drive.drive_angular_frequency
    period = 2.0 * math.pi / omega
    if time_step is None:
        time_step = period / 128.0
    if not duration > 0:
        raise ValueError("duration must be positive")
    if time_step > period / 50.0 * (1 + 1e-12):
        raise ResolutionError(
            f"time step {time_step:.3e} s exceeds drive period/50 = {period / 50:.3e} s",
            module="mathieu")
    n_steps = int(round(duration / time_step))
    n_steps = max(n_steps, 1)

    x0, v0 = float(initial[0]), float(initial[1])
    h = omega * time_step / 2.0  # step in tau
    vscale = 2.0 / omega  # dx/dtau = v * 2/Omega
    k = 4.0 * particle.charge / (particle.mass * omega * omega)  # (Q/m) in tau units
    V = drive.drive_amplitude
    gdc = drive.static_field_gradient

    if field_profile is None:
        lin = k * V * drive.field_gradient_per_volt

        def accel(x, tau):
            return (lin * math.cos(2.0 * tau) + k * gdc) * x
    else:
        kv = k * V

        def accel(x, tau):
            return kv * field_profile(x) * math.cos(2.0 * tau) + k * gdc * x

    xs = np.empty(n_steps + 1)
    us = np.empty(n_steps + 1)
    x, u = x0, v0 * vscale
    xs[0], us[0] = x, u
    f = accel(x, 0.0)
    half_h2 = 0.5 * h * h
    escaped = False
    escape_time = None
    n_done = n_steps
    for i in range(1, n_steps + 1):
        tau = i * h
        x = x + h * u + half_h2 * f
        f_new = accel(x, tau)
        u = u + 0.5 * h * (f + f_new)
        f = f_new
        xs[i] = x
        us[i] = u
        if abs(x) > escape_radius or not math.isfinite(x):
            escaped = True
            escape_time = i * time_step
            n_done = i
            break
    n_keep = max(n_done + 1, 2)
    return Trajectory(time_step=time_step, positions=xs[:n_keep],
                      velocities=us[:n_keep] / vscale,
                      drive_angular_frequency=omega, escaped=escaped,
                      escape_time=escape_time)


def extract_frequency(trajectory: Trajectory, max_frequency: Optional[float] = None) -> float:
    """Dominant spectral component below ``max_frequency`` (Hz).

    Hann-windowed FFT with Gaussian (log-parabolic) peak interpolation.
    Defaults to half the drive frequency when the trajectory carries it,
    which keeps micromotion sidebands out of the search.  Returns rad/s.
    """
    x = np.asarray(trajectory.positions, dtype=float)
    x = x - x.mean()
    n = len(x)
    if not np.any(x):
        raise NoOscillationError("record is constant: no oscillation to measure")
    amp = np.abs(np.fft.rfft(x * np.hanning(n)))
    freqs = np.fft.rfftfreq(n, trajectory.time_step)
    if max_frequency is None and trajectory.drive_angular_frequency:
        max_frequency = trajectory.drive_angular_frequency / (2.0 * math.pi) / 2.0
    usable = freqs > 0
    if max_frequency is not None:
        usable &= freqs < max_frequency
    idx = np.flatnonzero(usable)
    if len(idx) < 3:
        raise NoOscillationError("record too short to resolve any frequency")
    k = idx[np.argmax(amp[idx])]
    floor = np.median(amp[idx])
    if amp[k] <= 10.0 * floor or amp[k] == 0.0:
        raise NoOscillationError("no spectral peak above the noise floor")
    if 0 < k < len(amp) - 1 and amp[k - 1] > 0 and amp[k + 1] > 0:
        lm, l0, lp = np.log(amp[k - 1]), np.log(amp[k]), np.log(amp[k + 1])
        denom = lm - 2 * l0 + lp
        delta = 0.5 * (lm - lp) / denom if denom != 0 else 0.0
    else:
        delta = 0.0
    df = freqs[1] - freqs[0]
    return 2.0 * math.pi * (freqs[k] + delta * df)


def pseudo_potential(field_amplitude, omega_drive: float, particle: Particle = ELECTRON):
    """Time-averaged potential Q^2 E^2 / (4 m Omega^2) in joules.

    Works pointwise on arrays, so a sampled field map becomes a
    pseudo-potential surface.
    """
    if not omega_drive > 0:
        raise InvalidDriveError("drive angular frequency must be > 0")
    e = np.asarray(field_amplitude, dtype=float)
    u = particle.charge ** 2 * e * e / (4.0 * particle.mass * omega_drive ** 2)
    return float(u) if u.ndim == 0 else u
