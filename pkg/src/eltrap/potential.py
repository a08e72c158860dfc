"""
Anharmonic pseudo-potential along one trap axis.

The well is modeled as an even polynomial

    U(z) = 1/2 m omega_z^2 (z^2 + C4 z^4 + C6 z^6)

with z in micrometres, C4 in um^-2 and C6 in um^-4.  Potentials are
exchanged in eV.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import constants
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ConfigError, FitError, OutOfRangeError

__all__ = [
    "PotentialSamples",
    "PotentialModel",
    "PotentialFit",
    "load_potential_samples",
    "write_potential_samples",
    "synthesize_samples",
    "fit_even_polynomial",
    "frequency_at_amplitude",
    "series_correction",
    "validity_radius",
    "anharmonic_frequency",
    "thermal_amplitude",
    "inhomogeneous_linewidth",
    "boltzmann_linewidth_fwhm",
    "thermal_frequency_bins",
    "well_depth",
]

UM = 1e-6
EV = constants.e
MAX_SERIES_CORRECTION = 0.1


@dataclass(frozen=True)
class PotentialSamples:
    axis: str
    coordinates: np.ndarray  # um
    potentials: np.ndarray  # eV

    def __post_init__(self):
        z = np.asarray(self.coordinates, dtype=float)
        u = np.asarray(self.potentials, dtype=float)
        object.__setattr__(self, "coordinates", z)
        object.__setattr__(self, "potentials", u)
        if self.axis not in ("z", "r"):
            raise ValueError(f"axis must be 'z' or 'r', got {self.axis!r}")
        if z.shape != u.shape or z.ndim != 1:
            raise ValueError("coordinates and potentials must be 1-D and equal length")
        if len(z) < 7:
            raise ValueError(f"need at least 7 samples, got {len(z)}")
        if np.any(np.diff(z) <= 0):
            raise ValueError("coordinates must be strictly increasing")
        if not (z[0] <= 0.0 <= z[-1]):
            raise ValueError("sample domain must include z = 0")


@dataclass(frozen=True)
class PotentialModel:
    omega_z: float  # rad/s
    c4: float = 0.0  # um^-2
    c6: float = 0.0  # um^-4
    mass: float = constants.m_e

    def __post_init__(self):
        if not self.omega_z > 0:
            raise ValueError("omega_z must be positive")

    @property
    def stiffness(self):
        """1/2 m omega^2 in eV/um^2."""
        return 0.5 * self.mass * self.omega_z ** 2 * UM ** 2 / EV

    def potential(self, z):
        """U(z) in eV for z in um."""
        z = np.asarray(z, dtype=float)
        z2 = z * z
        return self.stiffness * z2 * (1.0 + self.c4 * z2 + self.c6 * z2 * z2)

    def force_factor(self, z):
        """-dU/dz divided by m omega^2, i.e. z + 2 C4 z^3 + 3 C6 z^5 (um)."""
        z2 = z * z
        return z * (1.0 + 2.0 * self.c4 * z2 + 3.0 * self.c6 * z2 * z2)


@dataclass
class PotentialFit:
    model: PotentialModel
    offset: float  # eV
    residual_rms: float  # eV
    n_points: int
    window: Optional[float] = None

    def to_dict(self):
        return {
            "omega_z_rad_per_s": self.model.omega_z,
            "omega_z_over_2pi_Hz": self.model.omega_z / (2 * math.pi),
            "C4_per_um2": self.model.c4,
            "C6_per_um4": self.model.c6,
            "offset_eV": self.offset,
            "residual_rms_eV": self.residual_rms,
            "n_points": self.n_points,
            "fit_window_um": self.window,
        }

    def report(self):
        """key = value lines, one per quantity."""
        return "\n".join(f"{k} = {v!r}" for k, v in self.to_dict().items()) + "\n"


def load_potential_samples(path, axis="z"):
    """Read a field-map table: header line, then ``coordinate_um, potential_eV``
    rows; ``#`` starts a comment line."""
    coords, pots = [], []
    header_seen = False
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read field map: {exc}", path=str(path)) from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            cells = [c.strip() for c in next(csv.reader([text]))]
            if not header_seen:
                if [c.lower() for c in cells] != ["coordinate_um", "potential_ev"]:
                    raise ConfigError(
                        "field map header must be 'coordinate_um, potential_eV'",
                        line=lineno, path=str(path))
                header_seen = True
                continue
            if len(cells) != 2:
                raise ConfigError(f"expected 2 columns, got {len(cells)}", line=lineno, path=str(path))
            try:
                coords.append(float(cells[0]))
                pots.append(float(cells[1]))
            except ValueError:
                raise ConfigError(f"non-numeric value in row: {text!r}",
                                  line=lineno, path=str(path)) from None
    if not header_seen:
        raise ConfigError("field map has no header line", path=str(path))
    try:
        return PotentialSamples(axis, np.array(coords), np.array(pots))
    except ValueError as exc:
        raise ConfigError(str(exc), path=str(path)) from None


def write_potential_samples(path, samples: PotentialSamples, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write("coordinate_um, potential_eV\n")
        for z, u in zip(samples.coordinates, samples.potentials):
            fh.write(f"{float(z)!r}, {float(u)!r}\n")


def synthesize_samples(model: PotentialModel, coordinates, axis="z", offset=0.0):
    z = np.asarray(coordinates, dtype=float)
    return PotentialSamples(axis, z, model.potential(z) + offset)


def fit_even_polynomial(samples: PotentialSamples, mass=constants.m_e,
                        window: Optional[float] = None, fit_c6=True,
                        fit_offset=True) -> PotentialFit:
    """Linear least squares on the even basis {1, z^2, z^4, z^6}.

    ``window`` restricts the fit to |z| <= window (um); by default the whole
    sampled domain is used.
    """
    z = samples.coordinates
    u = samples.potentials
    if window is not None:
        keep = np.abs(z) <= window
        z, u = z[keep], u[keep]
    powers = [2, 4] + ([6] if fit_c6 else [])
    n_par = len(powers) + (1 if fit_offset else 0)
    distinct = len(np.unique(np.round(np.abs(z), 12)))
    if distinct < n_par:
        raise FitError(
            f"rank-deficient design: {distinct} distinct |z| values for {n_par} parameters",
            module="potential")
    if np.ptp(u) == 0.0:
        raise FitError("degenerate samples: potential is constant", module="potential")

    zs = np.max(np.abs(z))
    x = z / zs
    cols = [x ** p for p in powers]
    if fit_offset:
        cols.insert(0, np.ones_like(x))
    A = np.column_stack(cols)
    coef, _, rank, _ = np.linalg.lstsq(A, u, rcond=None)
    if rank < n_par:
        raise FitError("rank-deficient design matrix", module="potential")
    resid = u - A @ coef
    if fit_offset:
        offset, coef = coef[0], coef[1:]
    else:
        offset = 0.0
    c = [ci / zs ** p for ci, p in zip(coef, powers)]  # eV / um^p
    if not c[0] > 0:
        raise FitError("fitted curvature is not positive: no confining well", module="potential")
    k = c[0] * EV / UM ** 2  # J/m^2 = 1/2 m w^2
    omega = math.sqrt(2.0 * k / mass)
    c4 = float(c[1] / c[0])
    c6 = float(c[2] / c[0]) if fit_c6 else 0.0
    model = PotentialModel(omega, c4, c6, mass)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return PotentialFit(model, float(offset), rms, len(z), window)


def series_correction(model: PotentialModel, z):
    """Relative frequency shift of the amplitude series at amplitude z (um)."""
    z2 = np.asarray(z, dtype=float) ** 2
    return 0.75 * model.c4 * z2 - (21.0 / 64.0) * model.c4 ** 2 * z2 * z2


def validity_radius(model: PotentialModel, limit=MAX_SERIES_CORRECTION):
    """Largest amplitude (um) for which the series correction stays below ``limit``."""
    if model.c4 == 0:
        return math.inf
    f = lambda z: abs(float(series_correction(model, z))) - limit
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e9:
            return math.inf
    return brentq(f, 0.0, hi, xtol=1e-12)


def frequency_at_amplitude(model: PotentialModel, z, check=True):
    """Secular angular frequency at oscillation amplitude z (um):

        omega_z [1 + (3 C4/4) z^2 - (21 C4^2/64) z^4].

    The C6 contribution is not included.  Amplitudes where the correction
    reaches 10 % raise ``OutOfRangeError`` unless ``check`` is False; use
    :func:`anharmonic_frequency` there.
    """
    corr = series_correction(model, z)
    if check and np.any(np.abs(corr) >= MAX_SERIES_CORRECTION):
        raise OutOfRangeError(
            f"amplitude {z} um outside the series validity radius "
            f"({validity_radius(model):.4g} um); use anharmonic_frequency() instead")
    out = model.omega_z * (1.0 + corr)
    return float(out) if np.ndim(out) == 0 else out


def _quarter_period(model, amplitude):
    """Time from the turning point at +amplitude to the first zero crossing."""
    w = model.omega_z

    def rhs(t, y):
        return (y[1], -w * w * model.force_factor(y[0]))

    def crossing(t, y):
        return y[0]
    crossing.terminal = True
    crossing.direction = -1

    t_guess = 2 * math.pi / w
    sol = solve_ivp(rhs, (0.0, 200 * t_guess), (amplitude, 0.0), method="DOP853",
                    rtol=1e-12, atol=1e-13 * amplitude, events=crossing,
                    max_step=t_guess / 64)  # keeps the dense-output event root accurate
    if not len(sol.t_events[0]):
        raise OutOfRangeError(f"no bounded oscillation at amplitude {amplitude} um")
    return sol.t_events[0][0]


def anharmonic_frequency(model: PotentialModel, amplitude) -> float:
    """Brute-force angular frequency at a fixed amplitude (um): integrates
    z'' = -omega_z^2 (z + 2 C4 z^3 + 3 C6 z^5) from rest at +amplitude to
    the first zero crossing (a quarter period of the even well)."""
    amplitude = float(abs(amplitude))
    if amplitude == 0.0:
        return model.omega_z
    barrier = _barrier_position(model)
    if amplitude >= barrier:
        raise OutOfRangeError(
            f"amplitude {amplitude} um beyond the well barrier at {barrier:.4g} um")
    return 2.0 * math.pi / (4.0 * _quarter_period(model, amplitude))


def _barrier_position(model: PotentialModel):
    """First z > 0 where the restoring force vanishes (um); inf if none."""
    # roots of 1 + 2 C4 s + 3 C6 s^2 in s = z^2
    a, b, c = 3.0 * model.c6, 2.0 * model.c4, 1.0
    roots = []
    if a == 0:
        if b < 0:
            roots.append(-c / b)
    else:
        disc = b * b - 4 * a * c
        if disc >= 0:
            for r in ((-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a)):
                if r > 0:
                    roots.append(r)
    return math.sqrt(min(roots)) if roots else math.inf


def well_depth(model: PotentialModel) -> float:
    """Barrier height of the even-polynomial well in eV (inf if unbounded above)."""
    zb = _barrier_position(model)
    if not math.isfinite(zb):
        return math.inf
    return float(model.potential(zb))


def thermal_amplitude(model: PotentialModel, temperature) -> float:
    """Thermal position spread sqrt(kB T / (m omega_z^2)) in um."""
    if np.any(np.asarray(temperature) < 0):
        raise ValueError("temperature must be >= 0")
    s = np.sqrt(constants.k * np.asarray(temperature, dtype=float)
                / (model.mass * model.omega_z ** 2)) / UM
    return float(s) if np.ndim(s) == 0 else s


def inhomogeneous_linewidth(model: PotentialModel, temperature) -> float:
    """Frequency shift at one thermal standard deviation (rad/s)."""
    sigma = thermal_amplitude(model, temperature)
    return abs(frequency_at_amplitude(model, sigma) - model.omega_z)


def boltzmann_linewidth_fwhm(model: PotentialModel, temperature, n_grid=20001) -> float:
    """FWHM (rad/s) of the thermal distribution of secular frequencies.

    In a thermal ensemble A^2/(2 sigma^2) is exponentially distributed; the
    frequency of each amplitude follows the series above (evaluated without
    the validity check), and the FWHM is read off the induced density.
    """
    sigma = thermal_amplitude(model, temperature)
    if sigma == 0.0 or (model.c4 == 0.0):
        return 0.0
    u = np.linspace(0.0, 25.0, n_grid)
    amp = sigma * np.sqrt(2.0 * u)
    freq = frequency_at_amplitude(model, amp, check=False)
    dfdu = np.gradient(freq, u)
    with np.errstate(divide="ignore"):
        pdf = np.exp(-u) / np.abs(dfdu)
    ok = np.isfinite(pdf)
    u, freq, pdf = u[ok], freq[ok], pdf[ok]
    i_max = int(np.argmax(pdf))
    half = 0.5 * pdf[i_max]
    above = np.flatnonzero(pdf >= half)
    lo, hi = above[0], above[-1]
    return float(abs(freq[hi] - freq[lo]))


def thermal_frequency_bins(model: PotentialModel, temperature, n_bins=64):
    """Equal-weight partition of a thermal ensemble by secular frequency.

    Returns (frequency_factors, weights): each bin sits at the median
    amplitude of its probability slice, and its factor is the secular
    frequency there relative to ``omega_z``.  Amplitudes beyond the series
    validity radius fall back to brute-force integration.
    """
    sigma = thermal_amplitude(model, temperature)
    weights = np.full(n_bins, 1.0 / n_bins)
    if sigma == 0.0 or (model.c4 == 0.0 and model.c6 == 0.0):
        return np.ones(n_bins), weights
    p = (np.arange(n_bins) + 0.5) / n_bins
    amp = sigma * np.sqrt(-2.0 * np.log1p(-p))
    r_valid = validity_radius(model)
    barrier = _barrier_position(model)
    factors = np.empty(n_bins)
    for i, a in enumerate(amp):
        if a < r_valid and model.c6 == 0.0:
            factors[i] = frequency_at_amplitude(model, a) / model.omega_z
        else:
            a = min(a, 0.98 * barrier)
            factors[i] = anharmonic_frequency(model, a) / model.omega_z
    return factors, weights
