"""
Readout-mode physics: cavity linewidths, electron-cavity coupled modes,
resistive cooling, and the detection chain.

Amplitudes are classical stand-ins for the mode operators, normalized so
that |a|^2 counts energy quanta.  The rotating frame is that of the cavity;
``detuning`` is omega_z - omega_cavity.  An N-electron ensemble appears as
one center-of-mass mode with coupling g sqrt(N).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import constants
from scipy.linalg import expm

from .errors import ResolutionError

__all__ = [
    "CavityMode",
    "CouplingParams",
    "CoupledState",
    "FilterStage",
    "FilterChain",
    "NoiseFloor",
    "OutputPower",
    "REFERENCE_CHAIN",
    "loaded_linewidth",
    "cooling_rate",
    "thermal_occupation",
    "step_coupled_modes",
    "propagate_coupled_modes",
    "coupled_mode_matrix",
    "discretize_linear_modes",
    "filter_budget",
    "noise_floor",
    "output_power",
    "signal_capture",
    "watts_to_dbm",
    "dbm_to_watts",
]

RESOLUTION_LIMIT = 0.1


@dataclass(frozen=True)
class CavityMode:
    resonance_frequency: float  # rad/s
    q_internal: float
    q_external: float = math.inf
    mode_temperature: float = 300.0  # K
    linewidth_override: Optional[float] = None  # rad/s, measured kappa

    def __post_init__(self):
        if not (self.resonance_frequency > 0 and self.q_internal > 0 and self.q_external > 0):
            raise ValueError("resonance frequency and quality factors must be positive")
        if self.mode_temperature < 0:
            raise ValueError("mode temperature must be >= 0")
        if self.linewidth_override is not None and not self.linewidth_override > 0:
            raise ValueError("kappa override must be positive")

    @property
    def loaded_q(self):
        return 1.0 / (1.0 / self.q_internal + 1.0 / self.q_external)

    @property
    def kappa(self):
        """Linewidth used by the dynamics: the override if set, else from Q."""
        if self.linewidth_override is not None:
            return self.linewidth_override
        return loaded_linewidth(self)[0]

    @property
    def kappa_ex(self):
        return loaded_linewidth(self)[2]


def loaded_linewidth(mode: CavityMode):
    """(kappa, kappa_in, kappa_ex) in rad/s from the quality factors."""
    w = mode.resonance_frequency
    k_in = w / mode.q_internal
    k_ex = 0.0 if math.isinf(mode.q_external) else w / mode.q_external
    return k_in + k_ex, k_in, k_ex


@dataclass(frozen=True)
class CouplingParams:
    g: float  # rad/s, single electron
    detuning: float = 0.0  # rad/s, omega_z - omega_cavity

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("coupling g must be >= 0")

    def collective(self, n_electrons):
        return self.g * math.sqrt(n_electrons)


def cooling_rate(coupling: CouplingParams, kappa: float, n_electrons: int = 1) -> float:
    """Energy damping rate of the (COM) electron mode through the cavity,

        4 N g^2 kappa / (kappa^2 + 4 Delta^2),

    from adiabatic elimination of the cavity field.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    d = coupling.detuning
    return 4.0 * n_electrons * coupling.g ** 2 * kappa / (kappa * kappa + 4.0 * d * d)


def thermal_occupation(omega, temperature):
    """Classical (equipartition) quanta k_B T / (hbar omega)."""
    return constants.k * temperature / (constants.hbar * omega)


@dataclass(frozen=True)
class CoupledState:
    electron_amplitude: complex
    photon_amplitude: complex
    n_electrons: int = 1
    electron_temperature: float = 0.0  # K, bath behind the intrinsic damping

    def __post_init__(self):
        if self.n_electrons < 0:
            raise ValueError("n_electrons must be >= 0")
        if self.electron_temperature < 0:
            raise ValueError("electron temperature must be >= 0")

    @property
    def electron_quanta(self):
        return abs(self.electron_amplitude) ** 2

    @property
    def photon_quanta(self):
        return abs(self.photon_amplitude) ** 2


def coupled_mode_matrix(detunings, couplings, kappa, electron_damping=0.0):
    """Drift matrix for the cavity (index 0) and K electron modes.

    da_k/dt = -i D_k a_k - i G_k a_p - gamma0/2 a_k
    da_p/dt = -i sum_k G_k a_k - kappa/2 a_p
    """
    d = np.atleast_1d(np.asarray(detunings, dtype=float))
    g = np.atleast_1d(np.asarray(couplings, dtype=float))
    n = len(d) + 1
    m = np.zeros((n, n), dtype=complex)
    m[0, 0] = -0.5 * kappa
    m[0, 1:] = -1j * g
    m[1:, 0] = -1j * g
    m[np.arange(1, n), np.arange(1, n)] = -1j * d - 0.5 * electron_damping
    return m


def _expm2(m, t):
    """exp(m t) for a 2x2 complex matrix, closed form."""
    mu = 0.5 * (m[0, 0] + m[1, 1])
    n = m - mu * np.eye(2)
    s = np.sqrt(-(n[0, 0] * n[1, 1] - n[0, 1] * n[1, 0]) + 0j)
    st = s * t
    if abs(st) < 1e-8:
        sh = t * (1.0 + st * st / 6.0)
    else:
        sh = np.sinh(st) / s
    return np.exp(mu * t) * (np.cosh(st) * np.eye(2) + sh * n)


def _check_resolution(dt, kappa, g_coll, detuning):
    worst = dt * max(kappa, g_coll, abs(detuning))
    if worst >= RESOLUTION_LIMIT:
        raise ResolutionError(
            f"dt * max(kappa, g sqrt(N), |detuning|) = {worst:.3g} >= {RESOLUTION_LIMIT}",
            module="cavity")


def _diffusion(state, kappa, omega, mode_temperature, intrinsic_damping, heating_rate):
    d_p = kappa * thermal_occupation(omega, mode_temperature) if omega else 0.0
    d_e = heating_rate
    if intrinsic_damping and omega:
        d_e += intrinsic_damping * thermal_occupation(omega, state.electron_temperature)
    return d_e, d_p


def _complex_normal(rng, shape):
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)


def step_coupled_modes(state: CoupledState, coupling: CouplingParams, kappa: float,
                       dt: float, *, intrinsic_electron_damping: float = 0.0,
                       rng: Optional[np.random.Generator] = None,
                       mode: Optional[CavityMode] = None,
                       heating_rate: float = 0.0) -> CoupledState:
    """Advance the electron/cavity pair by ``dt``.

    The linear drift is propagated exactly; thermal drives (cavity at
    ``mode.mode_temperature``, electron bath at ``state.electron_temperature``
    through the intrinsic damping, plus ``heating_rate`` quanta/s) are
    added as complex Gaussian kicks when ``rng`` is given.
    """
    g_coll = coupling.collective(state.n_electrons)
    _check_resolution(dt, kappa, g_coll, coupling.detuning)
    m = coupled_mode_matrix([coupling.detuning], [g_coll], kappa, intrinsic_electron_damping)
    prop = _expm2(m, dt)
    a_p, a_e = prop @ np.array([state.photon_amplitude, state.electron_amplitude])
    if rng is not None:
        omega = mode.resonance_frequency if mode is not None else None
        t_mode = mode.mode_temperature if mode is not None else 0.0
        d_e, d_p = _diffusion(state, kappa, omega, t_mode, intrinsic_electron_damping, heating_rate)
        kick = _complex_normal(rng, (2,))
        a_p += math.sqrt(d_p * dt) * kick[0]
        a_e += math.sqrt(d_e * dt) * kick[1]
    return replace(state, electron_amplitude=complex(a_e), photon_amplitude=complex(a_p))


def propagate_coupled_modes(state: CoupledState, coupling: CouplingParams, kappa: float,
                            dt: float, n_steps: int, *, intrinsic_electron_damping: float = 0.0,
                            rng: Optional[np.random.Generator] = None,
                            mode: Optional[CavityMode] = None, heating_rate: float = 0.0):
    """Repeated :func:`step_coupled_modes`; returns (electron, photon) arrays
    of length n_steps + 1.  Draws the same random stream as stepping one
    call at a time."""
    g_coll = coupling.collective(state.n_electrons)
    _check_resolution(dt, kappa, g_coll, coupling.detuning)
    m = coupled_mode_matrix([coupling.detuning], [g_coll], kappa, intrinsic_electron_damping)
    prop = _expm2(m, dt)
    out = np.empty((n_steps + 1, 2), dtype=complex)
    x = np.array([state.photon_amplitude, state.electron_amplitude], dtype=complex)
    out[0] = x
    if rng is not None:
        omega = mode.resonance_frequency if mode is not None else None
        t_mode = mode.mode_temperature if mode is not None else 0.0
        d_e, d_p = _diffusion(state, kappa, omega, t_mode, intrinsic_electron_damping, heating_rate)
        kicks = _complex_normal(rng, (n_steps, 2)) * np.sqrt(np.array([d_p, d_e]) * dt)
    else:
        kicks = None
    p00, p01, p10, p11 = prop[0, 0], prop[0, 1], prop[1, 0], prop[1, 1]
    ap, ae = complex(x[0]), complex(x[1])
    for i in range(n_steps):
        ap, ae = p00 * ap + p01 * ae, p10 * ap + p11 * ae
        if kicks is not None:
            ap += kicks[i, 0]
            ae += kicks[i, 1]
        out[i + 1, 0] = ap
        out[i + 1, 1] = ae
    return out[:, 1], out[:, 0]


def _exprel(z):
    """(exp(z) - 1) / z, stable near zero."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-6
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(safe) / safe)


def discretize_linear_modes(m, diffusion, dt):
    """Exact discretization of dx = m x dt + sqrt(D) dW over ``dt``.

    Returns (transition matrix, noise factor L) with L L^H the covariance of
    the accumulated noise, valid for any ``dt``.  Uses the eigenbasis of
    ``m``; falls back to the Van Loan block exponential when ``m`` is close
    to defective.
    """
    m = np.asarray(m, dtype=complex)
    n = m.shape[0]
    dmat = np.diag(np.asarray(diffusion, dtype=float)).astype(complex)
    mu, v = np.linalg.eig(m)
    cond = np.linalg.cond(v)
    if cond < 1e8:
        vinv = np.linalg.inv(v)
        phi = (v * np.exp(mu * dt)) @ vinv
        if not np.any(dmat):
            return phi, np.zeros((n, n), dtype=complex)
        b = vinv @ dmat @ vinv.conj().T
        s = mu[:, None] + mu.conj()[None, :]
        q = v @ (b * dt * _exprel(s * dt)) @ v.conj().T
    else:
        phi = expm(m * dt)
        if not np.any(dmat):
            return phi, np.zeros((n, n), dtype=complex)
        blk = np.zeros((2 * n, 2 * n), dtype=complex)
        blk[:n, :n] = m
        blk[:n, n:] = dmat
        blk[n:, n:] = -m.conj().T
        e = expm(blk * dt)
        q = e[:n, n:] @ phi.conj().T
    q = 0.5 * (q + q.conj().T)
    w, u = np.linalg.eigh(q)
    return phi, u * np.sqrt(np.clip(w, 0.0, None))


# --------------------------------------------------------------------------
# detection chain


@dataclass(frozen=True)
class FilterStage:
    name: str
    suppression_db: float  # at the trap drive frequency
    transmission_db: float = 0.0  # at the readout frequency


@dataclass(frozen=True)
class FilterChain:
    stages: tuple = ()
    gain_db: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def readout_gain_db(self):
        """Net gain seen by the readout-frequency signal."""
        return self.gain_db + sum(s.transmission_db for s in self.stages)

    def report(self):
        rows = [f"{'stage':<28}{'trap suppression (dB)':>24}{'readout transmission (dB)':>28}"]
        for s in self.stages:
            rows.append(f"{s.name:<28}{s.suppression_db:>24.6g}{s.transmission_db:>28.6g}")
        rows.append(f"total filtering: {filter_budget(self):.6g} dB")
        rows.append(f"post-chain gain: {self.gain_db:.6g} dB")
        return "\n".join(rows) + "\n"


REFERENCE_CHAIN = FilterChain(
    stages=(
        FilterStage("node placement", 30.0),
        FilterStage("hybrid interference", 16.0),
        FilterStage("low-pass pair", 80.0),
    ),
    gain_db=62.0,
)


def filter_budget(chain: FilterChain) -> float:
    """Total suppression of the trap drive (dB): stage suppressions add."""
    return float(sum(s.suppression_db for s in chain.stages))


def watts_to_dbm(watts):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(watts) / 1e-3)


def dbm_to_watts(dbm):
    return 1e-3 * 10.0 ** (np.asarray(dbm) / 10.0)


@dataclass(frozen=True)
class NoiseFloor:
    thermal: float  # W
    residual: float  # W

    @property
    def total(self):
        return self.thermal + self.residual

    @property
    def thermal_share(self):
        return self.thermal / self.total if self.total else float("nan")

    @property
    def dbm(self):
        return float(watts_to_dbm(self.total))


def noise_floor(mode: CavityMode, resolution_bandwidth: float, gain_db: float,
                thermal_share: float = 0.87) -> NoiseFloor:
    """Detected floor: thermal k_B T B kappa_ex/kappa times gain, plus a
    flat residual sized so the thermal part is ``thermal_share`` of it."""
    if not resolution_bandwidth > 0:
        raise ValueError("resolution bandwidth must be positive")
    if not 0 < thermal_share <= 1:
        raise ValueError("thermal share must be in (0, 1]")
    k_ex = mode.kappa_ex
    thermal = (constants.k * mode.mode_temperature * resolution_bandwidth * k_ex / mode.kappa
               * 10.0 ** (gain_db / 10.0))
    residual = thermal * (1.0 - thermal_share) / thermal_share
    return NoiseFloor(thermal, residual)


def signal_capture(resolution_bandwidth, g, kappa):
    """Fraction of the electron-driven emission inside the analyzer RBW.

    The emission of one harmonic electron is spread over its damping width
    4 g^2/kappa; a narrower RBW captures the proportional share.
    """
    width = 4.0 * g * g / kappa
    if width == 0.0:
        return 1.0
    return min(1.0, resolution_bandwidth / width)


@dataclass(frozen=True)
class OutputPower:
    signal: float  # W
    floor: NoiseFloor

    @property
    def watts(self):
        return self.signal + self.floor.total

    @property
    def dbm(self):
        return float(watts_to_dbm(self.watts))


def output_power(state: CoupledState, mode: CavityMode, chain: FilterChain,
                 resolution_bandwidth: float, coupling: CouplingParams,
                 thermal_share: float = 0.87, degradation: float = 1.0) -> OutputPower:
    """Power at the analyzer for the intracavity ``state``.

    Signal: hbar omega kappa_ex |a_p|^2 leaving through the port, times the
    RBW capture fraction, the readout gain and ``degradation``.  The noise
    floor is added on top.
    """
    gain_db = chain.readout_gain_db
    kappa = mode.kappa
    leaving = constants.hbar * mode.resonance_frequency * mode.kappa_ex * state.photon_quanta
    capture = signal_capture(resolution_bandwidth, coupling.g, kappa)
    signal = leaving * capture * degradation * 10.0 ** (gain_db / 10.0)
    return OutputPower(signal, noise_floor(mode, resolution_bandwidth, gain_db, thermal_share))
