"""
Trace analysis: exponential decay and Gaussian peak fits, signal-to-noise
ratio and electron-number estimation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .errors import FitError, ParameterError
from .potential import PotentialModel, thermal_frequency_bins

__all__ = [
    "DEFAULT_DEGRADATION",
    "DecayFit",
    "GaussianFit",
    "fit_exponential_decay",
    "fit_gaussian",
    "snr",
    "estimate_electron_number",
    "computed_degradation",
]

# anharmonic signal-reduction factor used when none is configured
DEFAULT_DEGRADATION = 0.0062

_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
_TIGHT = dict(xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)


def _xy(trace):
    if hasattr(trace, "x"):
        return np.asarray(trace.x, dtype=float), np.asarray(trace.y, dtype=float)
    x, y = trace
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def _stderr(res, n, p):
    dof = n - p
    if dof <= 0:
        return np.full(p, np.nan)
    s2 = 2.0 * res.cost / dof
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError:
        return np.full(p, np.inf)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


@dataclass
class DecayFit:
    """A exp(-(t - t_ref)/tau) + B; amplitude refers to the window start."""

    amplitude: float  # W
    time_constant: float  # s
    offset: float  # W
    rms_residual: float  # W
    stderr: dict = field(default_factory=dict)
    t_ref: float = 0.0
    n_points: int = 0

    @property
    def rate(self):
        return 1.0 / self.time_constant

    def evaluate(self, t):
        return self.amplitude * np.exp(-(np.asarray(t) - self.t_ref) / self.time_constant) + self.offset

    def to_dict(self):
        out = asdict(self)
        out["model"] = "exponential"
        return out


def fit_exponential_decay(trace, window=None, min_points: int = 20,
                          weighting: str = "uniform") -> DecayFit:
    """Least-squares fit of A exp(-t/tau) + B over ``window`` (s, s).

    Levenberg-Marquardt with the analytic Jacobian; tau is seeded by a
    log-linear regression of the smoothed, tail-subtracted data.  A negative
    baseline is replaced by the bounded solution with B = 0.

    weighting : "uniform" | "relative"
        "relative" refits once with each point weighted by the inverse of
        the first-pass model, appropriate when the noise scales with the
        mean power (detected noise, thermal fluctuations).
    """
    x, y = _xy(trace)
    if window is not None:
        lo, hi = window
        if lo < x[0] - 1e-12 or hi > x[-1] + 1e-12 or not hi > lo:
            raise FitError("fit window lies outside the trace")
        keep = (x >= lo) & (x <= hi)
        x, y = x[keep], y[keep]
    n = len(x)
    if n < min_points:
        raise FitError(f"only {n} samples in the fit window (need {min_points})")
    t0 = x[0]
    t = x - t0
    span = t[-1]
    if np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300):
        raise FitError("constant data: nothing decays")

    tail = max(3, n // 10)
    b0 = float(np.mean(y[-tail:]))
    # seed from a smoothed copy, using the stretch from the maximum down to
    # a fifth of it
    w = max(1, n // 40)
    ys = np.convolve(y, np.ones(w) / w, mode="valid") if w > 1 else y
    ts = t[w // 2: w // 2 + len(ys)]
    ex = ys - b0
    i0 = int(np.argmax(ex))
    below = np.nonzero(ex[i0:] < 0.2 * ex[i0])[0]
    i1 = i0 + (int(below[0]) if len(below) else len(ex) - i0)
    sel = np.zeros(len(ex), dtype=bool)
    sel[i0:i1] = ex[i0:i1] > 0
    if np.count_nonzero(sel) < 3:
        raise FitError("no decaying excess above the tail level")
    slope, icpt = np.polyfit(ts[sel], np.log(ex[sel]), 1)
    if not slope < 0:
        raise FitError("data are not decaying")
    k0 = -slope
    a0 = math.exp(icpt)

    def solve(p0, sigma, with_offset):
        def resid(p):
            a, k = p[0], p[1]
            b = p[2] if with_offset else 0.0
            return (a * np.exp(-k * t) + b - y) / sigma

        def jac(p):
            a, k = p[0], p[1]
            e = np.exp(-k * t)
            cols = [e, -a * t * e] + ([np.ones_like(t)] if with_offset else [])
            return np.column_stack(cols) / sigma[:, None]

        res = least_squares(resid, p0 if with_offset else p0[:2], jac=jac, method="lm",
                            x_scale="jac", **_TIGHT)
        if not res.success or not np.all(np.isfinite(res.x)):
            raise FitError("exponential fit did not converge")
        return res

    scale = max(float(np.max(np.abs(y))), 1e-300)
    sigma = np.full(n, scale)
    res = solve(np.array([a0, k0, b0]), sigma, True)
    if weighting == "relative":
        # second pass with the noise level proportional to the mean power
        model = res.x[0] * np.exp(-res.x[1] * t) + res.x[2]
        if np.all(model > 0):
            sigma = model
            res = solve(res.x, sigma, True)
    elif weighting != "uniform":
        raise ParameterError(f"unknown weighting {weighting!r}")
    a, k, b = res.x
    p = 3
    if b < 0:
        # the bounded optimum sits on b = 0
        res = solve(res.x, sigma, False)
        (a, k), b, p = res.x, 0.0, 2
    if not k > 0 or 1.0 / k > 100.0 * max(span, 1e-300):
        raise FitError(f"decay time diverges (tau = {1.0 / k if k else math.inf:.3g} s)")
    # covariance from the scaled residuals is already in parameter units
    errs = _stderr(res, n, p)
    se_a, se_k = errs[0], errs[1]
    se_b = errs[2] if p == 3 else 0.0
    if not a > 3.0 * se_a:
        raise FitError(f"no significant decaying amplitude (A = {a:.3g} +- {se_a:.2g})")
    tau = 1.0 / k
    r = a * np.exp(-k * t) + b - y
    return DecayFit(
        amplitude=float(a), time_constant=float(tau), offset=float(b),
        rms_residual=float(np.sqrt(np.mean(r * r))),
        stderr={"amplitude": float(se_a), "time_constant": float(se_k / (k * k)),
                "offset": float(se_b)},
        t_ref=float(t0), n_points=int(n))


@dataclass
class GaussianFit:
    center: float  # Hz
    sigma: float  # Hz
    height: float  # W
    baseline: float  # W
    rms_residual: float = 0.0
    stderr: dict = field(default_factory=dict)
    n_points: int = 0

    @property
    def fwhm(self):
        return _FWHM_PER_SIGMA * self.sigma

    def evaluate(self, x):
        return self.height * np.exp(-0.5 * ((np.asarray(x) - self.center) / self.sigma) ** 2) + self.baseline

    def to_dict(self):
        out = asdict(self)
        out["fwhm"] = self.fwhm
        out["model"] = "gaussian"
        return out


def _robust_sigma(y):
    d = np.diff(y)
    return 1.4826 * float(np.median(np.abs(d - np.median(d)))) / math.sqrt(2.0)


def fit_gaussian(trace, smooth: int = 11) -> GaussianFit:
    """Least-squares Gaussian plus constant baseline.

    A peak must stand out: the smoothed maximum has to exceed the median
    by three times the point-to-point noise level.
    """
    x, y = _xy(trace)
    n = len(x)
    if n < 8:
        raise FitError("too few points for a Gaussian fit")
    base0 = float(np.median(y))
    noise = _robust_sigma(y)
    w = max(1, min(smooth, n // 8))
    ys = np.convolve(y, np.ones(w) / w, mode="same") if w > 1 else y
    edge = w // 2
    inner = slice(edge, n - edge) if edge else slice(None)
    peak = float(np.max(ys[inner]))
    if not peak - base0 > 3.0 * noise or peak - base0 <= 0:
        raise FitError("no peak above the noise")

    xc = 0.5 * (x[0] + x[-1])
    xs = max(0.5 * (x[-1] - x[0]), 1e-300)
    u = (x - xc) / xs
    exc = np.clip(ys - base0, 0.0, None)
    masked = np.full(n, -np.inf)
    masked[inner] = ys[inner]
    ipk = int(np.argmax(masked))
    # moments restricted to the half-maximum region around the peak
    half = exc >= 0.5 * exc[ipk]
    lo = hi = ipk
    while lo > 0 and half[lo - 1]:
        lo -= 1
    while hi < n - 1 and half[hi + 1]:
        hi += 1
    sl = slice(lo, hi + 1)
    wsum = float(np.sum(exc[sl]))
    c0 = float(np.sum(exc[sl] * u[sl]) / wsum) if wsum > 0 else u[ipk]
    s0 = max((u[hi] - u[lo]) / _FWHM_PER_SIGMA, abs(u[1] - u[0]))
    h0 = float(exc[ipk])
    ysc = max(float(np.max(np.abs(y))), 1e-300)

    def resid(p):
        h, c, s, b = p
        return (h * np.exp(-0.5 * ((u - c) / s) ** 2) + b - y) / ysc

    def jac(p):
        h, c, s, b = p
        z = (u - c) / s
        e = np.exp(-0.5 * z * z)
        return np.column_stack([e, h * e * z / s, h * e * z * z / s, np.ones_like(u)]) / ysc

    res = least_squares(resid, [h0, c0, s0, base0], jac=jac, method="lm", x_scale="jac", **_TIGHT)
    h, c, s, b = res.x
    s = abs(s)
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitError("Gaussian fit did not converge")
    se = _stderr(res, n, 4)
    se_h = se[0]
    if not h > 0 or (np.isfinite(se_h) and se_h > 0 and h < 3.0 * se_h):
        raise FitError("fitted peak is not significant")
    if not -1.0 <= c <= 1.0:
        raise FitError("fitted center outside the data range")
    spacing = float(np.min(np.diff(u))) if n > 1 else 0.0
    if s < spacing:
        raise FitError("fitted width below the sample spacing")
    r = resid([h, c, s, b]) * ysc
    return GaussianFit(
        center=float(xc + c * xs), sigma=float(s * xs), height=float(h), baseline=float(b),
        rms_residual=float(np.sqrt(np.mean(r * r))),
        stderr={"height": float(se_h), "center": float(se[1] * xs),
                "sigma": float(se[2] * xs), "baseline": float(se[3])},
        n_points=int(n))


def snr(trace, floor: float, thermal_share: float = 0.87) -> float:
    """Peak excess power over ``floor`` divided by the thermal part of the
    floor (``thermal_share`` of it)."""
    if not floor > 0:
        raise ParameterError("floor must be positive")
    if not 0 < thermal_share <= 1:
        raise ParameterError("thermal share must be in (0, 1]")
    y = trace.y if hasattr(trace, "y") else np.asarray(trace, dtype=float)
    return float((np.max(y) - floor) / (floor * thermal_share))


def estimate_electron_number(snr_value: float, degradation: float = DEFAULT_DEGRADATION) -> int:
    """N = snr / degradation rounded to the nearest integer.

    One harmonic electron in equilibrium with the readout mode gives unit
    SNR; ``degradation`` is the fraction of that signal that survives
    anharmonic broadening.
    """
    if not (0.0 < degradation <= 1.0) or not math.isfinite(degradation):
        raise ParameterError(f"degradation must be in (0, 1], got {degradation}")
    if not math.isfinite(snr_value):
        raise ParameterError("snr must be finite")
    return int(round(snr_value / degradation))


def computed_degradation(model: PotentialModel, temperature: float, kappa: float,
                         n_bins: int = 256) -> float:
    """Overlap of the thermal frequency distribution with the cavity
    Lorentzian, with the ensemble centered for the best overlap.

    Equals 1 without broadening.
    """
    if temperature == 0 or (model.c4 == 0 and model.c6 == 0):
        return 1.0
    factors, weights = thermal_frequency_bins(model, temperature, n_bins)
    w = model.omega_z
    hk2 = (0.5 * kappa) ** 2

    def neg_overlap(shift):
        d = w * factors + shift - w
        return -float(np.sum(weights * hk2 / (hk2 + d * d)))

    cands = w - w * factors
    best = min(cands, key=neg_overlap)
    step = max(kappa, float(np.ptp(cands)) / n_bins)
    res = minimize_scalar(neg_overlap, bounds=(best - step, best + step), method="bounded",
                          options={"xatol": 1e-6 * kappa})
    return float(min(1.0, -min(res.fun, neg_overlap(best))))
