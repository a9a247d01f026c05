"""Photon-echo decay fitting and linewidth-temperature modelling.

Two-pulse echo envelopes are fitted with the stretched-exponential decay
A * exp[-(2*t12/T_M)^x]; the homogeneous linewidth is defined from the
phase memory time as 1/(pi*T_M). Its temperature dependence is modelled
as a residual linewidth plus a thermally activated term,
Gamma_h(T) = Gamma_0 + Gamma_Delta * exp(-h*Delta / (kB*T)),
fitted by (optionally inverse-variance weighted) nonlinear least squares.

Both fitters use deterministic data-driven initial guesses, so repeated
runs on the same input give identical results.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .constants import H_OVER_KB_K_PER_GHZ

__all__ = [
    "DecaySeries",
    "MimsFit",
    "LinewidthSeries",
    "LinewidthFit",
    "FitError",
    "best_of_shots",
    "mims_decay",
    "fit_mims",
    "homogeneous_linewidth",
    "linewidth_model",
    "fit_linewidth_temperature",
]


class FitError(RuntimeError):
    """Nonlinear fit failed to converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass
class DecaySeries:
    """Echo amplitudes versus pulse delay, possibly several shots per delay."""

    t12: np.ndarray
    amplitude: np.ndarray
    shot: np.ndarray = None

    def __post_init__(self):
        self.t12 = np.asarray(self.t12, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        if self.shot is None:
            self.shot = np.zeros(self.t12.shape, dtype=int)
        self.shot = np.asarray(self.shot, dtype=int)
        if not (self.t12.shape == self.amplitude.shape == self.shot.shape):
            raise ValueError("t12, amplitude and shot must have equal length")
        if self.t12.size == 0:
            raise ValueError("empty decay series")
        if np.any(self.t12 <= 0):
            raise ValueError("all delays must be positive")

    @staticmethod
    def from_csv(path) -> "DecaySeries":
        """Read `t12_us, amplitude, shot` CSV (shot column optional)."""
        t, a, s = [], [], []
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            for row in reader:
                if not row:
                    continue
                t.append(float(row[0]))
                a.append(float(row[1]))
                s.append(int(row[2]) if len(row) > 2 else 0)
        return DecaySeries(np.array(t), np.array(a), np.array(s))


def best_of_shots(series: DecaySeries) -> DecaySeries:
    """Keep the best (largest) echo amplitude at each delay."""
    delays = np.unique(series.t12)
    best = np.array([
        series.amplitude[series.t12 == d].max() for d in delays
    ])
    return DecaySeries(delays, best, np.zeros(delays.shape, dtype=int))


def mims_decay(t12, amplitude0, T_M, x):
    """Stretched-exponential echo amplitude at delay t12."""
    return amplitude0 * np.exp(-((2.0 * np.asarray(t12) / T_M) ** x))


@dataclass
class MimsFit:
    """Fitted stretched-exponential parameters with 1-sigma covariance."""

    T_M: float
    x: float
    amplitude0: float
    covariance: np.ndarray = field(repr=False, default=None)

    @property
    def sigma_T_M(self) -> float:
        return float(np.sqrt(self.covariance[0, 0]))

    @property
    def sigma_x(self) -> float:
        return float(np.sqrt(self.covariance[1, 1]))

    @property
    def gamma_h_kHz(self) -> float:
        return homogeneous_linewidth(self.T_M)


def _initial_tm(t12: np.ndarray, amp: np.ndarray) -> float:
    """Delay-scale guess: twice the delay where the amplitude falls to 1/e
    of its first value, found by linear interpolation."""
    target = amp[0] / np.e
    for k in range(1, t12.size):
        if amp[k] <= target:
            a0, a1 = amp[k - 1], amp[k]
            frac = 0.0 if a1 == a0 else (a0 - target) / (a0 - a1)
            return 2.0 * (t12[k - 1] + frac * (t12[k] - t12[k - 1]))
    return 2.0 * t12[-1]


def _covariance(res, n_points: int, n_params: int) -> np.ndarray:
    """Linearised (Gauss-Newton) covariance at the optimum."""
    dof = max(n_points - n_params, 1)
    s2 = 2.0 * res.cost / dof
    jtj = res.jac.T @ res.jac
    try:
        return s2 * np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return s2 * np.linalg.pinv(jtj)


def fit_mims(series: DecaySeries, reduce_shots: bool = True,
             max_iterations: int = 2000) -> MimsFit:
    """Fit A*exp[-(2*t12/T_M)^x] to an echo decay.

    Shots are reduced with best_of_shots first (disable with
    reduce_shots=False when the series is already one point per delay).
    Requires at least 4 distinct delays. Raises FitError on
    non-convergence, carrying the last iterate.
    """
    data = best_of_shots(series) if reduce_shots else series
    order = np.argsort(data.t12)
    t, a = data.t12[order], data.amplitude[order]
    if np.unique(t).size < 4:
        raise ValueError("need at least 4 distinct delays to fit a Mims decay")

    p0 = np.array([_initial_tm(t, a), 1.0, a[0]])

    def residual(p):
        return mims_decay(t, p[2], p[0], p[1]) - a

    res = least_squares(
        residual, p0,
        bounds=([1e-12, 1e-3, -np.inf], [np.inf, 20.0, np.inf]),
        max_nfev=max_iterations,
    )
    if not res.success:
        raise FitError(
            f"Mims fit did not converge: {res.message}", last_iterate=res.x
        )
    cov = _covariance(res, t.size, 3)
    return MimsFit(T_M=res.x[0], x=res.x[1], amplitude0=res.x[2], covariance=cov)


def homogeneous_linewidth(T_M_us: float) -> float:
    """Homogeneous linewidth 1/(pi*T_M) in kHz, for T_M in microseconds."""
    if T_M_us <= 0:
        raise ValueError("T_M must be positive")
    return 1e3 / (np.pi * T_M_us)


@dataclass
class LinewidthSeries:
    """Homogeneous linewidths versus temperature, optional 1-sigma errors."""

    T_mK: np.ndarray
    gamma_kHz: np.ndarray
    sigma_kHz: np.ndarray = None

    def __post_init__(self):
        self.T_mK = np.asarray(self.T_mK, dtype=float)
        self.gamma_kHz = np.asarray(self.gamma_kHz, dtype=float)
        if self.sigma_kHz is not None:
            self.sigma_kHz = np.asarray(self.sigma_kHz, dtype=float)
            if self.sigma_kHz.shape != self.T_mK.shape:
                raise ValueError("sigma_kHz length mismatch")
        if self.T_mK.shape != self.gamma_kHz.shape:
            raise ValueError("temperature and linewidth lengths differ")
        if np.any(self.T_mK <= 0) or np.any(self.gamma_kHz <= 0):
            raise ValueError("temperatures and linewidths must be positive")

    @staticmethod
    def from_csv(path) -> "LinewidthSeries":
        """Read `temperature_mK, gamma_h_kHz, sigma_kHz` CSV (sigma optional)."""
        T, g, s = [], [], []
        has_sigma = False
        with open(path) as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if not row:
                    continue
                T.append(float(row[0]))
                g.append(float(row[1]))
                if len(row) > 2 and row[2].strip():
                    s.append(float(row[2]))
                    has_sigma = True
        sig = np.array(s) if has_sigma and len(s) == len(T) else None
        return LinewidthSeries(np.array(T), np.array(g), sig)


def linewidth_model(T_mK, gamma0_kHz, gamma_delta_MHz, delta_GHz):
    """Gamma_h(T) in kHz: residual plus thermally activated broadening."""
    T_K = np.asarray(T_mK, dtype=float) * 1e-3
    activation = np.exp(-H_OVER_KB_K_PER_GHZ * delta_GHz / T_K)
    return gamma0_kHz + 1e3 * gamma_delta_MHz * activation


@dataclass
class LinewidthFit:
    """Fitted linewidth-temperature parameters with covariance."""

    gamma0_kHz: float
    gamma_delta_MHz: float
    delta_GHz: float
    covariance: np.ndarray = field(repr=False, default=None)

    @property
    def sigma_gamma0_kHz(self) -> float:
        return float(np.sqrt(self.covariance[0, 0]))

    @property
    def sigma_gamma_delta_MHz(self) -> float:
        return float(np.sqrt(self.covariance[1, 1]))

    @property
    def sigma_delta_GHz(self) -> float:
        return float(np.sqrt(self.covariance[2, 2]))

    @property
    def broadening_ratio(self) -> float:
        """Gamma_Delta / Gamma_0 (dimensionless, both in kHz)."""
        return 1e3 * self.gamma_delta_MHz / self.gamma0_kHz


def _initial_linewidth_params(T: np.ndarray, g: np.ndarray):
    """Deterministic starting point: floor from the coldest points, the
    activation energy from the log-slope over the hot half, and the
    prefactor from one linear solve."""
    gamma0 = g.min()
    order = np.argsort(T)
    T_s, g_s = T[order], g[order]
    half = T_s.size // 2
    T_hot, g_hot = T_s[half:], g_s[half:]
    excess = g_hot - gamma0
    usable = excess > 0
    if usable.sum() >= 2:
        # ln(excess) = ln(1e3*GD) - C*Delta/T with C = h/kB in K/GHz
        x = 1.0 / (T_hot[usable] * 1e-3)
        y = np.log(excess[usable])
        slope, intercept = np.polyfit(x, y, 1)
        delta = max(-slope / H_OVER_KB_K_PER_GHZ, 0.1)
        gamma_delta = np.exp(intercept) * 1e-3
    else:
        delta = 10.0
        gamma_delta = max((g.max() - gamma0) * 1e-3, 1e-6)
    return np.array([max(gamma0, 1e-6), max(gamma_delta, 1e-9), delta])


def fit_linewidth_temperature(series: LinewidthSeries,
                              weighted: bool | None = None,
                              max_iterations: int = 5000) -> LinewidthFit:
    """Fit Gamma_0 + Gamma_Delta exp(-h*Delta/kB*T) to linewidth data.

    Needs at least 4 points spanning the flat and the activated regions.
    ``weighted=None`` uses inverse-variance weighting exactly when the
    series carries uncertainties. Raises FitError on non-convergence and
    when the data is flat (no activated region to constrain Delta).
    """
    T, g = series.T_mK, series.gamma_kHz
    if T.size < 4:
        raise ValueError("need at least 4 temperature points")
    if weighted is None:
        weighted = series.sigma_kHz is not None
    if weighted and series.sigma_kHz is None:
        raise ValueError("weighted fit requested but no uncertainties given")
    w = 1.0 / series.sigma_kHz if weighted else np.ones_like(g)

    spread = g.max() - g.min()
    if spread <= 1e-12 * g.max():
        raise FitError("all linewidths equal: activation term unconstrained")

    p0 = _initial_linewidth_params(T, g)

    def residual(p):
        return w * (linewidth_model(T, p[0], p[1], p[2]) - g)

    res = least_squares(
        residual, p0,
        bounds=([0.0, 0.0, 1e-3], [np.inf, np.inf, np.inf]),
        max_nfev=max_iterations,
    )
    if not res.success:
        raise FitError(
            f"linewidth fit did not converge: {res.message}", last_iterate=res.x
        )
    fit = LinewidthFit(
        gamma0_kHz=res.x[0], gamma_delta_MHz=res.x[1], delta_GHz=res.x[2],
        covariance=_covariance(res, T.size, 3),
    )
    # Positive parameters make the model curve nondecreasing in T; check it
    # on the data range as a guard against a degenerate optimum.
    grid = np.linspace(T.min(), T.max(), 64)
    curve = linewidth_model(grid, fit.gamma0_kHz, fit.gamma_delta_MHz, fit.delta_GHz)
    if np.any(np.diff(curve) < -1e-9 * curve.max()):
        raise FitError("fitted model is not monotone in temperature", res.x)
    return fit
