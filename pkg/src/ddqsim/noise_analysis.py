"""Stability analysis of fitted-frequency time series.

Overlapping Allan deviation with the two-term white + 1/f model
sigma(tau) = sqrt(B/2) tau^(-1/2) + sqrt(2 ln2 A), and Welch spectral
density with the matching A/f + B model. B is the one-sided white PSD
(Hz^2/Hz) and A the 1/f amplitude (Hz^2 at 1 Hz) in both estimators, so the
two fits can cross-check each other. Slow Lorentzian (telegraph) features
are detected as bumps above the fitted model, not fit.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls
from scipy.signal import welch

from .errors import ConfigError, FitConvergenceError
from .fitting import lm_least_squares

FREQ_CSV_HEADER = ("timestamp_s", "delta_f_hz", "source")


@dataclass
class FrequencySeries:
    """Mean-removed frequency-deviation samples on a uniform grid.

    Input timestamps may jitter by up to 1%; anything worse is linearly
    resampled onto a uniform grid. At least 16 samples are required.
    """

    values: np.ndarray     # Hz, mean removed
    tau0_s: float          # sample spacing
    source: str = "logical"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.values) < 16:
            raise ConfigError("need at least 16 samples")
        if not self.tau0_s > 0:
            raise ConfigError("sample spacing must be > 0")
        self.values = self.values - self.values.mean()

    @classmethod
    def from_timestamps(cls, timestamps_s, values_hz,
                        source: str = "logical") -> "FrequencySeries":
        ts = np.asarray(timestamps_s, dtype=float)
        vals = np.asarray(values_hz, dtype=float)
        if len(ts) != len(vals):
            raise ConfigError("timestamps and values differ in length")
        if len(ts) < 16:
            raise ConfigError("need at least 16 samples")
        steps = np.diff(ts)
        if np.any(steps <= 0):
            raise ConfigError("timestamps must be strictly increasing")
        tau0 = float(steps.mean())
        if np.max(np.abs(steps - tau0)) > 0.01 * tau0:
            uniform = ts[0] + tau0 * np.arange(len(ts))
            vals = np.interp(uniform, ts, vals)
        return cls(values=vals, tau0_s=tau0, source=source)


def read_frequency_csv(path) -> list[FrequencySeries]:
    """Read `timestamp_s,delta_f_hz,source` rows; one series per source."""
    groups: dict[str, list] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(FREQ_CSV_HEADER):
            raise ConfigError(f"{path}: line 1: bad header {header}")
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                groups.setdefault(row[2], []).append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}: line {ln}: {exc}") from exc
    out = []
    for source, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        arr = np.array(rows)
        out.append(FrequencySeries.from_timestamps(arr[:, 0], arr[:, 1], source))
    return out


def write_frequency_csv(path, series_list) -> None:
    if isinstance(series_list, FrequencySeries):
        series_list = [series_list]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FREQ_CSV_HEADER)
        for s in series_list:
            for i, v in enumerate(s.values):
                w.writerow([repr(i * s.tau0_s), repr(float(v)), s.source])


@dataclass
class AllanCurve:
    tau_s: np.ndarray
    sigma_hz: np.ndarray
    n_pairs: np.ndarray


def default_taus(n_samples: int, tau0_s: float) -> np.ndarray:
    """Octave-spaced tau grid from tau0 up to N*tau0/3."""
    ms = []
    m = 1
    while m <= n_samples / 3.0:
        ms.append(m)
        m *= 2
    return np.asarray(ms, dtype=float) * tau0_s


def overlapping_allan(series: FrequencySeries, taus=None) -> AllanCurve:
    """Overlapping Allan deviation of frequency data.

    sigma^2(m tau0) = mean over all overlapping pairs of m-sample averages
    (ybar_{i+m} - ybar_i)^2 / 2. Requested taus must be integer multiples of
    tau0 and leave at least two overlapping differences.
    """
    y = series.values
    n = len(y)
    if taus is None:
        taus = default_taus(n, series.tau0_s)
    taus = np.asarray(taus, dtype=float)
    sigmas = np.empty(len(taus))
    counts = np.empty(len(taus), dtype=np.int64)
    csum = np.concatenate([[0.0], np.cumsum(y)])
    for i, tau in enumerate(taus):
        m = tau / series.tau0_s
        m_int = int(round(m))
        if abs(m - m_int) > 1e-6 or m_int < 1:
            raise ConfigError(f"tau {tau} is not an integer multiple of tau0")
        n_pairs = n - 2 * m_int + 1
        if n_pairs < 2:
            raise ConfigError(f"fewer than 2 differences at tau {tau}")
        block = (csum[m_int:] - csum[:-m_int]) / m_int   # overlapping means
        diff = block[m_int:] - block[:-m_int]
        sigmas[i] = math.sqrt(0.5 * float(np.mean(diff * diff)))
        counts[i] = n_pairs
    return AllanCurve(tau_s=taus, sigma_hz=sigmas, n_pairs=counts)


def _allan_model(a_term: float, b_term: float, tau: np.ndarray) -> np.ndarray:
    # a_term = sqrt(2 ln2 A), b_term = sqrt(B/2)
    return b_term / np.sqrt(tau) + a_term


def fit_allan_model(tau_s, sigma_hz) -> tuple[float, float, dict]:
    """Fit sigma(tau) = sqrt(B/2) tau^-1/2 + sqrt(2 ln2 A) in log space.

    Returns (A [Hz^2], B [Hz^2/Hz], diagnostics). Both amplitudes are
    clamped at zero (with a warning) when the data does not support them.
    """
    tau = np.asarray(tau_s, dtype=float)
    sig = np.asarray(sigma_hz, dtype=float)
    if len(tau) < 4:
        raise ConfigError("need >= 4 tau points")
    if tau.max() / tau.min() < 10 ** 1.5:
        raise ConfigError("tau grid must span >= 1.5 decades")
    if np.all(sig <= 0):
        return 0.0, 0.0, {"converged": True, "warning": "zero curve"}
    design = np.stack([1.0 / np.sqrt(tau), np.ones_like(tau)], axis=1)
    coeffs, _ = nnls(design, sig)
    b_term, a_term = coeffs
    positive = sig > 0
    clamped = []

    def resid(theta):
        model = _allan_model(math.exp(theta[0]), math.exp(theta[1]),
                             tau[positive])
        return np.log(model) - np.log(sig[positive])

    if a_term > 0 and b_term > 0:
        theta0 = np.log([a_term, b_term])
        theta, info = lm_least_squares(resid, theta0)
        a_term, b_term = math.exp(theta[0]), math.exp(theta[1])
    else:
        info = {"converged": True, "message": "nnls boundary solution"}
        if a_term <= 0:
            clamped.append("A")
        if b_term <= 0:
            clamped.append("B")
        warnings.warn(f"Allan model amplitude(s) clamped at 0: {clamped}",
                      stacklevel=2)
    a = a_term ** 2 / (2.0 * math.log(2.0))
    b = 2.0 * b_term ** 2
    diagnostics = dict(info)
    diagnostics["clamped"] = clamped
    return float(a), float(b), diagnostics


def flag_allan_bumps(curve: AllanCurve, excess: float = 0.5,
                     min_run: int = 2) -> tuple[np.ndarray, float, float]:
    """Flag Lorentzian-like bumps the two-term model cannot describe.

    Fits the white + 1/f model robustly (two trimming rounds drop points far
    above the fit, so a large bump cannot drag the baseline up), then flags
    taus where sigma exceeds the model by more than ``excess`` (fractional)
    over at least ``min_run`` consecutive points. Returns (mask, A, B).
    """
    tau, sig = curve.tau_s, curve.sigma_hz
    keep = np.ones(len(tau), dtype=bool)
    a = b = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(3):
            a, b, _ = fit_allan_model(tau[keep], sig[keep]) if keep.sum() >= 4 \
                else (a, b, None)
            model = _allan_model(math.sqrt(2 * math.log(2) * a),
                                 math.sqrt(b / 2.0), tau)
            new_keep = sig <= (1.0 + excess) * np.maximum(model, 1e-300)
            if new_keep.sum() < 4 or np.array_equal(new_keep, keep):
                break
            keep = new_keep
    model = _allan_model(math.sqrt(2 * math.log(2) * a),
                         math.sqrt(b / 2.0), tau)
    over = sig > (1.0 + excess) * np.maximum(model, 1e-300)
    mask = np.zeros(len(tau), dtype=bool)
    run = 0
    for i, flag in enumerate(over):
        run = run + 1 if flag else 0
        if run >= min_run:
            mask[i - run + 1:i + 1] = True
    return mask, a, b


def welch_psd(series: FrequencySeries, segment_length: int | None = None,
              overlap: float = 0.5, window: str = "hann"):
    """One-sided Welch PSD (Hz^2/Hz vs Hz).

    Hann window, 50% overlap and a power-of-two segment of roughly N/8 by
    default; window-power (density) normalization so the PSD integrates to
    the series variance for white input.
    """
    y = series.values
    n = len(y)
    if segment_length is None:
        segment_length = 2 ** max(3, int(math.floor(math.log2(max(n // 8, 8)))))
        segment_length = min(segment_length, n)
    if segment_length < 8:
        raise ConfigError("segment length must be >= 8")
    if segment_length > n:
        raise ConfigError("segment length exceeds series length")
    freqs, psd = welch(y, fs=1.0 / series.tau0_s, window=window,
                       nperseg=segment_length,
                       noverlap=int(overlap * segment_length),
                       detrend="constant", scaling="density")
    return freqs, psd


def fit_psd_model(freqs_hz, psd) -> tuple[float, float, dict]:
    """Fit S(f) = A/f + B in log-log space; returns (A, B, diagnostics)."""
    f = np.asarray(freqs_hz, dtype=float)
    s = np.asarray(psd, dtype=float)
    sel = (f > 0) & (s > 0)
    f, s = f[sel], s[sel]
    if len(f) < 6:
        raise ConfigError("need >= 6 nonzero frequency bins")
    design = np.stack([1.0 / f, np.ones_like(f)], axis=1)
    coeffs, _ = nnls(design, s)
    a0, b0 = coeffs
    lo = s[f <= np.quantile(f, 0.33)]
    hi = s[f >= np.quantile(f, 0.67)]
    a0 = a0 if a0 > 0 else max(float(np.median(lo) * np.median(f)), 1e-30)
    b0 = b0 if b0 > 0 else max(float(np.median(hi)), 1e-30)

    def resid(theta):
        return np.log(math.exp(theta[0]) / f + math.exp(theta[1])) - np.log(s)

    theta, info = lm_least_squares(resid, np.log([a0, b0]))
    if not info["converged"]:
        raise FitConvergenceError("PSD model fit did not converge", info)
    return math.exp(theta[0]), math.exp(theta[1]), dict(info)


def write_allan_csv(path, curve: AllanCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("tau_s", "sigma_hz"))
        for tau, sig in zip(curve.tau_s, curve.sigma_hz):
            w.writerow([repr(float(tau)), repr(float(sig))])


def write_psd_csv(path, freqs, psd) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("freq_hz", "psd_hz2_per_hz"))
        for f, s in zip(freqs, psd):
            w.writerow([repr(float(f)), repr(float(s))])
