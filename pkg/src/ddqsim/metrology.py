"""Error-detected coherence metrology: postselection, fits, bootstrap.

Postselection removes shots that leaked to |00> and renormalizes the logical
populations. Short-window linear fits give bit-flip/phase-flip rates, the
decaying-oscillation fit gives Ramsey coherence, and the saturating
exponential gives the leakage (erasure) rate. Fit uncertainties come from a
residual bootstrap: resampled residuals are laid onto the ideal fitted trace
and each synthetic trace is refit with the same procedure.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert

from .errors import (ConfigError, EmptyLogicalSubspaceError,
                     FitConvergenceError, ResampleError)
from .fitting import lm_least_squares

DEFAULT_FIT_WINDOW_US = 30.0
BOOTSTRAP_RESAMPLES = 250
BOOTSTRAP_QUANTILE = 0.05

TRACE_CSV_HEADER = ("delay_us", "n00", "n01", "n10", "n_total",
                    "init_label", "timestamp_s")


@dataclass
class TraceData:
    """Per-delay level counts of one repeated-shot experiment."""

    delays_us: np.ndarray
    n00: np.ndarray
    n01: np.ndarray
    n10: np.ndarray
    n_total: np.ndarray
    kind: str = "unknown"
    init_label: str = ""
    timestamp_s: float = 0.0

    def __post_init__(self):
        self.delays_us = np.asarray(self.delays_us, dtype=float)
        for name in ("n00", "n01", "n10", "n_total"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if np.any(np.diff(self.delays_us) <= 0):
            raise ConfigError("delays must be strictly increasing")
        if np.any(self.n00 + self.n01 + self.n10 > self.n_total):
            raise ConfigError("level counts exceed total shots")

    def p00(self) -> np.ndarray:
        return self.n00 / self.n_total


def write_trace_csv(path, traces) -> None:
    """Write one or more traces (e.g. both bit-flip initializations)."""
    if isinstance(traces, TraceData):
        traces = [traces]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_CSV_HEADER)
        for tr in traces:
            for i in range(len(tr.delays_us)):
                w.writerow([repr(float(tr.delays_us[i])), int(tr.n00[i]),
                            int(tr.n01[i]), int(tr.n10[i]), int(tr.n_total[i]),
                            tr.init_label, repr(float(tr.timestamp_s))])


def read_trace_csv(path, kind: str = "unknown") -> list[TraceData]:
    """Read a trace file; one TraceData per init_label, in file order."""
    groups: dict[str, list] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(TRACE_CSV_HEADER):
            raise ConfigError(f"{path}: line 1: bad trace header {header}")
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                delay = float(row[0])
                counts = [int(row[i]) for i in range(1, 5)]
                ts = float(row[6])
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}: line {ln}: {exc}") from exc
            groups.setdefault(row[5], []).append((delay, *counts, ts))
    traces = []
    for init, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        arr = np.array([r[:5] for r in rows])
        traces.append(TraceData(delays_us=arr[:, 0], n00=arr[:, 1],
                                n01=arr[:, 2], n10=arr[:, 3], n_total=arr[:, 4],
                                kind=kind, init_label=init,
                                timestamp_s=rows[0][5]))
    return traces


# --------------------------------------------------------------------------
# Postselection

def postselect(n00: int, n01: int, n10: int) -> tuple[float, float, float]:
    """Error-detected logical populations and erasure fraction at one delay.

    P(0_L) = n10 / (n01 + n10), P(1_L) = n01 / (n01 + n10); the erasure
    fraction is the |00> share of all classified shots. Raises
    EmptyLogicalSubspaceError when no shot remained logical (the point is
    excluded from fits, never imputed).
    """
    logical = n01 + n10
    if logical < 1:
        raise EmptyLogicalSubspaceError("no shots left in the logical subspace")
    classified = n00 + logical
    return n10 / logical, n01 / logical, n00 / classified


def postselect_trace(trace: TraceData):
    """Vectorized postselection; returns (delays, p0l, p1l, erasure, kept)."""
    logical = trace.n01 + trace.n10
    kept = logical >= 1
    with np.errstate(invalid="ignore", divide="ignore"):
        p0l = np.where(kept, trace.n10 / np.maximum(logical, 1), np.nan)
        p1l = np.where(kept, trace.n01 / np.maximum(logical, 1), np.nan)
        erasure = trace.n00 / np.maximum(trace.n00 + logical, 1)
    return trace.delays_us[kept], p0l[kept], p1l[kept], erasure[kept], kept


def bitflip_probability(p1l_given_init0: float, p0l_given_init1: float) -> float:
    """Mean of the two cross-initialization logical flip probabilities."""
    for v in (p1l_given_init0, p0l_given_init1):
        if not 0.0 <= v <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
    return 0.5 * (p1l_given_init0 + p0l_given_init1)


def bitflip_difference(trace_init0: TraceData, trace_init1: TraceData):
    """Difference signal P(1_L | init 1_L) - P(1_L | init 0_L) per delay.

    Both initializations must share a delay grid; delays where either trace
    lost its whole logical subspace are dropped.
    """
    if not np.array_equal(trace_init0.delays_us, trace_init1.delays_us):
        raise ConfigError("bit-flip traces need a common delay grid")
    _, _, p1l_0, _, kept0 = postselect_trace(trace_init0)
    _, _, p1l_1, _, kept1 = postselect_trace(trace_init1)
    kept = kept0 & kept1
    d0 = np.full(len(trace_init0.delays_us), np.nan)
    d1 = np.full(len(trace_init1.delays_us), np.nan)
    d0[kept0] = p1l_0
    d1[kept1] = p1l_1
    return trace_init0.delays_us[kept], (d1 - d0)[kept]


# --------------------------------------------------------------------------
# Fits

@dataclass
class FitResult:
    """One converged (or degenerate) model fit.

    ``delays_us``/``fitted``/``residuals`` cover exactly the points the fit
    used (residuals = data - model); ``bounds`` are filled in by
    `bootstrap_bounds` and always bracket the estimates.
    """

    model: str
    params: dict
    delays_us: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    window_us: float | None = None
    diagnostics: dict = field(default_factory=dict)
    bounds: dict | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.params.items()},
            "bounds": (None if self.bounds is None else
                       {k: [float(v[0]), float(v[1])]
                        for k, v in self.bounds.items()}),
            "window_us": self.window_us,
            "diagnostics": self.diagnostics,
        }


def _linear_predict(params, t):
    return params["offset"] + params["slope_per_us"] * t


def fit_linear_short(delays_us, signal, cutoff_us: float = DEFAULT_FIT_WINDOW_US,
                     ) -> FitResult:
    """Short-window linear decay fit (ordinary least squares).

    Fits offset + slope*t to all points with delay <= cutoff and reports the
    decay rate gamma = -slope (per ms) plus T = 1/gamma. A non-negative
    slope is reported with a warning: no decay resolvable.
    """
    delays_us = np.asarray(delays_us, dtype=float)
    signal = np.asarray(signal, dtype=float)
    sel = delays_us <= cutoff_us + 1e-9
    t = delays_us[sel]
    y = signal[sel]
    if len(t) < 3:
        raise ConfigError(f"need >= 3 points within {cutoff_us} us, got {len(t)}")
    slope, offset = np.polyfit(t, y, 1)
    gamma_per_ms = -slope * 1e3
    diagnostics = {"n_points": int(len(t)), "converged": True}
    if slope >= -1e-12:   # zero within numerical noise, or rising
        warnings.warn("no decay resolvable (slope >= 0)", stacklevel=2)
        diagnostics["warning"] = "no decay resolvable"
    params = {"slope_per_us": slope, "offset": offset,
              "gamma_per_ms": gamma_per_ms,
              "T_ms": 1.0 / gamma_per_ms if gamma_per_ms > 0 else math.inf}
    fitted = _linear_predict(params, t)
    return FitResult("linear", params, t, fitted, y - fitted,
                     window_us=cutoff_us, diagnostics=diagnostics)


def _ramsey_model(theta, t):
    amp, rate, f_khz, phi0, c = theta
    return amp * np.exp(-rate * t) * np.cos(2e-3 * math.pi * f_khz * t + phi0) + c


def fit_ramsey(delays_us, p0l, detuning_hint_khz: float | None = None,
               max_iter: int = 500) -> FitResult:
    """Decaying-oscillation fit A exp(-t/T2R) cos(2 pi df t + phi0) + C.

    Initialization: detuning from the zero-padded periodogram peak of the
    mean-subtracted signal, amplitude from half the peak-to-peak, offset from
    the mean, T2R from a log-envelope regression. Refined by damped
    Gauss-Newton until the relative parameter step is below 1e-9 (<= 500
    iterations). Raises FitConvergenceError when the solver stalls or the
    periodogram peak sits at DC (no oscillation to fit).
    """
    t = np.asarray(delays_us, dtype=float)
    y = np.asarray(p0l, dtype=float)
    if len(t) < 8:
        raise ConfigError("need >= 8 points for the oscillation fit")
    span = t[-1] - t[0]
    steps = np.diff(t)
    uniform = np.allclose(steps, steps.mean(), rtol=0.01)

    yc = y - y.mean()
    if uniform:
        nfft = 8 * len(t)
        power = np.abs(np.fft.rfft(yc, n=nfft)) ** 2
        freqs_khz = np.fft.rfftfreq(nfft, d=steps.mean()) * 1e3
        k = 1 + int(np.argmax(power[1:]))
        if power[k] <= 1e-24 * max(len(t), 1):
            raise FitConvergenceError("periodogram peak at DC: no oscillation")
        f0 = freqs_khz[k]
    elif detuning_hint_khz:
        f0 = float(detuning_hint_khz)
    else:
        raise ConfigError("nonuniform delays need a detuning hint")
    if detuning_hint_khz:
        if span * detuning_hint_khz * 1e-3 < 2.0:
            raise ConfigError("delays span fewer than 2 oscillation periods")

    amp0 = 0.5 * (y.max() - y.min())
    if amp0 <= 0:
        raise FitConvergenceError("periodogram peak at DC: no oscillation")
    c0 = float(y.mean())
    env = np.abs(hilbert(yc)) if uniform else np.abs(yc)
    good = env > 1e-3 * env.max()
    if good.sum() >= 2 and span > 0:
        esl = np.polyfit(t[good], np.log(env[good]), 1)[0]
        rate0 = min(max(-esl, 0.05 / span), 50.0 / span)
    else:
        rate0 = 1.0 / span
    z = np.sum(yc * np.exp(-2j * math.pi * f0 * 1e-3 * t))
    phi0 = float(np.angle(z))

    def resid(theta):
        return y - _ramsey_model(theta, t)

    theta0 = np.array([amp0, rate0, f0, phi0, c0])
    theta, info = lm_least_squares(resid, theta0, max_iter=max_iter)
    if not info["converged"]:
        raise FitConvergenceError("oscillation fit did not converge", info)
    amp, rate, f_khz, phi, c = theta
    # Canonical parameter branch: positive amplitude and detuning.
    if amp < 0:
        amp, phi = -amp, phi + math.pi
    if f_khz < 0:
        f_khz, phi = -f_khz, -phi
    phi = math.atan2(math.sin(phi), math.cos(phi))
    params = {"A": amp, "T2R_us": 1.0 / rate if rate > 0 else math.inf,
              "delta_f_khz": f_khz, "phi0_rad": phi, "C": c,
              "rate_per_us": rate}
    fitted = _ramsey_model([amp, rate, f_khz, phi, c], t)
    diagnostics = dict(info)
    if detuning_hint_khz:
        diagnostics["detuning_hint_khz"] = float(detuning_hint_khz)
    return FitResult("ramsey", params, t, fitted, y - fitted,
                     diagnostics=diagnostics)


def _erasure_model(theta, t):
    amp, rate, d = theta
    return amp * (1.0 - np.exp(-rate * t)) + d


def fit_erasure(delays_us, p00, max_iter: int = 500) -> FitResult:
    """Leakage fit A(1 - exp(-t/T_erasure)) + D on the |00> fraction.

    The amplitude lets the model saturate below one for mixed
    initializations; D absorbs erasure during the end-of-line readout
    itself. A flat trace degenerates to rate 0 with a warning.
    """
    t = np.asarray(delays_us, dtype=float)
    y = np.asarray(p00, dtype=float)
    if len(t) < 4:
        raise ConfigError("need >= 4 points for the leakage fit")
    if np.ptp(y) < 1e-12:
        warnings.warn("flat leakage trace; rate degenerate at 0", stacklevel=2)
        params = {"amplitude": 0.0, "T_erasure_us": math.inf, "D": float(y[0]),
                  "gamma_erasure_per_ms": 0.0}
        fitted = np.full_like(y, y[0])
        return FitResult("erasure", params, t, fitted, y - fitted,
                         diagnostics={"converged": True,
                                      "warning": "flat trace"})
    d0 = float(y[0])
    amp0 = max(float(y[-1] - d0), 1e-3)
    target = d0 + 0.632 * amp0
    above = np.nonzero(y >= target)[0]
    span = t[-1] - t[0]
    t630 = t[above[0]] if len(above) and t[above[0]] > 0 else span / 3.0
    theta0 = np.array([amp0, 1.0 / t630, d0])

    def resid(theta):
        return y - _erasure_model(theta, t)

    theta, info = lm_least_squares(resid, theta0, max_iter=max_iter)
    if not info["converged"]:
        raise FitConvergenceError("leakage fit did not converge", info)
    amp, rate, d = theta
    params = {"amplitude": amp,
              "T_erasure_us": 1.0 / rate if rate > 0 else math.inf,
              "D": d, "gamma_erasure_per_ms": 1e3 * rate}
    fitted = _erasure_model(theta, t)
    return FitResult("erasure", params, t, fitted, y - fitted,
                     diagnostics=dict(info))


# --------------------------------------------------------------------------
# Bootstrap

_MODEL_DOF = {"linear": 2, "ramsey": 5, "erasure": 3}


def _refit(model: str, fit: FitResult, delays, values) -> FitResult:
    if model == "linear":
        return fit_linear_short(delays, values, cutoff_us=fit.window_us)
    if model == "ramsey":
        hint = fit.diagnostics.get("detuning_hint_khz")
        return fit_ramsey(delays, values, detuning_hint_khz=hint)
    if model == "erasure":
        return fit_erasure(delays, values)
    raise ValueError(f"no bootstrap refitter for model {model!r}")


def bootstrap_bounds(fit: FitResult, n_resamples: int = BOOTSTRAP_RESAMPLES,
                     quantile: float = BOOTSTRAP_QUANTILE, seed: int = 0,
                     ) -> dict:
    """Residual-bootstrap parameter bounds (default 5%/95% quantiles).

    Residuals are resampled with replacement onto the ideal fitted trace;
    each synthetic trace is refit with the same procedure and the empirical
    quantiles of each parameter are returned (and attached to ``fit``).
    Residuals are inflated by sqrt(n/(n - dof)) before resampling so the
    resampled noise matches the data noise rather than the fit-deflated one.
    Resamples whose refit fails are dropped; more than 20% drops is an
    error. Deterministic given ``seed``.
    """
    rng = np.random.default_rng(seed)
    n = len(fit.residuals)
    dof = _MODEL_DOF.get(fit.model, 0)
    scale = math.sqrt(n / (n - dof)) if n > dof else 1.0
    resid = fit.residuals * scale
    values: dict[str, list] = {k: [] for k in fit.params}
    dropped = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(n_resamples):
            y_star = fit.fitted + resid[rng.integers(0, n, size=n)]
            try:
                refit = _refit(fit.model, fit, fit.delays_us, y_star)
            except Exception:
                dropped += 1
                continue
            for k in values:
                values[k].append(refit.params.get(k, math.nan))
    if n_resamples and dropped > 0.2 * n_resamples:
        raise ResampleError(
            f"{dropped}/{n_resamples} bootstrap refits failed")
    bounds = {}
    for k, est in fit.params.items():
        vals = np.asarray(values[k], dtype=float)
        vals = vals[np.isfinite(vals)]
        if len(vals) == 0:
            bounds[k] = (est, est)
            continue
        lo = float(np.quantile(vals, quantile))
        hi = float(np.quantile(vals, 1.0 - quantile))
        bounds[k] = (min(lo, est), max(hi, est))
    fit.bounds = bounds
    fit.diagnostics["bootstrap"] = {"n_resamples": n_resamples,
                                    "dropped": dropped, "seed": seed,
                                    "quantile": quantile}
    return bounds
