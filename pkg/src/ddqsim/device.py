"""Device parameters and closed-form physics of the two-mode (dimon) qubit.

Conventions
-----------
Config files store frequencies the way they are usually quoted on the bench:
``omega_*_GHz`` are omega/2pi in GHz, anharmonicities / cross-Kerr /
dispersive shifts / linewidths in MHz, coherence times in microseconds.
Internally every frequency-like quantity is an SI angular frequency (rad/s);
coherence times stay in microseconds because that is the simulation time
unit. The ``two_chi_*_MHz`` config keys carry the *full* resonator shift
(2 chi); the loader halves them so `DeviceParams` stores half-shifts chi.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources

from .errors import ConfigError

TWO_PI = 2.0 * math.pi
GHZ = 1e9 * TWO_PI   # GHz (omega/2pi) -> rad/s
MHZ = 1e6 * TWO_PI   # MHz (omega/2pi) -> rad/s


class DimonLevel(Enum):
    """The six ladder states |mn> with m D-mode and n Q-mode excitations."""

    L00 = (0, 0)
    L01 = (0, 1)
    L10 = (1, 0)
    L11 = (1, 1)
    L02 = (0, 2)
    L20 = (2, 0)

    @property
    def m(self) -> int:
        return self.value[0]

    @property
    def n(self) -> int:
        return self.value[1]

    @property
    def label(self) -> str:
        return f"{self.m}{self.n}"

    @property
    def index(self) -> int:
        return LEVEL_ORDER.index(self)

    @property
    def is_logical(self) -> bool:
        return self in (DimonLevel.L01, DimonLevel.L10)

    @classmethod
    def from_label(cls, label: str) -> "DimonLevel":
        for lv in cls:
            if lv.label == label:
                return lv
        raise ValueError(f"unknown level label {label!r}")


# Fixed basis ordering used by rate matrices and probability vectors.
LEVEL_ORDER = (
    DimonLevel.L00,
    DimonLevel.L01,
    DimonLevel.L10,
    DimonLevel.L11,
    DimonLevel.L02,
    DimonLevel.L20,
)

# Dual-rail encoding: one excitation shared between the two modes.
LOGICAL_ZERO = DimonLevel.L10
LOGICAL_ONE = DimonLevel.L01
ERASURE_LEVEL = DimonLevel.L00

CONFIG_KEYS = (
    "omega_D_GHz", "omega_Q_GHz", "alpha_D_MHz", "alpha_Q_MHz", "eta_MHz",
    "omega_R_GHz", "kappa_R_MHz", "two_chi_DR_MHz", "two_chi_QR_MHz",
    "T1_D_us", "T1_Q_us", "T2E_D_us", "T2E_Q_us", "T2R_D_us", "T2R_Q_us",
    "r_junction", "n_th",
)

BUILTIN_DEVICES = ("q1", "q2", "q3")


@dataclass(frozen=True)
class DeviceParams:
    """All parameters of one dimon + readout resonator.

    Frequencies are angular (rad/s), times in microseconds, chi_DR/chi_QR are
    half-shifts. ``r_junction`` is stored in canonical order (min/max, so
    0 < r <= 1). ``g_QR`` is optional: it is not part of the config schema
    and only feeds the dispersive-shift estimate.
    """

    omega_D: float
    omega_Q: float
    alpha_D: float
    alpha_Q: float
    eta: float
    omega_R: float
    kappa_R: float
    chi_DR: float
    chi_QR: float
    T1_D_us: float
    T1_Q_us: float
    T2E_D_us: float
    T2E_Q_us: float
    T2R_D_us: float
    T2R_Q_us: float
    r_junction: float
    n_th_D: float = 0.02
    n_th_Q: float = 0.02
    g_QR: float | None = None
    name: str = "device"

    def __post_init__(self):
        if not self.omega_Q > self.omega_D:
            raise ConfigError("require omega_Q > omega_D (positive detuning)")
        for field in ("T1_D_us", "T1_Q_us", "T2E_D_us", "T2E_Q_us",
                      "T2R_D_us", "T2R_Q_us"):
            if not getattr(self, field) > 0:
                raise ConfigError(f"{field} must be > 0")
        if not self.kappa_R > 0:
            raise ConfigError("kappa_R must be > 0")
        if self.n_th_D < 0 or self.n_th_Q < 0:
            raise ConfigError("n_th must be >= 0")
        r = self.r_junction
        if r <= 0:
            raise ConfigError("r_junction must be > 0")
        if r > 1.0:
            object.__setattr__(self, "r_junction", 1.0 / r)

    @property
    def delta(self) -> float:
        """Mode detuning omega_Q - omega_D (rad/s)."""
        return self.omega_Q - self.omega_D

    @property
    def gamma_D(self) -> float:
        """D-mode relaxation rate (1/us)."""
        return 1.0 / self.T1_D_us

    @property
    def gamma_Q(self) -> float:
        """Q-mode relaxation rate (1/us)."""
        return 1.0 / self.T1_Q_us

    def t1_of_mode(self, mode: str) -> float:
        if mode == "D":
            return self.T1_D_us
        if mode == "Q":
            return self.T1_Q_us
        raise ValueError(f"unknown mode {mode!r}")

    def with_(self, **kwargs) -> "DeviceParams":
        return replace(self, **kwargs)

    @classmethod
    def from_config(cls, cfg: dict, name: str = "device") -> "DeviceParams":
        missing = [k for k in CONFIG_KEYS if k not in cfg]
        unknown = [k for k in cfg if k not in CONFIG_KEYS]
        if missing:
            raise ConfigError(f"config missing keys: {missing}")
        if unknown:
            raise ConfigError(f"config has unknown keys: {unknown}")
        try:
            values = {k: float(cfg[k]) for k in CONFIG_KEYS}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"non-numeric config value: {exc}") from exc
        return cls(
            omega_D=values["omega_D_GHz"] * GHZ,
            omega_Q=values["omega_Q_GHz"] * GHZ,
            alpha_D=values["alpha_D_MHz"] * MHZ,
            alpha_Q=values["alpha_Q_MHz"] * MHZ,
            eta=values["eta_MHz"] * MHZ,
            omega_R=values["omega_R_GHz"] * GHZ,
            kappa_R=values["kappa_R_MHz"] * MHZ,
            # Table-style configs store the full shift 2*chi.
            chi_DR=0.5 * values["two_chi_DR_MHz"] * MHZ,
            chi_QR=0.5 * values["two_chi_QR_MHz"] * MHZ,
            T1_D_us=values["T1_D_us"],
            T1_Q_us=values["T1_Q_us"],
            T2E_D_us=values["T2E_D_us"],
            T2E_Q_us=values["T2E_Q_us"],
            T2R_D_us=values["T2R_D_us"],
            T2R_Q_us=values["T2R_Q_us"],
            r_junction=values["r_junction"],
            n_th_D=values["n_th"],
            n_th_Q=values["n_th"],
            name=name,
        )


def load_device(source) -> DeviceParams:
    """Load a device config from a JSON path or a builtin name (q1/q2/q3)."""
    name = str(source)
    if name.lower() in BUILTIN_DEVICES:
        text = (resources.files("ddqsim") / "configs" /
                f"{name.lower()}.json").read_text()
        return DeviceParams.from_config(json.loads(text), name=name.lower())
    try:
        with open(source, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"device config not found: {source}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {source}: {exc}") from exc
    import os
    stem = os.path.splitext(os.path.basename(name))[0]
    return DeviceParams.from_config(cfg, name=stem)


def level_energy(params: DeviceParams, m: int, n: int) -> float:
    """Ladder energy (rad/s) of |mn> relative to the vacuum.

    E(m, n) = m*omega_D + n*omega_Q - (alpha_D/2) m(m-1) - (alpha_Q/2) n(n-1)
              - eta*m*n, with the signed alpha/eta values substituted as
    stored (Table-style configs carry negative anharmonicities and eta).
    """
    if m < 0 or n < 0:
        raise ValueError("occupation numbers must be >= 0")
    return (m * params.omega_D + n * params.omega_Q
            - 0.5 * params.alpha_D * m * (m - 1)
            - 0.5 * params.alpha_Q * n * (n - 1)
            - params.eta * m * n)


def dispersive_shifts(g_QR: float, omega_R: float, omega_Q: float,
                      alpha_Q: float, eta: float) -> tuple[float, float]:
    """Perturbative resonator half-shifts (chi_QR, chi_DR).

    chi_QR = alpha_Q * (g / (omega_R - omega_Q))^2 and chi_DR carries eta in
    place of alpha_Q; the D mode inherits its shift through the cross-Kerr
    coupling only. Valid deep in the dispersive regime; warns when
    |g/(omega_R - omega_Q)| > 0.1.
    """
    detun = omega_R - omega_Q
    if detun == 0:
        raise ValueError("omega_R == omega_Q: resonant, dispersive model invalid")
    ratio = g_QR / detun
    if abs(ratio) > 0.1:
        warnings.warn(
            f"dispersive parameter |g/(omega_R-omega_Q)| = {abs(ratio):.3f} > 0.1; "
            "perturbative shifts unreliable", stacklevel=2)
    lam2 = ratio * ratio
    return alpha_Q * lam2, eta * lam2


def photon_dephasing_ratio(chi_QR: float, chi_DR: float,
                           kappa: float) -> tuple[float, float]:
    """Ratio of encoded-qubit to mean physical-mode photon-shot-noise dephasing.

    Returns ``(ratio, reduction)`` where

        ratio = dchi^2 (kappa^2 + 4 chibar^2) / (chibar^2 (kappa^2 + 4 dchi^2))

    with dchi = chi_QR - chi_DR and chibar = (chi_QR + chi_DR)/2, and
    reduction = 1 - ratio. Dimensionless and homogeneous of degree zero: any
    common unit for the chis and kappa works.
    """
    chibar = 0.5 * (chi_QR + chi_DR)
    if chibar == 0:
        raise ValueError("mean dispersive shift is zero; ratio undefined")
    dchi = chi_QR - chi_DR
    ratio = (dchi * dchi * (kappa * kappa + 4.0 * chibar * chibar)
             / (chibar * chibar * (kappa * kappa + 4.0 * dchi * dchi)))
    return ratio, 1.0 - ratio


def device_dephasing_ratio(params: DeviceParams,
                           convention: str = "half") -> tuple[float, float]:
    """Photon-shot-noise dephasing ratio for a device, by chi convention.

    ``convention="half"`` feeds the stored half-shifts chi; ``"full"`` feeds
    the full shifts 2*chi. The two give different ratios (kappa is not
    rescaled) and the measured-device literature is ambiguous about which is
    meant, so both are first-class.
    """
    if convention == "half":
        return photon_dephasing_ratio(params.chi_QR, params.chi_DR, params.kappa_R)
    if convention == "full":
        return photon_dephasing_ratio(2.0 * params.chi_QR, 2.0 * params.chi_DR,
                                      params.kappa_R)
    raise ValueError("convention must be 'half' or 'full'")


def junction_sensitivity(r: float, delta: float) -> tuple[float, float]:
    """Junction-asymmetry dephasing sensitivity (1 - sqrt(r)) / delta.

    Returns ``(sensitivity, factor)`` with factor = 1 - sqrt(r); the overall
    proportionality constant of the dephasing rate is deliberately not
    modeled. ``r`` is canonicalized to (0, 1] (a ratio and its reciprocal
    describe the same pair of junctions); delta is the mode detuning in rad/s.
    """
    if r <= 0:
        raise ValueError("junction ratio must be > 0")
    if r > 1.0:
        r = 1.0 / r
    if delta <= 0:
        raise ValueError("detuning must be > 0")
    factor = 1.0 - math.sqrt(r)
    return factor / delta, factor
