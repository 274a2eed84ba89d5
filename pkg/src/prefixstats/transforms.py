"""Statistic requests, the local signal transform and its post-processing map.

A statistic over an interval is ``post(mean over the interval of signal(h))``:

=========== ============================== ==========================
statistic   local signal                   post-processing
=========== ============================== ==========================
mean        h                              identity
max(beta)   exp(beta * h)                  log(.) / beta
cdf(y)      sigmoid((y - h) / eps)         clamp to [0, 1]
=========== ============================== ==========================

The max and CDF transforms act on z-scored responses so ``beta`` and ``eps``
are scale free.  Exceedance and range probabilities are built from the CDF
signal at their thresholds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Union

import numpy as np

from .errors import InvalidConfig, NonPositiveLogArgument
from .normalization import NormalizationStats

EXP_CLAMP = 30.0


@dataclass(frozen=True)
class Mean:
    pass


@dataclass(frozen=True)
class Max:
    beta: float = 10.0

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidConfig(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class CdfAt:
    y: float
    eps: float = 0.01

    def __post_init__(self):
        _check_eps(self.eps)


@dataclass(frozen=True)
class Quantile:
    alpha: float
    eps: float = 0.01
    bisect_steps: int = 5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig(f"alpha must lie in (0, 1), got {self.alpha}")
        _check_eps(self.eps)
        if int(self.bisect_steps) != self.bisect_steps or self.bisect_steps < 1:
            raise InvalidConfig(f"bisect_steps must be a positive integer, got {self.bisect_steps}")


@dataclass(frozen=True)
class Exceedance:
    tau: float
    eps: float = 0.01

    def __post_init__(self):
        _check_eps(self.eps)


@dataclass(frozen=True)
class RangeProb:
    a: float
    b: float
    eps: float = 0.01

    def __post_init__(self):
        _check_eps(self.eps)
        if not self.a < self.b:
            raise InvalidConfig(f"range needs a < b, got ({self.a}, {self.b})")


StatSpec = Union[Mean, Max, CdfAt, Quantile, Exceedance, RangeProb]

_NAMES = {
    Mean: "mean",
    Max: "max",
    CdfAt: "cdf",
    Quantile: "quantile",
    Exceedance: "exceedance",
    RangeProb: "range",
}
_BY_NAME = {v: k for k, v in _NAMES.items()}
# CLI short keys -> dataclass field names
_ALIASES = {"steps": "bisect_steps"}


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise InvalidConfig(f"smoothing width eps must be positive, got {eps}")


def stat_name(stat: StatSpec) -> str:
    return _NAMES[type(stat)]


def stat_family(stat: StatSpec) -> str:
    """Which prefix network serves a statistic: ``mean``, ``max`` or ``cdf``."""
    if isinstance(stat, Mean):
        return "mean"
    if isinstance(stat, Max):
        return "max"
    return "cdf"


def parse_stat(text: str) -> StatSpec:
    """Parse ``mean``, ``max:beta=10``, ``quantile:alpha=0.9,steps=5`` and friends."""
    name, _, rest = text.strip().partition(":")
    cls = _BY_NAME.get(name.strip().lower())
    if cls is None:
        raise InvalidConfig(f"unknown statistic {name!r}; expected one of {sorted(_BY_NAME)}")
    kwargs: dict[str, Any] = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidConfig(f"malformed statistic option {item!r}")
        key = _ALIASES.get(key.strip(), key.strip())
        kwargs[key] = int(value) if key == "bisect_steps" else float(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidConfig(f"bad options for {name}: {exc}") from None


def format_stat(stat: StatSpec) -> str:
    fields = asdict(stat)
    if not fields:
        return stat_name(stat)
    return stat_name(stat) + ":" + ",".join(f"{k}={v}" for k, v in fields.items())


def stat_to_dict(stat: StatSpec) -> dict[str, Any]:
    return {"kind": stat_name(stat), **asdict(stat)}


def stat_from_dict(d: dict[str, Any]) -> StatSpec:
    d = dict(d)
    cls = _BY_NAME[d.pop("kind")]
    return cls(**d)


def _sigmoid(u):
    return 1.0 / (1.0 + np.exp(-np.clip(u, -EXP_CLAMP, EXP_CLAMP)))


def psi_cdf(h_bar, y_bar, eps: float):
    """Smoothed indicator ``1{h <= y}`` on normalized values."""
    return _sigmoid((np.asarray(y_bar, dtype=float) - np.asarray(h_bar, dtype=float)) / eps)


def psi(stat: StatSpec, h_value, energy_norm: NormalizationStats):
    """Transformed local signal for a physical response value (or array)."""
    h = np.asarray(h_value, dtype=float)
    if isinstance(stat, Mean):
        out = energy_norm.normalize_energy(h)
    elif isinstance(stat, Max):
        z = energy_norm.normalize_energy(h)
        out = np.exp(np.clip(stat.beta * z, -EXP_CLAMP, EXP_CLAMP))
    else:
        z = energy_norm.normalize_energy(h)
        nz = energy_norm.normalize_energy
        if isinstance(stat, CdfAt):
            out = psi_cdf(z, nz(stat.y), stat.eps)
        elif isinstance(stat, Exceedance):
            out = 1.0 - psi_cdf(z, nz(stat.tau), stat.eps)
        elif isinstance(stat, RangeProb):
            out = psi_cdf(z, nz(stat.b), stat.eps) - psi_cdf(z, nz(stat.a), stat.eps)
        else:
            raise InvalidConfig("a quantile has no pointwise signal; use its CDF")
    return float(out) if out.ndim == 0 else out


def phi(stat: StatSpec, normalized_integral, energy_norm: NormalizationStats):
    """Map an interval-averaged signal back to the statistic in physical units."""
    v = np.asarray(normalized_integral, dtype=float)
    if isinstance(stat, Mean):
        out = energy_norm.denormalize_energy(v)
    elif isinstance(stat, Max):
        if np.any(~(v > 0)):
            raise NonPositiveLogArgument(
                "soft-max post-processing needs a positive averaged signal; "
                "the network output or the query is invalid"
            )
        out = energy_norm.denormalize_energy(np.log(v) / stat.beta)
    else:
        out = np.clip(v, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def log_mean_exp(values, beta: float, weights=None) -> float:
    """``log(mean(exp(beta * v))) / beta`` evaluated without overflow."""
    v = np.asarray(values, dtype=float)
    top = float(v.max())
    e = np.exp(beta * (v - top))
    avg = float(np.average(e, weights=weights))
    return top + math.log(avg) / beta


@dataclass(frozen=True)
class SmoothingSchedule:
    eps_start: float = 0.1
    eps_end: float = 0.01

    def __post_init__(self):
        if not self.eps_end > 0:
            raise InvalidConfig(f"eps_end must be positive, got {self.eps_end}")
        if self.eps_start < self.eps_end:
            raise InvalidConfig("eps_start must be >= eps_end")


def anneal_eps(schedule: SmoothingSchedule, epoch: int, total_epochs: int) -> float:
    """Log-linear interpolation of the smoothing width over training."""
    if schedule.eps_end <= 0:
        raise InvalidConfig("eps_end must be positive")
    if total_epochs < 1 or not 0 <= epoch <= total_epochs:
        raise InvalidConfig(f"epoch {epoch} outside [0, {total_epochs}]")
    frac = epoch / total_epochs
    if frac >= 1.0:
        return schedule.eps_end
    return math.exp((1.0 - frac) * math.log(schedule.eps_start) + frac * math.log(schedule.eps_end))
