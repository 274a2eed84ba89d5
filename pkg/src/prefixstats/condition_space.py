"""Quantile coordinates for scalar operating conditions.

Every condition distribution is mapped onto ``[0, 1]`` through its CDF, so
an interval ``[c0, c1]`` becomes ``[s0, s1]`` with probability mass
``m = s1 - s0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DegenerateInterval, InvalidConfig, OutOfDomain

KINDS = ("uniform",)


@dataclass(frozen=True)
class ConditionDistribution:
    c_min: float = 0.0
    c_max: float = 1.0
    kind: str = "uniform"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"unsupported condition distribution kind {self.kind!r}")
        if not (math.isfinite(self.c_min) and math.isfinite(self.c_max)):
            raise InvalidConfig("condition bounds must be finite")
        if not self.c_min < self.c_max:
            raise InvalidConfig(f"need c_min < c_max, got [{self.c_min}, {self.c_max}]")

    @property
    def span(self) -> float:
        return self.c_max - self.c_min

    def to_quantile(self, c):
        """CDF of the condition distribution; accepts scalars or arrays."""
        arr = np.asarray(c, dtype=float)
        if np.any(~np.isfinite(arr)) or np.any(arr < self.c_min) or np.any(arr > self.c_max):
            raise OutOfDomain(f"condition {c!r} outside [{self.c_min}, {self.c_max}]")
        s = np.clip((arr - self.c_min) / self.span, 0.0, 1.0)
        return float(s) if s.ndim == 0 else s

    def from_quantile(self, s):
        """Inverse CDF. Exact at both endpoints."""
        arr = np.asarray(s, dtype=float)
        if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
            raise OutOfDomain(f"quantile {s!r} outside [0, 1]")
        c = (1.0 - arr) * self.c_min + arr * self.c_max
        return float(c) if c.ndim == 0 else c

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "c_min": self.c_min, "c_max": self.c_max}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConditionDistribution":
        return cls(c_min=float(d["c_min"]), c_max=float(d["c_max"]), kind=d.get("kind", "uniform"))


@dataclass(frozen=True)
class QuantileInterval:
    s0: float
    s1: float

    def __post_init__(self):
        if not (0.0 <= self.s0 <= 1.0 and 0.0 <= self.s1 <= 1.0):
            raise OutOfDomain(f"quantile interval ({self.s0}, {self.s1}) outside [0, 1]")
        if not self.s0 < self.s1:
            raise DegenerateInterval(f"need s0 < s1, got ({self.s0}, {self.s1})")

    @property
    def m(self) -> float:
        return self.s1 - self.s0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.s0, self.s1, self.m)


def to_quantile(dist: ConditionDistribution, c):
    return dist.to_quantile(c)


def from_quantile(dist: ConditionDistribution, s):
    return dist.from_quantile(s)


def interval_to_quantiles(dist: ConditionDistribution, c0: float, c1: float) -> QuantileInterval:
    if not c0 < c1:
        raise DegenerateInterval(f"need c0 < c1, got ({c0}, {c1})")
    return QuantileInterval(dist.to_quantile(c0), dist.to_quantile(c1))
