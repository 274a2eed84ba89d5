from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class NormalizationStats:
    """Train-split z-score statistics for parameters and the response."""

    param_mean: tuple[float, ...]
    param_std: tuple[float, ...]
    energy_mean: float = 0.0
    energy_std: float = 1.0

    def __post_init__(self):
        # store plain floats so instances compare and serialize by value
        object.__setattr__(self, "param_mean", tuple(float(v) for v in self.param_mean))
        object.__setattr__(self, "param_std", tuple(float(v) for v in self.param_std))
        object.__setattr__(self, "energy_mean", float(self.energy_mean))
        object.__setattr__(self, "energy_std", float(self.energy_std))

    @classmethod
    def identity(cls, n_params: int = 7) -> "NormalizationStats":
        return cls((0.0,) * n_params, (1.0,) * n_params, 0.0, 1.0)

    @classmethod
    def fit(cls, params: np.ndarray, energy: np.ndarray) -> "NormalizationStats":
        params = np.asarray(params, dtype=float)
        energy = np.asarray(energy, dtype=float)
        p_std = params.std(axis=0)
        p_std = np.where(p_std > 0, p_std, 1.0)
        e_std = float(energy.std())
        return cls(
            tuple(float(v) for v in params.mean(axis=0)),
            tuple(float(v) for v in p_std),
            float(energy.mean()),
            e_std if e_std > 0 else 1.0,
        )

    def normalize_params(self, params) -> np.ndarray:
        return (np.asarray(params, dtype=float) - np.asarray(self.param_mean)) / np.asarray(self.param_std)

    def normalize_energy(self, h):
        return (np.asarray(h, dtype=float) - self.energy_mean) / self.energy_std

    def denormalize_energy(self, z):
        return np.asarray(z, dtype=float) * self.energy_std + self.energy_mean

    def to_dict(self) -> dict[str, Any]:
        return {
            "param_mean": list(self.param_mean),
            "param_std": list(self.param_std),
            "energy_mean": self.energy_mean,
            "energy_std": self.energy_std,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NormalizationStats":
        return cls(
            tuple(float(v) for v in d["param_mean"]),
            tuple(float(v) for v in d["param_std"]),
            float(d["energy_mean"]),
            float(d["energy_std"]),
        )
