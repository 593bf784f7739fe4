"""Synthetic 2-D mixture targets and Gaussian noise."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .metrics import ReferenceMixture


@dataclass(frozen=True)
class TargetDistribution(ReferenceMixture):
    """Uniform Gaussian mixture; the same object scores samples as a ReferenceMixture."""

    kind: str = "ring"

    @classmethod
    def ring(cls, M: int = 8, radius: float = 2.0, sigma: float = 0.05) -> "TargetDistribution":
        means = tuple(
            (radius * math.cos(2 * math.pi * k / M), radius * math.sin(2 * math.pi * k / M)) for k in range(M)
        )
        return cls(means, sigma, "ring")

    @classmethod
    def grid(cls, side: int = 5, spacing: float = 1.0, sigma: float = 0.05) -> "TargetDistribution":
        offset = (side - 1) / 2
        means = tuple(((i - offset) * spacing, (j - offset) * spacing) for i in range(side) for j in range(side))
        return cls(means, sigma, "grid")

    @classmethod
    def from_config(cls, cfg: dict) -> "TargetDistribution":
        kind = cfg.get("kind", "ring")
        sigma = float(cfg.get("sigma", 0.05))
        if kind == "ring":
            return cls.ring(int(cfg.get("M", 8)), float(cfg.get("radius", 2.0)), sigma)
        if kind == "grid":
            return cls.grid(int(cfg.get("side", 5)), float(cfg.get("spacing", 1.0)), sigma)
        raise ValueError(f"unknown distribution kind {kind!r}")

    def min_separation(self) -> float:
        c = self.centers
        d = np.sqrt(((c[:, None] - c[None, :]) ** 2).sum(-1))
        return float(d[~np.eye(len(c), dtype=bool)].min())


@dataclass(frozen=True)
class NoiseSource:
    dim: int = 8

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dim))

    def to_dict(self) -> dict:
        return asdict(self)


def sample_real(dist: TargetDistribution, n: int, rng: np.random.Generator, return_labels: bool = False):
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = rng.integers(dist.M, size=n)
    x = dist.centers[labels] + dist.sigma * rng.standard_normal((n, 2))
    return (x, labels) if return_labels else x


def sample_noise(src: NoiseSource, n: int, rng: np.random.Generator) -> np.ndarray:
    return src.sample(n, rng)
