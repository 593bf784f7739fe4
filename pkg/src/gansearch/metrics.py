"""Sample-quality scores for 2-D generators.

``frechet_distance`` is the FID formula applied to Gaussians fitted directly
in data space, and ``is_like_score`` is the Inception Score with the
ground-truth mixture's component responsibilities standing in for the
classifier posterior.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .genome import ArchitectureGenome, param_count
from .supernet import StandaloneNet, SuperNet, forward

# Incremented whenever a tiny negative eigenvalue is clamped to zero.
clamp_events: Counter = Counter()

MIN_IS_SAMPLES = 100


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


@dataclass(frozen=True)
class ReferenceMixture:
    means: tuple[tuple[float, ...], ...]
    sigma: float

    def __post_init__(self):
        if len(self.means) < 2:
            raise ValueError("a reference mixture needs at least 2 components")

    @property
    def M(self) -> int:
        return len(self.means)

    @property
    def centers(self) -> np.ndarray:
        return np.asarray(self.means, dtype=np.float64)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.M, 1.0 / self.M)


@dataclass(frozen=True)
class ObjectiveVector:
    fid_like: float
    inv_is: float
    size: int
    collapsed: bool = False

    @classmethod
    def collapsed_sentinel(cls, size: int) -> "ObjectiveVector":
        return cls(math.inf, math.inf, size, True)

    @property
    def is_like(self) -> float:
        return 0.0 if self.collapsed else 1.0 / self.inv_is

    def values(self, keys) -> tuple[float, ...]:
        return tuple(float(getattr(self, k)) for k in keys)


def _clamp_psd(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    if w.min() >= 0:
        return cov
    clamp_events["cov"] += 1
    w = np.maximum(w, 0.0)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def gaussian_fit(samples: np.ndarray) -> GaussianStats:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError(f"gaussian_fit needs at least 3 samples, got shape {x.shape}")
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / (x.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean, _clamp_psd(cov), x.shape[0])


def _trace_sqrt_product(a: np.ndarray, b: np.ndarray) -> float:
    """Tr((a b)^{1/2}) for symmetric PSD a, b."""
    if a.shape == (2, 2):
        # Eigenvalues of a b are real and >= 0, so
        # (sqrt(l1) + sqrt(l2))^2 = tr(ab) + 2 sqrt(det(ab)).
        det = np.linalg.det(a) * np.linalg.det(b)
        if det < 0:
            clamp_events["det"] += 1
            det = 0.0
        inner = float(np.trace(a @ b)) + 2.0 * math.sqrt(det)
        if inner < 0:
            clamp_events["trace"] += 1
            inner = 0.0
        return math.sqrt(inner)
    w, v = np.linalg.eigh(a)
    root_a = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    lam = np.linalg.eigvalsh(root_a @ b @ root_a)
    if lam.min() < 0:
        clamp_events["eig"] += 1
    return float(np.sqrt(np.maximum(lam, 0.0)).sum())


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * _trace_sqrt_product(a.cov, b.cov)
    return max(value, 0.0)


def log_responsibilities(samples: np.ndarray, ref: ReferenceMixture) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    d2 = ((x[:, None, :] - ref.centers[None, :, :]) ** 2).sum(axis=2)
    logits = np.log(ref.weights)[None, :] - d2 / (2.0 * ref.sigma ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def is_like_score(samples: np.ndarray, ref: ReferenceMixture) -> float:
    x = np.asarray(samples)
    if x.shape[0] < MIN_IS_SAMPLES:
        raise ValueError(f"is_like_score needs at least {MIN_IS_SAMPLES} samples")
    log_r = log_responsibilities(x, ref)
    r = np.exp(log_r)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_py = np.log(r.mean(axis=0))
        # 0 * log 0 terms vanish; where r is exactly zero log_r may be -inf.
        kl = np.where(r > 0, r * (log_r - log_py[None, :]), 0.0).sum(axis=1)
    return float(min(max(math.exp(kl.mean()), 1.0), ref.M))


def mode_coverage(samples: np.ndarray, ref: ReferenceMixture, min_fraction: float = 0.01, n_sigma: float = 3.0) -> int:
    """Number of components holding at least ``min_fraction`` of the samples within ``n_sigma`` sigma."""
    x = np.asarray(samples, dtype=np.float64)
    d = np.sqrt(((x[:, None, :] - ref.centers[None, :, :]) ** 2).sum(axis=2))
    near = d <= n_sigma * ref.sigma
    counts = near.sum(axis=0)
    return int((counts >= min_fraction * x.shape[0]).sum())


Generator = StandaloneNet | SuperNet | Callable[[int, np.random.Generator], np.ndarray]


def generate(gen, genome: ArchitectureGenome | None, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(gen, (StandaloneNet, SuperNet)):
        z = rng.standard_normal((n, gen.space.in_dim))
        out, _ = forward(gen, genome, z)
        return out
    return np.asarray(gen(n, rng), dtype=np.float64)


def evaluate_individual(
    gen: Generator,
    genome: ArchitectureGenome | None,
    ref: ReferenceMixture,
    data_stats: GaussianStats,
    n_eval: int = 1000,
    rng: np.random.Generator | None = None,
) -> ObjectiveVector:
    rng = np.random.default_rng(0) if rng is None else rng
    size = 0
    if genome is not None and isinstance(gen, (StandaloneNet, SuperNet)):
        size = param_count(genome, gen.space)
    elif isinstance(gen, StandaloneNet):
        size = param_count(gen.genome, gen.space)
    with np.errstate(all="ignore"):
        samples = generate(gen, genome, n_eval, rng)
        if not np.all(np.isfinite(samples)):
            return ObjectiveVector.collapsed_sentinel(size)
        fid = frechet_distance(gaussian_fit(samples), data_stats)
        score = is_like_score(samples, ref)
    if not (math.isfinite(fid) and math.isfinite(score)):
        return ObjectiveVector.collapsed_sentinel(size)
    return ObjectiveVector(fid, 1.0 / score, size)
