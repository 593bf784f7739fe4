import numpy as np
import pytest

from gansearch.data import NoiseSource, TargetDistribution, sample_noise, sample_real
from gansearch.metrics import ReferenceMixture


def test_default_separation():
    for dist in (TargetDistribution.ring(), TargetDistribution.grid()):
        assert dist.min_separation() >= 6 * dist.sigma
        assert isinstance(dist, ReferenceMixture)
    assert TargetDistribution.ring().M == 8 and TargetDistribution.grid().M == 25


def test_degenerate_sigma_lies_on_circle():
    dist = TargetDistribution.ring(sigma=1e-12)
    x = sample_real(dist, 8 * 50, np.random.default_rng(0))
    assert np.allclose(np.hypot(x[:, 0], x[:, 1]), 2.0)
    d = np.sqrt(((x[:, None] - dist.centers[None]) ** 2).sum(-1)).min(1)
    assert d.max() < 1e-9


def test_component_frequencies_uniform():
    dist = TargetDistribution.ring()
    n = 10_000
    _, labels = sample_real(dist, n, np.random.default_rng(1), return_labels=True)
    counts = np.bincount(labels, minlength=8)
    sd = np.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - n / 8) <= 3 * sd)


def test_ring_mean_near_origin():
    dist = TargetDistribution.ring()
    n = 10_000
    x = sample_real(dist, n, np.random.default_rng(2))
    # Per-dimension sample spread, including the between-mode part.
    spread = np.sqrt(dist.sigma ** 2 + 2.0 ** 2 / 2)
    assert np.all(np.abs(x.mean(0)) <= 3 * spread / np.sqrt(n))


def test_real_deterministic_and_validated():
    dist = TargetDistribution.grid()
    a = sample_real(dist, 30, np.random.default_rng(3))
    assert np.array_equal(a, sample_real(dist, 30, np.random.default_rng(3)))
    with pytest.raises(ValueError):
        sample_real(dist, 0, np.random.default_rng(0))


def test_noise_statistics():
    src = NoiseSource()
    z = sample_noise(src, 10_000, np.random.default_rng(4))
    assert z.shape == (10_000, 8)
    assert np.all(np.abs(z.mean(0)) <= 4 / np.sqrt(10_000))
    assert np.array_equal(z, sample_noise(src, 10_000, np.random.default_rng(4)))
    big = sample_noise(src, 100_000, np.random.default_rng(5))
    assert np.abs(np.cov(big.T) - np.eye(8)).max() <= 0.05


def test_from_config():
    d = TargetDistribution.from_config({"kind": "grid", "side": 3, "spacing": 2.0})
    assert d.M == 9 and d.kind == "grid" and d.min_separation() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        TargetDistribution.from_config({"kind": "spiral"})
