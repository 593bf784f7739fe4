"""GAN losses and the adversarial update used by every training phase."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .genome import ArchitectureGenome
from .supernet import StandaloneNet, SuperNet, adam_step, backward, forward

LOG_CLAMP = 1e-12


class LossKind(str, enum.Enum):
    minimax = "minimax"
    hinge = "hinge"


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _clamped_log_sigmoid(x):
    """log(max(sigmoid(x), 1e-12)) and its derivative."""
    val = _log_sigmoid(x)
    live = val > math.log(LOG_CLAMP)
    grad = np.where(live, 0.5 * (1.0 - np.tanh(0.5 * x)), 0.0)  # sigmoid(-x)
    return np.where(live, val, math.log(LOG_CLAMP)), grad


def _d_loss_and_grads(kind: LossKind, d_real: np.ndarray, d_fake: np.ndarray):
    d_real = np.asarray(d_real, dtype=np.float64).ravel()
    d_fake = np.asarray(d_fake, dtype=np.float64).ravel()
    nr, nf = d_real.size, d_fake.size
    if LossKind(kind) is LossKind.hinge:
        mr = 1.0 - d_real
        mf = 1.0 + d_fake
        loss = np.maximum(mr, 0.0).mean() + np.maximum(mf, 0.0).mean()
        return float(loss), -(mr > 0).astype(np.float64) / nr, (mf > 0).astype(np.float64) / nf
    # log(1 - sigmoid(f)) == log sigmoid(-f)
    lr_, gr = _clamped_log_sigmoid(d_real)
    lf, gf = _clamped_log_sigmoid(-d_fake)
    loss = -lr_.mean() - lf.mean()
    return float(loss), -gr / nr, gf / nf


def _g_loss_and_grad(kind: LossKind, d_fake: np.ndarray):
    d_fake = np.asarray(d_fake, dtype=np.float64).ravel()
    n = d_fake.size
    if LossKind(kind) is LossKind.hinge:
        return float(-d_fake.mean()), np.full(n, -1.0 / n)
    lf, gf = _clamped_log_sigmoid(-d_fake)
    return float(lf.mean()), -gf / n


def d_loss(kind: LossKind, d_real: np.ndarray, d_fake: np.ndarray) -> float:
    return _d_loss_and_grads(kind, d_real, d_fake)[0]


def g_loss(kind: LossKind, d_fake: np.ndarray) -> float:
    return _g_loss_and_grad(kind, d_fake)[0]


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8


@dataclass
class GanPair:
    """A generator and a discriminator, each a standalone net or a supernet view."""

    generator: StandaloneNet | SuperNet
    discriminator: StandaloneNet | SuperNet
    g_genome: ArchitectureGenome | None = None
    d_genome: ArchitectureGenome | None = None
    loss_kind: LossKind = LossKind.hinge
    batch_g: int = 40
    batch_d: int = 80
    adam_g: AdamConfig = None
    adam_d: AdamConfig = None

    def __post_init__(self):
        self.adam_g = self.adam_g or AdamConfig()
        self.adam_d = self.adam_d or AdamConfig()
        if self.batch_d % 2:
            raise ValueError("batch_d must be even (half real, half generated)")


@dataclass(frozen=True)
class StepResult:
    d_loss: float
    g_loss: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.d_loss) and math.isfinite(self.g_loss)


def _scores(pair: GanPair, x: np.ndarray):
    out, tape = forward(pair.discriminator, pair.d_genome, x)
    return out[:, 0], tape


def gan_train_batch(pair: GanPair, real: np.ndarray, noise_src, rng: np.random.Generator) -> StepResult:
    """One discriminator update followed by one generator update.

    The discriminator sees ``batch_d`` rows, half of ``real`` and half
    generated; the generator then steps on ``batch_g`` fresh noise rows.  The
    returned losses are re-evaluated after each update on the same rows.
    """
    half = pair.batch_d // 2
    real = np.asarray(real, dtype=np.float64)[:half]
    if real.shape[0] != half:
        raise ValueError(f"need {half} real rows, got {real.shape[0]}")
    kind = LossKind(pair.loss_kind)

    with np.errstate(all="ignore"):
        z = noise_src.sample(half, rng)
        fake, _ = forward(pair.generator, pair.g_genome, z)
        x = np.concatenate([real, fake])
        scores, d_tape = _scores(pair, x)
        _, g_real, g_fake = _d_loss_and_grads(kind, scores[:half], scores[half:])
        d_grads = backward(d_tape, np.concatenate([g_real, g_fake])[:, None])
        a = pair.adam_d
        adam_step(pair.discriminator, d_grads, a.lr, a.beta1, a.beta2, a.eps)
        scores, _ = _scores(pair, x)
        dl = d_loss(kind, scores[:half], scores[half:])

        z = noise_src.sample(pair.batch_g, rng)
        fake, g_tape = forward(pair.generator, pair.g_genome, z)
        scores, d_tape = _scores(pair, fake)
        _, g_scores = _g_loss_and_grad(kind, scores)
        backward(d_tape, g_scores[:, None])
        g_grads = backward(g_tape, d_tape.input_grad)
        a = pair.adam_g
        adam_step(pair.generator, g_grads, a.lr, a.beta1, a.beta2, a.eps)
        fake, _ = forward(pair.generator, pair.g_genome, z)
        scores, _ = _scores(pair, fake)
        gl = g_loss(kind, scores)
    return StepResult(dl, gl)
