"""Training losses and their schedules.

Three terms drive the generator: a pixel-wise intensity loss, an adversarial
term from the discriminator, and an identity-preserving feature distance
through a fixed extractor. The combined objective is
pix + lambda_n * adv + eta_n * id, where lambda_n and eta_n decay per epoch
toward half their base values. All squared-Frobenius terms are normalized per
element so the weights are resolution-independent.
"""

from dataclasses import dataclass

import torch

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Adversarial/identity trade-off weights and their decay."""

    lambda0: float = 1e-2
    eta0: float = 1e-3
    decay_rate: float = 0.995

    def __post_init__(self):
        if self.lambda0 <= 0 or self.eta0 <= 0 or not (0 < self.decay_rate <= 1):
            raise ValueError(f"invalid loss weights {self}")

    def lambda_at(self, epoch: int) -> float:
        return decay_schedule(self.lambda0, epoch, self.decay_rate)

    def eta_at(self, epoch: int) -> float:
        return decay_schedule(self.eta0, epoch, self.decay_rate)

    def to_dict(self) -> dict:
        return {"lambda0": self.lambda0, "eta0": self.eta0, "decay_rate": self.decay_rate}


def decay_schedule(base: float, n: int, rate: float = 0.995) -> float:
    """max(base * rate^n, base/2): geometric decay with a floor at half base."""
    if n < 0:
        raise ValueError(f"epoch index must be >= 0, got {n}")
    return max(base * rate ** n, base / 2.0)


def _check_same_shape(gen: torch.Tensor, gt: torch.Tensor) -> None:
    if gen.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(gt.shape)}")


def pixel_loss(gen: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-element mean squared intensity difference."""
    _check_same_shape(gen, gt)
    return torch.mean((gen - gt) ** 2)


def identity_loss(gen: torch.Tensor, gt: torch.Tensor, psi) -> torch.Tensor:
    """Per-element mean squared feature distance through the fixed extractor.

    The ground-truth branch is detached: gradients flow through psi into the
    generated image only.
    """
    _check_same_shape(gen, gt)
    f_gen = psi.extract(gen)
    with torch.no_grad():
        f_gt = psi.extract(gt)
    return torch.mean((f_gen - f_gt) ** 2)


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, PROB_EPS, 1.0 - PROB_EPS))


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """mean(-log D(real) - log(1 - D(fake))), probabilities clamped before log."""
    return torch.mean(-_clamped_log(d_real) - _clamped_log(1.0 - d_fake))


def generator_adversarial_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term: mean(-log D(fake))."""
    return torch.mean(-_clamped_log(d_fake))


def srn_total_loss(pix, adv, idl, lambda_n: float, eta_n: float):
    """Weighted sum pix + lambda_n * adv + eta_n * id."""
    return pix + lambda_n * adv + eta_n * idl
