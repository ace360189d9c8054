"""Group-relative advantage standardization and the clipped surrogate loss.

Pure numeric routines over rollout groups. Probability ratios and KL terms
are caller-supplied: there is no neural policy here, only the contract a
trainer would call into.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadArgs

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class LossParams:
    epsilon: float = 0.2
    beta: float = 1e-4

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise BadArgs(f"epsilon must lie in (0,1), got {self.epsilon}")
        if self.beta < 0.0:
            raise BadArgs(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class RolloutGroup:
    """Per-rollout rewards plus externally supplied ratios and KL terms."""

    rewards: tuple[float, ...]
    ratios: tuple[float, ...]
    kl_terms: tuple[float, ...]

    def __post_init__(self):
        n = len(self.rewards)
        if n < 2:
            raise BadArgs(f"group needs at least 2 rollouts, got {n}")
        if len(self.ratios) != n or len(self.kl_terms) != n:
            raise BadArgs("rewards, ratios and kl_terms must share a length")
        if any(r <= 0 for r in self.ratios):
            raise BadArgs("probability ratios must be positive")
        if any(k < 0 for k in self.kl_terms):
            raise BadArgs("kl terms must be nonnegative")

    @classmethod
    def from_rewards(cls, rewards, ratios=None, kl_terms=None) -> "RolloutGroup":
        n = len(rewards)
        return cls(
            rewards=tuple(float(r) for r in rewards),
            ratios=tuple(float(r) for r in ratios) if ratios is not None else (1.0,) * n,
            kl_terms=tuple(float(k) for k in kl_terms) if kl_terms is not None else (0.0,) * n,
        )


def group_advantages(rewards, sigma_floor: float = SIGMA_FLOOR) -> list[float]:
    """A_i = (r_i - mean) / max(population std, sigma_floor)."""
    r = np.asarray(list(rewards), dtype=float)
    if r.size < 2:
        raise BadArgs(f"advantages need at least 2 rewards, got {r.size}")
    std = float(r.std())  # population, ddof=0
    centered = r - r.mean()
    return (centered / max(std, sigma_floor)).tolist()


def clip(rho: float, epsilon: float) -> float:
    if not (0.0 < epsilon < 1.0):
        raise BadArgs(f"epsilon must lie in (0,1), got {epsilon}")
    return min(max(rho, 1.0 - epsilon), 1.0 + epsilon)


def grpo_loss(group: RolloutGroup, params: LossParams) -> float:
    """L = (1/N) sum_i [ -min(rho_i*A_i, clip(rho_i)*A_i) + beta*kl_i ]."""
    adv = group_advantages(group.rewards)
    total = 0.0
    for a, rho, kl in zip(adv, group.ratios, group.kl_terms):
        surrogate = min(rho * a, clip(rho, params.epsilon) * a)
        total += -surrogate + params.beta * kl
    return total / len(adv)
