import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toolshed.errors import BadArgs
from toolshed.grpo import (
    SIGMA_FLOOR,
    LossParams,
    RolloutGroup,
    clip,
    group_advantages,
    grpo_loss,
)


class TestAdvantages:
    def test_known_vector(self):
        # mean 0.6, population std sqrt(0.24)
        adv = group_advantages([1, 0, 1, 0, 1])
        hi = 0.4 / math.sqrt(0.24)
        lo = -0.6 / math.sqrt(0.24)
        assert adv == pytest.approx([hi, lo, hi, lo, hi], abs=1e-12)
        assert adv[0] == pytest.approx(0.816496580927726)
        assert adv[1] == pytest.approx(-1.224744871391589)

    def test_two_element(self):
        assert group_advantages([1, 0]) == pytest.approx([1.0, -1.0])

    def test_constant_rewards_hit_floor(self):
        adv = group_advantages([0.7, 0.7, 0.7])
        assert adv == pytest.approx([0.0, 0.0, 0.0], abs=1e-9)
        # near-constant: centered values divided by the floor, not by ~0
        adv = group_advantages([0.5, 0.5 + 1e-9])
        assert max(adv) <= 1e-9 / SIGMA_FLOOR + 1e-9

    def test_single_rollout_rejected(self):
        with pytest.raises(BadArgs, match="at least 2"):
            group_advantages([1.0])

    @given(st.lists(st.floats(0, 1.3, allow_nan=False), min_size=2, max_size=16))
    @settings(max_examples=200, deadline=None)
    def test_zero_mean_unit_std(self, rewards):
        adv = np.array(group_advantages(rewards))
        assert abs(adv.sum()) < 1e-9 * max(1, len(rewards))
        r = np.asarray(rewards)
        if r.std() >= SIGMA_FLOOR:
            assert adv.std() == pytest.approx(1.0, abs=1e-9)


class TestClip:
    def test_bounds(self):
        assert clip(1.5, 0.2) == pytest.approx(1.2)
        assert clip(0.5, 0.2) == pytest.approx(0.8)
        assert clip(1.0, 0.2) == 1.0

    def test_bad_epsilon(self):
        with pytest.raises(BadArgs):
            clip(1.0, 0.0)
        with pytest.raises(BadArgs):
            clip(1.0, 1.0)


class TestLoss:
    def test_unity_ratios_zero_beta(self):
        group = RolloutGroup.from_rewards([1, 0, 1, 0, 1])
        loss = grpo_loss(group, LossParams(beta=0.0))
        # -mean(advantages) and advantages sum to zero
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_clip_engages_above(self):
        # rewards [1,0]: A = [1,-1]; rho 1.5 on the winner clips to 1.2
        group = RolloutGroup.from_rewards([1, 0], ratios=[1.5, 1.0])
        loss = grpo_loss(group, LossParams(epsilon=0.2, beta=0.0))
        assert loss == pytest.approx((-1.2 + 1.0) / 2)

    def test_negative_advantage_unclipped_below(self):
        # min picks the *more* negative surrogate for losers: rho*A vs clip*A
        group = RolloutGroup.from_rewards([1, 0], ratios=[1.0, 0.5])
        loss = grpo_loss(group, LossParams(epsilon=0.2, beta=0.0))
        # loser: min(0.5*-1, 0.8*-1) = -0.8 -> contributes +0.8
        assert loss == pytest.approx((-1.0 + 0.8) / 2)

    def test_kl_term_scales_with_beta(self):
        group = RolloutGroup.from_rewards([1, 0], kl_terms=[2.0, 4.0])
        base = grpo_loss(group, LossParams(beta=0.0))
        assert grpo_loss(group, LossParams(beta=1e-4)) == pytest.approx(base + 1e-4 * 3.0)

    def test_default_params(self):
        p = LossParams()
        assert p.epsilon == 0.2
        assert p.beta == 1e-4

    def test_group_validation(self):
        with pytest.raises(BadArgs):
            RolloutGroup.from_rewards([1.0])
        with pytest.raises(BadArgs, match="share a length"):
            RolloutGroup((1.0, 0.0), (1.0,), (0.0, 0.0))
        with pytest.raises(BadArgs, match="positive"):
            RolloutGroup.from_rewards([1, 0], ratios=[0.0, 1.0])
        with pytest.raises(BadArgs, match="nonnegative"):
            RolloutGroup.from_rewards([1, 0], kl_terms=[-1.0, 0.0])
        with pytest.raises(BadArgs):
            LossParams(epsilon=1.0)
        with pytest.raises(BadArgs):
            LossParams(beta=-0.1)

    @given(
        st.lists(st.floats(0, 1.3), min_size=2, max_size=8),
        st.lists(st.floats(0.2, 5.0), min_size=8, max_size=8),
    )
    @settings(max_examples=100, deadline=None)
    def test_loss_finite_and_beta_monotone(self, rewards, ratios):
        group = RolloutGroup.from_rewards(rewards, ratios=ratios[: len(rewards)],
                                          kl_terms=[1.0] * len(rewards))
        lo = grpo_loss(group, LossParams(beta=0.0))
        hi = grpo_loss(group, LossParams(beta=0.5))
        assert math.isfinite(lo)
        assert hi == pytest.approx(lo + 0.5)
