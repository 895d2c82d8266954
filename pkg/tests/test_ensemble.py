"""Logit blending, the plausibility constraint, and masking."""

import math

import numpy as np
import pytest

from edecode.ensemble import (
    TokenMask,
    apply_mask,
    ed_plausibility_mask,
    ensemble_logits,
    fast_ed,
    softmax,
)
from edecode.errors import ConfigError, InputError, InternalError


def naive_softmax(values):
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def random_simplex(rng, n):
    w = rng.random(n) + 1e-6
    return w / w.sum()


class TestEnsembleLogits:
    def test_alpha_zero_is_exactly_original_softmax(self, rng):
        orig = rng.normal(size=16)
        subs = [rng.normal(size=16) for _ in range(4)]
        got = ensemble_logits(orig, subs, random_simplex(rng, 4), alpha=0.0)
        np.testing.assert_array_equal(got, softmax(orig))

    def test_identical_tiles_collapse_to_original(self, rng):
        orig = rng.normal(size=32)
        got = ensemble_logits(orig, [orig.copy() for _ in range(4)],
                              random_simplex(rng, 4), alpha=0.7)
        np.testing.assert_allclose(got, softmax(orig), atol=1e-12, rtol=0)

    def test_three_token_worked_example(self):
        got = ensemble_logits(
            np.array([1.0, 0.0, -1.0]),
            [np.array([2.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0])],
            np.array([0.5, 0.5]),
            alpha=0.5,
        )
        want = naive_softmax([1.0, 0.5, -0.5])
        np.testing.assert_allclose(got, want, atol=1e-15, rtol=0)

    def test_output_is_normalized(self, rng):
        for _ in range(100):
            vocab = int(rng.integers(2, 64))
            got = ensemble_logits(
                rng.normal(size=vocab) * 5,
                [rng.normal(size=vocab) * 5 for _ in range(4)],
                random_simplex(rng, 4),
                alpha=float(rng.uniform(0, 1)),
            )
            assert abs(got.sum() - 1.0) < 1e-9
            assert (got >= 0).all()

    def test_errors(self, rng):
        orig = rng.normal(size=8)
        subs = [rng.normal(size=8)]
        with pytest.raises(ConfigError):
            ensemble_logits(orig, subs, np.array([1.0]), alpha=1.5)
        with pytest.raises(InputError):
            ensemble_logits(orig, [rng.normal(size=9)], np.array([1.0]), alpha=0.5)
        with pytest.raises(InputError):
            ensemble_logits(orig, subs, np.array([0.5, 0.5]), alpha=0.5)
        bad = orig.copy()
        bad[0] = np.inf
        with pytest.raises(InputError):
            ensemble_logits(bad, subs, np.array([1.0]), alpha=0.5)


class TestPlausibilityMask:
    def test_beta_zero_admits_everything(self, rng):
        probs = [softmax(rng.normal(size=16)) for _ in range(4)]
        mask = ed_plausibility_mask(probs, random_simplex(rng, 4), beta=0.0)
        assert mask.size == 16

    def test_single_tile_beta_one_keeps_argmax_set(self):
        p = np.array([0.1, 0.6, 0.2, 0.1])
        mask = ed_plausibility_mask([p], np.array([1.0]), beta=1.0)
        assert list(mask.indices()) == [1]

    def test_four_token_worked_example(self):
        p1 = np.array([0.7, 0.1, 0.1, 0.1])
        p2 = np.array([0.1, 0.7, 0.1, 0.1])
        f = np.array([0.5, 0.5])
        # sums [0.8, 0.8, 0.2, 0.2]; weighted max 0.4; threshold 0.2
        mask = ed_plausibility_mask([p1, p2], f, beta=0.5)
        assert list(mask.indices()) == [0, 1, 2, 3]
        # raising beta past 0.5 drops the weak pair
        mask = ed_plausibility_mask([p1, p2], f, beta=0.6)
        assert list(mask.indices()) == [0, 1]

    @pytest.mark.parametrize("weighted_lhs", [False, True])
    def test_monotone_shrinking_in_beta(self, rng, weighted_lhs):
        for _ in range(50):
            probs = [softmax(rng.normal(size=24) * 2) for _ in range(4)]
            f = random_simplex(rng, 4)
            previous = None
            for beta in (0.0, 0.2, 0.5, 0.8, 1.0):
                allowed = set(
                    ed_plausibility_mask(probs, f, beta, weighted_lhs).indices()
                )
                if previous is not None:
                    assert allowed <= previous
                previous = allowed

    @pytest.mark.parametrize("weighted_lhs", [False, True])
    def test_never_empty(self, rng, weighted_lhs):
        for _ in range(300):
            n = int(rng.integers(1, 6))
            probs = [softmax(rng.normal(size=12) * 4) for _ in range(n)]
            f = random_simplex(rng, n)
            beta = float(rng.uniform(0, 1))
            assert ed_plausibility_mask(probs, f, beta, weighted_lhs).size >= 1
            assert ed_plausibility_mask(probs, f, 1.0, weighted_lhs).size >= 1

    def test_beta_range_enforced(self, rng):
        probs = [softmax(rng.normal(size=8))]
        with pytest.raises(ConfigError):
            ed_plausibility_mask(probs, np.array([1.0]), beta=1.2)

    def test_unnormalized_distributions_rejected(self):
        with pytest.raises(InputError):
            ed_plausibility_mask([np.array([0.5, 0.2])], np.array([1.0]), beta=0.5)


class TestApplyMask:
    def test_full_mask_is_noop(self):
        p = np.array([0.5, 0.3, 0.2])
        mask = TokenMask(allowed=np.ones(3, dtype=bool))
        np.testing.assert_array_equal(apply_mask(p, mask), p)

    def test_renormalized_rescale(self):
        p = np.array([0.5, 0.3, 0.2])
        mask = TokenMask(allowed=np.array([True, True, False]))
        np.testing.assert_allclose(apply_mask(p, mask), [0.625, 0.375, 0.0], atol=1e-15)

    def test_zeroing_only(self):
        p = np.array([0.5, 0.3, 0.2])
        mask = TokenMask(allowed=np.array([True, True, False]))
        np.testing.assert_array_equal(
            apply_mask(p, mask, renormalize=False), [0.5, 0.3, 0.0]
        )

    def test_empty_mask_is_internal_error(self):
        with pytest.raises(InternalError):
            apply_mask(np.array([1.0, 0.0]), TokenMask(allowed=np.zeros(2, dtype=bool)))


class TestFastBlend:
    def test_alpha_zero(self, rng):
        orig = rng.normal(size=8)
        np.testing.assert_array_equal(
            fast_ed(orig, rng.normal(size=8), 0.0), softmax(orig)
        )

    def test_identical_tile_collapses(self, rng):
        orig = rng.normal(size=8)
        np.testing.assert_allclose(
            fast_ed(orig, orig.copy(), 0.6), softmax(orig), atol=1e-12, rtol=0
        )

    def test_symmetric_cancellation(self):
        got = fast_ed(np.array([1.0, 0.0, -1.0]), np.array([-1.0, 0.0, 1.0]), 0.5)
        np.testing.assert_allclose(got, [1 / 3] * 3, atol=1e-15)


class TestFullStepAgainstNaiveReference:
    """Blend + constraint + zeroing against an all-loops reimplementation."""

    @staticmethod
    def naive_full_step(orig, subs, f, alpha, beta, weighted_lhs, renormalize):
        vocab = len(orig)
        n = len(subs)
        combined = [
            (1 - alpha) * orig[w] + alpha * sum(f[k] * subs[k][w] for k in range(n))
            for w in range(vocab)
        ]
        p = naive_softmax(combined)
        sub_probs = [naive_softmax(list(s)) for s in subs]
        weighted = [sum(sub_probs[k][w] * f[k] for k in range(n)) for w in range(vocab)]
        plain = [sum(sub_probs[k][w] for k in range(n)) for w in range(vocab)]
        lhs = weighted if weighted_lhs else plain
        threshold = beta * max(weighted)
        masked = [p[w] if lhs[w] >= threshold else 0.0 for w in range(vocab)]
        if renormalize:
            total = sum(masked)
            masked = [v / total for v in masked]
        return masked

    def test_randomized_equivalence(self, rng):
        for _ in range(200):
            vocab = int(rng.integers(3, 64))
            orig = rng.normal(size=vocab) * 3
            subs = [rng.normal(size=vocab) * 3 for _ in range(4)]
            f = random_simplex(rng, 4)
            alpha = float(rng.uniform(0, 1))
            beta = float(rng.uniform(0, 1))
            weighted_lhs = bool(rng.integers(0, 2))
            renormalize = bool(rng.integers(0, 2))

            p = ensemble_logits(orig, subs, f, alpha)
            mask = ed_plausibility_mask([softmax(s) for s in subs], f, beta, weighted_lhs)
            got = apply_mask(p, mask, renormalize)
            want = self.naive_full_step(
                list(orig), [list(s) for s in subs], list(f),
                alpha, beta, weighted_lhs, renormalize,
            )
            np.testing.assert_allclose(got, want, atol=1e-9, rtol=0)
