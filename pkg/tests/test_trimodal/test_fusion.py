import math
import sys
import unittest
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).parents[2]))

from trimodal import (
    AttentionFusion,
    AttentionFusionParams,
    EModality,
    Embedding,
    FusionError,
    FusionWeights,
    attention_fuse,
    average_scores,
    verification_score,
)
from trimodal.coretypes import MODALITY_ORDER
from trimodal.fusion import fuse_tensors, pairwise_distances
from tests.test_trimodal.basetestcase import BaseTestCase


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    vector = rng.standard_normal(dim)
    return vector / np.linalg.norm(vector)


def _embeddings(rng: np.random.Generator, modalities=MODALITY_ORDER, dim: int = 8) -> list[Embedding]:
    return [Embedding(_unit(rng, dim), modality, "s1") for modality in modalities]


class FusionTestCase(BaseTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.load_test_data()

    def test_zero_params_give_uniform_weights(self):
        rng = np.random.default_rng(0)
        embeddings = _embeddings(rng)
        fused, weights = attention_fuse(embeddings, AttentionFusionParams.zeros(3, 8))
        np.testing.assert_array_equal(weights.alpha, np.full(3, 1 / 3))
        np.testing.assert_allclose(fused.vector, np.mean([e.vector for e in embeddings], axis=0), atol=1e-15)
        self.assertIs(fused.modality, EModality.FUSED)
        self.assertEqual(fused.sample_id, "s1")

    def test_bias_shifts_weights(self):
        params = AttentionFusionParams(
            torch.zeros(3, 24, dtype=torch.float64),
            torch.tensor([math.log(2.0), 0.0, 0.0], dtype=torch.float64),
        )
        _, weights = attention_fuse(_embeddings(np.random.default_rng(1)), params)
        np.testing.assert_allclose(weights.alpha, [0.5, 0.25, 0.25], atol=1e-12)

    def test_identical_embeddings_are_fixed_points(self):
        rng = np.random.default_rng(2)
        vector = _unit(rng, 8)
        embeddings = [Embedding(vector, modality, "s1") for modality in MODALITY_ORDER]
        params = AttentionFusionParams(
            torch.from_numpy(rng.standard_normal((3, 24))), torch.from_numpy(rng.standard_normal(3))
        )
        fused, _ = attention_fuse(embeddings, params)
        np.testing.assert_allclose(fused.vector, vector, atol=1e-12)

    def test_weights_form_a_simplex(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            params = AttentionFusionParams(
                torch.from_numpy(5.0 * rng.standard_normal((2, 16))),
                torch.from_numpy(rng.standard_normal(2)),
            )
            _, weights = attention_fuse(_embeddings(rng, (EModality.VISUAL, EModality.THERMAL)), params)
            self.assertTrue((weights.alpha >= 0).all())
            self.assertAlmostEqual(float(weights.alpha.sum()), 1.0, places=12)

    def test_simplex_and_norm_bound_over_many_draws(self):
        generator = torch.Generator().manual_seed(4)
        for m in (2, 3):
            for draw in range(10):
                with self.subTest(m=m, draw=draw):
                    scale = 10.0 ** (draw / 3.0 - 1.0)
                    params = AttentionFusionParams(
                        scale * torch.randn(m, m * 8, generator=generator, dtype=torch.float64),
                        scale * torch.randn(m, generator=generator, dtype=torch.float64),
                    )
                    stacked = torch.randn(10_000, m, 8, generator=generator, dtype=torch.float64)
                    stacked = stacked / stacked.norm(dim=-1, keepdim=True)
                    fused, alpha = fuse_tensors(stacked, params)
                    self.assertTrue(bool((alpha >= 0).all()))
                    self.assertLessEqual(float((alpha.sum(dim=-1) - 1.0).abs().max()), 1e-6)
                    self.assertLessEqual(float(fused.norm(dim=-1).max()), 1.0 + 1e-6)

    def test_invalid_inputs(self):
        rng = np.random.default_rng(4)
        params = AttentionFusionParams.zeros(3, 8)
        cases = {
            "one embedding": _embeddings(rng, (EModality.AUDIO,)),
            "wrong order": _embeddings(rng, (EModality.VISUAL, EModality.AUDIO, EModality.THERMAL)),
            "duplicate": _embeddings(rng, (EModality.AUDIO, EModality.AUDIO, EModality.THERMAL)),
            "dimension": _embeddings(rng, dim=4),
        }
        for name, embeddings in cases.items():
            with self.subTest(name):
                with self.assertRaises(FusionError):
                    attention_fuse(embeddings, params)
        with self.assertRaises(FusionError):
            AttentionFusionParams.zeros(4, 8)
        with self.assertRaises(FusionError):
            FusionWeights(np.array([0.7, 0.7]))

    def test_fusion_gradients(self):
        rng = np.random.default_rng(5)
        inputs = (
            torch.from_numpy(rng.standard_normal((2, 3, 4))).requires_grad_(True),
            torch.from_numpy(rng.standard_normal((3, 12))).requires_grad_(True),
            torch.from_numpy(rng.standard_normal(3)).requires_grad_(True),
        )

        def fuse(stacked, weight, bias):
            fused, alpha = fuse_tensors(stacked, AttentionFusionParams(weight, bias))
            return fused, alpha

        self.assertTrue(torch.autograd.gradcheck(fuse, inputs, eps=1e-6, atol=1e-8, rtol=1e-4))

    def test_module_starts_uniform(self):
        module = AttentionFusion((EModality.AUDIO, EModality.THERMAL), 6)
        stacked = torch.randn(4, 2, 6)
        fused, alpha = module(stacked)
        torch.testing.assert_close(alpha, torch.full((4, 2), 0.5))
        torch.testing.assert_close(fused, stacked.mean(dim=1))
        with self.assertRaises(FusionError):
            AttentionFusion((EModality.THERMAL, EModality.AUDIO), 6)

    def test_verification_score_examples(self):
        for case in self.case_data:
            with self.subTest(**case):
                score = verification_score(
                    Embedding(case["e1"], EModality.AUDIO, "a"),
                    Embedding(case["e2"], EModality.AUDIO, "b"),
                )
                self.assertAlmostEqual(score, case["expected"], places=12)

    def test_verification_score_properties(self):
        rng = np.random.default_rng(6)
        a, b, c = (rng.standard_normal((100000, 16)) for _ in range(3))
        a, b, c = (x / np.linalg.norm(x, axis=1, keepdims=True) for x in (a, b, c))
        ab, ba = pairwise_distances(a, b), pairwise_distances(b, a)
        self.assertTrue(((ab >= 0.0) & (ab <= 2.0)).all())
        np.testing.assert_array_equal(ab, ba)
        self.assertTrue((pairwise_distances(a, c) <= ab + pairwise_distances(b, c) + 1e-12).all())
        for row in range(0, 100000, 10000):
            score = verification_score(
                Embedding(a[row], EModality.VISUAL, "a"), Embedding(b[row], EModality.VISUAL, "b")
            )
            self.assertAlmostEqual(score, ab[row], places=12)

    def test_verification_score_errors(self):
        unit = np.array([1.0, 0.0])
        with self.assertRaises(FusionError):
            verification_score(Embedding(unit, EModality.AUDIO, "a"), Embedding(unit, EModality.VISUAL, "b"))
        with self.assertRaises(FusionError):
            verification_score(Embedding(unit, EModality.AUDIO, "a"), Embedding(2 * unit, EModality.AUDIO, "b"))

    def test_average_scores(self):
        for case in self.case_data:
            modalities = MODALITY_ORDER[: len(case["scores"])]
            with self.subTest(**case):
                self.assertAlmostEqual(
                    average_scores(dict(zip(modalities, case["scores"]))), case["expected"], places=12
                )

    def test_average_scores_errors(self):
        for scores in ({}, {EModality.AUDIO: 0.5}, {EModality.AUDIO: 0.5, EModality.VISUAL: 2.5}):
            with self.subTest(scores={str(k): v for k, v in scores.items()}):
                with self.assertRaises(FusionError):
                    average_scores(scores)

    def test_average_scores_stay_in_range(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            scores = dict(zip(MODALITY_ORDER, rng.uniform(0.0, 2.0, 3)))
            self.assertTrue(0.0 <= average_scores(scores) <= 2.0)

    def test_average_scores_ignore_order(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            values = rng.uniform(0.0, 2.0, 3)
            expected = average_scores(dict(zip(MODALITY_ORDER, values)))
            for order in ((2, 0, 1), (1, 2, 0), (2, 1, 0)):
                shuffled = {MODALITY_ORDER[index]: values[index] for index in order}
                self.assertAlmostEqual(average_scores(shuffled), expected, places=12)
                relabeled = dict(zip(MODALITY_ORDER, values[list(order)]))
                self.assertAlmostEqual(average_scores(relabeled), expected, places=12)

    def test_average_scores_increase_with_each_score(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            size = int(rng.integers(2, 4))
            scores = dict(zip(MODALITY_ORDER, rng.uniform(0.0, 1.9, size)))
            before = average_scores(scores)
            for modality in scores:
                raised = dict(scores)
                raised[modality] += rng.uniform(1e-6, 0.1)
                self.assertGreater(average_scores(raised), before)


if __name__ == "__main__":
    unittest.main()
