import sys
import unittest
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).parents[2]))

from trimodal import (
    CheckpointError,
    ConfigError,
    EFusionMode,
    ELoss,
    EModality,
    ImageEncoderSpec,
    TrainConfig,
    TrainingData,
    TrainingError,
    angular_prototypical_loss,
    build_encoder,
    train_fused,
    train_unimodal,
)
from trimodal.fusion import AttentionFusion
from trimodal.inference import compute_embeddings
from trimodal.training import plan_batches
from tests.test_trimodal.basetestcase import BaseTestCase
from tests.test_trimodal.tinyworld import (
    TINY_FRONTEND,
    TINY_SPECS,
    tiny_samples,
    tiny_train_config,
    tiny_training_data,
)


def reference_loss(embeddings: np.ndarray, scale: float = 10.0, bias: float = -5.0) -> float:
    queries = embeddings[:, 0]
    prototypes = embeddings[:, 1:].mean(axis=1)
    queries = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    prototypes = prototypes / np.linalg.norm(prototypes, axis=1, keepdims=True)
    logits = scale * queries @ prototypes.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    log_softmax = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(-np.mean(np.diag(log_softmax)))


class AngularPrototypicalLossTestCase(BaseTestCase):
    def test_matches_reference(self):
        rng = np.random.default_rng(0)
        for n, m in ((2, 2), (4, 3), (8, 5)):
            with self.subTest(n=n, m=m):
                embeddings = rng.standard_normal((n, m, 16))
                loss = angular_prototypical_loss(torch.from_numpy(embeddings))
                self.assertAlmostEqual(loss.item(), reference_loss(embeddings), places=10)

    def test_learned_scale_and_bias(self):
        embeddings = np.random.default_rng(1).standard_normal((3, 2, 4))
        loss = angular_prototypical_loss(
            torch.from_numpy(embeddings), torch.tensor(3.0, dtype=torch.float64), -1.0
        )
        self.assertAlmostEqual(loss.item(), reference_loss(embeddings, 3.0, -1.0), places=10)

    def test_scale_is_clamped(self):
        embeddings = torch.from_numpy(np.random.default_rng(2).standard_normal((3, 2, 4)))
        clamped = angular_prototypical_loss(embeddings, torch.tensor(-4.0, dtype=torch.float64))
        self.assertAlmostEqual(clamped.item(), np.log(3.0), places=4)

    def test_perfect_separation(self):
        embeddings = torch.zeros(4, 3, 4, dtype=torch.float64)
        for identity in range(4):
            embeddings[identity, :, identity] = 1.0
        self.assertLess(angular_prototypical_loss(embeddings).item(), 1e-3)

    def test_gradients_reach_every_sample(self):
        embeddings = torch.randn(3, 3, 8, dtype=torch.float64, requires_grad=True)
        angular_prototypical_loss(embeddings).backward()
        self.assertTrue((embeddings.grad.abs().sum(dim=-1) > 0).all())

    def test_analytic_gradients_match_finite_differences(self):
        generator = torch.Generator().manual_seed(3)
        for n, m in ((2, 2), (3, 4)):
            with self.subTest(n=n, m=m):
                inputs = (
                    torch.randn(n, m, 6, generator=generator, dtype=torch.float64).requires_grad_(True),
                    torch.tensor(4.0, dtype=torch.float64, requires_grad=True),
                    torch.tensor(-1.5, dtype=torch.float64, requires_grad=True),
                )
                self.assertTrue(
                    torch.autograd.gradcheck(
                        angular_prototypical_loss, inputs, eps=1e-6, atol=1e-8, rtol=1e-4
                    )
                )

    def test_batch_shape_errors(self):
        for shape in ((1, 3, 4), (3, 1, 4), (6, 4)):
            with self.subTest(shape=shape):
                with self.assertRaises(TrainingError):
                    angular_prototypical_loss(torch.randn(*shape))


class BatchPlanTestCase(BaseTestCase):
    LABELS = [0] * 5 + [1] * 4 + [2] * 6 + [3] * 1

    def test_structure(self):
        batches = plan_batches(self.LABELS, 2, 2, np.random.default_rng(0))
        self.assertGreater(len(batches), 0)
        seen = []
        for batch in batches:
            self.assertEqual(len(batch), 4)
            first, second = batch[:2], batch[2:]
            for group in (first, second):
                self.assertEqual(len({self.LABELS[index] for index in group}), 1)
            self.assertNotEqual(self.LABELS[first[0]], self.LABELS[second[0]])
            seen.extend(batch)
        self.assertEqual(len(seen), len(set(seen)))
        self.assertNotIn(15, seen)

    def test_seeded(self):
        first = plan_batches(self.LABELS, 2, 2, np.random.default_rng(3))
        self.assertEqual(first, plan_batches(self.LABELS, 2, 2, np.random.default_rng(3)))

    def test_too_few_identities(self):
        with self.assertRaises(TrainingError):
            plan_batches(self.LABELS, 4, 2, np.random.default_rng(0))
        with self.assertRaises(TrainingError):
            plan_batches(self.LABELS, 2, 6, np.random.default_rng(0))


class TrainConfigTestCase(BaseTestCase):
    def test_invalid(self):
        cases = {
            "one identity": dict(n_identities_per_batch=1),
            "one sample": dict(samples_per_identity=1),
            "no epochs": dict(epochs=0),
            "zero learning rate": dict(learning_rate=0.0),
            "decay": dict(lr_decay=1.5),
            "fused modality": dict(modality_set=(EModality.FUSED,)),
            "attention on one modality": dict(fusion_mode=EFusionMode.ATTENTION),
            "two modalities without fusion": dict(
                modality_set=(EModality.AUDIO, EModality.VISUAL)
            ),
        }
        for name, values in cases.items():
            with self.subTest(name):
                with self.assertRaises(ConfigError):
                    TrainConfig(**values)

    def test_modalities_are_ordered(self):
        cfg = TrainConfig(
            modality_set=(EModality.THERMAL, EModality.AUDIO), fusion_mode=EFusionMode.ATTENTION
        )
        self.assertEqual(cfg.modality_set, (EModality.AUDIO, EModality.THERMAL))
        self.assertEqual(TrainConfig.from_dict(cfg.to_dict()), cfg)


class UnimodalTrainingTestCase(BaseTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.metrics_path = cls.temp_path("thermal.metrics.tsv")
        cls.snapshots = []
        cls.bundle = train_unimodal(
            tiny_training_data(),
            EModality.THERMAL,
            tiny_train_config(),
            TINY_SPECS[EModality.THERMAL],
            TINY_FRONTEND,
            metrics_path=cls.metrics_path,
            on_epoch_end=cls.snapshots.append,
            config_hash="cafe",
        )

    def test_history(self):
        history = self.bundle.history
        self.assertEqual([metrics.epoch for metrics in history], [0, 1, 2])
        self.assertIsNone(history[0].train_loss)
        for metrics in history[1:]:
            self.assertTrue(np.isfinite(metrics.train_loss))
        eers = [metrics.valid_eer for metrics in history]
        self.assertEqual(self.bundle.best_epoch, int(np.argmin(eers)))
        self.assertEqual(self.bundle.best_metrics.valid_eer, min(eers))
        self.assertEqual(history[0].valid_eer_per_modality, {"thermal": history[0].valid_eer})

    def test_bundle(self):
        self.assertEqual(self.bundle.modalities, (EModality.THERMAL,))
        self.assertIsNone(self.bundle.fusion)
        self.assertEqual(self.bundle.specs[EModality.THERMAL], TINY_SPECS[EModality.THERMAL])
        self.assertEqual(self.bundle.config_hash, "cafe")

    def test_epoch_callbacks(self):
        self.assertEqual(len(self.snapshots), 2)
        self.assertEqual(len(self.snapshots[-1].history), 3)
        self.assertIsNot(self.snapshots[-1].encoders[EModality.THERMAL], self.bundle.encoders[EModality.THERMAL])

    def test_metrics_log(self):
        lines = self.metrics_path.read_text(encoding="utf-8").splitlines()
        self.assertTrue(lines[0].startswith("0\tvalid\teer\t"))
        self.assertIn("1\ttrain\tloss", "\n".join(lines))
        self.assertTrue(all(len(line.split("\t")) == 4 for line in lines))

    def test_seeded_initialization(self):
        again = train_unimodal(
            tiny_training_data(),
            EModality.THERMAL,
            tiny_train_config(epochs=1),
            TINY_SPECS[EModality.THERMAL],
            TINY_FRONTEND,
        )
        self.assertEqual(again.history[0].valid_eer, self.bundle.history[0].valid_eer)

    def test_softmax_classifier_loss(self):
        bundle = train_unimodal(
            tiny_training_data(),
            EModality.VISUAL,
            tiny_train_config(epochs=1, loss=ELoss.SOFTMAX_CLASSIFIER),
            TINY_SPECS[EModality.VISUAL],
            TINY_FRONTEND,
        )
        self.assertEqual(len(bundle.history), 2)

    def test_invalid(self):
        with self.assertRaises(TrainingError):
            train_unimodal(
                tiny_training_data(),
                EModality.AUDIO,
                tiny_train_config(
                    modality_set=(EModality.AUDIO, EModality.VISUAL),
                    fusion_mode=EFusionMode.ATTENTION,
                ),
                TINY_SPECS[EModality.AUDIO],
            )
        data = tiny_training_data()
        one_identity = TrainingData(
            [sample for sample in data.train if sample.identity.id == "id0000"], data.valid
        )
        with self.assertRaises(TrainingError):
            train_unimodal(
                one_identity,
                EModality.THERMAL,
                tiny_train_config(),
                TINY_SPECS[EModality.THERMAL],
                TINY_FRONTEND,
            )
        with self.assertRaises(TrainingError):
            TrainingData(data.train, data.train[:3])


class FusedTrainingTestCase(BaseTestCase):
    MODALITIES = (EModality.VISUAL, EModality.THERMAL)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.thermal = train_unimodal(
            tiny_training_data(),
            EModality.THERMAL,
            tiny_train_config(epochs=1),
            TINY_SPECS[EModality.THERMAL],
            TINY_FRONTEND,
        )

    def fused_config(self, **changes):
        return tiny_train_config(
            modality_set=self.MODALITIES, fusion_mode=EFusionMode.ATTENTION, **changes
        )

    def test_initial_fusion_is_the_mean(self):
        encoders = {modality: build_encoder(TINY_SPECS[modality], 1) for modality in self.MODALITIES}
        fusion = AttentionFusion(self.MODALITIES, 16)
        samples = tiny_samples()[:8]
        embeddings = compute_embeddings(encoders, TINY_FRONTEND, samples, fusion, batch_size=4)
        mean = (embeddings.vectors[EModality.VISUAL] + embeddings.vectors[EModality.THERMAL]) / 2
        mean /= np.linalg.norm(mean, axis=1, keepdims=True)
        np.testing.assert_allclose(embeddings.vectors[EModality.FUSED], mean, atol=1e-6)
        statistics = embeddings.attention_statistics()
        self.assertEqual(sorted(statistics), ["thermal", "visual"])
        for mean_weight, std_weight in statistics.values():
            self.assertAlmostEqual(mean_weight, 0.5, places=6)
            self.assertAlmostEqual(std_weight, 0.0, places=6)

    def test_joint_training(self):
        bundle = train_fused(tiny_training_data(), self.fused_config(epochs=1), TINY_SPECS, TINY_FRONTEND)
        self.assertIsNotNone(bundle.fusion)
        self.assertEqual(bundle.fusion.modalities, self.MODALITIES)
        first = bundle.history[0]
        self.assertEqual(sorted(first.valid_eer_per_modality), ["fused", "thermal", "visual"])
        self.assertEqual(first.valid_eer, first.valid_eer_per_modality["fused"])

    def test_warm_start(self):
        bundle = train_fused(
            tiny_training_data(),
            self.fused_config(epochs=1),
            TINY_SPECS,
            TINY_FRONTEND,
            warm_start={EModality.THERMAL: self.thermal},
        )
        self.assertAlmostEqual(
            bundle.history[0].valid_eer_per_modality["thermal"],
            self.thermal.best_metrics.valid_eer,
            places=9,
        )

    def test_warm_start_mismatch(self):
        other_spec = dict(TINY_SPECS)
        other_spec[EModality.THERMAL] = ImageEncoderSpec(1, (8, 16), (1, 1), 8)
        cases = {
            "wrong modality": (TINY_SPECS, {EModality.VISUAL: self.thermal}),
            "different spec": (other_spec, {EModality.THERMAL: self.thermal}),
            "untrained modality": (
                TINY_SPECS,
                {EModality.THERMAL: self.thermal, EModality.AUDIO: self.thermal},
            ),
        }
        for name, (specs, warm_start) in cases.items():
            with self.subTest(name):
                with self.assertRaises(CheckpointError):
                    train_fused(
                        tiny_training_data(),
                        self.fused_config(epochs=1),
                        specs,
                        TINY_FRONTEND,
                        warm_start=warm_start,
                    )

    def test_invalid(self):
        with self.assertRaises(TrainingError):
            train_fused(tiny_training_data(), tiny_train_config(), TINY_SPECS, TINY_FRONTEND)
        with self.assertRaises(TrainingError):
            train_fused(
                tiny_training_data(),
                self.fused_config(),
                {EModality.VISUAL: TINY_SPECS[EModality.VISUAL]},
                TINY_FRONTEND,
            )


if __name__ == "__main__":
    unittest.main()
