import sys
import unittest
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

sys.path.insert(0, str(Path(__file__).parents[2]))

from trimodal import (
    AttentionFusion,
    CheckpointBundle,
    CheckpointError,
    ECondition,
    EFusionMode,
    EModality,
    Embedding,
    EmbeddingCache,
    ImageEncoderSpec,
    build_encoder,
    bundle_hash,
    embed_samples,
    load_bundle,
    save_bundle,
)
from trimodal.training import EpochMetrics
from tests.test_trimodal.basetestcase import BaseTestCase
from tests.test_trimodal.tinyworld import TINY_FRONTEND, TINY_SPECS, tiny_samples, tiny_train_config


def thermal_bundle(seed: int = 1) -> CheckpointBundle:
    return CheckpointBundle(
        {EModality.THERMAL: build_encoder(TINY_SPECS[EModality.THERMAL], seed)},
        tiny_train_config(modality_set=(EModality.THERMAL,)),
        TINY_FRONTEND,
        history=[EpochMetrics(0, None, 0.5, {"thermal": 0.5}), EpochMetrics(1, 2.1, 0.4, {"thermal": 0.4}, 1e-3)],
        best_epoch=1,
        config_hash="feed",
    )


def fused_bundle() -> CheckpointBundle:
    modalities = (EModality.VISUAL, EModality.THERMAL)
    fusion = AttentionFusion(modalities, 16)
    with torch.no_grad():
        fusion.attention.weight.copy_(torch.randn(2, 32, generator=torch.Generator().manual_seed(2)))
    return CheckpointBundle(
        {modality: build_encoder(TINY_SPECS[modality], 3) for modality in modalities},
        tiny_train_config(modality_set=modalities, fusion_mode=EFusionMode.ATTENTION),
        TINY_FRONTEND,
        fusion,
    )


class CheckpointTestCase(BaseTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.samples = tiny_samples()[:6]

    def test_reload_reproduces_embeddings(self):
        for name, bundle in (("thermal", thermal_bundle()), ("fused", fused_bundle())):
            with self.subTest(name):
                path = save_bundle(bundle, self.temp_path(f"{name}.pt"))
                restored = load_bundle(path, expected_specs=bundle.specs)
                before = embed_samples(bundle, self.samples)
                after = embed_samples(restored, self.samples)
                self.assertEqual(sorted(before.vectors), sorted(after.vectors))
                for modality, vectors in before.vectors.items():
                    np.testing.assert_array_equal(after.vectors[modality], vectors)
                self.assertEqual(restored.config, bundle.config)
                self.assertEqual(restored.frontend, bundle.frontend)

    def test_metadata(self):
        path = save_bundle(thermal_bundle(), self.get_temp_dir_path() / "nested" / "thermal.pt")
        restored = load_bundle(path)
        self.assertEqual(restored.best_epoch, 1)
        self.assertEqual(restored.config_hash, "feed")
        self.assertEqual(restored.best_metrics.valid_eer, 0.4)
        self.assertEqual([metrics.epoch for metrics in restored.history], [0, 1])
        self.assertFalse(restored.encoders[EModality.THERMAL].training)
        self.assertEqual([p.name for p in path.parent.iterdir()], ["thermal.pt"])

    def test_bundle_hash(self):
        first = save_bundle(thermal_bundle(1), self.temp_path("first.pt"))
        second = save_bundle(thermal_bundle(2), self.temp_path("second.pt"))
        self.assertEqual(bundle_hash(first), bundle_hash(first))
        self.assertEqual(len(bundle_hash(first)), 64)
        self.assertNotEqual(bundle_hash(first), bundle_hash(second))

    def test_unreadable(self):
        directory = self.get_temp_dir_path()
        garbage = directory / "garbage.pt"
        garbage.write_text("not a checkpoint", encoding="utf-8")
        future = directory / "future.pt"
        torch.save({"format_version": 99}, future)
        malformed = directory / "malformed.pt"
        torch.save({"format_version": 1, "specs": {}}, malformed)
        for path in (directory / "missing.pt", garbage, future, malformed):
            with self.subTest(path.name):
                with self.assertRaises(CheckpointError):
                    load_bundle(path)

    def test_expected_specs(self):
        path = save_bundle(thermal_bundle(), self.temp_path("expected.pt"))
        other = ImageEncoderSpec(1, (8, 16), (1, 1), 8)
        for expected in ({EModality.VISUAL: TINY_SPECS[EModality.VISUAL]}, {EModality.THERMAL: other}):
            with self.subTest(expected=list(map(str, expected))):
                with self.assertRaises(CheckpointError):
                    load_bundle(path, expected_specs=expected)

    def test_inconsistent_bundles(self):
        with self.assertRaises(CheckpointError):
            CheckpointBundle(
                {EModality.AUDIO: build_encoder(TINY_SPECS[EModality.AUDIO], 0)},
                tiny_train_config(modality_set=(EModality.THERMAL,)),
            )
        bundle = fused_bundle()
        with self.assertRaises(CheckpointError):
            CheckpointBundle(bundle.encoders, bundle.config, bundle.frontend, None)


class EmbeddingCacheTestCase(BaseTestCase):
    @staticmethod
    def embeddings(sample_ids, seed):
        rng = np.random.default_rng(seed)
        result = {}
        for sample_id in sample_ids:
            vector = rng.standard_normal(4)
            result[sample_id] = Embedding(vector / np.linalg.norm(vector), EModality.AUDIO, sample_id)
        return result

    def setUp(self):
        self.cache = EmbeddingCache(self.temp_path(self.test_name))

    def test_merge(self):
        first = self.embeddings(["s1", "s2"], 0)
        second = self.embeddings(["s2", "s3"], 1)
        self.cache.put_many("abc", ECondition.CLEAN, EModality.AUDIO, first)
        self.cache.put_many("abc", ECondition.CLEAN, EModality.AUDIO, second)
        found = self.cache.get_many("abc", ECondition.CLEAN, EModality.AUDIO, ["s1", "s2", "s3", "s4"])
        self.assertEqual(sorted(found), ["s1", "s2", "s3"])
        np.testing.assert_array_equal(found["s1"].vector, first["s1"].vector)
        np.testing.assert_array_equal(found["s2"].vector, second["s2"].vector)
        self.assertIs(found["s3"].modality, EModality.AUDIO)

    def test_keys_are_separate(self):
        self.cache.put_many("abc", ECondition.CLEAN, EModality.AUDIO, self.embeddings(["s1"], 0))
        self.assertEqual(self.cache.get_many("abc", ECondition.NOISY, EModality.AUDIO, ["s1"]), {})
        self.assertEqual(self.cache.get_many("xyz", ECondition.CLEAN, EModality.AUDIO, ["s1"]), {})

    def test_concurrent_writers_keep_every_embedding(self):
        batches = [[f"w{writer}_s{index}" for index in range(5)] for writer in range(8)]
        with ThreadPoolExecutor(max_workers=8) as pool:
            list(
                pool.map(
                    lambda item: self.cache.put_many(
                        "abc", ECondition.NOISY, EModality.AUDIO, self.embeddings(*item)
                    ),
                    [(batch, seed) for seed, batch in enumerate(batches)],
                )
            )
        every_id = [sample_id for batch in batches for sample_id in batch]
        found = self.cache.get_many("abc", ECondition.NOISY, EModality.AUDIO, every_id)
        self.assertEqual(sorted(found), sorted(every_id))
        path = self.cache.path("abc", ECondition.NOISY, EModality.AUDIO)
        self.assertFalse(path.with_suffix(".lock").exists())

    def test_stale_lock(self):
        cache = EmbeddingCache(self.temp_path(self.test_name), lock_timeout=0.05)
        path = cache.path("abc", ECondition.CLEAN, EModality.AUDIO)
        path.parent.mkdir(parents=True)
        path.with_suffix(".lock").write_bytes(b"")
        with self.assertRaisesRegex(CheckpointError, "stayed locked"):
            cache.put_many("abc", ECondition.CLEAN, EModality.AUDIO, self.embeddings(["s1"], 0))
        self.assertFalse(path.exists())

    def test_corrupt_file(self):
        path = self.cache.path("abc", ECondition.CLEAN, EModality.AUDIO)
        path.parent.mkdir(parents=True)
        path.write_bytes(b"garbage")
        with self.assertRaises(CheckpointError):
            self.cache.get_many("abc", ECondition.CLEAN, EModality.AUDIO, ["s1"])


if __name__ == "__main__":
    unittest.main()
