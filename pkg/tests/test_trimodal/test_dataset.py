import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parents[2]))

from trimodal import (
    AudioFeatureConfig,
    ConfigError,
    CorruptionConfig,
    EFeatureMode,
    EGender,
    EModality,
    Identity,
    ManifestEntry,
    ManifestError,
    SynthConfig,
    audio_features,
    corrupt_dataset,
    generate_synthetic,
    load_samples,
    split_dataset,
    write_dataset,
)
from trimodal.coretypes import MODALITY_ORDER
from trimodal.dataset import add_noise_at_snr, plan_corruption, round_half_up, substream
from tests.test_trimodal.basetestcase import BaseTestCase
from tests.test_trimodal.tinyworld import TINY_SYNTH, tiny_samples


def _entries(n_identities: int, per_identity: int = 2) -> list[ManifestEntry]:
    entries = []
    for index in range(n_identities):
        identity = Identity(f"p{index:02d}", EGender.A if index % 2 == 0 else EGender.B)
        for take in range(per_identity):
            sample_id = f"{identity.id}_{take}"
            entries.append(ManifestEntry(sample_id, identity, "s1", "a", "v", "t"))
    return entries


class SyntheticDataTestCase(BaseTestCase):
    def test_generation_is_deterministic(self):
        cfg = SynthConfig(n_identities=2, samples_per_identity=2, audio_seconds=1.0, image_size=16, seed=7)
        first, first_manifest = generate_synthetic(cfg)
        second, second_manifest = generate_synthetic(cfg)
        self.assertEqual(first_manifest, second_manifest)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.audio, b.audio)
            np.testing.assert_array_equal(a.visual, b.visual)
            np.testing.assert_array_equal(a.thermal, b.thermal)

    def test_counts_and_gender_balance(self):
        cfg = SynthConfig(n_identities=20, samples_per_identity=3, audio_seconds=1.0, image_size=8)
        samples, manifest = generate_synthetic(cfg)
        self.assertEqual(len(samples), 60)
        genders = {sample.identity.id: sample.identity.gender for sample in samples}
        self.assertEqual(sum(1 for gender in genders.values() if gender is EGender.A), 10)
        self.assertEqual(sum(1 for gender in genders.values() if gender is EGender.B), 10)
        self.assertEqual([entry.sample_id for entry in manifest], [s.sample_id for s in samples])

    def test_seeds_differ(self):
        a, _ = generate_synthetic(SynthConfig(2, 2, 1.0, 8, seed=0))
        b, _ = generate_synthetic(SynthConfig(2, 2, 1.0, 8, seed=1))
        self.assertFalse(np.array_equal(a[0].audio, b[0].audio))

    def test_audio_features_cluster_by_identity(self):
        # Per-band time means; mean normalization would zero them.
        features_cfg = AudioFeatureConfig(n_mels=24, mean_normalize=False)
        for seed in range(10):
            with self.subTest(seed=seed):
                samples, _ = generate_synthetic(SynthConfig(6, 4, 1.0, 8, seed=seed))
                vectors = np.stack(
                    [
                        audio_features(sample.audio, features_cfg, EFeatureMode.EVAL).mean(axis=0)
                        for sample in samples
                    ]
                )
                identities = np.array([sample.identity.id for sample in samples])
                distances = np.linalg.norm(vectors[:, None, :] - vectors[None, :, :], axis=-1)
                same = identities[:, None] == identities[None, :]
                pairs = ~np.eye(len(samples), dtype=bool)
                within = distances[same & pairs].mean()
                between = distances[~same].mean()
                self.assertLess(within, between)

    def test_too_few_identities(self):
        with self.assertRaises(ConfigError):
            generate_synthetic(SynthConfig(n_identities=1))

    def test_written_files_load_back(self):
        samples = list(tiny_samples()[:3])
        out_dir = self.temp_path("dataset")
        manifest = write_dataset(samples, out_dir)
        loaded = load_samples(manifest, out_dir)
        for original, copy in zip(samples, loaded):
            with self.subTest(sample=original.sample_id):
                self.assertEqual(copy.identity, original.identity)
                np.testing.assert_allclose(copy.audio, original.audio, atol=1 / 32768)
                np.testing.assert_allclose(copy.visual, original.visual, atol=0.5 / 255 + 1e-6)
                np.testing.assert_allclose(copy.thermal, original.thermal, atol=0.5 / 255 + 1e-6)

    def test_missing_file_is_reported(self):
        entry = ManifestEntry("x", Identity("p", EGender.A), "s1", "no.wav", "no.ppm", "no.pgm")
        with self.assertRaises(ManifestError):
            load_samples([entry], self.get_temp_dir_path())


class CorruptionTestCase(BaseTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.samples, _ = generate_synthetic(
            SynthConfig(n_identities=10, samples_per_identity=10, audio_seconds=1.0, image_size=16)
        )

    def _flag_counts(self, samples):
        return {
            modality: sum(1 for sample in samples if modality in sample.corrupted)
            for modality in MODALITY_ORDER
        }

    def test_zero_rate_is_identity(self):
        corrupted = corrupt_dataset(self.samples, CorruptionConfig(rate=0.0))
        for original, output in zip(self.samples, corrupted):
            self.assertIs(original, output)
            self.assertEqual(output.corrupted, frozenset())

    def test_full_rate_flags_everything(self):
        corrupted = corrupt_dataset(self.samples, CorruptionConfig(rate=1.0))
        self.assertTrue(all(sample.corrupted == frozenset(MODALITY_ORDER) for sample in corrupted))

    def test_thirty_percent(self):
        corrupted = corrupt_dataset(self.samples, CorruptionConfig(rate=0.3, seed=4))
        self.assertEqual(set(self._flag_counts(corrupted).values()), {30})
        self.assertEqual([s.sample_id for s in corrupted], [s.sample_id for s in self.samples])

    def test_modalities_are_selected_independently(self):
        corrupted = corrupt_dataset(self.samples, CorruptionConfig(rate=0.3, seed=4))
        selections = [
            {sample.sample_id for sample in corrupted if modality in sample.corrupted}
            for modality in MODALITY_ORDER
        ]
        self.assertFalse(selections[0] == selections[1] == selections[2])

    def test_audio_snr_matches_drawn_value(self):
        cfg = CorruptionConfig(rate=0.3, seed=2)
        plan = plan_corruption(self.samples, cfg)[EModality.AUDIO]
        corrupted = corrupt_dataset(self.samples, cfg)
        for original, output in zip(self.samples, corrupted):
            if original.sample_id not in plan:
                np.testing.assert_array_equal(original.audio, output.audio)
                continue
            signal = original.audio.astype(np.float64)
            noise = output.audio.astype(np.float64) - signal
            snr = 10.0 * np.log10(np.mean(signal**2) / np.mean(noise**2))
            with self.subTest(sample=original.sample_id):
                self.assertAlmostEqual(snr, plan[original.sample_id].snr_db, delta=0.5)
                self.assertGreaterEqual(snr, -0.5)
                self.assertLessEqual(snr, 10.5)

    def test_images_stay_in_range(self):
        corrupted = corrupt_dataset(self.samples, CorruptionConfig(rate=1.0))
        for sample in corrupted:
            self.assertGreaterEqual(sample.visual.min(), 0.0)
            self.assertLessEqual(sample.thermal.max(), 1.0)

    def test_recorruption_leaves_flagged_samples(self):
        cfg = CorruptionConfig(rate=0.3, seed=9)
        once = corrupt_dataset(self.samples, cfg)
        twice = corrupt_dataset(once, cfg)
        for a, b in zip(once, twice):
            np.testing.assert_array_equal(a.audio, b.audio)
            self.assertEqual(a.corrupted, b.corrupted)

    def test_deterministic(self):
        cfg = CorruptionConfig(rate=0.3, seed=1)
        a = corrupt_dataset(self.samples, cfg)
        b = corrupt_dataset(self.samples, cfg)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.visual, y.visual)

    def test_invalid_configs(self):
        for changes in (dict(rate=1.5), dict(audio_snr_db=(10.0, 0.0)), dict(occlusion_fraction=-0.1)):
            with self.subTest(**changes):
                with self.assertRaises(ConfigError):
                    CorruptionConfig(**changes)

    def test_add_noise_at_snr(self):
        waveform = np.sin(np.linspace(0.0, 200.0, 16000)).astype(np.float32)
        noisy = add_noise_at_snr(waveform, 5.0, substream(0, "noise"))
        noise = noisy.astype(np.float64) - waveform
        snr = 10.0 * np.log10(np.mean(waveform.astype(np.float64) ** 2) / np.mean(noise**2))
        self.assertAlmostEqual(snr, 5.0, places=2)

    def test_round_half_up(self):
        self.assertEqual(round_half_up(0.3 * 5), 2)
        self.assertEqual(round_half_up(0.3 * 100), 30)
        self.assertEqual(round_half_up(2.4999), 2)


class SplitTestCase(BaseTestCase):
    def _identities(self, split):
        return {entry.identity.id for entry in split}

    def test_eight_one_one(self):
        splits = split_dataset(_entries(10), (0.8, 0.1, 0.1), seed=0)
        self.assertEqual([len(self._identities(split)) for split in splits], [8, 1, 1])

    def test_partition(self):
        manifest = _entries(13, 3)
        splits = split_dataset(manifest, (0.7, 0.15, 0.15), seed=3)
        sets = [self._identities(split) for split in splits]
        self.assertEqual(set.union(*sets), self._identities(manifest))
        self.assertFalse(sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
        self.assertEqual(sum(len(split) for split in splits), len(manifest))

    def test_partition_holds_for_every_seed(self):
        # Largest-remainder identity counts per configuration.
        cases = [
            (_entries(13, 3), (0.7, 0.15, 0.15), False, [9, 2, 2]),
            (_entries(10), (0.8, 0.1, 0.1), False, [8, 1, 1]),
            (_entries(7, 2), (0.5, 0.25, 0.25), False, [3, 2, 2]),
            (_entries(20), (0.6, 0.2, 0.2), True, [12, 4, 4]),
        ]
        for manifest, fractions, stratify, sizes in cases:
            identities = self._identities(manifest)
            for seed in range(100):
                with self.subTest(n=len(identities), fractions=fractions, seed=seed):
                    splits = split_dataset(manifest, fractions, seed=seed, stratify_gender=stratify)
                    sets = [self._identities(split) for split in splits]
                    self.assertEqual([len(ids) for ids in sets], sizes)
                    self.assertEqual(set.union(*sets), identities)
                    self.assertEqual(sum(len(ids) for ids in sets), len(identities))
                    self.assertEqual(sum(len(split) for split in splits), len(manifest))

    def test_deterministic(self):
        self.assertEqual(split_dataset(_entries(10), seed=4), split_dataset(_entries(10), seed=4))

    def test_stratified_keeps_both_genders(self):
        train, valid, test = split_dataset(_entries(20), (0.6, 0.2, 0.2), seed=1, stratify_gender=True)
        for split in (valid, test):
            genders = [entry.identity.gender for entry in split]
            self.assertEqual(genders.count(EGender.A), genders.count(EGender.B))
            self.assertEqual(len(self._identities(split)), 4)
        self.assertEqual(len(self._identities(train)), 12)

    def test_invalid_fractions(self):
        for fractions in ((0.5, 0.5, 0.5), (1.2, -0.1, -0.1), (0.5, 0.5)):
            with self.subTest(fractions=fractions):
                with self.assertRaises(ConfigError):
                    split_dataset(_entries(10), fractions)

    def test_empty_split(self):
        with self.assertRaises(ManifestError):
            split_dataset(_entries(2), (0.8, 0.1, 0.1))

    def test_tiny_world_split(self):
        samples = tiny_samples()
        self.assertEqual(len(samples), TINY_SYNTH.n_identities * TINY_SYNTH.samples_per_identity)


if __name__ == "__main__":
    unittest.main()
