import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parents[2]))

from trimodal import (
    AudioFeatureConfig,
    ConfigError,
    EFeatureMode,
    EModality,
    FeatureError,
    FrontendConfig,
    ImageFeatureConfig,
    audio_features,
    image_features,
)
from trimodal.frontend import THERMAL_MEAN, THERMAL_STD, VISUAL_MEAN, VISUAL_STD, modality_features
from tests.test_trimodal.basetestcase import BaseTestCase


class AudioFeaturesTestCase(BaseTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.waveform = self.rng.uniform(-0.5, 0.5, 32000).astype(np.float32)

    def test_frame_count(self):
        cfg = AudioFeatureConfig()
        features = audio_features(self.waveform, cfg)
        self.assertEqual(features.shape, (198, 40))
        self.assertEqual(cfg.frame_count(32000), 198)
        self.assertEqual(features.dtype, np.float32)

    def test_silence(self):
        cfg = AudioFeatureConfig(mean_normalize=False)
        raw = audio_features(np.zeros(16000), cfg)
        np.testing.assert_allclose(raw, np.log(cfg.log_floor), rtol=1e-6)
        normalized = audio_features(np.zeros(16000), AudioFeatureConfig())
        np.testing.assert_allclose(normalized, 0.0, atol=1e-6)

    def test_mean_normalized_bands(self):
        features = audio_features(self.waveform, AudioFeatureConfig())
        np.testing.assert_allclose(features.mean(axis=0), 0.0, atol=1e-4)

    def test_eval_is_deterministic(self):
        cfg = AudioFeatureConfig(n_mels=24)
        np.testing.assert_array_equal(
            audio_features(self.waveform, cfg), audio_features(self.waveform, cfg)
        )

    def test_train_crop(self):
        cfg = AudioFeatureConfig(crop_seconds=1.0)
        features = audio_features(self.waveform, cfg, EFeatureMode.TRAIN, np.random.default_rng(1))
        self.assertEqual(features.shape, (cfg.frame_count(16000), 40))
        short = audio_features(self.waveform[:8000], cfg, EFeatureMode.TRAIN, np.random.default_rng(1))
        self.assertEqual(short.shape, features.shape)

    def test_train_mode_needs_rng(self):
        with self.assertRaises(FeatureError):
            audio_features(self.waveform, AudioFeatureConfig(), EFeatureMode.TRAIN)

    def test_shorter_than_window(self):
        with self.assertRaises(FeatureError):
            audio_features(np.zeros(100), AudioFeatureConfig())

    def test_invalid_configs(self):
        for changes in (dict(n_mels=0), dict(window_ms=10.0, hop_ms=10.0), dict(log_floor=0.0)):
            with self.subTest(**changes):
                with self.assertRaises(ConfigError):
                    AudioFeatureConfig(**changes)


class ImageFeaturesTestCase(BaseTestCase):
    def test_constant_image(self):
        cfg = ImageFeatureConfig.for_modality(EModality.VISUAL, target_size=64)
        features = image_features(np.full((40, 40, 3), 0.5), cfg)
        self.assertEqual(features.shape, (3, 64, 64))
        for channel in range(3):
            expected = (0.5 - VISUAL_MEAN[channel]) / VISUAL_STD[channel]
            np.testing.assert_allclose(features[channel], expected, rtol=1e-5)

    def test_resize_up(self):
        cfg = ImageFeatureConfig.for_modality(EModality.THERMAL, target_size=128)
        image = np.random.default_rng(0).uniform(0.0, 1.0, (64, 64))
        features = image_features(image, cfg)
        self.assertEqual(features.shape, (1, 128, 128))
        self.assertAlmostEqual(
            float(features.mean() * THERMAL_STD[0] + THERMAL_MEAN[0]), float(image.mean()), delta=0.01
        )

    def test_train_augmentation(self):
        cfg = ImageFeatureConfig.for_modality(EModality.VISUAL, target_size=32)
        image = np.random.default_rng(0).uniform(0.0, 1.0, (48, 48, 3))
        a = image_features(image, cfg, EFeatureMode.TRAIN, np.random.default_rng(3))
        b = image_features(image, cfg, EFeatureMode.TRAIN, np.random.default_rng(3))
        self.assertEqual(a.shape, (3, 32, 32))
        np.testing.assert_array_equal(a, b)

    def test_flip_without_crop(self):
        cfg = ImageFeatureConfig.for_modality(
            EModality.VISUAL, target_size=32, random_crop=False, horizontal_flip=True
        )
        image = np.random.default_rng(0).uniform(0.0, 1.0, (32, 32, 3))
        plain = image_features(image, cfg)
        outputs = [
            image_features(image, cfg, EFeatureMode.TRAIN, np.random.default_rng(seed))
            for seed in range(16)
        ]
        flipped = sum(1 for output in outputs if np.allclose(output, plain[:, :, ::-1]))
        unflipped = sum(1 for output in outputs if np.allclose(output, plain))
        self.assertEqual(flipped + unflipped, 16)
        self.assertGreater(flipped, 0)
        self.assertGreater(unflipped, 0)

    def test_thermal_defaults(self):
        cfg = ImageFeatureConfig.for_modality(EModality.THERMAL)
        self.assertEqual(cfg.channels, 1)
        self.assertFalse(cfg.horizontal_flip)
        with self.assertRaises(ConfigError):
            ImageFeatureConfig.for_modality(EModality.AUDIO)

    def test_invalid_images(self):
        cfg = ImageFeatureConfig.for_modality(EModality.VISUAL, target_size=32)
        cases = {
            "empty": np.zeros((0, 0, 3)),
            "channels": np.zeros((8, 8, 1)),
            "range": np.full((8, 8, 3), 2.0),
        }
        for name, image in cases.items():
            with self.subTest(name):
                with self.assertRaises(FeatureError):
                    image_features(image, cfg)
        with self.assertRaises(FeatureError):
            image_features(np.zeros((8, 8, 3)), cfg, EFeatureMode.TRAIN)

    def test_invalid_configs(self):
        for changes in (dict(target_size=100), dict(channels=2), dict(mean=(0.5,))):
            with self.subTest(**changes):
                with self.assertRaises(ConfigError):
                    ImageFeatureConfig(**changes)

    def test_modality_features_dispatch(self):
        frontend = FrontendConfig()
        self.assertEqual(modality_features(np.zeros((16, 16, 1)), EModality.THERMAL, frontend).shape, (1, 128, 128))
        self.assertEqual(modality_features(np.zeros(16000), EModality.AUDIO, frontend).shape[1], 40)


if __name__ == "__main__":
    unittest.main()
