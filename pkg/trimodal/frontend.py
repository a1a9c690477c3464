from __future__ import annotations
from dataclasses import dataclass, field

import cv2
import numpy as np
import torch
import torchaudio

from .coretypes import SAMPLE_RATE, BaseEnum, EModality
from .errors import ConfigError, FeatureError


class EFeatureMode(BaseEnum):
    TRAIN = "train"
    EVAL = "eval"


VISUAL_MEAN = (0.485, 0.456, 0.406)
VISUAL_STD = (0.229, 0.224, 0.225)
THERMAL_MEAN = (0.5,)
THERMAL_STD = (0.25,)


@dataclass(frozen=True)
class AudioFeatureConfig:
    """
    Log-mel filterbank framing.

    Attributes:
        sample_rate (int): Expected waveform rate in Hz.
        n_mels (int): Number of mel bands.
        window_ms (float): Analysis window length.
        hop_ms (float): Frame shift.
        crop_seconds (float): Length of the random training crop.
        log_floor (float): Added to filterbank energies before the logarithm.
        mean_normalize (bool): Subtract the per-band time mean.
    """

    sample_rate: int = SAMPLE_RATE
    n_mels: int = 40
    window_ms: float = 25.0
    hop_ms: float = 10.0
    crop_seconds: float = 2.0
    log_floor: float = 1e-6
    mean_normalize: bool = True

    def __post_init__(self) -> None:
        if self.n_mels < 1:
            raise ConfigError(f"frontend.n_mels must be at least 1, got {self.n_mels}.")
        if not self.window_ms > self.hop_ms > 0:
            raise ConfigError(
                f"frontend window_ms {self.window_ms} and hop_ms {self.hop_ms}"
                " must satisfy window > hop > 0."
            )
        if self.crop_seconds <= 0 or self.log_floor <= 0:
            raise ConfigError("frontend.crop_seconds and frontend.log_floor must be positive.")

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    def frame_count(self, n_samples: int) -> int:
        return (n_samples - self.window_length) // self.hop_length + 1


@dataclass(frozen=True)
class ImageFeatureConfig:
    """
    Resizing, normalization and training augmentation of one image modality.

    Attributes:
        target_size (int): Output side, divisible by 32.
        channels (int): 3 for visual, 1 for thermal.
        mean (tuple[float, ...]): Per-channel normalization mean.
        std (tuple[float, ...]): Per-channel normalization standard deviation.
        random_crop (bool): Train mode resizes larger and crops a random window.
        horizontal_flip (bool): Train mode flips with probability 1/2.
        crop_scale (float): Oversize factor used by the random crop.
    """

    target_size: int = 128
    channels: int = 3
    mean: tuple[float, ...] = VISUAL_MEAN
    std: tuple[float, ...] = VISUAL_STD
    random_crop: bool = True
    horizontal_flip: bool = True
    crop_scale: float = 1.125

    def __post_init__(self) -> None:
        if self.target_size <= 0 or self.target_size % 32:
            raise ConfigError(
                f"frontend.image_size {self.target_size} must be a positive multiple of 32."
            )
        if self.channels not in (1, 3):
            raise ConfigError(f"Image channels must be 1 or 3, got {self.channels}.")
        if len(self.mean) != self.channels or len(self.std) != self.channels:
            raise ConfigError("Image mean and std need one value per channel.")
        if min(self.std) <= 0:
            raise ConfigError("Image std values must be positive.")
        if self.crop_scale < 1.0:
            raise ConfigError("frontend.crop_scale must be at least 1.")

    @classmethod
    def for_modality(
        cls,
        modality: EModality,
        target_size: int = 128,
        random_crop: bool = True,
        horizontal_flip: bool | None = None,
    ) -> ImageFeatureConfig:
        """
        Build the default configuration of the visual or thermal stream.

        Thermal frames stay single-channel and are not flipped unless asked for.

        Args:
            modality (EModality): VISUAL or THERMAL.
            target_size (int, optional): Output side. Defaults to 128.
            random_crop (bool, optional): Train-mode cropping. Defaults to True.
            horizontal_flip (bool | None, optional): Train-mode flipping; None picks the modality default.

        Returns:
            ImageFeatureConfig: The configuration.
        """
        if modality is EModality.VISUAL:
            return cls(
                target_size,
                3,
                VISUAL_MEAN,
                VISUAL_STD,
                random_crop,
                True if horizontal_flip is None else horizontal_flip,
            )
        elif modality is EModality.THERMAL:
            return cls(
                target_size,
                1,
                THERMAL_MEAN,
                THERMAL_STD,
                random_crop,
                False if horizontal_flip is None else horizontal_flip,
            )
        raise ConfigError(f"No image features for modality '{modality}'.")


@dataclass(frozen=True)
class FrontendConfig:
    """Feature configuration of all three streams."""

    audio: AudioFeatureConfig = field(default_factory=AudioFeatureConfig)
    visual: ImageFeatureConfig = field(
        default_factory=lambda: ImageFeatureConfig.for_modality(EModality.VISUAL)
    )
    thermal: ImageFeatureConfig = field(
        default_factory=lambda: ImageFeatureConfig.for_modality(EModality.THERMAL)
    )

    def for_modality(self, modality: EModality) -> AudioFeatureConfig | ImageFeatureConfig:
        if modality is EModality.AUDIO:
            return self.audio
        elif modality is EModality.VISUAL:
            return self.visual
        elif modality is EModality.THERMAL:
            return self.thermal
        raise ConfigError(f"No frontend for modality '{modality}'.")


_mel_banks: dict[tuple[int, int, int], torch.Tensor] = {}


def _mel_filterbank(n_freqs: int, n_mels: int, sample_rate: int) -> torch.Tensor:
    key = (n_freqs, n_mels, sample_rate)
    if key not in _mel_banks:
        _mel_banks[key] = torchaudio.functional.melscale_fbanks(
            n_freqs=n_freqs,
            f_min=0.0,
            f_max=sample_rate / 2.0,
            n_mels=n_mels,
            sample_rate=sample_rate,
        ).to(torch.float64)
    return _mel_banks[key]


def _crop_waveform(
    waveform: np.ndarray, length: int, rng: np.random.Generator
) -> np.ndarray:
    if len(waveform) < length:
        waveform = np.pad(waveform, (0, length - len(waveform)), mode="wrap")
    start = int(rng.integers(0, len(waveform) - length + 1))
    return waveform[start : start + length]


def audio_features(
    waveform: np.ndarray,
    cfg: AudioFeatureConfig,
    mode: EFeatureMode = EFeatureMode.EVAL,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """
    Compute mean-normalized log-mel filterbank energies.

    In train mode a random contiguous crop of `crop_seconds` is taken first
    (wrapped around when the waveform is shorter); eval mode uses the whole utterance.
    The frame count is floor((len - window) / hop) + 1.

    Args:
        waveform (np.ndarray): Mono waveform at `cfg.sample_rate`.
        cfg (AudioFeatureConfig): Framing configuration.
        mode (EFeatureMode, optional): TRAIN or EVAL. Defaults to EVAL.
        rng (np.random.Generator | None, optional): Crop source, required in train mode.

    Returns:
        np.ndarray: Float32 features [T x n_mels].

    Raises:
        FeatureError: If the waveform is shorter than one window or train mode has no rng.
    """
    waveform = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if mode is EFeatureMode.TRAIN:
        if rng is None:
            raise FeatureError("Train-mode audio features need a random generator.")
        waveform = _crop_waveform(
            waveform, int(round(cfg.crop_seconds * cfg.sample_rate)), rng
        )
    if len(waveform) < cfg.window_length:
        raise FeatureError(
            f"Waveform of {len(waveform)} samples is shorter than one"
            f" {cfg.window_length}-sample window."
        )
    signal = torch.from_numpy(np.ascontiguousarray(waveform))
    spectrum = torch.stft(
        signal,
        n_fft=cfg.window_length,
        hop_length=cfg.hop_length,
        win_length=cfg.window_length,
        window=torch.hamming_window(cfg.window_length, periodic=False, dtype=torch.float64),
        center=False,
        return_complex=True,
    )
    power = spectrum.abs().pow(2).T
    mel = power @ _mel_filterbank(power.shape[1], cfg.n_mels, cfg.sample_rate)
    features = torch.log(mel + cfg.log_floor)
    if cfg.mean_normalize:
        features = features - features.mean(dim=0, keepdim=True)
    return features.numpy().astype(np.float32)


def image_features(
    image: np.ndarray,
    cfg: ImageFeatureConfig,
    mode: EFeatureMode = EFeatureMode.EVAL,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """
    Resize and normalize an image, with optional training augmentation.

    Args:
        image (np.ndarray): [H x W x C] or [H x W] array with values in [0, 1].
        cfg (ImageFeatureConfig): Image configuration.
        mode (EFeatureMode, optional): TRAIN or EVAL. Defaults to EVAL.
        rng (np.random.Generator | None, optional): Augmentation source, required in train mode.

    Returns:
        np.ndarray: Float32 array [C x S x S].

    Raises:
        FeatureError: On an empty image, a channel mismatch or values outside [0, 1].
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, np.newaxis]
    if image.ndim != 3 or image.size == 0:
        raise FeatureError(f"Image of shape {image.shape} is empty or not H x W x C.")
    if image.shape[2] != cfg.channels:
        raise FeatureError(
            f"Image has {image.shape[2]} channels, configuration expects {cfg.channels}."
        )
    if image.min() < 0.0 or image.max() > 1.0:
        raise FeatureError("Image values must lie in [0, 1].")
    augment = mode is EFeatureMode.TRAIN
    if augment and rng is None:
        raise FeatureError("Train-mode image features need a random generator.")
    size = cfg.target_size
    if augment and cfg.random_crop:
        size = int(round(cfg.target_size * cfg.crop_scale))
    interpolation = cv2.INTER_AREA if image.shape[0] > size else cv2.INTER_LINEAR
    resized = cv2.resize(image, (size, size), interpolation=interpolation)
    resized = resized.reshape(size, size, cfg.channels)
    if augment:
        if cfg.random_crop:
            top, left = rng.integers(0, size - cfg.target_size + 1, 2)
            resized = resized[top : top + cfg.target_size, left : left + cfg.target_size]
        if cfg.horizontal_flip and rng.random() < 0.5:
            resized = resized[:, ::-1]
    mean = np.asarray(cfg.mean, dtype=np.float32)
    std = np.asarray(cfg.std, dtype=np.float32)
    normalized = (resized - mean) / std
    return np.ascontiguousarray(normalized.transpose(2, 0, 1), dtype=np.float32)


def modality_features(
    data: np.ndarray,
    modality: EModality,
    frontend: FrontendConfig,
    mode: EFeatureMode = EFeatureMode.EVAL,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    if modality is EModality.AUDIO:
        return audio_features(data, frontend.audio, mode, rng)
    return image_features(data, frontend.for_modality(modality), mode, rng)
