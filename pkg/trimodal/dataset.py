from __future__ import annotations
import hashlib
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import TypeVar

import cv2
import numpy as np
from scipy.io import wavfile

from .coretypes import (
    MODALITY_ORDER,
    SAMPLE_RATE,
    BaseEnum,
    EGender,
    EModality,
    Identity,
    ManifestEntry,
    MultimodalSample,
    resolve_path,
)
from .errors import ConfigError, CorruptionError, ManifestError

logger = logging.getLogger(__name__)

T = TypeVar("T", ManifestEntry, MultimodalSample)

N_HARMONICS = 16
N_TEXTURE_WAVES = 4


def stable_int(token: str) -> int:
    """Process-independent 64-bit integer derived from a string."""
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")


def substream(seed: int, *keys: str | int) -> np.random.Generator:
    """
    Derive an independent random generator from a seed and a key path.

    The stream only depends on its keys, so per-sample work gives the same
    result regardless of processing order.

    Args:
        seed (int): The run seed.
        *keys (str | int): Sample ids, modality names, epochs, ...

    Returns:
        np.random.Generator: The derived generator.
    """
    entropy = [seed] + [key if isinstance(key, int) else stable_int(key) for key in keys]
    return np.random.default_rng(entropy)


def round_half_up(value: float) -> int:
    # rate * N can land a hair above or below .5 in floating point
    return int(math.floor(value + 0.5 + 1e-9))


class ECorruptionScope(BaseEnum):
    ALL_MODALITIES_INDEPENDENT = "all_modalities_independent"


@dataclass(frozen=True)
class SynthConfig:
    """
    Size and randomness of a synthetic trimodal dataset.

    Attributes:
        n_identities (int): Number of identities, split evenly between the gender labels.
        samples_per_identity (int): Recordings per identity.
        audio_seconds (float): Waveform duration.
        image_size (int): Side of the square visual and thermal frames.
        sessions (int): Sessions the recordings of an identity are spread over.
        jitter (float): Scale of the per-sample variation; higher is harder.
        seed (int): Generator seed.
    """

    n_identities: int = 20
    samples_per_identity: int = 30
    audio_seconds: float = 2.0
    image_size: int = 64
    sessions: int = 2
    jitter: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.samples_per_identity < 2:
            raise ConfigError("synth.samples_per_identity must be at least 2.")
        if self.audio_seconds < 1.0:
            raise ConfigError("synth.audio_seconds must be at least 1 second.")
        if self.image_size < 8:
            raise ConfigError("synth.image_size must be at least 8.")
        if self.sessions < 1:
            raise ConfigError("synth.sessions must be at least 1.")


@dataclass(frozen=True)
class CorruptionConfig:
    """
    Corruption model of the noisy condition.

    Attributes:
        rate (float): Fraction of samples corrupted in each modality.
        audio_snr_db (tuple[float, float]): Range the additive white noise SNR is drawn from.
        image_blur_sigma (tuple[float, float]): Range of the Gaussian blur sigma, in pixels.
        occlusion_fraction (float): Image area covered by the rectangular occlusion.
        seed (int): Selection and noise seed.
    """

    rate: float = 0.3
    audio_snr_db: tuple[float, float] = (0.0, 10.0)
    image_blur_sigma: tuple[float, float] = (1.0, 3.0)
    occlusion_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"corruption.rate {self.rate} is outside [0, 1].")
        low, high = self.audio_snr_db
        if low > high:
            raise ConfigError(f"corruption.audio_snr_db range ({low}, {high}) is inverted.")
        low, high = self.image_blur_sigma
        if low > high or low < 0.0:
            raise ConfigError(
                f"corruption.image_blur_sigma range ({low}, {high}) is invalid."
            )
        if not 0.0 <= self.occlusion_fraction <= 1.0:
            raise ConfigError(
                f"corruption.occlusion_fraction {self.occlusion_fraction} is outside [0, 1]."
            )


@dataclass(frozen=True)
class CorruptionParams:
    """Drawn parameters of one sample's corruption in one modality."""

    sample_id: str
    modality: EModality
    snr_db: float | None = None
    blur_sigma: float | None = None
    occlusion: tuple[int, int, int, int] | None = None


@dataclass(frozen=True)
class _IdentitySignature:
    f0: float
    harmonic_gains: np.ndarray
    formants: np.ndarray
    texture_frequencies: np.ndarray
    texture_phases: np.ndarray
    texture_colors: np.ndarray
    thermal_center: np.ndarray
    thermal_spread: float
    thermal_ring_frequency: float
    thermal_ring_phase: float


def _draw_signature(rng: np.random.Generator, gender: EGender) -> _IdentitySignature:
    f0 = rng.uniform(95.0, 150.0) if gender is EGender.A else rng.uniform(170.0, 260.0)
    return _IdentitySignature(
        f0=f0,
        harmonic_gains=rng.uniform(0.2, 1.0, N_HARMONICS),
        formants=np.array([rng.uniform(350.0, 900.0), rng.uniform(1100.0, 2600.0)]),
        texture_frequencies=rng.uniform(-3.0, 3.0, (N_TEXTURE_WAVES, 2)),
        texture_phases=rng.uniform(0.0, 2.0 * np.pi, N_TEXTURE_WAVES),
        texture_colors=rng.uniform(-1.0, 1.0, (N_TEXTURE_WAVES, 3)),
        thermal_center=rng.uniform(0.3, 0.7, 2),
        thermal_spread=rng.uniform(0.15, 0.35),
        thermal_ring_frequency=rng.uniform(4.0, 12.0),
        thermal_ring_phase=rng.uniform(0.0, 2.0 * np.pi),
    )


def _synth_audio(
    signature: _IdentitySignature,
    cfg: SynthConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    n_samples = int(round(cfg.audio_seconds * SAMPLE_RATE))
    time = np.arange(n_samples) / SAMPLE_RATE
    f0 = signature.f0 * (1.0 + cfg.jitter * rng.uniform(-0.03, 0.03))
    vibrato = 1.0 + 0.01 * np.sin(2.0 * np.pi * rng.uniform(4.0, 6.0) * time)
    phase = 2.0 * np.pi * f0 * np.cumsum(vibrato) / SAMPLE_RATE
    waveform = np.zeros(n_samples)
    for harmonic in range(1, N_HARMONICS + 1):
        frequency = harmonic * f0
        if frequency >= SAMPLE_RATE / 2:
            break
        envelope = sum(
            np.exp(-0.5 * ((frequency - formant) / 150.0) ** 2)
            for formant in signature.formants
        )
        gain = signature.harmonic_gains[harmonic - 1] * (0.15 + envelope) / harmonic
        gain *= 1.0 + cfg.jitter * rng.normal(0.0, 0.1)
        waveform += gain * np.sin(harmonic * phase + rng.uniform(0.0, 2.0 * np.pi))
    syllables = 0.6 + 0.4 * np.sin(
        2.0 * np.pi * rng.uniform(2.0, 5.0) * time + rng.uniform(0.0, 2.0 * np.pi)
    )
    waveform *= syllables
    waveform /= np.max(np.abs(waveform)) + 1e-12
    waveform += cfg.jitter * rng.uniform(0.01, 0.05) * rng.standard_normal(n_samples)
    return (0.5 * waveform / (np.max(np.abs(waveform)) + 1e-12)).astype(np.float32)


def _synth_visual(
    signature: _IdentitySignature,
    cfg: SynthConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    grid = np.linspace(0.0, 1.0, cfg.image_size)
    y, x = np.meshgrid(grid, grid, indexing="ij")
    shift = cfg.jitter * rng.normal(0.0, 0.03, 2)
    image = np.full((cfg.image_size, cfg.image_size, 3), 0.5)
    for (fy, fx), phase, color in zip(
        signature.texture_frequencies,
        signature.texture_phases,
        signature.texture_colors,
    ):
        wave = np.cos(2.0 * np.pi * (fy * (y + shift[0]) + fx * (x + shift[1])) + phase)
        image += 0.08 * wave[:, :, np.newaxis] * color
    image += cfg.jitter * rng.normal(0.0, 0.04)
    image += cfg.jitter * rng.normal(0.0, 0.03, image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _synth_thermal(
    signature: _IdentitySignature,
    cfg: SynthConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    grid = np.linspace(0.0, 1.0, cfg.image_size)
    y, x = np.meshgrid(grid, grid, indexing="ij")
    center = signature.thermal_center + cfg.jitter * rng.normal(0.0, 0.03, 2)
    radius = np.hypot(y - center[0], x - center[1])
    image = 0.25 + 0.45 * np.exp(-0.5 * (radius / signature.thermal_spread) ** 2)
    image += 0.08 * np.cos(
        2.0 * np.pi * signature.thermal_ring_frequency * radius
        + signature.thermal_ring_phase
    )
    image += cfg.jitter * rng.normal(0.0, 0.04)
    image += cfg.jitter * rng.normal(0.0, 0.03, image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)[:, :, np.newaxis]


def _sample_paths(sample_id: str) -> tuple[str, str, str]:
    return (
        f"audio/{sample_id}.wav",
        f"visual/{sample_id}.ppm",
        f"thermal/{sample_id}.pgm",
    )


def generate_synthetic(
    cfg: SynthConfig,
) -> tuple[list[MultimodalSample], list[ManifestEntry]]:
    """
    Generate a deterministic synthetic trimodal dataset.

    Every identity owns a latent signature rendered consistently in all three
    modalities: a harmonic stack shaped by two formants (audio), a low-frequency
    colored texture (visual) and a radial gradient with rings (thermal). Each
    sample draws its own jitter from a substream keyed by its sample id.

    Args:
        cfg (SynthConfig): Dataset size and seed.

    Returns:
        tuple[list[MultimodalSample], list[ManifestEntry]]: The samples and the
            manifest entries pointing at the files `write_dataset` produces.

    Raises:
        ConfigError: If fewer than two identities are requested.
    """
    if cfg.n_identities < 2:
        raise ConfigError(
            f"synth.n_identities is {cfg.n_identities}, at least 2 are required."
        )
    samples: list[MultimodalSample] = []
    manifest: list[ManifestEntry] = []
    for identity_index in range(cfg.n_identities):
        gender = EGender.A if identity_index % 2 == 0 else EGender.B
        identity = Identity(f"id{identity_index:04d}", gender)
        signature = _draw_signature(substream(cfg.seed, identity.id), gender)
        for index in range(cfg.samples_per_identity):
            session = f"sess{index % cfg.sessions + 1}"
            sample_id = f"{identity.id}_{session}_{index:03d}"
            rng = substream(cfg.seed, sample_id)
            samples.append(
                MultimodalSample(
                    sample_id=sample_id,
                    identity=identity,
                    session=session,
                    audio=_synth_audio(signature, cfg, rng),
                    visual=_synth_visual(signature, cfg, rng),
                    thermal=_synth_thermal(signature, cfg, rng),
                )
            )
            manifest.append(
                ManifestEntry(sample_id, identity, session, *_sample_paths(sample_id))
            )
    logger.info(
        "Generated %d synthetic samples of %d identities.", len(samples), cfg.n_identities
    )
    return samples, manifest


def write_dataset(samples: Sequence[MultimodalSample], out_dir: str | Path) -> list[ManifestEntry]:
    """
    Write samples as 16-bit PCM wave files and 8-bit portable pixmaps.

    Args:
        samples (Sequence[MultimodalSample]): The samples to write.
        out_dir (str | Path): Root directory; modality subdirectories are created.

    Returns:
        list[ManifestEntry]: Entries with paths relative to `out_dir`.
    """
    out_dir = Path(out_dir)
    entries = []
    for sample in samples:
        audio_path, visual_path, thermal_path = _sample_paths(sample.sample_id)
        for path in (audio_path, visual_path, thermal_path):
            (out_dir / path).parent.mkdir(parents=True, exist_ok=True)
        pcm = np.round(np.clip(sample.audio, -1.0, 32767 / 32768) * 32768).astype(np.int16)
        wavfile.write(out_dir / audio_path, sample.sample_rate, pcm)
        visual = np.round(sample.visual * 255.0).astype(np.uint8)
        thermal = np.round(sample.thermal[:, :, 0] * 255.0).astype(np.uint8)
        if not cv2.imwrite(str(out_dir / visual_path), cv2.cvtColor(visual, cv2.COLOR_RGB2BGR)):
            raise OSError(f"Cannot write '{out_dir / visual_path}'.")
        if not cv2.imwrite(str(out_dir / thermal_path), thermal):
            raise OSError(f"Cannot write '{out_dir / thermal_path}'.")
        entries.append(
            ManifestEntry(
                sample.sample_id,
                sample.identity,
                sample.session,
                audio_path,
                visual_path,
                thermal_path,
            )
        )
    return entries


def load_sample(entry: ManifestEntry, base_dir: str | Path | None = None) -> MultimodalSample:
    """
    Read the three modality files of a manifest entry.

    Args:
        entry (ManifestEntry): The descriptor.
        base_dir (str | Path | None, optional): Directory relative paths resolve against. Defaults to None.

    Returns:
        MultimodalSample: The loaded sample.
    """
    audio_path = resolve_path(entry.audio_path, base_dir)
    try:
        sample_rate, pcm = wavfile.read(audio_path)
    except (OSError, ValueError) as error:
        raise ManifestError(f"Cannot read audio '{audio_path}': {error}.") from None
    if pcm.ndim != 1:
        raise ManifestError(f"Audio '{audio_path}' is not mono.")
    if pcm.dtype == np.int16:
        audio = pcm.astype(np.float32) / 32768.0
    else:
        audio = pcm.astype(np.float32)
    visual_path = resolve_path(entry.visual_path, base_dir)
    thermal_path = resolve_path(entry.thermal_path, base_dir)
    visual = cv2.imread(str(visual_path), cv2.IMREAD_COLOR)
    thermal = cv2.imread(str(thermal_path), cv2.IMREAD_GRAYSCALE)
    if visual is None:
        raise ManifestError(f"Cannot read visual frame '{visual_path}'.")
    if thermal is None:
        raise ManifestError(f"Cannot read thermal frame '{thermal_path}'.")
    return MultimodalSample(
        sample_id=entry.sample_id,
        identity=entry.identity,
        session=entry.session,
        audio=audio,
        visual=cv2.cvtColor(visual, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0,
        thermal=thermal.astype(np.float32)[:, :, np.newaxis] / 255.0,
        sample_rate=sample_rate,
    )


def load_samples(
    manifest: Sequence[ManifestEntry], base_dir: str | Path | None = None
) -> list[MultimodalSample]:
    return [load_sample(entry, base_dir) for entry in manifest]


def plan_corruption(
    samples: Sequence[MultimodalSample],
    cfg: CorruptionConfig,
) -> dict[EModality, dict[str, CorruptionParams]]:
    """
    Decide which samples get corrupted in each modality, and how.

    For every modality independently, exactly round(rate * N) samples are drawn.
    Selection only depends on the seed and the set of sample ids; the drawn
    parameters of a sample only depend on the seed, its id and the modality.

    Args:
        samples (Sequence[MultimodalSample]): The samples to corrupt.
        cfg (CorruptionConfig): The corruption model.

    Returns:
        dict[EModality, dict[str, CorruptionParams]]: Per modality, the selected sample ids and their parameters.
    """
    if not samples:
        raise CorruptionError("Cannot corrupt an empty sample list.")
    sample_ids = sorted(sample.sample_id for sample in samples)
    if len(set(sample_ids)) != len(sample_ids):
        raise CorruptionError("Sample ids must be unique to plan corruption.")
    count = round_half_up(cfg.rate * len(sample_ids))
    shapes = {sample.sample_id: sample.visual.shape[:2] for sample in samples}
    plan: dict[EModality, dict[str, CorruptionParams]] = {}
    for modality_index, modality in enumerate(MODALITY_ORDER):
        selection_rng = np.random.default_rng([cfg.seed, modality_index])
        selected = selection_rng.permutation(len(sample_ids))[:count]
        plan[modality] = {}
        for index in sorted(selected):
            sample_id = sample_ids[index]
            rng = substream(cfg.seed, sample_id, modality.value)
            if modality is EModality.AUDIO:
                params = CorruptionParams(
                    sample_id, modality, snr_db=float(rng.uniform(*cfg.audio_snr_db))
                )
            else:
                params = CorruptionParams(
                    sample_id,
                    modality,
                    blur_sigma=float(rng.uniform(*cfg.image_blur_sigma)),
                    occlusion=_draw_occlusion(shapes[sample_id], cfg.occlusion_fraction, rng),
                )
            plan[modality][sample_id] = params
    return plan


def _draw_occlusion(
    shape: tuple[int, int], fraction: float, rng: np.random.Generator
) -> tuple[int, int, int, int] | None:
    height, width = shape
    if fraction <= 0.0:
        return None
    box_height = min(height, max(1, round_half_up(height * math.sqrt(fraction))))
    box_width = min(width, max(1, round_half_up(height * width * fraction / box_height)))
    top = int(rng.integers(0, height - box_height + 1))
    left = int(rng.integers(0, width - box_width + 1))
    return top, left, box_height, box_width


def add_noise_at_snr(
    waveform: np.ndarray, snr_db: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Add white Gaussian noise scaled to an exact signal-to-noise ratio.

    Args:
        waveform (np.ndarray): Clean signal.
        snr_db (float): Target 10 * log10(signal power / noise power).
        rng (np.random.Generator): Noise source.

    Returns:
        np.ndarray: The noisy signal, float32.
    """
    signal = waveform.astype(np.float64)
    noise = rng.standard_normal(signal.shape)
    signal_power = np.mean(signal**2)
    noise *= np.sqrt(signal_power / (10.0 ** (snr_db / 10.0)) / np.mean(noise**2))
    return (signal + noise).astype(np.float32)


def blur_and_occlude(image: np.ndarray, params: CorruptionParams) -> np.ndarray:
    channels = image.shape[2]
    corrupted = np.array(image, dtype=np.float32)
    if params.blur_sigma:
        corrupted = cv2.GaussianBlur(
            corrupted,
            (0, 0),
            sigmaX=params.blur_sigma,
            borderType=cv2.BORDER_REFLECT,
        ).reshape(image.shape[0], image.shape[1], channels)
    if params.occlusion is not None:
        top, left, height, width = params.occlusion
        corrupted[top : top + height, left : left + width, :] = 0.0
    return np.clip(corrupted, 0.0, 1.0)


def corrupt_dataset(
    samples: Sequence[MultimodalSample],
    cfg: CorruptionConfig,
    scope: ECorruptionScope = ECorruptionScope.ALL_MODALITIES_INDEPENDENT,
) -> list[MultimodalSample]:
    """
    Corrupt a fixed fraction of samples in every modality independently.

    Audio receives additive white noise at a drawn SNR; visual and thermal frames
    receive a Gaussian blur and a rectangular occlusion. Samples already flagged
    in a modality are left untouched in it, and unselected samples are returned as is.

    Args:
        samples (Sequence[MultimodalSample]): Validated samples.
        cfg (CorruptionConfig): The corruption model.
        scope (ECorruptionScope, optional): Selection scope. Defaults to ALL_MODALITIES_INDEPENDENT.

    Returns:
        list[MultimodalSample]: Samples in input order, corrupted where selected.
    """
    if scope is not ECorruptionScope.ALL_MODALITIES_INDEPENDENT:
        raise CorruptionError(f"Unsupported corruption scope '{scope}'.")
    plan = plan_corruption(samples, cfg)
    corrupted_samples = []
    for sample in samples:
        changes: dict[str, np.ndarray] = {}
        flags = set(sample.corrupted)
        for modality in MODALITY_ORDER:
            params = plan[modality].get(sample.sample_id)
            if params is None or modality in sample.corrupted:
                continue
            if modality is EModality.AUDIO:
                rng = substream(cfg.seed, sample.sample_id, modality.value, "noise")
                changes["audio"] = add_noise_at_snr(sample.audio, params.snr_db, rng)
            else:
                changes[modality.value] = blur_and_occlude(
                    sample.modality_data(modality), params
                )
            flags.add(modality)
        if changes:
            sample = sample.replace(corrupted=frozenset(flags), **changes)
        corrupted_samples.append(sample)
    logger.info(
        "Corrupted %d of %d samples per modality.",
        round_half_up(cfg.rate * len(samples)),
        len(samples),
    )
    return corrupted_samples


def _allocate(
    identities: Sequence[str],
    fractions: tuple[float, float, float],
    rng: np.random.Generator,
) -> dict[str, int]:
    quotas = [fraction * len(identities) for fraction in fractions]
    counts = [int(math.floor(quota)) for quota in quotas]
    remainders = sorted(
        range(3), key=lambda index: (quotas[index] - counts[index], -index), reverse=True
    )
    for index in remainders[: len(identities) - sum(counts)]:
        counts[index] += 1
    order = rng.permutation(len(identities))
    assignment = {}
    for position, identity_index in enumerate(order):
        split = 0 if position < counts[0] else 1 if position < counts[0] + counts[1] else 2
        assignment[identities[identity_index]] = split
    return assignment


def split_dataset(
    manifest: Sequence[T],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    stratify_gender: bool = False,
) -> tuple[list[T], list[T], list[T]]:
    """
    Split samples into train, validation and test sets by identity.

    Identity counts are allocated by largest remainder, so 10 identities with
    (0.8, 0.1, 0.1) give exactly 8/1/1. With `stratify_gender` the allocation
    runs on each gender label separately, which keeps both labels in every split
    of a small dataset.

    Args:
        manifest (Sequence[T]): Manifest entries or samples.
        fractions (tuple[float, float, float], optional): Train/valid/test shares. Defaults to (0.8, 0.1, 0.1).
        seed (int, optional): Shuffle seed. Defaults to 0.
        stratify_gender (bool, optional): Allocate identities per gender label. Defaults to False.

    Returns:
        tuple[list[T], list[T], list[T]]: The three identity-disjoint splits, in input order.

    Raises:
        ConfigError: If fractions are negative or do not sum to one.
        ManifestError: If any split would receive no identity.
    """
    if len(fractions) != 3 or any(fraction < 0.0 for fraction in fractions):
        raise ConfigError(f"Split fractions {fractions} must be three non-negative shares.")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"Split fractions {fractions} do not sum to 1.")
    genders = {item.identity.id: item.identity.gender for item in manifest}
    if stratify_gender:
        groups = [
            sorted(identity for identity, label in genders.items() if label is gender)
            for gender in EGender
        ]
    else:
        groups = [sorted(genders)]
    assignment: dict[str, int] = {}
    for index, identities in enumerate(groups):
        rng = np.random.default_rng([seed, index]) if stratify_gender else np.random.default_rng(seed)
        assignment.update(_allocate(identities, fractions, rng))
    counts = [sum(1 for split in assignment.values() if split == index) for index in range(3)]
    if min(counts) == 0:
        raise ManifestError(
            f"Splitting {len(genders)} identities by {fractions} leaves a split empty."
        )
    splits: tuple[list[T], list[T], list[T]] = ([], [], [])
    for item in manifest:
        splits[assignment[item.identity.id]].append(item)
    return splits
