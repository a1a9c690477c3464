from __future__ import annotations
from dataclasses import asdict, dataclass
import logging
from typing import Any, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .coretypes import EMBED_DIM, Embedding, EModality
from .errors import CheckpointError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

RESNET34_WIDTHS = (64, 128, 256, 512)
RESNET34_BLOCKS = (3, 4, 6, 3)


def _check_stages(widths: Sequence[int], blocks: Sequence[int], embed_dim: int) -> None:
    if len(widths) != len(blocks) or not widths:
        raise ShapeError(
            f"Stage widths {tuple(widths)} and blocks {tuple(blocks)} need the same non-zero length."
        )
    if min(widths) < 1 or min(blocks) < 1 or embed_dim < 1:
        raise ShapeError("Stage widths, block counts and embed_dim must be positive.")


@dataclass(frozen=True)
class ImageEncoderSpec:
    """
    Residual image encoder with halved channel widths.

    Attributes:
        input_channels (int): 3 for visual, 1 for thermal.
        base_widths (tuple[int, ...]): Full residual widths; every stage uses half of them.
        blocks_per_stage (tuple[int, ...]): Basic blocks per stage.
        embed_dim (int): Embedding size.
    """

    input_channels: int = 3
    base_widths: tuple[int, ...] = RESNET34_WIDTHS
    blocks_per_stage: tuple[int, ...] = RESNET34_BLOCKS
    embed_dim: int = EMBED_DIM

    def __post_init__(self) -> None:
        if self.input_channels not in (1, 3):
            raise ShapeError(f"Image encoders take 1 or 3 channels, got {self.input_channels}.")
        if any(width % 2 for width in self.base_widths):
            raise ShapeError(f"Base widths {self.base_widths} must be even to be halved.")
        _check_stages(self.base_widths, self.blocks_per_stage, self.embed_dim)

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return tuple(width // 2 for width in self.base_widths)


@dataclass(frozen=True)
class AudioEncoderSpec:
    """
    Residual audio encoder over [T x n_mels] features with self-attentive pooling over time.

    Attributes:
        n_mels (int): Feature bands of the input.
        stage_widths (tuple[int, ...]): Channel width per stage.
        blocks_per_stage (tuple[int, ...]): Basic blocks per stage.
        embed_dim (int): Embedding size.
    """

    n_mels: int = 40
    stage_widths: tuple[int, ...] = RESNET34_WIDTHS
    blocks_per_stage: tuple[int, ...] = RESNET34_BLOCKS
    embed_dim: int = EMBED_DIM

    def __post_init__(self) -> None:
        if self.n_mels < 1:
            raise ShapeError(f"n_mels must be positive, got {self.n_mels}.")
        _check_stages(self.stage_widths, self.blocks_per_stage, self.embed_dim)


EncoderSpec = ImageEncoderSpec | AudioEncoderSpec


def spec_to_dict(spec: EncoderSpec) -> dict[str, Any]:
    return {"kind": type(spec).__name__, **asdict(spec)}


def spec_from_dict(data: dict[str, Any]) -> EncoderSpec:
    fields = dict(data)
    kind = fields.pop("kind", None)
    for key, value in fields.items():
        if isinstance(value, list):
            fields[key] = tuple(value)
    if kind == ImageEncoderSpec.__name__:
        return ImageEncoderSpec(**fields)
    elif kind == AudioEncoderSpec.__name__:
        return AudioEncoderSpec(**fields)
    raise CheckpointError(f"Unknown encoder spec kind '{kind}'.")


@dataclass(frozen=True)
class SapParams:
    """
    Parameters of self-attentive pooling over d-dimensional frames.

    Attributes:
        weight (torch.Tensor): Projection W_s [d x d].
        bias (torch.Tensor): Projection bias b_s [d].
        context (torch.Tensor): Context vector mu [d].
    """

    weight: torch.Tensor
    bias: torch.Tensor
    context: torch.Tensor

    def __post_init__(self) -> None:
        dim = self.context.shape[-1]
        if (
            self.context.ndim != 1
            or tuple(self.weight.shape) != (dim, dim)
            or tuple(self.bias.shape) != (dim,)
        ):
            raise ShapeError(
                f"SAP parameters have inconsistent shapes {tuple(self.weight.shape)},"
                f" {tuple(self.bias.shape)}, {tuple(self.context.shape)}."
            )

    @property
    def dim(self) -> int:
        return self.context.shape[0]


def sap_weights(frames: torch.Tensor, params: SapParams) -> torch.Tensor:
    """
    Attention weights of self-attentive pooling.

    Args:
        frames (torch.Tensor): [..., T, d] frame features.
        params (SapParams): Pooling parameters.

    Returns:
        torch.Tensor: [..., T] weights, nonnegative and summing to 1 over frames.
    """
    if frames.ndim < 2 or frames.shape[-2] == 0:
        raise ShapeError(f"SAP needs at least one frame, got shape {tuple(frames.shape)}.")
    if frames.shape[-1] != params.dim:
        raise ShapeError(f"Frame dim {frames.shape[-1]} does not match SAP dim {params.dim}.")
    projected = torch.tanh(F.linear(frames, params.weight, params.bias))
    return torch.softmax(projected @ params.context, dim=-1)


def sap_pool(frames: torch.Tensor, params: SapParams) -> torch.Tensor:
    """
    Pool frames into one vector: u_t = tanh(W_s h_t + b_s), w = softmax_t(u_t . mu), out = sum_t w_t h_t.

    Args:
        frames (torch.Tensor): [..., T, d] frame features, T >= 1.
        params (SapParams): Pooling parameters.

    Returns:
        torch.Tensor: [..., d] pooled vector.
    """
    weights = sap_weights(frames, params)
    return (weights.unsqueeze(-1) * frames).sum(dim=-2)


class SelfAttentivePooling(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.projection = nn.Linear(dim, dim)
        self.context = nn.Parameter(torch.empty(dim, 1))
        nn.init.xavier_normal_(self.context)

    @property
    def params(self) -> SapParams:
        return SapParams(self.projection.weight, self.projection.bias, self.context[:, 0])

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return sap_pool(frames, self.params)


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int | tuple[int, int] = 1) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Sequential()
        if stride not in (1, (1, 1)) or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def _make_stages(
    in_channels: int,
    widths: Sequence[int],
    blocks: Sequence[int],
    strides: Sequence[int | tuple[int, int]],
) -> nn.Sequential:
    stages = []
    for width, count, stride in zip(widths, blocks, strides):
        layers = [BasicBlock(in_channels, width, stride)]
        layers += [BasicBlock(width, width) for _ in range(count - 1)]
        stages.append(nn.Sequential(*layers))
        in_channels = width
    return nn.Sequential(*stages)


def _init_weights(module: nn.Module) -> None:
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d):
            nn.init.kaiming_normal_(layer.weight, mode="fan_in", nonlinearity="relu")
        elif isinstance(layer, nn.BatchNorm2d):
            nn.init.constant_(layer.weight, 1)
            nn.init.constant_(layer.bias, 0)


def _stage_strides(count: int, first: Any, rest: Any) -> list[Any]:
    return [first] + [rest] * (count - 1)


class ImageEncoder(nn.Module):
    """Residual network on [B x C x S x S] images, average-pooled and projected to the embedding."""

    def __init__(self, spec: ImageEncoderSpec) -> None:
        super().__init__()
        self.spec = spec
        widths = spec.stage_widths
        self.stem = nn.Sequential(
            nn.Conv2d(spec.input_channels, widths[0], 7, 2, 3, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1),
        )
        self.stages = _make_stages(
            widths[0], widths, spec.blocks_per_stage, _stage_strides(len(widths), 1, 2)
        )
        self.fc = nn.Linear(widths[-1], spec.embed_dim)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.stages(self.stem(x))
        return self.fc(torch.flatten(F.adaptive_avg_pool2d(out, 1), 1))


class AudioEncoder(nn.Module):
    """
    Residual network on [B x T x n_mels] log-mel features.

    The frequency axis is reduced by strided convolutions and a final mean;
    self-attentive pooling then aggregates the remaining frames over time.
    """

    def __init__(self, spec: AudioEncoderSpec) -> None:
        super().__init__()
        self.spec = spec
        widths = spec.stage_widths
        self.stem = nn.Sequential(
            nn.Conv2d(1, widths[0], 3, 1, 1, bias=False),
            nn.BatchNorm2d(widths[0]),
            nn.ReLU(inplace=True),
        )
        strides = _stage_strides(len(widths), (1, 1), (2, 2))
        if len(strides) > 1:
            strides[-1] = (2, 1)
        self.stages = _make_stages(widths[0], widths, spec.blocks_per_stage, strides)
        self.pooling = SelfAttentivePooling(widths[-1])
        self.fc = nn.Linear(widths[-1], spec.embed_dim)
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # [B, T, F] -> [B, 1, F, T]
        out = self.stages(self.stem(x.transpose(1, 2).unsqueeze(1)))
        frames = out.mean(dim=2).transpose(1, 2)
        return self.fc(self.pooling(frames))


def build_encoder(spec: EncoderSpec, seed: int | None = None) -> nn.Module:
    """
    Instantiate a randomly initialized encoder.

    Args:
        spec (EncoderSpec): Image or audio encoder shape.
        seed (int | None, optional): Seed of the initialization; None uses the global generator.

    Returns:
        nn.Module: ImageEncoder or AudioEncoder.
    """
    cls = ImageEncoder if isinstance(spec, ImageEncoderSpec) else AudioEncoder
    if seed is None:
        return cls(spec)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(spec)


def count_parameters(spec: EncoderSpec) -> int:
    return sum(p.numel() for p in build_encoder(spec, 0).parameters() if p.requires_grad)


def modality_for_spec(spec: EncoderSpec) -> tuple[EModality, ...]:
    if isinstance(spec, AudioEncoderSpec):
        return (EModality.AUDIO,)
    return (EModality.VISUAL,) if spec.input_channels == 3 else (EModality.THERMAL,)


def _expected_shape(spec: EncoderSpec, features: np.ndarray) -> bool:
    if isinstance(spec, AudioEncoderSpec):
        return features.ndim == 2 and features.shape[1] == spec.n_mels and features.shape[0] > 0
    return (
        features.ndim == 3
        and features.shape[0] == spec.input_channels
        and features.shape[1] == features.shape[2] > 0
    )


def embed_batch(encoder: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """
    Run a batch through an encoder and L2-normalize the outputs.

    Raises:
        NumericalError: If any activation of the output is non-finite.
    """
    raw = encoder(batch)
    if not torch.isfinite(raw).all():
        raise NumericalError(f"{type(encoder).__name__} produced non-finite activations.")
    return F.normalize(raw, dim=-1)


def encode(
    features: np.ndarray,
    encoder: nn.Module,
    sample_id: str = "",
    modality: EModality | None = None,
) -> Embedding:
    """
    Embed one sample's features with an eval-mode encoder.

    Args:
        features (np.ndarray): [T x n_mels] audio or [C x S x S] image features.
        encoder (nn.Module): Encoder built from its spec; holds the parameters.
        sample_id (str, optional): Recorded on the embedding.
        modality (EModality | None, optional): Tag; inferred from the spec when omitted.

    Returns:
        Embedding: L2-normalized embedding of size spec.embed_dim.

    Raises:
        ShapeError: If the features do not fit the encoder's spec.
        NumericalError: On non-finite activations.
    """
    spec = encoder.spec
    features = np.asarray(features, dtype=np.float32)
    if not _expected_shape(spec, features):
        raise ShapeError(
            f"Features of shape {features.shape} do not fit {type(spec).__name__}."
        )
    if modality is None:
        (modality,) = modality_for_spec(spec)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            vector = embed_batch(encoder, torch.from_numpy(features).unsqueeze(0))[0]
    finally:
        encoder.train(was_training)
    return Embedding(vector.double().numpy(), modality, sample_id)
