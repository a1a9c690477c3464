from __future__ import annotations
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .coretypes import MODALITY_ORDER, Embedding, EModality, sort_modalities
from .errors import FusionError

NORM_TOLERANCE = 1e-4
SIMPLEX_TOLERANCE = 1e-6


@dataclass(frozen=True)
class AttentionFusionParams:
    """
    Attention fusion parameters for m modalities of dimension d.

    Attributes:
        weight (torch.Tensor): W [m x (m * d)].
        bias (torch.Tensor): b [m].
    """

    weight: torch.Tensor
    bias: torch.Tensor

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise FusionError("Fusion weight must be a matrix and bias a vector.")
        m = self.weight.shape[0]
        if m not in (2, 3):
            raise FusionError(f"Attention fusion combines 2 or 3 modalities, got {m}.")
        if self.bias.shape[0] != m or self.weight.shape[1] % m:
            raise FusionError(
                f"Fusion weight {tuple(self.weight.shape)} and bias {tuple(self.bias.shape)}"
                " are inconsistent."
            )

    @property
    def n_modalities(self) -> int:
        return self.weight.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[1] // self.weight.shape[0]

    @classmethod
    def zeros(cls, n_modalities: int, embed_dim: int) -> AttentionFusionParams:
        return cls(
            torch.zeros(n_modalities, n_modalities * embed_dim, dtype=torch.float64),
            torch.zeros(n_modalities, dtype=torch.float64),
        )


@dataclass(frozen=True)
class FusionWeights:
    alpha: np.ndarray

    def __post_init__(self) -> None:
        alpha = np.array(self.alpha, dtype=np.float64)
        if alpha.ndim != 1 or (alpha < 0).any() or abs(alpha.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise FusionError(f"Fusion weights {alpha} are not a probability vector.")
        alpha.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)


def fuse_tensors(
    stacked: torch.Tensor, params: AttentionFusionParams
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Attention-fuse stacked embeddings.

    Args:
        stacked (torch.Tensor): [..., m, d] embeddings in canonical modality order.
        params (AttentionFusionParams): W and b.

    Returns:
        tuple[torch.Tensor, torch.Tensor]: Fused embeddings [..., d] (not renormalized) and weights [..., m].

    Raises:
        FusionError: On a shape mismatch or non-finite attention scores.
    """
    m, d = stacked.shape[-2:]
    if m != params.n_modalities or d != params.embed_dim:
        raise FusionError(
            f"Fusion expects {params.n_modalities} x {params.embed_dim} embeddings, got {m} x {d}."
        )
    logits = stacked.flatten(-2) @ params.weight.T + params.bias
    if not torch.isfinite(logits).all():
        raise FusionError("Attention scores are not finite.")
    alpha = torch.softmax(logits, dim=-1)
    return (alpha.unsqueeze(-1) * stacked).sum(dim=-2), alpha


def attention_fuse(
    embeddings: Sequence[Embedding], params: AttentionFusionParams
) -> tuple[Embedding, FusionWeights]:
    """
    Fuse 2 or 3 modality embeddings with softmax attention weights.

    Args:
        embeddings (Sequence[Embedding]): Embeddings ordered audio, visual, thermal.
        params (AttentionFusionParams): Fusion parameters.

    Returns:
        tuple[Embedding, FusionWeights]: The fused embedding tagged FUSED and the weights.
    """
    modalities = tuple(embedding.modality for embedding in embeddings)
    if len(modalities) not in (2, 3):
        raise FusionError(f"Attention fusion combines 2 or 3 embeddings, got {len(modalities)}.")
    if len(set(modalities)) != len(modalities) or sort_modalities(modalities) != modalities:
        raise FusionError(
            f"Embeddings must be unimodal and ordered {[str(m) for m in MODALITY_ORDER]},"
            f" got {[str(m) for m in modalities]}."
        )
    if len({embedding.dim for embedding in embeddings}) != 1:
        raise FusionError("Fused embeddings must share one dimension.")
    stacked = torch.from_numpy(np.stack([embedding.vector for embedding in embeddings]))
    with torch.no_grad():
        fused, alpha = fuse_tensors(
            stacked, AttentionFusionParams(params.weight.double(), params.bias.double())
        )
    sample_ids = {embedding.sample_id for embedding in embeddings}
    sample_id = sample_ids.pop() if len(sample_ids) == 1 else ""
    return (
        Embedding(fused.numpy(), EModality.FUSED, sample_id),
        FusionWeights(alpha.numpy()),
    )


class AttentionFusion(nn.Module):
    """Learnable W and b, initialized to zeros so the initial weights are uniform."""

    def __init__(self, modalities: Sequence[EModality], embed_dim: int) -> None:
        super().__init__()
        self.modalities = sort_modalities(modalities)
        m = len(self.modalities)
        if m not in (2, 3) or self.modalities != tuple(modalities):
            raise FusionError(f"Cannot fuse modalities {[str(x) for x in modalities]}.")
        self.attention = nn.Linear(m * embed_dim, m)
        nn.init.zeros_(self.attention.weight)
        nn.init.zeros_(self.attention.bias)

    @property
    def params(self) -> AttentionFusionParams:
        return AttentionFusionParams(self.attention.weight, self.attention.bias)

    def forward(self, stacked: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return fuse_tensors(stacked, self.params)


def verification_score(e1: Embedding, e2: Embedding) -> float:
    """
    Euclidean distance between two normalized embeddings of the same modality.

    Returns:
        float: Distance in [0, 2]; lower means more similar.

    Raises:
        FusionError: If the modalities differ or an embedding is not unit-norm.
    """
    if e1.modality is not e2.modality:
        raise FusionError(f"Cannot score {e1.modality} against {e2.modality}.")
    for embedding in (e1, e2):
        if not embedding.is_normalized(NORM_TOLERANCE):
            raise FusionError(
                f"Embedding of '{embedding.sample_id}' has norm {embedding.norm:.6f}, expected 1."
            )
    if e1.dim != e2.dim:
        raise FusionError(f"Embedding dims differ: {e1.dim} vs {e2.dim}.")
    return float(np.clip(np.linalg.norm(e1.vector - e2.vector), 0.0, 2.0))


def pairwise_distances(enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distances of unit vectors, clipped to [0, 2]."""
    return np.clip(np.linalg.norm(enroll - test, axis=-1), 0.0, 2.0)


def average_scores(per_modality: Mapping[EModality, float]) -> float:
    """
    Average 2 or 3 per-modality distances.

    Raises:
        FusionError: On an empty or wrongly sized map or a score outside [0, 2].
    """
    if not per_modality:
        raise FusionError("No scores to average.")
    if len(per_modality) not in (2, 3):
        raise FusionError(f"Score averaging combines 2 or 3 systems, got {len(per_modality)}.")
    for modality, score in per_modality.items():
        if not 0.0 <= score <= 2.0:
            raise FusionError(f"Score {score} of {modality} lies outside [0, 2].")
    return float(sum(per_modality.values()) / len(per_modality))
