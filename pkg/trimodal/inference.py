from __future__ import annotations
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
import logging
from typing import TYPE_CHECKING

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from .coretypes import Embedding, EModality, MultimodalSample, sort_modalities
from .encoders import embed_batch
from .frontend import EFeatureMode, FrontendConfig, modality_features
from .fusion import AttentionFusion, attention_fuse

if TYPE_CHECKING:
    from .training import CheckpointBundle

logger = logging.getLogger(__name__)


def eval_features(
    samples: Sequence[MultimodalSample], modality: EModality, frontend: FrontendConfig
) -> list[np.ndarray]:
    return [
        modality_features(sample.modality_data(modality), modality, frontend, EFeatureMode.EVAL)
        for sample in samples
    ]


def embed_features(
    encoder: nn.Module,
    features: Sequence[np.ndarray],
    batch_size: int = 32,
    progress: bool = False,
) -> np.ndarray:
    """
    Embed eval-mode features, batching inputs of equal shape.

    Args:
        encoder (nn.Module): The encoder; switched to eval mode for the call.
        features (Sequence[np.ndarray]): One feature array per sample.
        batch_size (int, optional): Maximum batch size. Defaults to 32.
        progress (bool, optional): Show a progress bar. Defaults to False.

    Returns:
        np.ndarray: [n x embed_dim] unit-norm float64 rows in input order.
    """
    by_shape: dict[tuple[int, ...], list[int]] = defaultdict(list)
    for index, array in enumerate(features):
        by_shape[array.shape].append(index)
    batches = [
        indices[start : start + batch_size]
        for indices in by_shape.values()
        for start in range(0, len(indices), batch_size)
    ]
    output: np.ndarray | None = None
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            for batch in tqdm(batches, desc="embed", disable=not progress, leave=False):
                inputs = torch.from_numpy(np.stack([features[index] for index in batch]))
                vectors = embed_batch(encoder, inputs).double().numpy()
                if output is None:
                    output = np.zeros((len(features), vectors.shape[1]))
                output[batch] = vectors
    finally:
        encoder.train(was_training)
    return np.zeros((0, 0)) if output is None else output


@dataclass
class EmbeddingSet:
    """
    Embeddings of a list of samples, row-aligned with `sample_ids`.

    Attributes:
        sample_ids (tuple[str, ...]): Sample order of every matrix.
        vectors (dict[EModality, np.ndarray]): Unit-norm [n x d] matrix per modality, FUSED included
            when an attention-fusion module produced it.
        fusion_weights (np.ndarray | None): [n x m] attention weights, columns in `fusion_modalities` order.
        fusion_modalities (tuple[EModality, ...]): Modalities of the fusion weight columns.
    """

    sample_ids: tuple[str, ...]
    vectors: dict[EModality, np.ndarray]
    fusion_weights: np.ndarray | None = None
    fusion_modalities: tuple[EModality, ...] = ()

    def embeddings(self, modality: EModality) -> dict[str, Embedding]:
        return {
            sample_id: Embedding(vector, modality, sample_id)
            for sample_id, vector in zip(self.sample_ids, self.vectors[modality])
        }

    def as_mapping(self) -> dict[EModality, dict[str, Embedding]]:
        return {modality: self.embeddings(modality) for modality in self.vectors}

    def attention_statistics(self) -> dict[str, tuple[float, float]] | None:
        """Mean and standard deviation of each modality's fusion weight."""
        if self.fusion_weights is None:
            return None
        return {
            str(modality): (
                float(self.fusion_weights[:, column].mean()),
                float(self.fusion_weights[:, column].std()),
            )
            for column, modality in enumerate(self.fusion_modalities)
        }


def compute_embeddings(
    encoders: Mapping[EModality, nn.Module],
    frontend: FrontendConfig,
    samples: Sequence[MultimodalSample],
    fusion: AttentionFusion | None = None,
    batch_size: int = 32,
    features: Mapping[EModality, Sequence[np.ndarray]] | None = None,
    progress: bool = False,
) -> EmbeddingSet:
    """
    Embed samples with every encoder and, when given, fuse them by attention.

    Args:
        encoders (Mapping[EModality, nn.Module]): One encoder per modality.
        frontend (FrontendConfig): Feature configuration the encoders were trained with.
        samples (Sequence[MultimodalSample]): Samples to embed.
        fusion (AttentionFusion | None, optional): Fusion module. Defaults to None.
        batch_size (int, optional): Encoder batch size. Defaults to 32.
        features (Mapping[EModality, Sequence[np.ndarray]] | None, optional): Precomputed eval features.
        progress (bool, optional): Show progress bars. Defaults to False.

    Returns:
        EmbeddingSet: The embeddings.
    """
    modalities = sort_modalities(encoders)
    vectors = {}
    for modality in modalities:
        modality_inputs = (
            features[modality]
            if features is not None and modality in features
            else eval_features(samples, modality, frontend)
        )
        vectors[modality] = embed_features(
            encoders[modality], modality_inputs, batch_size, progress
        )
        logger.debug("Embedded %d samples with the %s encoder.", len(samples), modality)
    embedding_set = EmbeddingSet(tuple(sample.sample_id for sample in samples), vectors)
    if fusion is not None:
        params = fusion.params
        fused_rows, weight_rows = [], []
        for row, sample_id in enumerate(embedding_set.sample_ids):
            fused, weights = attention_fuse(
                [
                    Embedding(vectors[modality][row], modality, sample_id)
                    for modality in fusion.modalities
                ],
                params,
            )
            fused_rows.append(fused.normalized().vector)
            weight_rows.append(weights.alpha)
        vectors[EModality.FUSED] = np.array(fused_rows).reshape(len(samples), -1)
        embedding_set.fusion_weights = np.array(weight_rows).reshape(
            len(samples), len(fusion.modalities)
        )
        embedding_set.fusion_modalities = fusion.modalities
    return embedding_set


def embed_samples(
    bundle: CheckpointBundle,
    samples: Sequence[MultimodalSample],
    batch_size: int = 32,
    progress: bool = False,
) -> EmbeddingSet:
    """Embed samples with every module of a trained checkpoint bundle."""
    return compute_embeddings(
        bundle.encoders, bundle.frontend, samples, bundle.fusion, batch_size, progress=progress
    )
