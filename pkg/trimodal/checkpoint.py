from __future__ import annotations
from collections.abc import Mapping
from dataclasses import asdict
import hashlib
import logging
import os
from pathlib import Path
import pickle
import tempfile
from typing import Any

import torch

from .coretypes import EModality
from .encoders import EncoderSpec, build_encoder, spec_from_dict, spec_to_dict
from .errors import CheckpointError
from .frontend import AudioFeatureConfig, FrontendConfig, ImageFeatureConfig
from .fusion import AttentionFusion
from .training import CheckpointBundle, EpochMetrics, TrainConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _frontend_to_dict(frontend: FrontendConfig) -> dict[str, Any]:
    return {
        "audio": asdict(frontend.audio),
        "visual": asdict(frontend.visual),
        "thermal": asdict(frontend.thermal),
    }


def _image_config(data: Mapping[str, Any]) -> ImageFeatureConfig:
    values = dict(data)
    values["mean"] = tuple(values["mean"])
    values["std"] = tuple(values["std"])
    return ImageFeatureConfig(**values)


def _frontend_from_dict(data: Mapping[str, Any]) -> FrontendConfig:
    return FrontendConfig(
        AudioFeatureConfig(**data["audio"]),
        _image_config(data["visual"]),
        _image_config(data["thermal"]),
    )


def bundle_to_dict(bundle: CheckpointBundle) -> dict[str, Any]:
    """Plain container of a bundle: tensors, lists, dicts and primitives only."""
    return {
        "format_version": FORMAT_VERSION,
        "modality_order": [str(modality) for modality in bundle.modalities],
        "specs": {str(m): spec_to_dict(spec) for m, spec in bundle.specs.items()},
        "encoders": {str(m): encoder.state_dict() for m, encoder in bundle.encoders.items()},
        "fusion": None if bundle.fusion is None else bundle.fusion.state_dict(),
        "train_config": bundle.config.to_dict(),
        "frontend": _frontend_to_dict(bundle.frontend),
        "config_hash": bundle.config_hash,
        "seed": bundle.config.seed,
        "history": [metrics.to_dict() for metrics in bundle.history],
        "best_epoch": bundle.best_epoch,
    }


def save_bundle(bundle: CheckpointBundle, path: str | Path) -> Path:
    """
    Write a checkpoint atomically.

    The container goes to a temporary file in the destination directory and is
    moved into place, so an interrupted write leaves the previous file intact.

    Args:
        bundle (CheckpointBundle): The bundle to save.
        path (str | Path): Destination file.

    Returns:
        Path: The destination.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(handle, "wb") as stream:
            torch.save(bundle_to_dict(bundle), stream)
        os.replace(temp_name, path)
    except BaseException:
        Path(temp_name).unlink(missing_ok=True)
        raise
    logger.debug("Saved checkpoint %s (best epoch %d).", path, bundle.best_epoch)
    return path


def load_bundle(
    path: str | Path, expected_specs: Mapping[EModality, EncoderSpec] | None = None
) -> CheckpointBundle:
    """
    Load a checkpoint and rebuild its modules.

    Args:
        path (str | Path): Checkpoint file.
        expected_specs (Mapping[EModality, EncoderSpec] | None, optional): Specs the caller
            requires; every listed modality must be present with an equal spec.

    Returns:
        CheckpointBundle: The bundle with encoders in eval mode.

    Raises:
        CheckpointError: On an unreadable file, an unknown format or a spec mismatch.
    """
    path = Path(path)
    try:
        data = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as error:
        raise CheckpointError(f"Cannot read checkpoint '{path}': {error}") from None
    if not isinstance(data, dict) or data.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"'{path}' is not a version {FORMAT_VERSION} checkpoint.")
    try:
        config = TrainConfig.from_dict(data["train_config"])
        specs = {EModality.parse(m): spec_from_dict(s) for m, s in data["specs"].items()}
        encoders = {}
        for modality, spec in specs.items():
            encoder = build_encoder(spec, 0)
            encoder.load_state_dict(data["encoders"][str(modality)])
            encoders[modality] = encoder.eval()
        fusion = None
        if data["fusion"] is not None:
            order = tuple(EModality.parse(token) for token in data["modality_order"])
            fusion = AttentionFusion(order, next(iter(specs.values())).embed_dim)
            fusion.load_state_dict(data["fusion"])
            fusion.eval()
        bundle = CheckpointBundle(
            encoders,
            config,
            _frontend_from_dict(data["frontend"]),
            fusion,
            [EpochMetrics.from_dict(metrics) for metrics in data["history"]],
            data["best_epoch"],
            data["config_hash"],
        )
    except (KeyError, TypeError, ValueError, RuntimeError) as error:
        raise CheckpointError(f"Checkpoint '{path}' is malformed: {error}") from None
    for modality, spec in (expected_specs or {}).items():
        if modality not in specs:
            raise CheckpointError(f"Checkpoint '{path}' has no {modality} encoder.")
        if specs[modality] != spec:
            raise CheckpointError(
                f"Checkpoint '{path}' holds a {modality} encoder of a different spec."
            )
    return bundle


def bundle_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as stream:
        for chunk in iter(lambda: stream.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
