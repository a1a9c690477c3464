from __future__ import annotations
from collections.abc import Callable, Iterator, Mapping, Sequence
import copy
from dataclasses import dataclass, field, replace
import logging
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset, Sampler
from tqdm import tqdm

from .coretypes import (
    BaseEnum,
    ECondition,
    EModality,
    MultimodalSample,
    sort_modalities,
)
from .dataset import substream
from .encoders import EncoderSpec, build_encoder, embed_batch
from .errors import CheckpointError, ConfigError, TrainingError
from .evaluation import ETrialMode, TrialProtocol, available_pairs, compute_eer, generate_trials
from .frontend import EFeatureMode, FrontendConfig, modality_features
from .fusion import AttentionFusion, pairwise_distances
from .inference import compute_embeddings, eval_features

logger = logging.getLogger(__name__)


class ELoss(BaseEnum):
    ANGULAR_PROTOTYPICAL = "angular_prototypical"
    SOFTMAX_CLASSIFIER = "softmax_classifier"


class EFusionMode(BaseEnum):
    NONE = "none"
    ATTENTION = "attention"


@dataclass(frozen=True)
class TrainConfig:
    """
    Training hyperparameters.

    Attributes:
        modality_set (tuple[EModality, ...]): Trained modalities in canonical order.
        fusion_mode (EFusionMode): NONE for a unimodal encoder, ATTENTION for joint training.
        loss (ELoss): Metric-learning objective.
        n_identities_per_batch (int): N identities per batch.
        samples_per_identity (int): M samples per identity.
        epochs (int): Passes over the training set.
        learning_rate (float): Adam step size of encoders and loss parameters.
        fusion_learning_rate (float): Adam step size of the attention parameters.
        lr_decay (float): Multiplicative step decay.
        lr_decay_every (int): Epochs between decays.
        weight_decay (float): Adam weight decay.
        validation_trials (int): Upper bound on validation trials per epoch.
        num_workers (int): Feature prefetch workers.
        batch_size_eval (int): Batch size of validation embedding.
        condition (ECondition): Condition of the training data, recorded for reports.
        seed (int): Seed of initialization, batching and augmentation.
    """

    modality_set: tuple[EModality, ...] = (EModality.AUDIO,)
    fusion_mode: EFusionMode = EFusionMode.NONE
    loss: ELoss = ELoss.ANGULAR_PROTOTYPICAL
    n_identities_per_batch: int = 16
    samples_per_identity: int = 2
    epochs: int = 20
    learning_rate: float = 1e-3
    fusion_learning_rate: float = 1e-3
    lr_decay: float = 0.95
    lr_decay_every: int = 1
    weight_decay: float = 0.0
    validation_trials: int = 2000
    num_workers: int = 0
    batch_size_eval: int = 32
    condition: ECondition = ECondition.CLEAN
    seed: int = 0

    def __post_init__(self) -> None:
        modalities = tuple(self.modality_set)
        if not modalities or EModality.FUSED in modalities:
            raise ConfigError("training.modalities must name audio, visual or thermal.")
        object.__setattr__(self, "modality_set", sort_modalities(modalities))
        if self.fusion_mode is EFusionMode.ATTENTION and len(self.modality_set) < 2:
            raise ConfigError("Attention fusion needs at least 2 modalities.")
        if self.fusion_mode is EFusionMode.NONE and len(self.modality_set) != 1:
            raise ConfigError("Without fusion exactly one modality is trained.")
        if self.n_identities_per_batch < 2:
            raise ConfigError("training.n_identities must be at least 2 (need >= 2 identities).")
        if self.samples_per_identity < 2:
            raise ConfigError("training.samples_per_identity must be at least 2.")
        if self.epochs < 1 or self.lr_decay_every < 1:
            raise ConfigError("training.epochs and training.lr_decay_every must be positive.")
        if self.learning_rate <= 0 or self.fusion_learning_rate <= 0:
            raise ConfigError("Learning rates must be positive.")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"training.lr_decay {self.lr_decay} must lie in (0, 1].")
        if self.validation_trials < 2 or self.num_workers < 0 or self.batch_size_eval < 1:
            raise ConfigError("Invalid validation_trials, num_workers or batch_size_eval.")

    def to_dict(self) -> dict[str, Any]:
        data = dict(self.__dict__)
        data["modality_set"] = [str(modality) for modality in self.modality_set]
        for key in ("fusion_mode", "loss", "condition"):
            data[key] = str(data[key])
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TrainConfig:
        values = dict(data)
        values["modality_set"] = tuple(EModality.parse(token) for token in values["modality_set"])
        values["fusion_mode"] = EFusionMode.parse(values["fusion_mode"])
        values["loss"] = ELoss.parse(values["loss"])
        values["condition"] = ECondition.parse(values["condition"])
        return cls(**values)


@dataclass(frozen=True)
class TrainingData:
    """Identity-disjoint training and validation samples."""

    train: Sequence[MultimodalSample]
    valid: Sequence[MultimodalSample]

    def __post_init__(self) -> None:
        shared = {s.identity.id for s in self.train} & {s.identity.id for s in self.valid}
        if shared:
            raise TrainingError(
                f"Training and validation share identities {sorted(shared)[:5]}."
            )
        if not self.train or not self.valid:
            raise TrainingError("Training and validation sets must both be non-empty.")


@dataclass
class EpochMetrics:
    """
    Metrics of one epoch; epoch 0 is the validation of the initial parameters.
    """

    epoch: int
    train_loss: float | None
    valid_eer: float
    valid_eer_per_modality: dict[str, float] = field(default_factory=dict)
    learning_rate: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EpochMetrics:
        return cls(**data)


@dataclass
class CheckpointBundle:
    """
    Trained modules with the configuration that produced them.

    Attributes:
        encoders (dict[EModality, nn.Module]): One encoder per trained modality.
        config (TrainConfig): Training configuration.
        frontend (FrontendConfig): Feature configuration the encoders expect.
        fusion (AttentionFusion | None): Present exactly when config.fusion_mode is ATTENTION.
        history (list[EpochMetrics]): Per-epoch metrics.
        best_epoch (int): Epoch whose parameters the bundle holds.
        config_hash (str): Hash of the resolved run configuration.
    """

    encoders: dict[EModality, nn.Module]
    config: TrainConfig
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    fusion: AttentionFusion | None = None
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    config_hash: str = ""

    def __post_init__(self) -> None:
        if sort_modalities(self.encoders) != self.config.modality_set:
            raise CheckpointError(
                f"Bundle encoders {[str(m) for m in sort_modalities(self.encoders)]} do not match"
                f" the trained modalities {[str(m) for m in self.config.modality_set]}."
            )
        wants_fusion = self.config.fusion_mode is EFusionMode.ATTENTION
        if wants_fusion != (self.fusion is not None):
            raise CheckpointError("Fusion module presence contradicts the fusion mode.")
        if self.fusion is not None and self.fusion.modalities != self.config.modality_set:
            raise CheckpointError("Fusion modality order differs from the trained modalities.")

    @property
    def modalities(self) -> tuple[EModality, ...]:
        return self.config.modality_set

    @property
    def specs(self) -> dict[EModality, EncoderSpec]:
        return {modality: encoder.spec for modality, encoder in self.encoders.items()}

    @property
    def best_metrics(self) -> EpochMetrics | None:
        for metrics in self.history:
            if metrics.epoch == self.best_epoch:
                return metrics
        return None


class MetricsLog:
    """Line-oriented `epoch<TAB>split<TAB>metric<TAB>value` log."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = None if path is None else Path(path)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, epoch: int, split: str, metric: str, value: float) -> None:
        logger.debug("epoch %d %s %s %.6f", epoch, split, metric, value)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(f"{epoch}\t{split}\t{metric}\t{value:.6f}\n")


def plan_batches(
    labels: Sequence[int],
    n_identities: int,
    samples_per_identity: int,
    rng: np.random.Generator,
) -> list[list[int]]:
    """
    Group sample indices into batches of N identities x M samples.

    Each identity's samples are shuffled and chunked into groups of M; batches
    then take N groups of distinct identities, drawn in proportion to how many
    groups each identity has left. Incomplete groups are dropped.

    Args:
        labels (Sequence[int]): Identity label of every sample.
        n_identities (int): N.
        samples_per_identity (int): M.
        rng (np.random.Generator): Shuffle source.

    Returns:
        list[list[int]]: Batches of sample indices, identity-major (N runs of M indices).

    Raises:
        TrainingError: If fewer than N identities have M samples.
    """
    by_identity: dict[int, list[int]] = {}
    for index, label in enumerate(labels):
        by_identity.setdefault(label, []).append(index)
    groups: dict[int, list[list[int]]] = {}
    for label in sorted(by_identity):
        indices = [by_identity[label][i] for i in rng.permutation(len(by_identity[label]))]
        chunks = len(indices) // samples_per_identity
        if chunks:
            groups[label] = [
                indices[c * samples_per_identity : (c + 1) * samples_per_identity]
                for c in range(chunks)
            ]
    if len(groups) < n_identities:
        raise TrainingError(
            f"Batches need {n_identities} identities with {samples_per_identity} samples,"
            f" the training set has {len(groups)}."
        )
    batches = []
    while True:
        remaining = [label for label in groups if groups[label]]
        if len(remaining) < n_identities:
            break
        counts = np.array([len(groups[label]) for label in remaining], dtype=np.float64)
        chosen = rng.choice(len(remaining), size=n_identities, replace=False, p=counts / counts.sum())
        batch = []
        for position in chosen:
            batch.extend(groups[remaining[position]].pop())
        batches.append(batch)
    return batches


class IdentityBatchSampler(Sampler):
    """Yields (epoch, sample index) keys so feature augmentation can seed per sample."""

    def __init__(self, labels: Sequence[int], cfg: TrainConfig) -> None:
        self.labels = list(labels)
        self.cfg = cfg
        self.epoch = 1
        self._cache: dict[int, list[list[int]]] = {}

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def batches(self, epoch: int) -> list[list[int]]:
        if epoch not in self._cache:
            self._cache = {
                epoch: plan_batches(
                    self.labels,
                    self.cfg.n_identities_per_batch,
                    self.cfg.samples_per_identity,
                    substream(self.cfg.seed, "batches", epoch),
                )
            }
        return self._cache[epoch]

    def __iter__(self) -> Iterator[list[tuple[int, int]]]:
        for batch in self.batches(self.epoch):
            yield [(self.epoch, index) for index in batch]

    def __len__(self) -> int:
        return len(self.batches(self.epoch))


class TrainingFeatures(Dataset):
    def __init__(
        self,
        samples: Sequence[MultimodalSample],
        labels: Sequence[int],
        modalities: Sequence[EModality],
        frontend: FrontendConfig,
        seed: int,
    ) -> None:
        self.samples = samples
        self.labels = labels
        self.modalities = modalities
        self.frontend = frontend
        self.seed = seed

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, key: tuple[int, int]) -> dict[str, Any]:
        epoch, index = key
        sample = self.samples[index]
        item: dict[str, Any] = {"label": self.labels[index]}
        for modality in self.modalities:
            rng = substream(self.seed, "augment", epoch, sample.sample_id, modality.value)
            item[modality.value] = modality_features(
                sample.modality_data(modality), modality, self.frontend, EFeatureMode.TRAIN, rng
            )
        return item


def angular_prototypical_loss(
    embeddings: torch.Tensor,
    scale: torch.Tensor | float = 10.0,
    bias: torch.Tensor | float = -5.0,
) -> torch.Tensor:
    """
    Angular prototypical loss of an [N x M x D] batch.

    The first sample of every identity is the query; the mean of the other
    M - 1 is its prototype. Scaled cosine similarities of every query to every
    prototype are classified against the query's own identity.

    Args:
        embeddings (torch.Tensor): [N x M x D] embeddings, identity-major.
        scale (torch.Tensor | float, optional): Similarity scale, clamped at 1e-6. Defaults to 10.
        bias (torch.Tensor | float, optional): Similarity bias. Defaults to -5.

    Returns:
        torch.Tensor: Scalar loss.

    Raises:
        TrainingError: If N < 2 or M < 2.
    """
    if embeddings.ndim != 3:
        raise TrainingError(f"Expected an N x M x D batch, got {tuple(embeddings.shape)}.")
    n, m, _ = embeddings.shape
    if n < 2:
        raise TrainingError("The angular prototypical loss needs >= 2 identities per batch.")
    if m < 2:
        raise TrainingError("The angular prototypical loss needs >= 2 samples per identity.")
    queries = embeddings[:, 0, :]
    prototypes = embeddings[:, 1:, :].mean(dim=1)
    cosine = F.cosine_similarity(queries.unsqueeze(1), prototypes.unsqueeze(0), dim=-1)
    scale = torch.clamp(torch.as_tensor(scale, dtype=cosine.dtype), min=1e-6)
    logits = cosine * scale + bias
    return F.cross_entropy(logits, torch.arange(n, device=embeddings.device))


class AngularPrototypicalLoss(nn.Module):
    def __init__(self, init_scale: float = 10.0, init_bias: float = -5.0) -> None:
        super().__init__()
        self.scale = nn.Parameter(torch.tensor(init_scale))
        self.bias = nn.Parameter(torch.tensor(init_bias))

    def forward(self, embeddings: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return angular_prototypical_loss(embeddings, self.scale, self.bias)


class SoftmaxClassifierLoss(nn.Module):
    """Plain identity classifier on the embeddings."""

    def __init__(self, embed_dim: int, n_classes: int) -> None:
        super().__init__()
        self.classifier = nn.Linear(embed_dim, n_classes)

    def forward(self, embeddings: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        n, m, d = embeddings.shape
        return F.cross_entropy(
            self.classifier(embeddings.reshape(n * m, d)), labels.reshape(n * m)
        )


def _build_loss(cfg: TrainConfig, embed_dim: int, n_classes: int) -> nn.Module:
    if cfg.loss is ELoss.ANGULAR_PROTOTYPICAL:
        return AngularPrototypicalLoss()
    return SoftmaxClassifierLoss(embed_dim, n_classes)


def _forward(
    encoders: Mapping[EModality, nn.Module],
    fusion: AttentionFusion | None,
    batch: Mapping[str, torch.Tensor],
    modalities: Sequence[EModality],
) -> torch.Tensor:
    per_modality = [embed_batch(encoders[modality], batch[modality.value]) for modality in modalities]
    if fusion is None:
        return per_modality[0]
    fused, _ = fusion(torch.stack(per_modality, dim=1))
    return F.normalize(fused, dim=-1)


class _Validator:
    """Validation EER of every system on a fixed trial list."""

    def __init__(
        self, samples: Sequence[MultimodalSample], cfg: TrainConfig, frontend: FrontendConfig
    ) -> None:
        n_target, n_nontarget = available_pairs(samples, ETrialMode.EASY)
        half = cfg.validation_trials // 2
        protocol = TrialProtocol(
            ETrialMode.EASY, min(half, n_target), min(half, n_nontarget), cfg.seed
        )
        if protocol.n_target == 0 or protocol.n_nontarget == 0:
            raise TrainingError("Validation needs target and nontarget pairs.")
        self.samples = samples
        self.frontend = frontend
        self.batch_size = cfg.batch_size_eval
        trials = generate_trials(samples, protocol)
        rows = {sample.sample_id: row for row, sample in enumerate(samples)}
        self.enroll = np.array([rows[trial.enroll_sample] for trial in trials])
        self.test = np.array([rows[trial.test_sample] for trial in trials])
        self.labels = np.array([trial.label.is_target for trial in trials])
        self.features = {
            modality: eval_features(samples, modality, frontend) for modality in cfg.modality_set
        }

    def __call__(
        self, encoders: Mapping[EModality, nn.Module], fusion: AttentionFusion | None
    ) -> tuple[float, dict[str, float]]:
        embeddings = compute_embeddings(
            encoders, self.frontend, self.samples, fusion, self.batch_size, self.features
        )
        eers = {}
        for modality, vectors in embeddings.vectors.items():
            scores = pairwise_distances(vectors[self.enroll], vectors[self.test])
            eers[str(modality)] = compute_eer(scores, self.labels)[0]
        main = EModality.FUSED if fusion is not None else sort_modalities(encoders)[0]
        return eers[str(main)], eers


def _fit(
    encoders: dict[EModality, nn.Module],
    fusion: AttentionFusion | None,
    data: TrainingData,
    cfg: TrainConfig,
    frontend: FrontendConfig,
    metrics_path: str | Path | None,
    on_epoch_end: Callable[[CheckpointBundle], None] | None,
    config_hash: str,
    progress: bool,
) -> CheckpointBundle:
    modalities = cfg.modality_set
    identities = sorted({sample.identity.id for sample in data.train})
    label_of = {identity: index for index, identity in enumerate(identities)}
    labels = [label_of[sample.identity.id] for sample in data.train]
    embed_dim = encoders[modalities[0]].spec.embed_dim
    loss_module = _build_loss(cfg, embed_dim, len(identities))
    sampler = IdentityBatchSampler(labels, cfg)
    sampler.batches(1)
    loader = DataLoader(
        TrainingFeatures(data.train, labels, modalities, frontend, cfg.seed),
        batch_sampler=sampler,
        num_workers=cfg.num_workers,
    )
    groups = [
        {
            "params": [p for encoder in encoders.values() for p in encoder.parameters()]
            + list(loss_module.parameters()),
            "lr": cfg.learning_rate,
        }
    ]
    if fusion is not None:
        groups.append({"params": list(fusion.parameters()), "lr": cfg.fusion_learning_rate})
    optimizer = torch.optim.Adam(groups, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, cfg.lr_decay_every, cfg.lr_decay)
    metrics_log = MetricsLog(metrics_path)
    validate = _Validator(data.valid, cfg, frontend)
    bundle = CheckpointBundle(
        encoders, cfg, frontend, fusion, config_hash=config_hash
    )

    def record_validation(epoch: int, train_loss: float | None) -> None:
        eer, per_system = validate(encoders, fusion)
        learning_rate = scheduler.get_last_lr()[0]
        bundle.history.append(EpochMetrics(epoch, train_loss, eer, per_system, learning_rate))
        if train_loss is not None:
            metrics_log.write(epoch, "train", "loss", train_loss)
            metrics_log.write(epoch, "train", "lr", learning_rate)
        metrics_log.write(epoch, "valid", "eer", eer)
        for name, value in per_system.items():
            metrics_log.write(epoch, "valid", f"eer_{name}", value)

    record_validation(0, None)
    best_eer, best_state = bundle.history[0].valid_eer, _snapshot(encoders, fusion)
    for epoch in tqdm(range(1, cfg.epochs + 1), desc="epochs", disable=not progress):
        sampler.set_epoch(epoch)
        for module in [*encoders.values(), loss_module] + ([fusion] if fusion else []):
            module.train()
        losses = []
        for step, batch in enumerate(loader):
            embeddings = _forward(encoders, fusion, batch, modalities)
            n = cfg.n_identities_per_batch
            loss = loss_module(
                embeddings.view(n, cfg.samples_per_identity, -1),
                batch["label"].view(n, cfg.samples_per_identity),
            )
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"Non-finite loss {loss.item()} at epoch {epoch}, batch {step}"
                    f" training {[str(m) for m in modalities]} with {cfg.fusion_mode} fusion;"
                    " lower the learning rate or warm-start the encoders."
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        if not losses:
            raise TrainingError("The training set yields no complete batch.")
        record_validation(epoch, float(np.mean(losses)))
        scheduler.step()
        current = bundle.history[-1]
        logger.info(
            "Epoch %d: loss %.4f, validation EER %.2f%%.",
            epoch,
            current.train_loss,
            100 * current.valid_eer,
        )
        if current.valid_eer < best_eer:
            best_eer, best_state = current.valid_eer, _snapshot(encoders, fusion)
            bundle.best_epoch = epoch
        if on_epoch_end is not None:
            on_epoch_end(_best_bundle(bundle, best_state))
    _restore(encoders, fusion, best_state)
    return bundle


def _snapshot(
    encoders: Mapping[EModality, nn.Module], fusion: AttentionFusion | None
) -> dict[str, Any]:
    state = {str(modality): copy.deepcopy(encoder.state_dict()) for modality, encoder in encoders.items()}
    if fusion is not None:
        state["fusion"] = copy.deepcopy(fusion.state_dict())
    return state


def _restore(
    encoders: Mapping[EModality, nn.Module], fusion: AttentionFusion | None, state: Mapping[str, Any]
) -> None:
    for modality, encoder in encoders.items():
        encoder.load_state_dict(state[str(modality)])
    if fusion is not None:
        fusion.load_state_dict(state["fusion"])


def _best_bundle(bundle: CheckpointBundle, state: Mapping[str, Any]) -> CheckpointBundle:
    encoders = {modality: copy.deepcopy(encoder) for modality, encoder in bundle.encoders.items()}
    fusion = copy.deepcopy(bundle.fusion)
    _restore(encoders, fusion, state)
    return replace(bundle, encoders=encoders, fusion=fusion, history=list(bundle.history))


def _seed_for(cfg: TrainConfig, modality: EModality) -> int:
    return int(substream(cfg.seed, "init", modality.value).integers(0, 2**31 - 1))


def train_unimodal(
    data: TrainingData,
    modality: EModality,
    cfg: TrainConfig,
    spec: EncoderSpec,
    frontend: FrontendConfig | None = None,
    metrics_path: str | Path | None = None,
    on_epoch_end: Callable[[CheckpointBundle], None] | None = None,
    config_hash: str = "",
    progress: bool = False,
) -> CheckpointBundle:
    """
    Train one modality encoder with its metric-learning loss.

    Args:
        data (TrainingData): Identity-disjoint training and validation samples.
        modality (EModality): The trained stream.
        cfg (TrainConfig): Hyperparameters; fusion_mode must be NONE.
        spec (EncoderSpec): Encoder architecture.
        frontend (FrontendConfig | None, optional): Feature configuration. Defaults to FrontendConfig().
        metrics_path (str | Path | None, optional): Metrics log destination.
        on_epoch_end (Callable[[CheckpointBundle], None] | None, optional): Receives the
            best-so-far bundle after every epoch, e.g. to save a checkpoint.
        config_hash (str, optional): Provenance hash stored in the bundle.
        progress (bool, optional): Show progress bars. Defaults to False.

    Returns:
        CheckpointBundle: The bundle holding the best-validation parameters.

    Raises:
        TrainingError: On too few identities for a batch or a non-finite loss.
    """
    if cfg.fusion_mode is not EFusionMode.NONE:
        raise TrainingError("Unimodal training needs fusion_mode 'none'.")
    cfg = replace(cfg, modality_set=(modality,))
    frontend = frontend or FrontendConfig()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        encoders = {modality: build_encoder(spec, _seed_for(cfg, modality))}
        logger.info("Training the %s encoder for %d epochs.", modality, cfg.epochs)
        return _fit(encoders, None, data, cfg, frontend, metrics_path, on_epoch_end, config_hash, progress)


def train_fused(
    data: TrainingData,
    cfg: TrainConfig,
    specs: Mapping[EModality, EncoderSpec],
    frontend: FrontendConfig | None = None,
    warm_start: Mapping[EModality, CheckpointBundle] | None = None,
    metrics_path: str | Path | None = None,
    on_epoch_end: Callable[[CheckpointBundle], None] | None = None,
    config_hash: str = "",
    progress: bool = False,
) -> CheckpointBundle:
    """
    Train encoders and attention fusion jointly on the fused embedding.

    The attention parameters start at zero, so the initial fused embedding is
    the mean of the modality embeddings.

    Args:
        data (TrainingData): Identity-disjoint training and validation samples.
        cfg (TrainConfig): Hyperparameters with fusion_mode ATTENTION.
        specs (Mapping[EModality, EncoderSpec]): Encoder architecture per modality.
        frontend (FrontendConfig | None, optional): Feature configuration. Defaults to FrontendConfig().
        warm_start (Mapping[EModality, CheckpointBundle] | None, optional): Unimodal bundles
            whose encoders initialize the joint model.
        metrics_path (str | Path | None, optional): Metrics log destination.
        on_epoch_end (Callable[[CheckpointBundle], None] | None, optional): Best-so-far bundle callback.
        config_hash (str, optional): Provenance hash stored in the bundle.
        progress (bool, optional): Show progress bars. Defaults to False.

    Returns:
        CheckpointBundle: Encoders plus fusion module at the best validation epoch.

    Raises:
        TrainingError: As `train_unimodal`.
        CheckpointError: If a warm-start bundle does not match its modality, spec or features.
    """
    if cfg.fusion_mode is not EFusionMode.ATTENTION:
        raise TrainingError("Fused training needs fusion_mode 'attention'.")
    missing = [str(m) for m in cfg.modality_set if m not in specs]
    if missing:
        raise TrainingError(f"No encoder spec for modalities {missing}.")
    frontend = frontend or FrontendConfig()
    warm_start = dict(warm_start or {})
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        encoders = {}
        for modality in cfg.modality_set:
            if modality in warm_start:
                encoders[modality] = _warm_encoder(
                    warm_start.pop(modality), modality, specs[modality], frontend
                )
            else:
                encoders[modality] = build_encoder(specs[modality], _seed_for(cfg, modality))
        if warm_start:
            raise CheckpointError(
                f"Warm-start bundles for untrained modalities {sorted(map(str, warm_start))}."
            )
        embed_dims = {encoder.spec.embed_dim for encoder in encoders.values()}
        if len(embed_dims) != 1:
            raise TrainingError(f"Fused encoders disagree on embed_dim: {sorted(embed_dims)}.")
        fusion = AttentionFusion(cfg.modality_set, embed_dims.pop())
        logger.info(
            "Training %s with attention fusion for %d epochs.",
            "+".join(map(str, cfg.modality_set)),
            cfg.epochs,
        )
        return _fit(encoders, fusion, data, cfg, frontend, metrics_path, on_epoch_end, config_hash, progress)


def _warm_encoder(
    bundle: CheckpointBundle, modality: EModality, spec: EncoderSpec, frontend: FrontendConfig
) -> nn.Module:
    if bundle.modalities != (modality,) or bundle.fusion is not None:
        raise CheckpointError(
            f"Warm start for {modality} needs a unimodal {modality} checkpoint,"
            f" got {[str(m) for m in bundle.modalities]}."
        )
    if bundle.specs[modality] != spec:
        raise CheckpointError(f"The {modality} checkpoint was trained with a different encoder spec.")
    if bundle.frontend.for_modality(modality) != frontend.for_modality(modality):
        raise CheckpointError(f"The {modality} checkpoint was trained with different features.")
    return copy.deepcopy(bundle.encoders[modality])
