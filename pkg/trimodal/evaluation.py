from __future__ import annotations
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
import itertools
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from .coretypes import (
    MODALITY_ORDER,
    BaseEnum,
    ECondition,
    EGenderPair,
    EModality,
    ETrialLabel,
    Embedding,
    ManifestEntry,
    MultimodalSample,
    ScoreRecord,
    TrialPair,
    check_trials_resolve,
    sort_modalities,
)
from .dataset import substream
from .errors import ConfigError, FusionError, MetricError, TrialError
from .fusion import average_scores, verification_score

logger = logging.getLogger(__name__)

Member = ManifestEntry | MultimodalSample

OVERLAP_REGIONS = ("A", "V", "T", "AV", "AT", "VT", "AVT")
_REGION_LETTERS = {EModality.AUDIO: "A", EModality.VISUAL: "V", EModality.THERMAL: "T"}


class ETrialMode(BaseEnum):
    EASY = "easy"
    HARD = "hard"


class EScoreFusion(BaseEnum):
    NONE = "none"
    SCORE_AVERAGE = "score_average"
    ATTENTION = "attention"


@dataclass(frozen=True)
class TrialProtocol:
    """
    How a trial list is drawn.

    Attributes:
        mode (ETrialMode): EASY draws nontargets from any gender, HARD only same-gender pairs.
        n_target (int): Number of target pairs.
        n_nontarget (int): Number of nontarget pairs.
        seed (int): Sampling seed.
    """

    mode: ETrialMode = ETrialMode.EASY
    n_target: int = 1000
    n_nontarget: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_target < 0 or self.n_nontarget < 0:
            raise ConfigError(
                f"Trial counts must be non-negative, got {self.n_target} and {self.n_nontarget}."
            )


def _group_by_identity(manifest: Iterable[Member]) -> dict[str, list[Member]]:
    groups: dict[str, list[Member]] = defaultdict(list)
    for member in sorted(manifest, key=lambda item: item.sample_id):
        groups[member.identity.id].append(member)
    return dict(sorted(groups.items()))


def _nontarget_pools(
    groups: Mapping[str, list[Member]], mode: ETrialMode
) -> list[list[list[Member]]]:
    """Identity groups that may be paired for nontargets; one pool per gender in hard mode."""
    if mode is ETrialMode.EASY:
        return [list(groups.values())]
    pools: dict[Any, list[list[Member]]] = defaultdict(list)
    for members in groups.values():
        pools[members[0].identity.gender].append(members)
    return [pools[gender] for gender in sorted(pools, key=str)]


def _pool_nontargets(pool: Sequence[Sequence[Member]]) -> int:
    total = sum(len(members) for members in pool)
    return math.comb(total, 2) - sum(math.comb(len(members), 2) for members in pool)


def available_pairs(manifest: Iterable[Member], mode: ETrialMode) -> tuple[int, int]:
    """
    Count the unique target and nontarget pairs a manifest offers.

    Returns:
        tuple[int, int]: Target pairs and nontarget pairs eligible under `mode`.
    """
    groups = _group_by_identity(manifest)
    n_target = sum(math.comb(len(members), 2) for members in groups.values())
    n_nontarget = sum(_pool_nontargets(pool) for pool in _nontarget_pools(groups, mode))
    return n_target, n_nontarget


def _gender_pair(a: Member, b: Member) -> EGenderPair:
    return EGenderPair.SAME if a.identity.gender is b.identity.gender else EGenderPair.OPPOSITE


def _make_trial(label: ETrialLabel, a: Member, b: Member) -> TrialPair:
    if a.sample_id > b.sample_id:
        a, b = b, a
    return TrialPair(label, a.sample_id, b.sample_id, _gender_pair(a, b))


def _draw_targets(
    groups: Mapping[str, list[Member]], n_target: int, rng: np.random.Generator
) -> list[TrialPair]:
    cross: list[tuple[Member, Member]] = []
    same: list[tuple[Member, Member]] = []
    for members in groups.values():
        for a, b in itertools.combinations(members, 2):
            (cross if a.session != b.session else same).append((a, b))
    cross = [cross[index] for index in rng.permutation(len(cross))]
    same = [same[index] for index in rng.permutation(len(same))]
    return [_make_trial(ETrialLabel.TARGET, a, b) for a, b in (cross + same)[:n_target]]


def _draw_nontargets(
    pools: Sequence[Sequence[Sequence[Member]]],
    n_nontarget: int,
    n_available: int,
    rng: np.random.Generator,
) -> list[TrialPair]:
    if n_nontarget == 0:
        return []
    if 2 * n_nontarget > n_available:
        candidates = [
            (a, b)
            for pool in pools
            for members_a, members_b in itertools.combinations(pool, 2)
            for a in members_a
            for b in members_b
        ]
        chosen = rng.choice(len(candidates), size=n_nontarget, replace=False)
        return [_make_trial(ETrialLabel.NONTARGET, *candidates[index]) for index in chosen]
    flat_pools = [[member for members in pool for member in members] for pool in pools]
    pool_weights = np.array([_pool_nontargets(pool) for pool in pools], dtype=np.float64)
    pool_weights /= pool_weights.sum()
    trials: dict[frozenset[str], TrialPair] = {}
    while len(trials) < n_nontarget:
        members = flat_pools[int(rng.choice(len(flat_pools), p=pool_weights))]
        a, b = (members[index] for index in rng.integers(0, len(members), 2))
        if a.identity.id == b.identity.id:
            continue
        trial = _make_trial(ETrialLabel.NONTARGET, a, b)
        trials.setdefault(trial.key, trial)
    return list(trials.values())


def generate_trials(manifest: Sequence[Member], protocol: TrialProtocol) -> list[TrialPair]:
    """
    Draw a trial list of single enrollment / single test pairs.

    Target pairs prefer samples from different sessions. Nontargets are drawn
    uniformly from the eligible pairs: any two identities in easy mode, two
    identities of the same gender label in hard mode.

    Args:
        manifest (Sequence[Member]): Manifest entries or samples of one split.
        protocol (TrialProtocol): Mode, counts and seed.

    Returns:
        list[TrialPair]: Exactly n_target + n_nontarget unique trials in a seeded order.

    Raises:
        TrialError: If identities are insufficient or the counts exceed the unique pairs available.
    """
    groups = _group_by_identity(manifest)
    if len(groups) < 2:
        raise TrialError(f"Trials need at least 2 identities, the manifest has {len(groups)}.")
    pools = _nontarget_pools(groups, protocol.mode)
    if protocol.mode is ETrialMode.HARD and (
        len(pools) < 2 or min(len(pool) for pool in pools) < 2
    ):
        raise TrialError("Hard trials need at least 2 identities of each gender label.")
    n_target, n_nontarget = available_pairs(manifest, protocol.mode)
    if protocol.n_target > n_target:
        raise TrialError(
            f"Requested {protocol.n_target} target pairs, only {n_target} are available."
        )
    if protocol.n_nontarget > n_nontarget:
        raise TrialError(
            f"Requested {protocol.n_nontarget} {protocol.mode} nontarget pairs,"
            f" only {n_nontarget} are available."
        )
    rng = substream(protocol.seed, "trials", protocol.mode.value)
    trials = _draw_targets(groups, protocol.n_target, rng)
    trials += _draw_nontargets(pools, protocol.n_nontarget, n_nontarget, rng)
    order = rng.permutation(len(trials))
    logger.debug(
        "Drew %d target and %d %s nontarget trials.",
        protocol.n_target,
        protocol.n_nontarget,
        protocol.mode,
    )
    return [trials[index] for index in order]


def format_trials(trials: Iterable[TrialPair]) -> str:
    return "".join(
        f"{1 if trial.label.is_target else 0}\t{trial.enroll_sample}\t{trial.test_sample}\n"
        for trial in trials
    )


def write_trials(trials: Iterable[TrialPair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_trials(trials), encoding="utf-8")


def read_trials(path: str | Path, manifest: Sequence[Member]) -> list[TrialPair]:
    """
    Read a trial list file and resolve it against a manifest.

    Each line is `label<TAB>enroll_sample_id<TAB>test_sample_id` with label 1 or 0;
    gender pairs are recovered from the manifest.

    Raises:
        TrialError: On a malformed line, an unknown sample or a label contradicting the identities.
    """
    path = Path(path)
    members = {member.sample_id: member for member in manifest}
    trials = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3 or fields[0] not in ("0", "1"):
            raise TrialError(f"{path}:{number}: expected 'label<TAB>enroll<TAB>test'.")
        label = ETrialLabel.TARGET if fields[0] == "1" else ETrialLabel.NONTARGET
        for sample_id in fields[1:]:
            if sample_id not in members:
                raise TrialError(f"{path}:{number}: unknown sample '{sample_id}'.")
        enroll, test = members[fields[1]], members[fields[2]]
        trials.append(TrialPair(label, enroll.sample_id, test.sample_id, _gender_pair(enroll, test)))
    check_trials_resolve(trials, manifest)
    return trials


def score_trials(
    trials: Sequence[TrialPair],
    embeddings: Mapping[EModality, Mapping[str, Embedding]],
    fusion: EScoreFusion = EScoreFusion.NONE,
    modalities: Sequence[EModality] | None = None,
) -> list[ScoreRecord]:
    """
    Score every trial in each requested modality and optionally fuse.

    Args:
        trials (Sequence[TrialPair]): The trial list.
        embeddings (Mapping[EModality, Mapping[str, Embedding]]): Normalized embeddings by modality
            and sample id; attention fusion reads the FUSED entry.
        fusion (EScoreFusion, optional): NONE, SCORE_AVERAGE or ATTENTION. Defaults to NONE.
        modalities (Sequence[EModality] | None, optional): Unimodal systems to score;
            every unimodal key of `embeddings` when omitted.

    Returns:
        list[ScoreRecord]: One record per trial, in trial order.

    Raises:
        TrialError: If a trial sample has no embedding.
        FusionError: If the fusion mode does not fit the modalities.
    """
    if modalities is None:
        modalities = [modality for modality in embeddings if modality.is_unimodal]
    modalities = sort_modalities(modalities)
    if fusion is EScoreFusion.SCORE_AVERAGE and len(modalities) not in (2, 3):
        raise FusionError(
            f"Score averaging needs 2 or 3 modalities, got {[str(m) for m in modalities]}."
        )
    if fusion is EScoreFusion.ATTENTION and EModality.FUSED not in embeddings:
        raise FusionError("Attention fusion needs attention-fused embeddings.")
    if fusion is EScoreFusion.NONE and not modalities:
        raise FusionError("No modality to score.")
    scored = list(modalities) + ([EModality.FUSED] if fusion is EScoreFusion.ATTENTION else [])
    for modality in scored:
        if modality not in embeddings:
            raise TrialError(f"No {modality} embeddings were supplied.")

    def lookup(modality: EModality, sample_id: str) -> Embedding:
        try:
            return embeddings[modality][sample_id]
        except KeyError:
            raise TrialError(f"Sample '{sample_id}' has no {modality} embedding.") from None

    records = []
    for trial in trials:
        per_modality = {
            modality: verification_score(
                lookup(modality, trial.enroll_sample), lookup(modality, trial.test_sample)
            )
            for modality in modalities
        }
        fused = None
        if fusion is EScoreFusion.SCORE_AVERAGE:
            fused = average_scores(per_modality)
        elif fusion is EScoreFusion.ATTENTION:
            fused = verification_score(
                lookup(EModality.FUSED, trial.enroll_sample),
                lookup(EModality.FUSED, trial.test_sample),
            )
        records.append(ScoreRecord(trial, per_modality, fused))
    return records


def _as_arrays(scores: Sequence[float], labels: Sequence[bool]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if scores.shape != labels.shape:
        raise MetricError(f"Got {scores.size} scores for {labels.size} labels.")
    if not np.isfinite(scores).all():
        raise MetricError("Scores must be finite.")
    return scores, labels


def far_frr_curve(
    scores: Sequence[float], labels: Sequence[bool]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Sweep thresholds at both extremes and at every midpoint of adjacent distinct scores.

    A trial is accepted when its score is at most the threshold.

    Args:
        scores (Sequence[float]): Distances, lower is more similar.
        labels (Sequence[bool]): True for target trials.

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: Thresholds, FAR and FRR, ascending by threshold.

    Raises:
        MetricError: If only one class is present.
    """
    scores, labels = _as_arrays(scores, labels)
    targets = np.sort(scores[labels])
    nontargets = np.sort(scores[~labels])
    if targets.size == 0 or nontargets.size == 0:
        raise MetricError(
            f"EER needs both classes, got {targets.size} target and {nontargets.size} nontarget trials."
        )
    distinct = np.unique(scores)
    thresholds = np.concatenate(
        ([distinct[0] - 1.0], (distinct[:-1] + distinct[1:]) / 2.0, [distinct[-1] + 1.0])
    )
    far = np.searchsorted(nontargets, thresholds, side="right") / nontargets.size
    frr = 1.0 - np.searchsorted(targets, thresholds, side="right") / targets.size
    return thresholds, far, frr


def compute_eer(scores: Sequence[float], labels: Sequence[bool]) -> tuple[float, float]:
    """
    Equal error rate with linear interpolation of the FAR/FRR crossing.

    Args:
        scores (Sequence[float]): Distances, lower is more similar.
        labels (Sequence[bool]): True for target trials.

    Returns:
        tuple[float, float]: The EER in [0, 1] and the threshold at the crossing.
    """
    thresholds, far, frr = far_frr_curve(scores, labels)
    difference = frr - far
    crossing = int(np.argmax(difference <= 0.0))
    if difference[crossing] == 0.0:
        return float(far[crossing]), float(thresholds[crossing])
    before = crossing - 1
    weight = difference[before] / (difference[before] - difference[crossing])
    eer = far[before] + weight * (far[crossing] - far[before])
    threshold = thresholds[before] + weight * (thresholds[crossing] - thresholds[before])
    return float(eer), float(threshold)


@dataclass(frozen=True)
class AccuracyReport:
    """
    Decision accuracy at one threshold; a stratum without trials is None.
    """

    threshold: float
    overall: float
    same_gender: float | None
    opposite_gender: float | None
    n_trials: int
    n_same_gender: int
    n_opposite_gender: int

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AccuracyReport:
        return cls(**data)


def compute_accuracy(
    scores: Sequence[float],
    labels: Sequence[bool],
    threshold: float,
    gender_pairs: Sequence[EGenderPair],
) -> AccuracyReport:
    """
    Fraction of correct accept/reject decisions, overall and per gender-pair stratum.

    Raises:
        MetricError: On empty input or mismatched lengths.
    """
    scores, labels = _as_arrays(scores, labels)
    if scores.size == 0:
        raise MetricError("Accuracy needs at least one trial.")
    if len(gender_pairs) != scores.size:
        raise MetricError(f"Got {len(gender_pairs)} gender pairs for {scores.size} trials.")
    correct = (scores <= threshold) == labels
    same = np.array([pair is EGenderPair.SAME for pair in gender_pairs], dtype=bool)

    def stratum(mask: np.ndarray) -> float | None:
        return float(correct[mask].mean()) if mask.any() else None

    return AccuracyReport(
        float(threshold),
        float(correct.mean()),
        stratum(same),
        stratum(~same),
        int(scores.size),
        int(same.sum()),
        int((~same).sum()),
    )


@dataclass(frozen=True)
class ModalityDecisions:
    """Accept/reject decisions of one unimodal system over a trial list."""

    modality: EModality
    threshold: float
    trial_keys: tuple[tuple[str, str], ...]
    accepted: np.ndarray
    labels: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return self.accepted != self.labels


def decide(records: Sequence[ScoreRecord], modality: EModality, threshold: float) -> ModalityDecisions:
    scores = np.array([record.per_modality[modality] for record in records], dtype=np.float64)
    return ModalityDecisions(
        modality,
        float(threshold),
        tuple((record.trial.enroll_sample, record.trial.test_sample) for record in records),
        scores <= threshold,
        np.array([record.trial.label.is_target for record in records], dtype=bool),
    )


@dataclass(frozen=True)
class ErrorOverlap:
    """
    Overlap of the error sets of the audio (A), visual (V) and thermal (T) systems.

    Attributes:
        intersections (dict[str, int]): |A|, |V|, |T|, |A&V|, |A&T|, |V&T| and |A&V&T|.
        thresholds (dict[str, float]): Decision threshold of each modality.
        n_trials (int): Size of the trial list.
    """

    intersections: dict[str, int]
    thresholds: dict[str, float]
    n_trials: int

    @property
    def union_size(self) -> int:
        counts = self.intersections
        return (
            counts["A"] + counts["V"] + counts["T"]
            - counts["AV"] - counts["AT"] - counts["VT"]
            + counts["AVT"]
        )

    def exclusive_regions(self) -> dict[str, int]:
        """Venn-diagram regions: errors made by exactly the named systems."""
        counts = self.intersections
        return {
            "A": counts["A"] - counts["AV"] - counts["AT"] + counts["AVT"],
            "V": counts["V"] - counts["AV"] - counts["VT"] + counts["AVT"],
            "T": counts["T"] - counts["AT"] - counts["VT"] + counts["AVT"],
            "AV": counts["AV"] - counts["AVT"],
            "AT": counts["AT"] - counts["AVT"],
            "VT": counts["VT"] - counts["AVT"],
            "AVT": counts["AVT"],
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "intersections": dict(self.intersections),
            "exclusive_regions": self.exclusive_regions(),
            "thresholds": dict(self.thresholds),
            "n_trials": self.n_trials,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ErrorOverlap:
        return cls(dict(data["intersections"]), dict(data["thresholds"]), data["n_trials"])


def error_overlap(decisions: Mapping[EModality, ModalityDecisions]) -> ErrorOverlap:
    """
    Count the intersections of the three unimodal error sets.

    Args:
        decisions (Mapping[EModality, ModalityDecisions]): Audio, visual and thermal decisions.

    Returns:
        ErrorOverlap: The seven intersection counts.

    Raises:
        MetricError: If a modality is missing or the trial lists differ.
    """
    if set(decisions) != set(MODALITY_ORDER):
        raise MetricError(
            f"Error overlap needs audio, visual and thermal decisions, got {sorted(map(str, decisions))}."
        )
    reference = decisions[EModality.AUDIO].trial_keys
    for modality in MODALITY_ORDER:
        if decisions[modality].trial_keys != reference:
            raise MetricError(f"The {modality} decisions cover a different trial list.")
    errors = {
        _REGION_LETTERS[modality]: set(np.flatnonzero(decisions[modality].errors).tolist())
        for modality in MODALITY_ORDER
    }
    intersections = {}
    for region in OVERLAP_REGIONS:
        intersections[region] = len(set.intersection(*(errors[letter] for letter in region)))
    return ErrorOverlap(
        intersections,
        {str(modality): decisions[modality].threshold for modality in MODALITY_ORDER},
        len(reference),
    )


def system_name(modalities: Sequence[EModality]) -> str:
    return "+".join(str(modality) for modality in modalities)


def system_scores(records: Sequence[ScoreRecord], system: EModality) -> np.ndarray:
    if system is EModality.FUSED:
        return np.array([record.fused for record in records], dtype=np.float64)
    return np.array([record.per_modality[system] for record in records], dtype=np.float64)


@dataclass
class SystemResult:
    """
    Metrics of one verification system on one trial list.

    Attributes:
        name (str): Modalities joined by '+'.
        modalities (tuple[EModality, ...]): The modalities the system uses.
        fusion (EScoreFusion): How multimodal systems combine their streams.
        eer (float): Equal error rate.
        eer_threshold (float): Threshold at the EER crossing.
        accuracy_at_eer (AccuracyReport): Accuracy at the system's own EER threshold.
        accuracy_at_valid (AccuracyReport | None): Accuracy at the validation EER threshold.
        relative_improvement (float | None): EER reduction over the best unimodal system, in percent.
    """

    name: str
    modalities: tuple[EModality, ...]
    fusion: EScoreFusion
    eer: float
    eer_threshold: float
    accuracy_at_eer: AccuracyReport
    accuracy_at_valid: AccuracyReport | None = None
    relative_improvement: float | None = None

    @property
    def is_multimodal(self) -> bool:
        return len(self.modalities) > 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "modalities": [str(modality) for modality in self.modalities],
            "fusion": str(self.fusion),
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "accuracy_at_eer": self.accuracy_at_eer.to_dict(),
            "accuracy_at_valid": (
                None if self.accuracy_at_valid is None else self.accuracy_at_valid.to_dict()
            ),
            "relative_improvement": self.relative_improvement,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SystemResult:
        return cls(
            data["name"],
            tuple(EModality.parse(token) for token in data["modalities"]),
            EScoreFusion.parse(data["fusion"]),
            data["eer"],
            data["eer_threshold"],
            AccuracyReport.from_dict(data["accuracy_at_eer"]),
            (
                None
                if data.get("accuracy_at_valid") is None
                else AccuracyReport.from_dict(data["accuracy_at_valid"])
            ),
            data.get("relative_improvement"),
        )


@dataclass
class EvalReport:
    """
    Evaluation of one or more systems on one trial list under one condition.

    Attributes:
        protocol (ETrialMode): Easy or hard trial list.
        condition (ECondition): Clean or noisy evaluation data.
        train_condition (ECondition): Condition the encoders were trained on.
        n_target (int): Target trials.
        n_nontarget (int): Nontarget trials.
        systems (list[SystemResult]): Unimodal systems first, then the fused one.
        error_overlap (ErrorOverlap | None): Present when all three unimodal systems were scored.
        attention_weights (dict[str, tuple[float, float]] | None): Mean and std of each
            modality's fusion weight over the evaluated samples.
        config_hash (str): Hash of the resolved run configuration.
    """

    protocol: ETrialMode
    condition: ECondition
    train_condition: ECondition
    n_target: int
    n_nontarget: int
    systems: list[SystemResult] = field(default_factory=list)
    error_overlap: ErrorOverlap | None = None
    attention_weights: dict[str, tuple[float, float]] | None = None
    config_hash: str = ""

    @property
    def n_trials(self) -> int:
        return self.n_target + self.n_nontarget

    def system(self, name: str) -> SystemResult:
        for result in self.systems:
            if result.name == name:
                return result
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "protocol": str(self.protocol),
            "condition": str(self.condition),
            "train_condition": str(self.train_condition),
            "n_target": self.n_target,
            "n_nontarget": self.n_nontarget,
            "systems": [result.to_dict() for result in self.systems],
            "error_overlap": None if self.error_overlap is None else self.error_overlap.to_dict(),
            "attention_weights": (
                None
                if self.attention_weights is None
                else {name: list(stats) for name, stats in self.attention_weights.items()}
            ),
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalReport:
        weights = data.get("attention_weights")
        overlap = data.get("error_overlap")
        return cls(
            ETrialMode.parse(data["protocol"]),
            ECondition.parse(data["condition"]),
            ECondition.parse(data["train_condition"]),
            data["n_target"],
            data["n_nontarget"],
            [SystemResult.from_dict(result) for result in data["systems"]],
            None if overlap is None else ErrorOverlap.from_dict(overlap),
            None if weights is None else {name: tuple(stats) for name, stats in weights.items()},
            data.get("config_hash", ""),
        )


def system_thresholds(records: Sequence[ScoreRecord]) -> dict[str, float]:
    """EER threshold of every system present in the records, keyed by system name."""
    thresholds = {}
    labels = [record.trial.label.is_target for record in records]
    modalities = sort_modalities(records[0].per_modality) if records else ()
    for modality in modalities:
        thresholds[str(modality)] = compute_eer(system_scores(records, modality), labels)[1]
    if records and records[0].fused is not None:
        thresholds[system_name(modalities)] = compute_eer(
            system_scores(records, EModality.FUSED), labels
        )[1]
    return thresholds


def build_report(
    records: Sequence[ScoreRecord],
    protocol: ETrialMode,
    fusion: EScoreFusion = EScoreFusion.NONE,
    condition: ECondition = ECondition.CLEAN,
    train_condition: ECondition = ECondition.CLEAN,
    valid_thresholds: Mapping[str, float] | None = None,
    attention_weights: Mapping[str, tuple[float, float]] | None = None,
    config_hash: str = "",
) -> EvalReport:
    """
    Compute every metric of a scored trial list.

    Args:
        records (Sequence[ScoreRecord]): Output of `score_trials`.
        protocol (ETrialMode): Mode of the trial list.
        fusion (EScoreFusion, optional): Fusion used for the fused score. Defaults to NONE.
        condition (ECondition, optional): Evaluation condition. Defaults to CLEAN.
        train_condition (ECondition, optional): Training condition. Defaults to CLEAN.
        valid_thresholds (Mapping[str, float] | None, optional): Validation EER thresholds by system name.
        attention_weights (Mapping[str, tuple[float, float]] | None, optional): Fusion weight statistics.
        config_hash (str, optional): Provenance hash.

    Returns:
        EvalReport: The report.
    """
    if not records:
        raise MetricError("Cannot report on an empty trial list.")
    labels = [record.trial.label.is_target for record in records]
    gender_pairs = [record.trial.gender_pair for record in records]
    modalities = sort_modalities(records[0].per_modality)
    valid_thresholds = valid_thresholds or {}
    systems = []
    systems_to_score: list[tuple[EModality, tuple[EModality, ...], EScoreFusion]] = [
        (modality, (modality,), EScoreFusion.NONE) for modality in modalities
    ]
    if records[0].fused is not None:
        systems_to_score.append((EModality.FUSED, modalities, fusion))
    for system, system_modalities, system_fusion in systems_to_score:
        scores = system_scores(records, system)
        eer, threshold = compute_eer(scores, labels)
        name = system_name(system_modalities)
        at_valid = None
        if name in valid_thresholds:
            at_valid = compute_accuracy(scores, labels, valid_thresholds[name], gender_pairs)
        systems.append(
            SystemResult(
                name,
                system_modalities,
                system_fusion,
                eer,
                threshold,
                compute_accuracy(scores, labels, threshold, gender_pairs),
                at_valid,
            )
        )
    unimodal_eers = [result.eer for result in systems if not result.is_multimodal]
    best_unimodal = min(unimodal_eers)
    for result in systems:
        if result.is_multimodal and best_unimodal > 0:
            result.relative_improvement = 100.0 * (best_unimodal - result.eer) / best_unimodal
    overlap = None
    if set(modalities) == set(MODALITY_ORDER):
        overlap = error_overlap(
            {
                result.modalities[0]: decide(records, result.modalities[0], result.eer_threshold)
                for result in systems
                if not result.is_multimodal
            }
        )
    n_target = sum(labels)
    return EvalReport(
        protocol,
        condition,
        train_condition,
        n_target,
        len(labels) - n_target,
        systems,
        overlap,
        None if attention_weights is None else dict(attention_weights),
        config_hash,
    )
