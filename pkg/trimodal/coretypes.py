from __future__ import annotations
import dataclasses
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ManifestError, MetricError, ShapeError, TrialError


SAMPLE_RATE = 16000
EMBED_DIM = 512
MANIFEST_FIELD_COUNT = 7


class BaseEnum(Enum):
    """
    Base class for the string-valued enumerations of the package.

    Methods:
        parse: Look a member up by its token, raising ValueError for unknown tokens.
    """

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, token: str) -> Any:
        """
        Look a member up by its token.

        Args:
            token (str): The serialized value of the member.

        Returns:
            BaseEnum: The member whose value equals the token.

        Raises:
            ValueError: If no member has that value.
        """
        for member in cls:
            if member.value == token:
                return member
        raise ValueError(f"Unknown {cls.__name__} token '{token}'.")


class EGender(BaseEnum):
    """Opaque two-category label, used only to stratify trials."""

    A = "A"
    B = "B"


class EModality(BaseEnum):
    AUDIO = "audio"
    VISUAL = "visual"
    THERMAL = "thermal"
    FUSED = "fused"

    @property
    def is_unimodal(self) -> bool:
        return self is not EModality.FUSED


MODALITY_ORDER: tuple[EModality, ...] = (
    EModality.AUDIO,
    EModality.VISUAL,
    EModality.THERMAL,
)


def sort_modalities(modalities: Iterable[EModality]) -> tuple[EModality, ...]:
    """
    Order unimodal modalities as (audio, visual, thermal).

    Args:
        modalities (Iterable[EModality]): Any collection of unimodal modalities.

    Returns:
        tuple[EModality, ...]: The distinct modalities in canonical order.
    """
    modalities = set(modalities)
    if EModality.FUSED in modalities:
        raise ValueError("The fused modality has no position in the modality order.")
    return tuple(modality for modality in MODALITY_ORDER if modality in modalities)


class ETrialLabel(BaseEnum):
    TARGET = "target"
    NONTARGET = "nontarget"

    @property
    def is_target(self) -> bool:
        return self is ETrialLabel.TARGET


class EGenderPair(BaseEnum):
    SAME = "same"
    OPPOSITE = "opposite"


class ECondition(BaseEnum):
    CLEAN = "clean"
    NOISY = "noisy"


@dataclass(frozen=True)
class Identity:
    """
    A person enrolled in a dataset.

    Attributes:
        id (str): Identity token, unique within a manifest.
        gender (EGender): Two-category label used for trial stratification.
    """

    id: str
    gender: EGender

    def __post_init__(self) -> None:
        if not self.id or any(character.isspace() for character in self.id):
            raise ManifestError(f"Invalid identity id '{self.id}'.")
        if not isinstance(self.gender, EGender):
            raise ManifestError(f"Invalid gender '{self.gender}' for '{self.id}'.")


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class MultimodalSample:
    """
    One recording: an audio waveform plus one visual and one thermal frame.

    Arrays are stored as read-only float32 copies so samples can be shared freely.

    Attributes:
        sample_id (str): Unique sample identifier.
        identity (Identity): Who was recorded.
        session (str): Recording session label.
        audio (np.ndarray): Mono PCM waveform in [-1, 1] at `sample_rate`.
        visual (np.ndarray): RGB frame [H x W x 3] with values in [0, 1].
        thermal (np.ndarray): Thermal frame [H x W x 1] with values in [0, 1].
        corrupted (frozenset[EModality]): Modalities that carry corruption.
        sample_rate (int): Audio sampling rate in Hz.
    """

    sample_id: str
    identity: Identity
    session: str
    audio: np.ndarray
    visual: np.ndarray
    thermal: np.ndarray
    corrupted: frozenset[EModality] = frozenset()
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise ManifestError("Sample id must not be empty.")
        audio = np.array(self.audio, dtype=np.float32).reshape(-1)
        visual = np.array(self.visual, dtype=np.float32)
        thermal = np.array(self.thermal, dtype=np.float32)
        if thermal.ndim == 2:
            thermal = thermal[:, :, np.newaxis]
        if len(audio) < self.sample_rate:
            raise ShapeError(
                f"Sample '{self.sample_id}' has {len(audio)} audio samples,"
                f" less than one second at {self.sample_rate} Hz."
            )
        if visual.ndim != 3 or visual.shape[2] != 3:
            raise ShapeError(
                f"Sample '{self.sample_id}' visual frame has shape {visual.shape},"
                " expected H x W x 3."
            )
        if thermal.ndim != 3 or thermal.shape[2] != 1:
            raise ShapeError(
                f"Sample '{self.sample_id}' thermal frame has shape {thermal.shape},"
                " expected H x W x 1."
            )
        if visual.shape[:2] != thermal.shape[:2]:
            raise ShapeError(
                f"Sample '{self.sample_id}' visual {visual.shape[:2]} and thermal"
                f" {thermal.shape[:2]} spatial dimensions differ."
            )
        for name, image in (("visual", visual), ("thermal", thermal)):
            if image.size and (image.min() < 0.0 or image.max() > 1.0):
                raise ShapeError(
                    f"Sample '{self.sample_id}' {name} values leave [0, 1]."
                )
        corrupted = frozenset(self.corrupted)
        if not all(modality in MODALITY_ORDER for modality in corrupted):
            raise ManifestError(
                f"Sample '{self.sample_id}' has invalid corruption flags {corrupted}."
            )
        object.__setattr__(self, "audio", _readonly(audio))
        object.__setattr__(self, "visual", _readonly(visual))
        object.__setattr__(self, "thermal", _readonly(thermal))
        object.__setattr__(self, "corrupted", corrupted)

    def modality_data(self, modality: EModality) -> np.ndarray:
        """
        Get the raw array of one modality.

        Args:
            modality (EModality): A unimodal modality.

        Returns:
            np.ndarray: The waveform or frame of that modality.
        """
        if modality is EModality.AUDIO:
            return self.audio
        elif modality is EModality.VISUAL:
            return self.visual
        elif modality is EModality.THERMAL:
            return self.thermal
        raise ValueError(f"Samples carry no '{modality}' data.")

    def replace(self, **changes: Any) -> MultimodalSample:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ManifestEntry:
    """
    One manifest line: a sample descriptor pointing at its modality files.

    Attributes:
        sample_id (str): Unique sample identifier.
        identity (Identity): Who was recorded.
        session (str): Recording session label.
        audio_path (str): Wave file, relative to the manifest directory or absolute.
        visual_path (str): RGB portable pixmap.
        thermal_path (str): Grayscale portable graymap.
    """

    sample_id: str
    identity: Identity
    session: str
    audio_path: str
    visual_path: str
    thermal_path: str

    def paths(self) -> dict[EModality, str]:
        return {
            EModality.AUDIO: self.audio_path,
            EModality.VISUAL: self.visual_path,
            EModality.THERMAL: self.thermal_path,
        }

    def to_line(self) -> str:
        return "\t".join(
            (
                self.sample_id,
                self.identity.id,
                self.identity.gender.value,
                self.session,
                self.audio_path,
                self.visual_path,
                self.thermal_path,
            )
        )

    @classmethod
    def from_fields(cls, fields: Sequence[str]) -> ManifestEntry:
        """
        Build an entry from the seven manifest fields.

        Args:
            fields (Sequence[str]): sample_id, identity, gender, session, and the three paths.

        Returns:
            ManifestEntry: The parsed entry.

        Raises:
            ManifestError: On a wrong field count or an unknown gender token.
        """
        if len(fields) != MANIFEST_FIELD_COUNT:
            raise ManifestError(
                f"Manifest record has {len(fields)} fields,"
                f" expected {MANIFEST_FIELD_COUNT}: {list(fields)}."
            )
        sample_id, identity_id, gender, session, audio, visual, thermal = fields
        try:
            parsed_gender = EGender.parse(gender)
        except ValueError:
            raise ManifestError(
                f"Unknown gender token '{gender}' for sample '{sample_id}'."
            ) from None
        return cls(
            sample_id,
            Identity(identity_id, parsed_gender),
            session,
            audio,
            visual,
            thermal,
        )

    @classmethod
    def from_line(cls, line: str) -> ManifestEntry:
        return cls.from_fields(line.rstrip("\n").split("\t"))


@dataclass(frozen=True, eq=False)
class Embedding:
    """
    A fixed-length vector representation of one sample in one modality.

    Attributes:
        vector (np.ndarray): The float64 embedding vector.
        modality (EModality): Which encoder (or fusion) produced it.
        sample_id (str): The sample it represents.
    """

    vector: np.ndarray
    modality: EModality
    sample_id: str

    def __post_init__(self) -> None:
        vector = np.array(self.vector, dtype=np.float64)
        if vector.ndim != 1 or vector.size == 0:
            raise ShapeError(
                f"Embedding of '{self.sample_id}' must be a non-empty vector,"
                f" got shape {vector.shape}."
            )
        object.__setattr__(self, "vector", _readonly(vector))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def is_normalized(self, tolerance: float = 1e-6) -> bool:
        return abs(self.norm - 1.0) <= tolerance

    def normalized(self) -> Embedding:
        """
        Get the L2-normalized copy of the embedding.

        Returns:
            Embedding: A unit-norm embedding with the same tags.
        """
        norm = self.norm
        if norm == 0.0 or not np.isfinite(norm):
            raise ShapeError(
                f"Embedding of '{self.sample_id}' has norm {norm} and cannot be normalized."
            )
        return Embedding(self.vector / norm, self.modality, self.sample_id)


@dataclass(frozen=True)
class TrialPair:
    """
    A labeled enrollment/test pair.

    Attributes:
        label (ETrialLabel): Target (same identity) or nontarget.
        enroll_sample (str): Enrollment sample id.
        test_sample (str): Test sample id.
        gender_pair (EGenderPair): Whether both identities share the gender label.
    """

    label: ETrialLabel
    enroll_sample: str
    test_sample: str
    gender_pair: EGenderPair

    def __post_init__(self) -> None:
        if self.enroll_sample == self.test_sample:
            raise TrialError(
                f"Trial compares sample '{self.enroll_sample}' with itself."
            )
        if self.label.is_target and self.gender_pair is not EGenderPair.SAME:
            raise TrialError(
                f"Target trial ({self.enroll_sample}, {self.test_sample})"
                " must be a same-gender pair."
            )

    @property
    def key(self) -> frozenset[str]:
        """Unordered pair of sample ids, used to detect duplicate trials."""
        return frozenset((self.enroll_sample, self.test_sample))


@dataclass(frozen=True)
class ScoreRecord:
    """
    Per-modality and fused scores of one trial.

    Attributes:
        trial (TrialPair): The scored trial.
        per_modality (Mapping[EModality, float]): Score of each unimodal system, in [0, 2].
        fused (float | None): Fused score in [0, 2], absent when no fusion is applied.
    """

    trial: TrialPair
    per_modality: Mapping[EModality, float] = field(default_factory=dict)
    fused: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_modality", dict(self.per_modality))
        scores: dict[str, float | None] = {
            str(modality): score for modality, score in self.per_modality.items()
        }
        scores["fused"] = self.fused
        for name, score in scores.items():
            if score is not None and not 0.0 <= score <= 2.0:
                raise MetricError(
                    f"Score {score} of {name} system for trial"
                    f" ({self.trial.enroll_sample}, {self.trial.test_sample})"
                    " leaves [0, 2]."
                )


def parse_manifest(text: str) -> list[ManifestEntry]:
    """
    Parse manifest text, one tab-separated record per line; blank lines are skipped.

    Args:
        text (str): The manifest file content.

    Returns:
        list[ManifestEntry]: Entries in file order.
    """
    return [ManifestEntry.from_line(line) for line in text.splitlines() if line.strip()]


def format_manifest(entries: Iterable[ManifestEntry]) -> str:
    return "".join(f"{entry.to_line()}\n" for entry in entries)


def read_manifest(path: str | Path, check_files: bool = True) -> list[ManifestEntry]:
    """
    Read and validate a manifest file.

    Args:
        path (str | Path): The manifest file.
        check_files (bool, optional): Whether referenced modality files must exist. Defaults to True.

    Returns:
        list[ManifestEntry]: The validated manifest, sorted by sample id.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise ManifestError(f"Cannot read manifest '{path}': {error}.") from None
    return validate_manifest(
        parse_manifest(text), base_dir=path.parent, check_files=check_files
    )


def write_manifest(entries: Iterable[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_manifest(entries), encoding="utf-8")


def resolve_path(path: str, base_dir: str | Path | None) -> Path:
    resolved = Path(path)
    if base_dir is not None and not resolved.is_absolute():
        resolved = Path(base_dir) / resolved
    return resolved


def validate_manifest(
    manifest: Sequence[ManifestEntry | Sequence[str]],
    base_dir: str | Path | None = None,
    check_files: bool = True,
) -> list[ManifestEntry]:
    """
    Check every manifest invariant and return the entries sorted by sample id.

    Raw field sequences are parsed first, so unknown gender tokens are reported here too.

    Args:
        manifest (Sequence[ManifestEntry | Sequence[str]]): Parsed entries or raw field records.
        base_dir (str | Path | None, optional): Directory relative paths resolve against. Defaults to None.
        check_files (bool, optional): Whether every modality file must exist. Defaults to True.

    Returns:
        list[ManifestEntry]: The validated manifest.

    Raises:
        ManifestError: On a duplicate id, a missing modality file, an unknown gender
            token, or an identity declared with two gender labels.
    """
    entries = [
        entry if isinstance(entry, ManifestEntry) else ManifestEntry.from_fields(entry)
        for entry in manifest
    ]
    seen: set[str] = set()
    genders: dict[str, EGender] = {}
    for entry in entries:
        if entry.sample_id in seen:
            raise ManifestError(f"Manifest has a duplicate id '{entry.sample_id}'.")
        seen.add(entry.sample_id)
        known_gender = genders.setdefault(entry.identity.id, entry.identity.gender)
        if known_gender is not entry.identity.gender:
            raise ManifestError(
                f"Identity '{entry.identity.id}' is declared with genders"
                f" '{known_gender}' and '{entry.identity.gender}'."
            )
        if check_files:
            for modality, path in entry.paths().items():
                if not resolve_path(path, base_dir).is_file():
                    raise ManifestError(
                        f"Sample '{entry.sample_id}' is missing its {modality} file '{path}'."
                    )
    return sorted(entries, key=lambda entry: entry.sample_id)


def check_trials_resolve(
    trials: Iterable[TrialPair],
    manifest: Iterable[ManifestEntry | MultimodalSample],
) -> None:
    """
    Check that every trial references known samples and that target pairs share an identity.

    Args:
        trials (Iterable[TrialPair]): The trials to check.
        manifest (Iterable[ManifestEntry | MultimodalSample]): The samples trials may reference.

    Raises:
        TrialError: If a sample id does not resolve or a target pair mixes identities.
    """
    identities = {item.sample_id: item.identity for item in manifest}
    for trial in trials:
        for sample_id in (trial.enroll_sample, trial.test_sample):
            if sample_id not in identities:
                raise TrialError(f"Trial references unknown sample '{sample_id}'.")
        same_identity = (
            identities[trial.enroll_sample].id == identities[trial.test_sample].id
        )
        if trial.label.is_target != same_identity:
            raise TrialError(
                f"Trial ({trial.enroll_sample}, {trial.test_sample}) is labeled"
                f" {trial.label} but the identities "
                f"{'match' if same_identity else 'differ'}."
            )
