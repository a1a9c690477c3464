from __future__ import annotations
from collections.abc import ItemsView, Iterable, Iterator, KeysView
import configparser
import copy
import hashlib
from pathlib import Path
from typing import Any, Callable, Generic, TypeVar

from .coretypes import ECondition, EModality
from .dataset import CorruptionConfig, SynthConfig
from .encoders import AudioEncoderSpec, EncoderSpec, ImageEncoderSpec
from .errors import ConfigError, ShapeError
from .evaluation import ETrialMode, TrialProtocol
from .frontend import AudioFeatureConfig, FrontendConfig, ImageFeatureConfig
from .training import EFusionMode, ELoss, TrainConfig

T = TypeVar("T")

_BOOLEANS = {
    **dict.fromkeys(("true", "yes", "on", "1"), True),
    **dict.fromkeys(("false", "no", "off", "0"), False),
}


def parse_bool(text: str) -> bool:
    try:
        return _BOOLEANS[text.strip().lower()]
    except KeyError:
        raise ValueError(f"'{text}' is not a boolean") from None


def parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(token) for token in text.split(",") if token.strip())


def parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(token) for token in text.split(",") if token.strip())


def parse_float_pair(text: str) -> tuple[float, float]:
    values = parse_floats(text)
    if len(values) != 2:
        raise ValueError(f"'{text}' is not a pair 'low,high'")
    return values


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(item) for item in value)
    return str(value)


class ConfigField:
    """
    One key of a configuration section.

    Attributes:
        parser (Callable[[str], Any]): Converts the text value.
        default (Any): Value when the key is absent; None marks a mandatory key.
        help (str): One-line description.
        name (str): Key name, assigned by the owning section.
    """

    def __init__(self, parser: Callable[[str], Any], default: Any, help: str = "") -> None:
        self.parser = parser
        self.default = default
        self.help = help
        self.name = ""

    def parse(self, section: str, text: str) -> Any:
        try:
            return self.parser(text.strip())
        except ValueError as error:
            raise ConfigError(f"Invalid value '{text}' for {section}.{self.name}: {error}.") from None


class DeclaredItems(Generic[T]):
    """
    Collects the class attributes of type `item_type` declared on a class and its bases.

    Items are deep-copied per instance and keyed by the lowercased attribute name,
    which is also written to the item's `name`.
    """

    item_type: type

    def __init__(self) -> None:
        assert hasattr(self, "item_type"), f"{type(self).__name__} must declare item_type."
        self._items: dict[str, T] = {}
        for base in reversed(type(self).__mro__):
            for attribute, value in base.__dict__.items():
                if isinstance(value, self.item_type):
                    item = copy.deepcopy(value)
                    item.name = attribute.lower()
                    self._items[item.name] = item
                    setattr(self, attribute, item)

    def __getitem__(self, key: str) -> T:
        return self._items[key]

    def __iter__(self) -> Iterator[T]:
        return iter(self._items.values())

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, key: Any) -> bool:
        return key in self._items

    def keys(self) -> KeysView[str]:
        return self._items.keys()

    def items(self) -> ItemsView[str, T]:
        return self._items.items()


class ConfigSection(DeclaredItems[ConfigField]):
    item_type = ConfigField

    def __init__(self) -> None:
        super().__init__()
        self.name = ""


class RunSection(ConfigSection):
    SEED = ConfigField(int, None, "Seed of every random choice of the run (mandatory).")
    SPLIT = ConfigField(parse_floats, (0.8, 0.1, 0.1), "Train, valid and test identity shares.")
    STRATIFY_GENDER = ConfigField(parse_bool, False, "Split identities per gender label.")


class SynthSection(ConfigSection):
    N_IDENTITIES = ConfigField(int, 20, "Synthetic identities.")
    SAMPLES_PER_IDENTITY = ConfigField(int, 30, "Recordings per identity.")
    AUDIO_SECONDS = ConfigField(float, 2.0, "Waveform duration.")
    IMAGE_SIZE = ConfigField(int, 64, "Side of the synthetic frames.")
    SESSIONS = ConfigField(int, 2, "Sessions per identity.")
    JITTER = ConfigField(float, 1.0, "Per-sample variation; higher is harder.")


class CorruptionSection(ConfigSection):
    RATE = ConfigField(float, 0.3, "Fraction of corrupted samples per modality.")
    AUDIO_SNR_DB = ConfigField(parse_float_pair, (0.0, 10.0), "White noise SNR range.")
    IMAGE_BLUR_SIGMA = ConfigField(parse_float_pair, (1.0, 3.0), "Gaussian blur sigma range.")
    OCCLUSION_FRACTION = ConfigField(float, 0.25, "Occluded image area.")


class FrontendSection(ConfigSection):
    N_MELS = ConfigField(int, 40, "Mel bands.")
    WINDOW_MS = ConfigField(float, 25.0, "Analysis window.")
    HOP_MS = ConfigField(float, 10.0, "Frame shift.")
    CROP_SECONDS = ConfigField(float, 2.0, "Training crop of the waveform.")
    LOG_FLOOR = ConfigField(float, 1e-6, "Added before the logarithm.")
    IMAGE_SIZE = ConfigField(int, 128, "Encoder input side, divisible by 32.")
    RANDOM_CROP = ConfigField(parse_bool, True, "Random crops of training images.")
    VISUAL_FLIP = ConfigField(parse_bool, True, "Horizontal flips of training visual frames.")
    THERMAL_FLIP = ConfigField(parse_bool, False, "Horizontal flips of training thermal frames.")


class EncoderSection(ConfigSection):
    BASE_WIDTHS = ConfigField(parse_ints, (64, 128, 256, 512), "Residual widths; images use half.")
    BLOCKS_PER_STAGE = ConfigField(parse_ints, (3, 4, 6, 3), "Basic blocks per stage.")
    EMBED_DIM = ConfigField(int, 512, "Embedding size.")


class TrainingSection(ConfigSection):
    LOSS = ConfigField(ELoss.parse, ELoss.ANGULAR_PROTOTYPICAL, "angular_prototypical or softmax_classifier.")
    N_IDENTITIES = ConfigField(int, 16, "Identities per batch.")
    SAMPLES_PER_IDENTITY = ConfigField(int, 2, "Samples per identity in a batch.")
    EPOCHS = ConfigField(int, 20, "Training epochs.")
    LEARNING_RATE = ConfigField(float, 1e-3, "Adam step size.")
    FUSION_LEARNING_RATE = ConfigField(float, 1e-3, "Adam step size of the attention parameters.")
    LR_DECAY = ConfigField(float, 0.95, "Step decay factor.")
    LR_DECAY_EVERY = ConfigField(int, 1, "Epochs between decays.")
    WEIGHT_DECAY = ConfigField(float, 0.0, "Adam weight decay.")
    VALIDATION_TRIALS = ConfigField(int, 2000, "Validation trials per epoch.")
    NUM_WORKERS = ConfigField(int, 0, "Feature prefetch workers.")
    BATCH_SIZE_EVAL = ConfigField(int, 32, "Embedding batch size.")


class ProtocolSection(ConfigSection):
    N_TARGET = ConfigField(int, 1000, "Target trials per list.")
    N_NONTARGET = ConfigField(int, 1000, "Nontarget trials per list.")


class RunSections(DeclaredItems[ConfigSection]):
    item_type = ConfigSection

    RUN = RunSection()
    SYNTH = SynthSection()
    CORRUPTION = CorruptionSection()
    FRONTEND = FrontendSection()
    ENCODER = EncoderSection()
    TRAINING = TrainingSection()
    PROTOCOL = ProtocolSection()


class RunConfig:
    """
    Resolved run configuration: file values, then `section.key=value` overrides.

    Attributes:
        values (dict[str, dict[str, Any]]): Typed value of every key, defaults included.
    """

    sections = RunSections()

    def __init__(self, values: dict[str, dict[str, Any]]) -> None:
        self.values = values
        if self.values["run"]["seed"] is None:
            raise ConfigError("run.seed is mandatory.")

    @classmethod
    def from_text(
        cls, text: str = "", overrides: Iterable[str] = (), seed: int | None = None
    ) -> RunConfig:
        """
        Parse INI text and apply overrides.

        Args:
            text (str, optional): Sectioned key-value text. Defaults to "".
            overrides (Iterable[str], optional): `section.key=value` items; they win over the text.
            seed (int | None, optional): Overrides run.seed.

        Returns:
            RunConfig: The resolved configuration.

        Raises:
            ConfigError: On syntax errors, unknown sections or keys, invalid values or a missing seed.
        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as error:
            raise ConfigError(f"Invalid config: {error}") from None
        values = {
            section.name: {field.name: field.default for field in section}
            for section in cls.sections
        }
        for section_name in parser.sections():
            for key, text_value in parser.items(section_name):
                cls._assign(values, section_name, key, text_value)
        for override in overrides:
            target, separator, text_value = override.partition("=")
            section_name, dot, key = target.strip().partition(".")
            if not separator or not dot:
                raise ConfigError(f"Override '{override}' is not 'section.key=value'.")
            cls._assign(values, section_name, key, text_value)
        if seed is not None:
            values["run"]["seed"] = seed
        return cls(values)

    @classmethod
    def from_file(
        cls, path: str | Path | None, overrides: Iterable[str] = (), seed: int | None = None
    ) -> RunConfig:
        text = ""
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as error:
                raise ConfigError(f"Cannot read config '{path}': {error}.") from None
        return cls.from_text(text, overrides, seed)

    @classmethod
    def _assign(cls, values: dict[str, dict[str, Any]], section_name: str, key: str, text: str) -> None:
        if section_name not in cls.sections:
            raise ConfigError(f"Unknown config section '{section_name}'.")
        section = cls.sections[section_name]
        if key not in section:
            raise ConfigError(f"Unknown config key '{section_name}.{key}'.")
        values[section_name][key] = section[key].parse(section_name, text)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def canonical(self) -> str:
        lines = []
        for section, keys in sorted(self.values.items()):
            lines.append(f"[{section}]")
            lines += [f"{key} = {format_value(value)}" for key, value in sorted(keys.items())]
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def _build(self, factory: Callable[..., T], *args: Any, **kwargs: Any) -> T:
        try:
            return factory(*args, **kwargs)
        except (TypeError, ValueError, ShapeError) as error:
            raise ConfigError(f"Invalid {factory.__name__}: {error}.") from None

    def split_fractions(self) -> tuple[float, float, float]:
        fractions = self["run"]["split"]
        if len(fractions) != 3:
            raise ConfigError(f"run.split needs three shares, got {format_value(fractions)}.")
        return fractions

    def synth_config(self) -> SynthConfig:
        synth = self["synth"]
        return self._build(
            SynthConfig,
            synth["n_identities"],
            synth["samples_per_identity"],
            synth["audio_seconds"],
            synth["image_size"],
            synth["sessions"],
            synth["jitter"],
            self.seed,
        )

    def corruption_config(self) -> CorruptionConfig:
        corruption = self["corruption"]
        return self._build(
            CorruptionConfig,
            corruption["rate"],
            corruption["audio_snr_db"],
            corruption["image_blur_sigma"],
            corruption["occlusion_fraction"],
            self.seed,
        )

    def audio_feature_config(self) -> AudioFeatureConfig:
        frontend = self["frontend"]
        return self._build(
            AudioFeatureConfig,
            n_mels=frontend["n_mels"],
            window_ms=frontend["window_ms"],
            hop_ms=frontend["hop_ms"],
            crop_seconds=frontend["crop_seconds"],
            log_floor=frontend["log_floor"],
        )

    def image_feature_config(self, modality: EModality) -> ImageFeatureConfig:
        frontend = self["frontend"]
        flip = frontend["visual_flip"] if modality is EModality.VISUAL else frontend["thermal_flip"]
        return ImageFeatureConfig.for_modality(
            modality, frontend["image_size"], frontend["random_crop"], flip
        )

    def frontend_config(self) -> FrontendConfig:
        return FrontendConfig(
            self.audio_feature_config(),
            self.image_feature_config(EModality.VISUAL),
            self.image_feature_config(EModality.THERMAL),
        )

    def encoder_specs(self) -> dict[EModality, EncoderSpec]:
        """Audio encoder at the base widths, image encoders at half of them."""
        encoder = self["encoder"]
        widths, blocks, embed_dim = encoder["base_widths"], encoder["blocks_per_stage"], encoder["embed_dim"]
        return {
            EModality.AUDIO: self._build(
                AudioEncoderSpec, self["frontend"]["n_mels"], widths, blocks, embed_dim
            ),
            EModality.VISUAL: self._build(ImageEncoderSpec, 3, widths, blocks, embed_dim),
            EModality.THERMAL: self._build(ImageEncoderSpec, 1, widths, blocks, embed_dim),
        }

    def train_config(
        self,
        modalities: Iterable[EModality],
        fusion_mode: EFusionMode = EFusionMode.NONE,
        condition: ECondition = ECondition.CLEAN,
    ) -> TrainConfig:
        training = self["training"]
        return self._build(
            TrainConfig,
            tuple(modalities),
            fusion_mode,
            training["loss"],
            training["n_identities"],
            training["samples_per_identity"],
            training["epochs"],
            training["learning_rate"],
            training["fusion_learning_rate"],
            training["lr_decay"],
            training["lr_decay_every"],
            training["weight_decay"],
            training["validation_trials"],
            training["num_workers"],
            training["batch_size_eval"],
            condition,
            self.seed,
        )

    def trial_protocol(self, mode: ETrialMode) -> TrialProtocol:
        protocol = self["protocol"]
        return self._build(
            TrialProtocol, mode, protocol["n_target"], protocol["n_nontarget"], self.seed
        )
