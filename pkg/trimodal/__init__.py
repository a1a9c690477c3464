from .cache import EmbeddingCache
from .checkpoint import bundle_hash, load_bundle, save_bundle
from .config import ConfigField, ConfigSection, RunConfig
from .coretypes import (
    ECondition,
    EGender,
    EGenderPair,
    EModality,
    ETrialLabel,
    Embedding,
    Identity,
    ManifestEntry,
    MultimodalSample,
    ScoreRecord,
    TrialPair,
    read_manifest,
    sort_modalities,
    validate_manifest,
    write_manifest,
)
from .dataset import (
    CorruptionConfig,
    SynthConfig,
    corrupt_dataset,
    generate_synthetic,
    load_samples,
    split_dataset,
    write_dataset,
)
from .encoders import (
    AudioEncoderSpec,
    ImageEncoderSpec,
    SapParams,
    SelfAttentivePooling,
    build_encoder,
    encode,
    sap_pool,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CorruptionError,
    FeatureError,
    FusionError,
    ManifestError,
    MetricError,
    NumericalError,
    ShapeError,
    TrainingError,
    TrialError,
    VerificationError,
)
from .evaluation import (
    AccuracyReport,
    ErrorOverlap,
    EScoreFusion,
    ETrialMode,
    EvalReport,
    TrialProtocol,
    build_report,
    compute_accuracy,
    compute_eer,
    error_overlap,
    generate_trials,
    score_trials,
)
from .frontend import (
    AudioFeatureConfig,
    EFeatureMode,
    FrontendConfig,
    ImageFeatureConfig,
    audio_features,
    image_features,
)
from .fusion import (
    AttentionFusion,
    AttentionFusionParams,
    FusionWeights,
    attention_fuse,
    average_scores,
    verification_score,
)
from .inference import EmbeddingSet, compute_embeddings, embed_samples
from .report import render_report, summarize_reports, write_report
from .training import (
    CheckpointBundle,
    EFusionMode,
    ELoss,
    TrainConfig,
    TrainingData,
    angular_prototypical_loss,
    train_fused,
    train_unimodal,
)
