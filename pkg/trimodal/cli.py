from __future__ import annotations
import argparse
from collections.abc import Sequence
import hashlib
import logging
from pathlib import Path
import sys
import textwrap
from typing import Any, NoReturn

from .cache import EmbeddingCache
from .checkpoint import bundle_hash, load_bundle, save_bundle
from .config import RunConfig
from .coretypes import (
    ECondition,
    Embedding,
    EModality,
    ManifestEntry,
    MultimodalSample,
    read_manifest,
    write_manifest,
)
from .dataset import corrupt_dataset, generate_synthetic, load_samples, split_dataset, write_dataset
from .errors import ConfigError, VerificationError
from .evaluation import (
    EScoreFusion,
    ETrialMode,
    build_report,
    generate_trials,
    read_trials,
    score_trials,
    system_thresholds,
    write_trials,
)
from .inference import embed_samples
from .report import read_report, render_report, render_summary, summarize_reports, write_report, write_summary
from .training import CheckpointBundle, EFusionMode, TrainingData, train_fused, train_unimodal

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

SPLIT_NAMES = ("train", "valid", "test")


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser exiting with the usage status instead of argparse's 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _print_banner(title: str, body: str) -> None:
    print("=" * 80)
    print(title)
    print("-" * 80)
    print(textwrap.indent(body.rstrip("\n"), "  "))
    print()


def _modalities(text: str) -> tuple[EModality, ...]:
    try:
        modalities = tuple(EModality.parse(token.strip()) for token in text.split(",") if token.strip())
    except ValueError as error:
        raise argparse.ArgumentTypeError(str(error)) from None
    if not modalities or any(not modality.is_unimodal for modality in modalities):
        raise argparse.ArgumentTypeError(f"'{text}' is not a list of audio, visual, thermal.")
    return modalities


def _enum_choice(enum_type: Any) -> Any:
    def parse(text: str) -> Any:
        try:
            return enum_type.parse(text)
        except ValueError as error:
            raise argparse.ArgumentTypeError(str(error)) from None

    parse.__name__ = enum_type.__name__
    return parse


def _load_split(
    manifest_path: str | Path, condition: ECondition, config: RunConfig
) -> tuple[list[ManifestEntry], list[MultimodalSample]]:
    """Read a manifest and its samples; the noisy condition corrupts the whole split."""
    manifest = read_manifest(manifest_path)
    samples = load_samples(manifest, Path(manifest_path).parent)
    if condition is ECondition.NOISY:
        samples = corrupt_dataset(samples, config.corruption_config())
    return manifest, samples


def _plan_tag(
    samples: Sequence[MultimodalSample], condition: ECondition, config: RunConfig
) -> str:
    """
    Identify the corruption plan a loaded split went through; empty for clean data.

    The corrupted subset depends on every sample id of the split, so the same
    sample embeds differently when it was loaded through another manifest.
    """
    if condition is ECondition.CLEAN:
        return ""
    digest = hashlib.sha256(repr(config.corruption_config()).encode("utf-8"))
    for sample_id in sorted(sample.sample_id for sample in samples):
        digest.update(f"{sample_id}\n".encode("utf-8"))
    return digest.hexdigest()


def _cache_key(checkpoint_path: Path, plan_tag: str) -> str:
    digest = hashlib.sha256(bundle_hash(checkpoint_path).encode("ascii"))
    digest.update(plan_tag.encode("ascii"))
    return digest.hexdigest()


def _checkpoint_embeddings(
    checkpoint_path: Path,
    bundle: CheckpointBundle,
    samples: Sequence[MultimodalSample],
    condition: ECondition,
    plan_tag: str,
    cache: EmbeddingCache | None,
    progress: bool,
) -> tuple[dict[EModality, dict[str, Embedding]], dict[str, tuple[float, float]] | None]:
    batch_size = bundle.config.batch_size_eval
    if bundle.fusion is not None or cache is None:
        embedding_set = embed_samples(bundle, samples, batch_size, progress)
        return embedding_set.as_mapping(), embedding_set.attention_statistics()
    key = _cache_key(checkpoint_path, plan_tag)
    embeddings = {}
    for modality in bundle.modalities:
        found = cache.get_many(key, condition, modality, [sample.sample_id for sample in samples])
        missing = [sample for sample in samples if sample.sample_id not in found]
        if missing:
            fresh = embed_samples(bundle, missing, batch_size, progress).embeddings(modality)
            cache.put_many(key, condition, modality, fresh)
            found.update(fresh)
        logger.info(
            "%s embeddings: %d cached, %d computed.", modality, len(samples) - len(missing), len(missing)
        )
        embeddings[modality] = found
    return embeddings, None


def _collect_embeddings(
    checkpoint_paths: Sequence[Path],
    bundles: Sequence[CheckpointBundle],
    samples: Sequence[MultimodalSample],
    condition: ECondition,
    plan_tag: str,
    cache: EmbeddingCache | None,
    progress: bool,
) -> tuple[dict[EModality, dict[str, Embedding]], dict[str, tuple[float, float]] | None]:
    embeddings: dict[EModality, dict[str, Embedding]] = {}
    attention = None
    for path, bundle in zip(checkpoint_paths, bundles):
        bundle_embeddings, statistics = _checkpoint_embeddings(
            path, bundle, samples, condition, plan_tag, cache, progress
        )
        for modality, by_sample in bundle_embeddings.items():
            if modality in embeddings:
                raise ConfigError(f"More than one checkpoint provides {modality} embeddings.")
            embeddings[modality] = by_sample
        attention = attention or statistics
    return embeddings, attention


def cmd_synth_data(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = Path(args.out_dir)
    samples, _ = generate_synthetic(config.synth_config())
    manifest = write_dataset(samples, out_dir)
    splits = split_dataset(
        manifest, config.split_fractions(), config.seed, config["run"]["stratify_gender"]
    )
    write_manifest(manifest, out_dir / "all.lst")
    lines = []
    for name, split in zip(SPLIT_NAMES, splits):
        write_manifest(split, out_dir / f"{name}.lst")
        identities = {entry.identity.id for entry in split}
        lines.append(f"{name:<6}{len(identities):>6} identities{len(split):>8} samples")
    _print_banner(f"Synthetic dataset written to {out_dir}", "\n".join(lines))
    return EXIT_OK


def cmd_make_trials(args: argparse.Namespace, config: RunConfig) -> int:
    manifest = read_manifest(args.manifest, check_files=False)
    trials = generate_trials(manifest, config.trial_protocol(args.mode))
    write_trials(trials, args.out)
    n_target = sum(1 for trial in trials if trial.label.is_target)
    _print_banner(
        f"{args.mode} trials written to {args.out}",
        f"{n_target} target / {len(trials) - n_target} nontarget",
    )
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint_path = Path(args.out)
    _, train = _load_split(args.train, args.condition, config)
    _, valid = _load_split(args.valid, args.condition, config)
    data = TrainingData(train, valid)
    train_config = config.train_config(args.modalities, args.fusion, args.condition)
    specs = config.encoder_specs()
    frontend = config.frontend_config()
    metrics_path = args.metrics or checkpoint_path.with_suffix(".metrics.tsv")

    def on_epoch_end(bundle: CheckpointBundle) -> None:
        save_bundle(bundle, checkpoint_path)

    common = dict(
        frontend=frontend,
        metrics_path=metrics_path,
        on_epoch_end=on_epoch_end,
        config_hash=config.config_hash,
        progress=args.progress,
    )
    if args.fusion is EFusionMode.NONE:
        if args.warm_start:
            raise ConfigError("--warm-start applies to attention fusion training only.")
        modality = train_config.modality_set[0]
        bundle = train_unimodal(data, modality, train_config, specs[modality], **common)
    else:
        warm_start = {}
        for path in args.warm_start:
            warm = load_bundle(path)
            for modality in warm.modalities:
                warm_start[modality] = warm
        bundle = train_fused(
            data,
            train_config,
            {modality: specs[modality] for modality in train_config.modality_set},
            warm_start=warm_start,
            **common,
        )
    save_bundle(bundle, checkpoint_path)
    best = bundle.best_metrics
    _print_banner(
        f"Checkpoint written to {checkpoint_path}",
        f"best epoch {bundle.best_epoch}"
        + ("" if best is None else f", validation EER {100.0 * best.valid_eer:.2f}%"),
    )
    return EXIT_OK


def cmd_embed(args: argparse.Namespace, config: RunConfig) -> int:
    cache = EmbeddingCache(args.cache)
    _, samples = _load_split(args.manifest, args.condition, config)
    plan_tag = _plan_tag(samples, args.condition, config)
    lines = []
    for path in map(Path, args.checkpoints):
        bundle = load_bundle(path)
        if bundle.fusion is not None:
            raise ConfigError(f"'{path}' is an attention-fusion checkpoint; only unimodal ones are cached.")
        embeddings, _ = _checkpoint_embeddings(
            path, bundle, samples, args.condition, plan_tag, cache, args.progress
        )
        lines += [f"{path.name}: {len(by_sample)} {modality}" for modality, by_sample in embeddings.items()]
    _print_banner(f"Embeddings of {args.manifest} ({args.condition})", "\n".join(lines))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    cache = None if args.cache is None else EmbeddingCache(args.cache)
    checkpoint_paths = [Path(path) for path in args.checkpoints]
    bundles = [load_bundle(path) for path in checkpoint_paths]
    train_conditions = {bundle.config.condition for bundle in bundles}
    if len(train_conditions) > 1:
        logger.warning("Checkpoints were trained under different conditions; reporting the first.")
    train_condition = bundles[0].config.condition

    def score(manifest_path: str, trials_path: str) -> tuple[list, dict | None]:
        manifest, samples = _load_split(manifest_path, args.condition, config)
        plan_tag = _plan_tag(samples, args.condition, config)
        trials = read_trials(trials_path, manifest)
        needed = {trial.enroll_sample for trial in trials} | {trial.test_sample for trial in trials}
        samples = [sample for sample in samples if sample.sample_id in needed]
        embeddings, attention = _collect_embeddings(
            checkpoint_paths, bundles, samples, args.condition, plan_tag, cache, args.progress
        )
        return score_trials(trials, embeddings, args.fusion, args.modalities), attention

    valid_thresholds = None
    if args.valid_trials is not None:
        if args.valid_manifest is None:
            raise ConfigError("--valid-trials needs --valid-manifest.")
        valid_records, _ = score(args.valid_manifest, args.valid_trials)
        valid_thresholds = system_thresholds(valid_records)
    records, attention = score(args.manifest, args.trials)
    report = build_report(
        records,
        args.mode,
        args.fusion,
        args.condition,
        train_condition,
        valid_thresholds,
        attention if args.fusion is EScoreFusion.ATTENTION else None,
        config.config_hash,
    )
    write_report(report, args.out_dir, records, args.stem)
    print(render_report(report), end="")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace, config: RunConfig) -> int:
    summaries = summarize_reports([read_report(path) for path in args.reports])
    if args.out_dir is not None:
        write_summary(summaries, args.out_dir)
    print(render_summary(summaries), end="")
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="trimodal",
        description="Trimodal (audio, visual, thermal) person verification experiments.",
    )
    parser.add_argument("--config", help="Run configuration file (INI sections).")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one configuration value; repeatable, wins over the file.",
    )
    parser.add_argument("--seed", type=int, help="Override run.seed.")
    parser.add_argument("--verbose", action="store_true", help="Log debug messages.")
    parser.add_argument("--progress", action="store_true", help="Show progress bars.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    synth = commands.add_parser("synth-data", help="Generate and split a synthetic dataset.")
    synth.add_argument("out_dir", help="Output directory.")
    synth.set_defaults(handler=cmd_synth_data)

    trials = commands.add_parser("make-trials", help="Draw an easy or hard trial list.")
    trials.add_argument("manifest", help="Manifest of the evaluated split.")
    trials.add_argument("out", help="Trial list file.")
    trials.add_argument("--mode", type=_enum_choice(ETrialMode), default=ETrialMode.EASY)
    trials.set_defaults(handler=cmd_make_trials)

    condition = dict(type=_enum_choice(ECondition), default=ECondition.CLEAN, help="clean or noisy.")

    train = commands.add_parser("train", help="Train a unimodal encoder or an attention-fused model.")
    train.add_argument("train", help="Training manifest.")
    train.add_argument("valid", help="Validation manifest.")
    train.add_argument("out", help="Checkpoint file.")
    train.add_argument("--modalities", type=_modalities, default=(EModality.AUDIO,))
    train.add_argument("--fusion", type=_enum_choice(EFusionMode), default=EFusionMode.NONE)
    train.add_argument("--condition", **condition)
    train.add_argument("--metrics", help="Metrics log; defaults next to the checkpoint.")
    train.add_argument(
        "--warm-start", action="append", default=[], help="Unimodal checkpoint; repeatable."
    )
    train.set_defaults(handler=cmd_train)

    embed = commands.add_parser("embed", help="Fill the embedding cache of unimodal checkpoints.")
    embed.add_argument("manifest", help="Manifest of the embedded split.")
    embed.add_argument("checkpoints", nargs="+", help="Checkpoint files.")
    embed.add_argument("--cache", required=True, help="Embedding cache directory.")
    embed.add_argument("--condition", **condition)
    embed.set_defaults(handler=cmd_embed)

    evaluate = commands.add_parser("evaluate", help="Score a trial list and write the report.")
    evaluate.add_argument("manifest", help="Manifest of the evaluated split.")
    evaluate.add_argument("trials", help="Trial list file.")
    evaluate.add_argument("checkpoints", nargs="+", help="Checkpoint files.")
    evaluate.add_argument("--out-dir", required=True, help="Report directory.")
    evaluate.add_argument("--stem", default="report", help="Report file name prefix.")
    evaluate.add_argument("--mode", type=_enum_choice(ETrialMode), default=ETrialMode.EASY)
    evaluate.add_argument("--fusion", type=_enum_choice(EScoreFusion), default=EScoreFusion.NONE)
    evaluate.add_argument("--modalities", type=_modalities, help="Unimodal systems to score.")
    evaluate.add_argument("--condition", **condition)
    evaluate.add_argument("--cache", help="Embedding cache directory.")
    evaluate.add_argument("--valid-manifest", help="Validation manifest for decision thresholds.")
    evaluate.add_argument("--valid-trials", help="Validation trial list for decision thresholds.")
    evaluate.set_defaults(handler=cmd_evaluate)

    summarize = commands.add_parser("summarize", help="Mean and std of repeated evaluations.")
    summarize.add_argument("reports", nargs="+", help="Report JSON files.")
    summarize.add_argument("--out-dir", help="Write summary files here.")
    summarize.set_defaults(handler=cmd_summarize)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        config = RunConfig.from_file(args.config, args.overrides, args.seed)
        logger.debug("Resolved config %s:\n%s", config.config_hash, config.canonical())
        return args.handler(args, config)
    except ConfigError as error:
        print(f"trimodal: config error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except (VerificationError, OSError) as error:
        print(f"trimodal: {error}", file=sys.stderr)
        return EXIT_FAILURE
