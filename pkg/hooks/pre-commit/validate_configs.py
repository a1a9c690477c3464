import sys
from pathlib import Path

REPOSITORY_DIR_PATH = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPOSITORY_DIR_PATH))

from trimodal import ConfigError, EFusionMode, ETrialMode, RunConfig
from trimodal.coretypes import MODALITY_ORDER

CONFIGS_DIR_PATH = REPOSITORY_DIR_PATH / "configs"


def validate_config(path: Path) -> str | None:
    """Resolve every view of a shipped config; the error message, or None when it is usable."""
    try:
        config = RunConfig.from_file(path)
        config.split_fractions()
        config.synth_config()
        config.corruption_config()
        config.frontend_config()
        config.encoder_specs()
        config.train_config(MODALITY_ORDER, EFusionMode.ATTENTION)
        for modality in MODALITY_ORDER:
            config.train_config([modality])
        for mode in ETrialMode:
            config.trial_protocol(mode)
    except ConfigError as error:
        return str(error)
    return None


def main():
    failures = 0
    for path in sorted(CONFIGS_DIR_PATH.glob("*.ini")):
        error = validate_config(path)
        if error is None:
            print(f"Config OK: {path.name}")
        else:
            print(f"Config invalid: {path.name}: {error}")
            failures += 1
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
