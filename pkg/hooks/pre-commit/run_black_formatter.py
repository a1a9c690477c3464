import subprocess
import sys
from collections.abc import Sequence
from pathlib import Path

REPOSITORY_DIR_PATH = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPOSITORY_DIR_PATH / "hooks" / "shared"))

from gitrepository import GitRepository

FORMATTED_DIRS = ["trimodal", "tests", "hooks"]
LINE_LENGTH = 100


def run_black_formatter(files: Sequence[str | Path]) -> None:
    subprocess.run(
        ["black", "--line-length", str(LINE_LENGTH), *map(str, files)], check=True
    )


def main():
    repository = GitRepository(REPOSITORY_DIR_PATH)
    staged_files = repository.get_staged_files(*FORMATTED_DIRS, suffixes=(".py",))
    if staged_files:
        run_black_formatter(staged_files)
        repository.add(*staged_files)


if __name__ == "__main__":
    main()
