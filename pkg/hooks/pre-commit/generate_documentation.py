import subprocess
import sys
from pathlib import Path

REPOSITORY_DIR_PATH = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(REPOSITORY_DIR_PATH / "hooks" / "shared"))

from gitrepository import GitRepository

PACKAGE_NAME = "trimodal"
PACKAGE_PATH = REPOSITORY_DIR_PATH / PACKAGE_NAME
OUTPUT_DIR_PATH = REPOSITORY_DIR_PATH / "docs"
DOCUMENTATION_FORMAT = "google"


def generate_documentation(
    package: str, output_dir_path: Path, documentation_format: str = DOCUMENTATION_FORMAT
) -> None:
    # pdoc imports the package, so it runs from the repository root.
    subprocess.run(
        [
            "pdoc",
            package,
            "--output-dir",
            str(output_dir_path),
            "--docformat",
            documentation_format,
        ],
        cwd=REPOSITORY_DIR_PATH,
        check=True,
    )


def main():
    repository = GitRepository(REPOSITORY_DIR_PATH)
    if repository.get_staged_files(PACKAGE_PATH, suffixes=(".py",)):
        generate_documentation(PACKAGE_NAME, OUTPUT_DIR_PATH)
        repository.add(OUTPUT_DIR_PATH)


if __name__ == "__main__":
    main()
