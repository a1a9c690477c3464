import os
import subprocess
import sys
from pathlib import Path

REPOSITORY_DIR_PATH = Path(__file__).resolve().parents[2]
COVERED_PACKAGE = "trimodal"


def run_unittest() -> int:
    """Run the fast suite under coverage; the end-to-end ordering checks stay opt-in."""
    environment = {
        key: value for key, value in os.environ.items() if key != "TRIMODAL_RUN_SLOW"
    }
    returncode = subprocess.run(
        [
            sys.executable,
            "-m",
            "coverage",
            "run",
            "--source",
            COVERED_PACKAGE,
            "-m",
            "unittest",
            "discover",
            "-s",
            "tests",
            "-t",
            ".",
            "-p",
            "test_*.py",
            "-b",
        ],
        cwd=REPOSITORY_DIR_PATH,
        env=environment,
        check=False,
    ).returncode
    if returncode == 0:
        subprocess.run(
            [sys.executable, "-m", "coverage", "report", "--skip-covered"],
            cwd=REPOSITORY_DIR_PATH,
            check=False,
        )
    return returncode


if __name__ == "__main__":
    returncode = run_unittest()
    if returncode == 0:
        print("Unit tests passed. Proceeding with push.")
    else:
        print("Tests failed. Push will be aborted.")
    sys.exit(returncode)
