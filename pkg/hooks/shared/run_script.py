import subprocess
import sys
from pathlib import Path


def run_script(path: str | Path) -> bool:
    path = Path(path)
    print(f"Running hook step: {path.name}")
    process = subprocess.run([sys.executable, path], check=False)
    if process.returncode != 0:
        print(f"Hook step failed ({process.returncode}): {path.name}")
    return process.returncode == 0


def run_scripts_in_dir(dir_path: str | Path, scripts: list[str]) -> bool:
    """Run every script in order, even after a failure, and report whether all passed."""
    results = [run_script(Path(dir_path) / script) for script in scripts]
    return all(results)


def run_hook(hook_name: str, scripts: list[str]) -> None:
    """Run the steps of one git hook from hooks/<hook_name>/ and exit with its verdict."""
    steps_dir_path = Path(__file__).resolve().parents[1] / hook_name
    success = run_scripts_in_dir(steps_dir_path, scripts)
    if not success:
        print(f"{hook_name} rejected: fix the failing steps above and retry.")
    sys.exit(0 if success else 1)
