import os
import stat
import sys
from pathlib import Path

REPOSITORY_DIR_PATH = Path(__file__).resolve().parent.parent
GIT_HOOKS_DIR_PATH = REPOSITORY_DIR_PATH / ".git" / "hooks"
GIT_HOOK_SCRIPTS_DIR_PATH = REPOSITORY_DIR_PATH / "hooks" / "main"


def install_hook(script_file_path: Path) -> Path:
    """Link one hooks/main script into .git/hooks under its git hook name."""
    symlink_path = GIT_HOOKS_DIR_PATH / script_file_path.stem
    if symlink_path.exists() or symlink_path.is_symlink():
        print(f"Replacing existing git-hook: {symlink_path}")
        symlink_path.unlink()
    script_file_path.chmod(script_file_path.stat().st_mode | stat.S_IXUSR)
    os.symlink(script_file_path, symlink_path)
    print(f"Installed git-hook: {symlink_path} -> {script_file_path}")
    return symlink_path


def install_hooks() -> list[Path]:
    if not GIT_HOOKS_DIR_PATH.is_dir():
        raise OSError(f"{REPOSITORY_DIR_PATH} is not a git checkout (no {GIT_HOOKS_DIR_PATH}).")
    return [install_hook(path) for path in sorted(GIT_HOOK_SCRIPTS_DIR_PATH.glob("*.py"))]


if __name__ == "__main__":
    try:
        installed = install_hooks()
    except OSError as error:
        print(f"Failed to install git-hooks: {error}")
        sys.exit(1)
    print(f"{len(installed)} git-hooks installed.")
