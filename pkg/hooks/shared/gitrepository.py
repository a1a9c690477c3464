import subprocess
from pathlib import Path


class GitRepository:
    def __init__(self, path: str | Path = "."):
        self.path = Path(path).resolve()

    def run_git_command(self, command: list[str]) -> str:
        command = ["git", *command]
        print(f"Running git command: {' '.join(command)}")
        process = subprocess.run(
            command,
            cwd=self.path,
            text=True,
            capture_output=True,
            check=False,
        )
        if process.returncode != 0:
            raise GitError(
                f"Command '{' '.join(command)}' failed: {process.stderr.strip()}."
            )
        return process.stdout.strip()

    def get_staged_files(
        self, *dir_paths: str | Path, suffixes: tuple[str, ...] = ()
    ) -> list[Path]:
        """
        Staged files that still exist in the working tree.

        Args:
            *dir_paths (str | Path): Restrict to these directories; all of the repository if empty.
            suffixes (tuple[str, ...], optional): Keep only files with one of these suffixes.

        Returns:
            list[Path]: Absolute paths.
        """
        command = ["diff", "--cached", "--name-only", "--diff-filter=ACMR"]
        if dir_paths:
            command += ["--", *map(str, dir_paths)]
        files = [self.path / line for line in self.run_git_command(command).splitlines()]
        return [
            file
            for file in files
            if file.is_file() and (not suffixes or file.suffix in suffixes)
        ]

    def add(self, *files: str | Path) -> str:
        return self.run_git_command(["add", *map(str, files)])


class GitError(Exception):
    pass
