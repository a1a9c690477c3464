import json
import os
import shutil
import unittest
from pathlib import Path
from typing import Any

TEMP_ROOT_PATH = Path(__file__).parent / "temp"


class BaseTestCase(unittest.TestCase):
    """
    Fixture data from data/<ClassName>.json and a scratch directory per test class.

    Scratch directories are removed after the class runs unless TRIMODAL_KEEP_TEMP=1,
    which leaves trained checkpoints and reports behind for inspection.
    """

    data_dir_path = Path(__file__).parent / "data"
    test_data: dict[str, Any] = {}

    @property
    def test_name(self) -> str:
        return self._testMethodName

    @property
    def case_data(self) -> Any:
        if self.test_name not in self.test_data:
            raise KeyError(f"No fixture for {type(self).__name__}.{self.test_name}.")
        return self.test_data[self.test_name]

    @classmethod
    def setUpClass(cls):
        cls.get_temp_dir_path().mkdir(parents=True, exist_ok=True)

    @classmethod
    def tearDownClass(cls) -> None:
        if os.environ.get("TRIMODAL_KEEP_TEMP") == "1":
            return
        shutil.rmtree(cls.get_temp_dir_path(), ignore_errors=True)
        if TEMP_ROOT_PATH.is_dir() and not any(TEMP_ROOT_PATH.iterdir()):
            TEMP_ROOT_PATH.rmdir()

    @classmethod
    def get_temp_dir_path(cls) -> Path:
        return TEMP_ROOT_PATH / cls.__name__

    @classmethod
    def temp_path(cls, *parts: str) -> Path:
        """A path inside the class scratch directory; parent directories are created."""
        path = cls.get_temp_dir_path().joinpath(*parts)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    @classmethod
    def load_test_data(cls, file_name: str | None = None) -> None:
        cls.test_data = cls.load_json_data(file_name or f"{cls.__name__}.json")

    @classmethod
    def load_json_data(cls, file_name: str) -> Any:
        with (cls.data_dir_path / file_name).open("r", encoding="utf-8") as file:
            return json.load(file)
