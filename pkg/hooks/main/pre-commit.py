#!/usr/bin/env python

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "shared"))

from run_script import run_hook

STEPS = [
    "validate_configs.py",
    "run_black_formatter.py",
    "generate_documentation.py",
]

if __name__ == "__main__":
    run_hook(Path(__file__).stem, STEPS)
