#!/usr/bin/env python

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "shared"))

from run_script import run_hook

STEPS = ["run_unittests.py"]

if __name__ == "__main__":
    run_hook(Path(__file__).stem, STEPS)
