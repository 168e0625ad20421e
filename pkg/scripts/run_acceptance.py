"""Run the acceptance criteria and print one PASS/FAIL line per criterion.

Takes roughly four minutes on one core. Extra arguments go to pytest, for
example ``-k "1a or 7"`` to run a subset.
"""

import pathlib
import sys

import pytest

HERE = pathlib.Path(__file__).resolve().parent

if __name__ == "__main__":
    target = str(HERE.parent / "tests" / "test_acceptance.py")
    sys.exit(pytest.main([target, "-q", "-p", "no:cacheprovider", *sys.argv[1:]]))
