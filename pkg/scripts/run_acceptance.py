"""Run the acceptance criteria and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py            # all nine, about 35 minutes on one core
    python scripts/run_acceptance.py -k "1_ or 2_"
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    return pytest.main([str(ROOT / "tests" / "test_acceptance.py"), "-q", "-s", *argv])


if __name__ == "__main__":
    sys.exit(main())
