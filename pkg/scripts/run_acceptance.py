"""Run the acceptance suite and print one PASS/FAIL line per criterion."""
import os
import sys

import pytest

here = os.path.dirname(os.path.abspath(__file__))
sys.exit(pytest.main([os.path.join(here, "..", "tests", "test_acceptance.py"), "-q",
                      *sys.argv[1:]]))
