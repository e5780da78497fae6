"""
Shared fixtures: regression baselines kept in baselines.json
"""

import json
import os

import pytest

BASELINE_FILE = os.path.join(os.path.dirname(__file__), "baselines.json")


@pytest.fixture(scope="session")
def baselines():
    """Recorded values by name; values computed for a missing name are stored on exit."""
    with open(BASELINE_FILE, encoding="utf-8") as f:
        store = json.load(f)
    recorded = dict(store)
    yield store
    if store != recorded:
        with open(BASELINE_FILE, "w", encoding="utf-8") as f:
            json.dump(store, f, indent=2, sort_keys=True)
            f.write("\n")


@pytest.fixture
def check_baseline(baselines):
    def check(name, value, rel):
        expected = baselines.get(name)
        if expected is None:
            baselines[name] = value
            return
        assert value == pytest.approx(expected, rel=rel), name

    return check
