import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from merge_stack.data import scenario_text
from merge_stack.params import LonWeights, VehicleLimits
from merge_stack.scenario import load_scenario
from merge_stack.simulation import compute_metrics, run_scenario

ENSEMBLE_SEEDS = range(20)


@pytest.fixture(scope="session")
def table1_limits():
    return VehicleLimits()


@pytest.fixture(scope="session")
def table1_weights():
    return LonWeights()


@pytest.fixture(scope="session")
def scenario1():
    return load_scenario(scenario_text("scenario1"))


@pytest.fixture(scope="session")
def scenario2():
    return load_scenario(scenario_text("scenario2"))


@pytest.fixture(scope="session")
def scenario3():
    return load_scenario(scenario_text("scenario3"))


def _ensemble(config, sequencer):
    logs = []
    metrics = []
    for seed in ENSEMBLE_SEEDS:
        log = run_scenario(config, sequencer, seed=seed)
        logs.append(log)
        metrics.append(compute_metrics(log, config.lon_weights,
                                       config.limits.safe_spacing))
    return logs, metrics


@pytest.fixture(scope="session")
def scenario1_milp_ensemble(scenario1):
    """20-seed scenario-1 ensemble under the MILP sequencer (criteria 4, 5)."""
    return _ensemble(scenario1, "milp")


@pytest.fixture(scope="session")
def scenario1_fifo_ensemble(scenario1):
    return _ensemble(scenario1, "fifo")


@pytest.fixture(scope="session")
def scenario2_log(scenario2):
    return run_scenario(scenario2, "milp")


def settle_time(record, time_step, threshold=0.05):
    """Last time the follower's (spacing dev, speed diff, accel) infinity
    norm is at or above the threshold, plus one step; 0 if never."""
    states = np.abs(np.array([record.spacing_dev, record.speed_diff, record.a]))
    worst = states.max(axis=0)
    above = np.nonzero(worst >= threshold)[0]
    return 0.0 if above.size == 0 else (above[-1] + 1) * time_step
