import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from csgmm.bench import ExperimentConfig, _nmse_cell, run_nmse_vs_support, run_rmse_vs_snr

DESK_SEED = 0


@pytest.fixture(scope="session")
def desk_config():
    return ExperimentConfig(seed=DESK_SEED)


@pytest.fixture(scope="session")
def desk_nmse_cell_10db(desk_config):
    """The 10 dB desk-scale channel-estimation cell (all estimators)."""
    rows, info = _nmse_cell(desk_config, 2, 10.0)
    return {row.estimator: row.value for row in rows}, info


@pytest.fixture(scope="session")
def desk_support_sweep(desk_config):
    table, infos = run_nmse_vs_support(desk_config)
    return table, infos


@pytest.fixture(scope="session")
def desk_rmse_table(desk_config):
    table, infos = run_rmse_vs_snr(desk_config, workers=1)
    return table, infos


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
