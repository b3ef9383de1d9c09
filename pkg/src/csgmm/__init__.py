"""Compressed sparse Gaussian mixture models for joint channel and
direction-of-arrival estimation: channel simulation, EM training from noisy
observations, a pruned low-complexity online estimator, baselines, and a
benchmark harness."""

__version__ = "0.1.0"

from .channel_sim import (
    AnglePrior,
    ChannelScenario,
    Dataset,
    default_angle_prior,
    generate_dataset,
    load_dataset,
    observe,
    pas_covariance,
    sample_angle,
    sample_channel,
    save_dataset,
)
from .dictionary import (
    AngleGrid,
    Dictionary,
    build_dictionary,
    grid_circulant,
    grid_custom,
    grid_equidistant_sin,
    grid_toeplitz,
    steering_vector,
)
from .estimators import (
    EstimationResult,
    EstimatorCache,
    PrunedModel,
    baseline_dml,
    baseline_genie_lmmse,
    baseline_ls,
    baseline_sample_lmmse,
    baseline_sbl,
    build_cache,
    doa_batch,
    estimate,
    estimate_batch,
    estimate_doa,
    prune,
    sbl_batch,
)
from .mixture import (
    CsgmmModel,
    TrainConfig,
    component_observation_covariance,
    e_step,
    implied_channel_covariance,
    load_model,
    log_likelihood,
    m_step,
    save_model,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
