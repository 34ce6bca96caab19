"""Scenario configuration, episode engine and command-line interface."""
from .config import (
    CSI_MODES,
    SCHEDULERS,
    PredictorConfig,
    ScenarioConfig,
    SchedulerConfig,
    TrafficConfig,
    config_from_dict,
    default_config_path,
    load_config,
)
from .episode import (
    EpisodeResult,
    MonteCarloReport,
    default_strategies,
    run_episode,
    run_monte_carlo,
    train_pl_model,
    train_recon_model,
)
from .twin import Twin, build_twin, get_twin

__all__ = [
    "CSI_MODES",
    "SCHEDULERS",
    "PredictorConfig",
    "ScenarioConfig",
    "SchedulerConfig",
    "TrafficConfig",
    "config_from_dict",
    "default_config_path",
    "load_config",
    "EpisodeResult",
    "MonteCarloReport",
    "default_strategies",
    "run_episode",
    "run_monte_carlo",
    "train_pl_model",
    "train_recon_model",
    "Twin",
    "build_twin",
    "get_twin",
]
