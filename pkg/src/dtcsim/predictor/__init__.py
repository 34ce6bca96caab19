"""Channel prediction: WEK-driven path-loss regression and pilot-aided CSI reconstruction."""
from .channel import (
    PartialCSI,
    PilotPattern,
    RicianConfig,
    aod,
    gain_from_pl,
    interpolate_pilots,
    interpolation_matrix,
    pilot_noise_variance,
    reference_noise_variance,
    sample_pilots,
    synthesize_predicted_channel,
    synthesize_predicted_links,
)
from .pl_cnn import PathLossRegressor, predict_pl, sequence_windows, train_pl_predictor
from .recon import CSIReconstructor, reconstruct_csi, train_recon
from .io import load_model, save_model, write_training_csv

__all__ = [
    "CSIReconstructor",
    "PartialCSI",
    "PathLossRegressor",
    "PilotPattern",
    "RicianConfig",
    "aod",
    "gain_from_pl",
    "interpolate_pilots",
    "interpolation_matrix",
    "load_model",
    "pilot_noise_variance",
    "predict_pl",
    "reconstruct_csi",
    "reference_noise_variance",
    "sample_pilots",
    "save_model",
    "sequence_windows",
    "synthesize_predicted_channel",
    "synthesize_predicted_links",
    "train_pl_predictor",
    "train_recon",
    "write_training_csv",
]
