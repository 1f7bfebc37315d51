"""Spectrally-initialized AMP/OAMP for spiked matrix models with
orthogonally invariant noise."""

__version__ = "0.1.0"

from .amp_engine import (
    AmpConfig,
    AmpDivergenceError,
    ExactModel,
    Trajectory,
    run_linear_amp,
    run_rect_independent,
    run_rect_spectral,
    run_sym_independent,
    run_sym_spectral,
)
from .block_matrix import BlockMatrix, DiagScaler
from .denoisers import DenoiserContext, DiscretePrior
from .harness import ExperimentConfig, run_experiment
from .model_gen import NoiseSpec, SpikedInstance, build_spiked, generate_instance
from .spectrum import CumulantModel, SpectralSample
from .spike_estimation import SpikeEstimates, SubCriticalSpikeError

__all__ = [
    "AmpConfig",
    "AmpDivergenceError",
    "BlockMatrix",
    "CumulantModel",
    "DenoiserContext",
    "DiagScaler",
    "DiscretePrior",
    "ExactModel",
    "ExperimentConfig",
    "NoiseSpec",
    "SpectralSample",
    "SpikeEstimates",
    "SpikedInstance",
    "SubCriticalSpikeError",
    "Trajectory",
    "build_spiked",
    "generate_instance",
    "run_experiment",
    "run_linear_amp",
    "run_rect_independent",
    "run_rect_spectral",
    "run_sym_independent",
    "run_sym_spectral",
]
