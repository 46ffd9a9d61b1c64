"""Block-level parking occupancy forecasting with graph convolutions and LSTMs.

The package is organised bottom-up: ``autodiff`` and ``numerics`` hold the
tape-based gradient engine and parameter plumbing, ``graph`` and ``recurrent``
the spectral filter and LSTM layers, ``model`` the multi-source network,
``training`` the optimizer loop, ``data`` and ``synth`` the input pipeline,
``evaluation`` metrics and baselines, and ``experiment`` the end-to-end runs.
"""
from .autodiff import DivergenceError, Param, ShapeError, Tensor, backward
from .data import DataError, TimeGrid, weekday_grid
from .evaluation import LassoBaseline, PredictionReport, lasso_fit, mae, mape, q95_capacity
from .experiment import ablation_run, prepare, prepare_scenario, run_benchmark
from .graph import ScaledLaplacian, build_weight_matrix, chebyshev_filter, spectral_filter_direct
from .model import DataSourceSpec, EmbeddingConfig, ModelSpec, ParkingModel, final_model_spec
from .numerics import ParamStore, check_gradient
from .synth import SynthConfig, synth_generate
from .training import TrainConfig, train

__version__ = "0.1.0"
