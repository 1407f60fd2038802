"""Context-conditioned stochastic gates for feature selection, on a small numpy autodiff core."""

from .data import Dataset, SplitPlan, gen_xor1, gen_xor2, gen_xor3, gen_xor4, split
from .errors import (ConfigError, CstgError, DataError, DimensionError, FormatError,
                     TrainingError, UndefinedMetricError)
from .gates import (GateModel, apply_gates, build_gate_model, expected_open_gates, gate_forward,
                    select_features)
from .presets import PRESETS, get_preset
from .report import accuracy, gate_summary, r2_score, theorem34_experiment
from .training import TrainConfig, TrainResult, cross_validate, grid_search, train

__version__ = "0.1.0"
