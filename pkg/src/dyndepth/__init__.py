"""Adaptive-depth transformer text classification with a guaranteed early exit."""

from .autodiff import Tensor, no_grad
from .config import DEFAULT_TAU_GRID, BaselineConfig, ConfigError, ModelConfig, TrainConfig
from .data import Example, SynthSpec, Vocab, gen_synthetic, load_tsv, split_dataset, write_tsv
from .estimator import DactClassifier, EarlyExitClassifier
from .halting import (
    BlockReadout,
    DactModel,
    HaltingState,
    adversarial_bound_audit,
    dact_step,
    halting_bound_holds,
    initial_state,
    run_bound_audit_suite,
    run_recurrence,
)
from .harness import TradeoffPoint, evaluate, layer_histogram
from .training import Adam, TrainingDiverged, sweep_tau, train_baseline_heads, train_phase1, train_phase2

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BaselineConfig",
    "BlockReadout",
    "ConfigError",
    "DactClassifier",
    "DactModel",
    "EarlyExitClassifier",
    "Example",
    "HaltingState",
    "ModelConfig",
    "DEFAULT_TAU_GRID",
    "SynthSpec",
    "Tensor",
    "TradeoffPoint",
    "TrainConfig",
    "TrainingDiverged",
    "Vocab",
    "adversarial_bound_audit",
    "dact_step",
    "evaluate",
    "gen_synthetic",
    "halting_bound_holds",
    "initial_state",
    "layer_histogram",
    "load_tsv",
    "no_grad",
    "run_bound_audit_suite",
    "run_recurrence",
    "split_dataset",
    "sweep_tau",
    "train_baseline_heads",
    "train_phase1",
    "train_phase2",
    "write_tsv",
    "__version__",
]
