"""Lightweight pose-estimation models on a self-contained numpy substrate.

The public surface: tensors with reverse-mode gradients (:mod:`.tensor`,
:mod:`.ops`), patch-layout permutations (:mod:`.npt`), architecture blocks
(:mod:`.blocks`), config-driven model assembly with closed-form cost
accounting (:mod:`.model`), heatmap encode/decode and metrics
(:mod:`.heatmap`), binary weights (:mod:`.weights`), a toy trainer
(:mod:`.train`), a latency benchmark (:mod:`.bench`), built-in verification
(:mod:`.selftest`), and an HTTP service (:mod:`.service`) that the CLI
(:mod:`.cli`) talks to.
"""

from .bench import BenchReport, bench_run
from .errors import (ConfigError, ImageFormatError, LgmError, ShapeError,
                     TrainingDivergedError, WeightFileError)
from .heatmap import (KeypointSet, coco_k_constants, decode_heatmaps,
                      gaussian_targets, oks, pckh)
from .model import (Model, ModelConfig, StageSpec, build_model, cost_table,
                    count_flops, count_params, forward_eval, init_weights,
                    load_config, plan_layers, reference_config, toy_config)
from .npt import PatchDims, flat_permutation, npt_op1, npt_op2, npt_op3
from .selftest import SelftestReport, run_selftest
from .tensor import GradTape, Tensor, backward, finite_diff_grad, grad_for
from .train import TrainToyResult, make_toy_dataset, train_toy
from .weights import (load_weights, load_weights_from_bytes, save_weights,
                      serialize_model)

__version__ = "0.1.0"

__all__ = [
    "BenchReport", "bench_run",
    "ConfigError", "ImageFormatError", "LgmError", "ShapeError",
    "TrainingDivergedError", "WeightFileError",
    "KeypointSet", "coco_k_constants", "decode_heatmaps", "gaussian_targets",
    "oks", "pckh",
    "Model", "ModelConfig", "StageSpec", "build_model", "cost_table",
    "count_flops", "count_params", "forward_eval", "init_weights",
    "load_config", "plan_layers", "reference_config", "toy_config",
    "PatchDims", "flat_permutation", "npt_op1", "npt_op2", "npt_op3",
    "SelftestReport", "run_selftest",
    "GradTape", "Tensor", "backward", "finite_diff_grad", "grad_for",
    "TrainToyResult", "make_toy_dataset", "train_toy",
    "load_weights", "load_weights_from_bytes", "save_weights",
    "serialize_model",
    "__version__",
]
