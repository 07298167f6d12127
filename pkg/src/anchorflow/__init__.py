"""Shortcut flow matching with noise-span calibration and anchor-guided two-stage synthesis."""
from .anchor import AnchorNet, DegradeConfig, degrade, inject, injector_gate, refine_anchor, train_stage2, two_stage_sample
from .config import ConfigError, RunConfig, load_config
from .datasets import ShapeSequence, ToyDistribution, gen_2d, gen_shapes, shape_corpus
from .flow import (
    TrainSettings,
    TrainState,
    anc_loss,
    consistency_target,
    fm_loss,
    interpolate,
    sample_euler,
    sample_fewstep,
    shortcut_step,
    train_alternating,
)
from .metrics import MetricReport, latency_metrics, mhd_mse, sc_residual, sliced_w2
from .nets import AdamW, VelocityNet, embed_time
from .schedule import NoiseSchedule, StepSampler, calibration_weight, candidate_steps, noise_span, sigma_of_index
from .store import load_state, save_state
from .tensor import Tensor, conv2d, grad_check, resample, stop_gradient

__version__ = "0.1.0"
