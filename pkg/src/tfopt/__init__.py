"""tfopt: optimize piecewise-linear volume-rendering transfer functions by
gradient descent against a differentiable image scorer."""

from .camera import CameraPose, RaySet, generate_rays, intersect_box
from .errors import (ConfigError, DegenerateVolumeError, ProtocolError, ScorerError,
                     TFFormatError, TfoptError, VolumeFormatError)
from .initialize import InitResult, init_params
from .objective import ObjectiveConfig, beta_prior_loss, contrastive_loss, tf_reg_loss
from .optimizer import OptimizerState, RunResult, SamplingSettings, StepReport, run
from .render import MarchCache, RenderConfig, RenderOutput, render, render_adjoint
from .scorer import (PromptSet, ReferenceScorer, RemoteScorer, ScoreResult,
                     sample_negatives, score_remote)
from .transfer import TFParams, TFRealized, export_tf, import_tf, realize
from .volume import ScalarField, VolumeMeta, load_raw, resolve_meta, save_raw

__version__ = "0.1.0"

__all__ = [
    "CameraPose", "RaySet", "generate_rays", "intersect_box",
    "ConfigError", "DegenerateVolumeError", "ProtocolError", "ScorerError",
    "TFFormatError", "TfoptError", "VolumeFormatError",
    "InitResult", "init_params",
    "ObjectiveConfig", "beta_prior_loss", "contrastive_loss", "tf_reg_loss",
    "OptimizerState", "RunResult", "SamplingSettings", "StepReport", "run",
    "MarchCache", "RenderConfig", "RenderOutput", "render", "render_adjoint",
    "PromptSet", "ReferenceScorer", "RemoteScorer", "ScoreResult",
    "sample_negatives", "score_remote",
    "TFParams", "TFRealized", "export_tf", "import_tf", "realize",
    "ScalarField", "VolumeMeta", "load_raw", "resolve_meta", "save_raw",
    "__version__",
]
