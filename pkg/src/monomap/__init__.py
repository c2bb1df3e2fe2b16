"""Incremental monocular dense mapping from posed RGB frames.

The scene is a multi-resolution vector-matrix factorized feature field with
separate geometry and appearance paths; geometry decodes to a signed distance
field that a trainable proxy turns into volume density for differentiable
rendering. Online optimization runs over a sliding window of local frames plus
overlap-sampled global keyframes, driven by a photometric loss and a
multi-scale patch-warping loss.
"""

from .autodiff import Param, ParamStore, Tape, Var
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .datasets import Dataset, load_dataset, save_dataset
from .decoders import Mlp, decode_app, decode_app_nocoord, decode_geo
from .errors import ConfigError, DataError, NumericsError
from .fields import (FactorizedLevel, FeatureField, LevelSpec, SceneBounds,
                     build_dense_field, build_field)
from .mapper import Frame, KeyframeCache, Mapper, Schedule, SlidingWindow
from .meshing import Mesh, extract_mesh, extract_mesh_from_sdf, read_ply, write_ply
from .metrics import MetricReport, evaluate_mesh, evaluate_render, psnr
from .model import SceneModel, build_scene_model
from .renderer import (CameraIntrinsics, Pose, RaySampleBatch, RenderResult,
                       densities_to_weights, generate_rays, integrate,
                       render_batch, render_view, sdf_to_density,
                       stratified_samples)
from .synthetic import (AnalyticScene, OrbitTrajectory, SceneSpec,
                        default_intrinsics, desk_scene, generate_synthetic,
                        textureless_scene)

__version__ = "0.1.0"
