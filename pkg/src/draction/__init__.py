"""Differentiable skeleton-to-image rendering with Gaussian primitives."""
from .canonical import CanonicalGaussianSet, ScaleParams, adaptive_scales, instantiate, primitive_count
from .errors import (DataError, DrActionError, NumericalError, SchemaError, SkeletonFormatError,
                     TrainingDivergedError)
from .gradients import ParameterGradients, backward, finite_diff_check
from .kinematics import blend, deform, joint_transforms, project_so3, quat_to_mat
from .modulator import ModulatorParams, init_modulator
from .rasterizer import Camera, composite, project_gaussians
from .renderer import Renderer
from .skeleton_io import REGISTRY, SkeletonSequence, Topology, load_sequence, prepare, sample_frames

__version__ = "0.1.0"
