"""Relation-guided human-object interaction synthesis.

A numpy library covering the full desk-scale pipeline: object keypoint
geometry, the interactive distance field (IDF), diffusion-based motion and
relation models with reverse-mode autodiff, L-BFGS inference-time guidance,
procedural interaction data, and the physical-plausibility metric suite.
"""

from .diffusion import NoiseSchedule, ddpm_reverse_step, make_linear_schedule, q_sample
from .guidance import GuidanceConfig, lbfgs_minimize, sample_guided
from .idf import compute_idf, guidance_loss, idf_gradient, idf_loss
from .mesh import (
    Aabb,
    KeyPointSet,
    SignedDistanceGrid,
    TriangleMesh,
    build_sdf_grid,
    compute_aabb,
    corner_nearest_points,
    load_obj,
    poisson_disk_sample,
    sample_object_keypoints,
    sdf_query,
)
from .metrics import (
    MetricsReport,
    collision_percentage,
    contact_percentage,
    diversity,
    evaluate,
    frechet_distance,
    mdev,
)
from .models import Condition, MotionGenModel, RelationModel, train_generation, train_relation
from .motion import (
    HumanPose,
    MotionSequence,
    ObjectPose,
    foot_sliding_score,
    load_hoim,
    matrix_to_rot6d,
    object_keypoints_world,
    pack_frame,
    rot6d_to_matrix,
    save_hoim,
    unpack_frame,
)
from .synth import ScenarioSpec, generate_dataset, generate_sequence, make_primitive_mesh

__version__ = "0.1.0"
