"""Proxy motion capture with oriented bounding boxes, plus box-guided
motion generation via a conditioned diffusion model."""

__version__ = "0.1.0"

from .errors import (
    DegenerateCloud,
    DegenerateCorrespondences,
    DomainError,
    EmptyAfterFilter,
    EmptyDataset,
    ExtentMismatch,
    FrameCountMismatch,
    GroundNotPlanar,
    InsufficientPoints,
    InvariantError,
    MissingKeyBox,
    NoValidParts,
    SchemaError,
    ShapeMismatch,
    UnknownLabel,
    UnknownLevel,
)
from .types import (
    BoxMotionSequence,
    BoxPose,
    CaptureSession,
    LabelVocabulary,
    RigidTransform,
    SkeletonDef,
    SkeletonMotion,
    Track,
)
from .formats import (
    parse_boxes,
    parse_capture,
    parse_motion,
    serialize_boxes,
    serialize_capture,
    serialize_motion,
)
from .geometry import (
    FilterConfig,
    NormalizeConfig,
    boxes_equivalent,
    calibrate_up,
    estimate_rigid,
    expand_keyframes,
    filter_points,
    fit_obb,
    interpolate_pose,
    propagate_boxes,
)
from .synthesis import (
    HUMANOID22,
    AugmentConfig,
    ProceduralConfig,
    augment_sequence,
    build_dataset,
    gen_procedural_motion,
    part_grouping,
    rest_pose,
    skeleton_to_boxes,
)
from .guidance import (
    GuidanceConfig,
    containment_rate,
    guidance_grad,
    guidance_loss,
    mean_center_distance,
    soft_weights,
)
from .encoder import (
    BoxMotionEncoder,
    box_vertices,
    encode_box,
    encode_frame,
    encode_sequence,
    encoder_backward,
)
from .diffusion import (
    DiffusionConfig,
    ModelBundle,
    MotionDenoiser,
    NoiseSchedule,
    denoise,
    make_schedule,
    q_sample,
    sample_motion,
    train_model,
)
from .checkpoint import load_checkpoint, save_checkpoint
