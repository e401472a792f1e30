"""Motion representation: the 288-value per-frame vector, 6D rotations,
packing/unpacking, object keypoint kinematics, and the HOIM container.

Frame layout (fixed, also the on-disk order):
    [0:72)    24 human joint positions (m, world frame)
    [72:204)  22 joint rotations as 6D values (palm joints carry none)
    [204:207) object translation (m)
    [207:216) object 3x3 rotation, row-major
    [216:288) 24 object keypoint positions (m, world frame)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FRAME_DIM = 288
JOINT_COUNT = 24
ROT_JOINT_COUNT = 22

JOINTS = slice(0, 72)
ROT6D = slice(72, 204)
OBJECT_T = slice(204, 207)
OBJECT_R = slice(207, 216)
OBJECT_KP = slice(216, 288)

JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "chest", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_palm", "r_palm",
)

# Parent joint per joint; -1 marks the pelvis root.
PARENTS = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
)

# Palm centers carry contact; they are the two joints without rotations.
PALM_JOINTS = (22, 23)
FOOT_JOINTS = (10, 11)

# Rest pose, z-up, y forward, pelvis near 0.95 m. Used as the default-pose
# conditioning input and as the base of the synthetic motion templates.
REST_JOINTS = np.array(
    [
        [0.00, 0.00, 0.95],   # pelvis
        [0.09, 0.00, 0.91],   # l_hip
        [-0.09, 0.00, 0.91],  # r_hip
        [0.00, 0.00, 1.05],   # spine1
        [0.10, 0.00, 0.50],   # l_knee
        [-0.10, 0.00, 0.50],  # r_knee
        [0.00, 0.00, 1.15],   # spine2
        [0.10, 0.00, 0.08],   # l_ankle
        [-0.10, 0.00, 0.08],  # r_ankle
        [0.00, 0.00, 1.25],   # chest
        [0.10, 0.12, 0.02],   # l_foot
        [-0.10, 0.12, 0.02],  # r_foot
        [0.00, 0.00, 1.40],   # neck
        [0.06, 0.00, 1.32],   # l_collar
        [-0.06, 0.00, 1.32],  # r_collar
        [0.00, 0.00, 1.55],   # head
        [0.18, 0.00, 1.32],   # l_shoulder
        [-0.18, 0.00, 1.32],  # r_shoulder
        [0.25, 0.08, 1.05],   # l_elbow
        [-0.25, 0.08, 1.05],  # r_elbow
        [0.25, 0.18, 0.90],   # l_wrist
        [-0.25, 0.18, 0.90],  # r_wrist
        [0.25, 0.22, 0.85],   # l_palm
        [-0.25, 0.22, 0.85],  # r_palm
    ]
)

IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

HOIM_MAGIC = b"HOIM"
HOIM_VERSION = 1


@dataclass
class HumanPose:
    joints: np.ndarray       # (24, 3)
    rotations6d: np.ndarray  # (22, 6)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.rotations6d = np.asarray(self.rotations6d, dtype=np.float64)
        if self.joints.shape != (JOINT_COUNT, 3):
            raise ValueError(f"joints must be (24, 3), got {self.joints.shape}")
        if self.rotations6d.shape != (ROT_JOINT_COUNT, 6):
            raise ValueError(f"rotations6d must be (22, 6), got {self.rotations6d.shape}")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("joints contain non-finite values")


@dataclass
class ObjectPose:
    translation: np.ndarray  # (3,)
    rotation: np.ndarray     # (3, 3)
    keypoints: np.ndarray    # (24, 3), world frame

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.keypoints.shape != (JOINT_COUNT, 3):
            raise ValueError(f"keypoints must be (24, 3), got {self.keypoints.shape}")


@dataclass
class MotionSequence:
    """N frames of the 288-value interaction vector plus playback metadata."""

    frames: np.ndarray
    fps: float
    action_label: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_DIM:
            raise ValueError(f"frames must be (N, {FRAME_DIM}), got {self.frames.shape}")
        if len(self.frames) < 2:
            raise ValueError("a motion sequence needs at least 2 frames")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")

    def __len__(self):
        return len(self.frames)


def rot6d_to_matrix(r) -> np.ndarray:
    """Decode 6D rotation values (first two columns) to rotation matrices.

    Gram-Schmidt: b1 = a1/|a1|, b2 = normalize(a2 - (b1.a2) b1), b3 = b1 x b2;
    the result has columns [b1 b2 b3]. Accepts (..., 6) batches.
    """
    r = np.asarray(r, dtype=np.float64)
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= 1e-8):
        raise ValueError("degenerate 6D rotation: first vector has near-zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= 1e-8 * np.maximum(np.linalg.norm(a2, axis=-1, keepdims=True), 1.0)):
        raise ValueError("degenerate 6D rotation: second vector is parallel to the first")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(m) -> np.ndarray:
    """First two columns of a rotation matrix as a 6-vector; (..., 3, 3) batches."""
    m = np.asarray(m, dtype=np.float64)
    gram = m @ np.swapaxes(m, -1, -2)
    eye = np.eye(3)
    if np.max(np.abs(gram - eye)) > 1e-4:
        raise ValueError("input is not orthonormal within 1e-4")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rot6d_columns(m) -> np.ndarray:
    """First two columns of an arbitrary 3x3 matrix, without orthonormality checks.

    Used to read a 6D parameterization out of a *predicted* (possibly
    non-orthonormal) rotation block.
    """
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rot6d_to_matrix_vjp(r, grad_m) -> np.ndarray:
    """Gradient of rot6d_to_matrix: pull (..., 3, 3) cotangents back to (..., 6)."""
    r = np.asarray(r, dtype=np.float64)
    grad_m = np.asarray(grad_m, dtype=np.float64)
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / n1
    c = np.sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - c * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    b2 = u2 / n2

    g1 = grad_m[..., :, 0]
    g2 = grad_m[..., :, 1]
    g3 = grad_m[..., :, 2]

    gb1 = g1 + np.cross(b2, g3)
    gb2 = g2 + np.cross(g3, b1)
    gu2 = (gb2 - np.sum(b2 * gb2, axis=-1, keepdims=True) * b2) / n2
    ga2 = gu2 - np.sum(b1 * gu2, axis=-1, keepdims=True) * b1
    gb1 = gb1 - np.sum(b1 * gu2, axis=-1, keepdims=True) * a2 - c * gu2
    ga1 = (gb1 - np.sum(b1 * gb1, axis=-1, keepdims=True) * b1) / n1
    return np.concatenate([ga1, ga2], axis=-1)


def object_keypoints_world(canonical, translation, rotation) -> np.ndarray:
    """Map canonical keypoints through rigid transforms: p_world = R p + t.

    ``translation`` may be (3,) or (N, 3) and ``rotation`` (3, 3) or (N, 3, 3);
    batched inputs yield (N, 24, 3).
    """
    canonical = np.asarray(canonical, dtype=np.float64)
    translation = np.asarray(translation, dtype=np.float64)
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.ndim == 2:
        return canonical @ rotation.T + translation
    return canonical @ np.swapaxes(rotation, -1, -2) + translation[:, None, :]


def pack_frame(human: HumanPose, obj: ObjectPose) -> np.ndarray:
    out = np.empty(FRAME_DIM)
    out[JOINTS] = human.joints.ravel()
    out[ROT6D] = human.rotations6d.ravel()
    out[OBJECT_T] = obj.translation
    out[OBJECT_R] = obj.rotation.ravel()
    out[OBJECT_KP] = obj.keypoints.ravel()
    return out


def unpack_frame(vec) -> tuple[HumanPose, ObjectPose]:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (FRAME_DIM,):
        raise ValueError(f"frame vector must have length {FRAME_DIM}, got {vec.shape}")
    human = HumanPose(vec[JOINTS].reshape(24, 3), vec[ROT6D].reshape(22, 6))
    obj = ObjectPose(vec[OBJECT_T], vec[OBJECT_R].reshape(3, 3), vec[OBJECT_KP].reshape(24, 3))
    return human, obj


# Sequence-level views of an (N, 288) frame block.

def joints_of(frames) -> np.ndarray:
    return np.asarray(frames)[:, JOINTS].reshape(-1, 24, 3)


def rot6d_of(frames) -> np.ndarray:
    return np.asarray(frames)[:, ROT6D].reshape(-1, 22, 6)


def object_translation_of(frames) -> np.ndarray:
    return np.asarray(frames)[:, OBJECT_T]


def object_rotation_of(frames) -> np.ndarray:
    return np.asarray(frames)[:, OBJECT_R].reshape(-1, 3, 3)


def object_keypoints_of(frames) -> np.ndarray:
    return np.asarray(frames)[:, OBJECT_KP].reshape(-1, 24, 3)


def foot_sliding_score(seq: MotionSequence, foot_joint_ids=FOOT_JOINTS, height_eps: float = 0.05, fps=None) -> float:
    """Mean horizontal foot drift per frame while grounded, in cm/frame.

    A frame counts for a foot when that joint's height is below
    ``height_eps``; each counted frame contributes the horizontal distance
    moved since the previous frame. Feet without grounded frames score 0.
    The value is per frame, so ``fps`` is accepted only for interface
    symmetry with the other metrics.
    """
    joints = joints_of(seq.frames)
    scores = []
    for j in foot_joint_ids:
        p = joints[:, j, :]
        grounded = p[1:, 2] < height_eps
        if not np.any(grounded):
            scores.append(0.0)
            continue
        step = np.linalg.norm(p[1:, :2] - p[:-1, :2], axis=1)
        scores.append(float(step[grounded].mean()))
    return float(np.mean(scores)) * 100.0


def save_hoim(seq: MotionSequence, path) -> None:
    """Write the HOIM container: magic, version, N, dim, fps, label, f32 frames."""
    header = struct.pack(
        "<4sIIIfI", HOIM_MAGIC, HOIM_VERSION, len(seq.frames), FRAME_DIM,
        float(seq.fps), int(seq.action_label),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def load_hoim(path) -> MotionSequence:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIIIfI"))
        if len(header) < struct.calcsize("<4sIIIfI"):
            raise ValueError(f"{path}: truncated HOIM header")
        magic, version, n, dim, fps, label = struct.unpack("<4sIIIfI", header)
        if magic != HOIM_MAGIC:
            raise ValueError(f"{path}: not a HOIM file (bad magic {magic!r})")
        if version != HOIM_VERSION:
            raise ValueError(f"{path}: unsupported HOIM version {version}")
        if dim != FRAME_DIM:
            raise ValueError(f"{path}: frame dim {dim} != {FRAME_DIM}")
        payload = fh.read(n * dim * 4)
        if len(payload) != n * dim * 4:
            raise ValueError(f"{path}: truncated HOIM payload")
        frames = np.frombuffer(payload, dtype="<f4").reshape(n, dim)
    return MotionSequence(frames=frames.copy(), fps=float(fps), action_label=int(label))
