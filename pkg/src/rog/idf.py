"""Interactive distance field: the 24 x 24 x N tensor of distances between
human joints and object keypoints, its losses, and analytic gradients.

The default metric stores squared Euclidean distances (smooth everywhere);
``metric="euclidean"`` switches to plain distances.
"""

from __future__ import annotations

import struct

import numpy as np

_EUCLID_EPS = 1e-12


def _pair_differences(human_joints, object_keypoints):
    q = np.asarray(human_joints, dtype=np.float64)
    p = np.asarray(object_keypoints, dtype=np.float64)
    if q.ndim != 3 or p.ndim != 3 or q.shape[0] != p.shape[0]:
        raise ValueError(
            f"expected matching (N, J, 3) point blocks, got {q.shape} and {p.shape}"
        )
    return q[:, :, None, :] - p[:, None, :, :]  # (N, J_h, J_o, 3)


def compute_idf(human_joints, object_keypoints, metric: str = "squared") -> np.ndarray:
    """Distance tensor D[i, j, n] between joint i and keypoint j at frame n.

    Inputs are (N, 24, 3); the result has axis order (joint, keypoint, frame).
    """
    diff = _pair_differences(human_joints, object_keypoints)
    sq = np.sum(diff * diff, axis=-1)
    if metric == "squared":
        values = sq
    elif metric == "euclidean":
        values = np.sqrt(sq)
    else:
        raise ValueError(f"unknown IDF metric {metric!r}")
    return values.transpose(1, 2, 0)


def idf_loss(pred, gt) -> float:
    """Training loss: mean squared error over all tensor entries."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean((pred - gt) ** 2))


def guidance_loss(d, d_refined) -> float:
    """Guidance objective: squared error *summed* over all entries.

    The sum (not mean) makes the gradient magnitude scale with how many
    entries violate the refined field.
    """
    d = np.asarray(d, dtype=np.float64)
    d_refined = np.asarray(d_refined, dtype=np.float64)
    if d.shape != d_refined.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {d_refined.shape}")
    return float(np.sum((d - d_refined) ** 2))


def idf_gradient(human_joints, object_keypoints, upstream, metric: str = "squared"):
    """Backpropagate an IDF-shaped cotangent to the two point blocks.

    For the squared metric, dD[i,j,n]/dq_i = 2 (q_i - p_j) and the keypoint
    gradient is its negation. Returns (d_joints, d_keypoints), both (N, 24, 3).
    """
    diff = _pair_differences(human_joints, object_keypoints)
    upstream = np.asarray(upstream, dtype=np.float64)
    n_frames = diff.shape[0]
    if upstream.shape != (diff.shape[1], diff.shape[2], n_frames):
        raise ValueError(f"upstream must be (J_h, J_o, N), got {upstream.shape}")
    up = upstream.transpose(2, 0, 1)[..., None]  # (N, J_h, J_o, 1)
    if metric == "squared":
        local = 2.0 * diff
    elif metric == "euclidean":
        norms = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
        local = diff / np.maximum(norms, _EUCLID_EPS)
    else:
        raise ValueError(f"unknown IDF metric {metric!r}")
    contrib = up * local
    return contrib.sum(axis=2), -contrib.sum(axis=1)


def save_idf(values, path) -> None:
    """Binary export: three little-endian u32 extents then f32 values (C order)."""
    values = np.asarray(values)
    if values.ndim != 3:
        raise ValueError("IDF tensor must be 3-d")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", *values.shape))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def load_idf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) != 12:
            raise ValueError(f"{path}: truncated IDF header")
        shape = struct.unpack("<III", header)
        payload = fh.read(shape[0] * shape[1] * shape[2] * 4)
        if len(payload) != shape[0] * shape[1] * shape[2] * 4:
            raise ValueError(f"{path}: truncated IDF payload")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)


def frame_slice_csv(values, frame: int) -> str:
    """One frame of the tensor as CSV rows (joints down, keypoints across)."""
    values = np.asarray(values)
    rows = [",".join(repr(float(x)) for x in row) for row in values[:, :, frame]]
    return "\n".join(rows) + "\n"
