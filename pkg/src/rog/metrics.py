"""Evaluation suite: contact and collision percentages, motion deviation,
foot sliding, Frechet distance, diversity, and the aggregate report.

Absolute contact/collision numbers depend on the sphere-free joint proxy
used here, so they are only meaningful for comparisons within this
codebase (guided vs unguided, ablation cells), not across papers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import idf as idf_mod
from . import mesh as mesh_mod
from . import motion

CONTACT_THRESHOLD = 0.05   # m
COLLISION_THRESHOLD = 0.04  # m of penetration
MDEV_ALPHA = 0.05          # m, same threshold as contact


def _object_transforms(frames, orthonormalize: bool = True):
    """Per-frame object rotation/translation; predicted rotation blocks are
    projected to proper rotations through the 6D decoding."""
    trans = motion.object_translation_of(frames).astype(np.float64)
    rot = motion.object_rotation_of(frames).astype(np.float64)
    if orthonormalize:
        rot = motion.rot6d_to_matrix(motion.rot6d_columns(rot))
    return rot, trans


def contact_percentage(seq: motion.MotionSequence, obj_mesh: mesh_mod.TriangleMesh,
                       threshold: float = CONTACT_THRESHOLD,
                       hand_joints=motion.PALM_JOINTS) -> float:
    """Fraction of frames with a hand joint within ``threshold`` of an object vertex."""
    if len(seq.frames) == 0:
        raise ValueError("empty sequence")
    joints = motion.joints_of(seq.frames).astype(np.float64)
    rot, trans = _object_transforms(seq.frames)
    verts = obj_mesh.vertices @ rot.transpose(0, 2, 1) + trans[:, None, :]
    hands = joints[:, list(hand_joints)]
    d = np.linalg.norm(hands[:, :, None, :] - verts[:, None, :, :], axis=-1)
    per_frame = d.min(axis=(1, 2))
    return float(np.mean(per_frame < threshold))


def limb_proxy_points(joints: np.ndarray, points_per_segment: int = 6) -> np.ndarray:
    """Joints plus interpolated points along each bone, shape (N, P, 3)."""
    parts = [joints]
    fractions = (np.arange(points_per_segment) + 1.0) / (points_per_segment + 1.0)
    for child, parent in enumerate(motion.PARENTS):
        if parent < 0:
            continue
        seg = joints[:, parent][:, None, :] + fractions[None, :, None] * (
            joints[:, child] - joints[:, parent]
        )[:, None, :]
        parts.append(seg)
    return np.concatenate(parts, axis=1)


def collision_percentage(seq: motion.MotionSequence, sdf: mesh_mod.SignedDistanceGrid,
                         threshold: float = COLLISION_THRESHOLD,
                         proxy: str = "joints", points_per_segment: int = 6) -> float:
    """Fraction of frames where a human proxy point penetrates deeper than
    ``threshold`` (signed distance strictly below -threshold).

    The proxy is the 24 joints by default; ``proxy="limbs"`` adds
    interpolated per-bone points.
    """
    joints = motion.joints_of(seq.frames).astype(np.float64)
    if proxy == "limbs":
        pts = limb_proxy_points(joints, points_per_segment)
    elif proxy == "joints":
        pts = joints
    else:
        raise ValueError(f"unknown collision proxy {proxy!r}")
    rot, trans = _object_transforms(seq.frames)
    # into the object frame: p_local = R^T (p - t)
    local = np.einsum("nij,npj->npi", rot.transpose(0, 2, 1), pts - trans[:, None, :])
    n = len(local)
    collided = np.zeros(n, dtype=bool)
    for i in range(n):
        collided[i] = bool(np.any(mesh_mod.sdf_query(sdf, local[i]) < -threshold))
    return float(np.mean(collided))


@dataclass
class MdevResult:
    value_mm: float
    window_count: int


def _contact_runs(mask: np.ndarray):
    """Maximal runs of True at least 2 frames long, as (start, end) inclusive."""
    runs = []
    start = None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        elif not m and start is not None:
            if i - start >= 2:
                runs.append((start, i - 1))
            start = None
    if start is not None and len(mask) - start >= 2:
        runs.append((start, len(mask) - 1))
    return runs


def mdev(hand_points, object_points, alpha: float = MDEV_ALPHA) -> MdevResult:
    """Motion deviation in millimeters.

    For every (hand point, object point) pair, maximal windows where the
    pair stays within ``alpha`` are detected; each window of frames [m, n]
    contributes the mean norm of per-frame displacement differences,
    1/(n-m) * sum_{t=m+1..n} |(h_t - h_{t-1}) - (o_t - o_{t-1})|. The result
    averages over all windows; no windows gives 0.
    """
    h = np.asarray(hand_points, dtype=np.float64)
    o = np.asarray(object_points, dtype=np.float64)
    if h.ndim != 3 or o.ndim != 3 or len(h) != len(o):
        raise ValueError("hand and object points must be (N, ., 3) with matching N")
    if len(h) < 2:
        raise ValueError("motion deviation needs at least 2 frames")
    dist = np.linalg.norm(h[:, :, None, :] - o[:, None, :, :], axis=-1)  # (N, H, K)
    dh = np.diff(h, axis=0)
    do = np.diff(o, axis=0)
    values = []
    for i in range(h.shape[1]):
        for j in range(o.shape[1]):
            for m, n in _contact_runs(dist[:, i, j] <= alpha):
                dev = np.linalg.norm(dh[m:n, i] - do[m:n, j], axis=-1)
                values.append(dev.sum() / (n - m))
    if not values:
        return MdevResult(0.0, 0)
    return MdevResult(float(np.mean(values)) * 1000.0, len(values))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(features_a, features_b, shrinkage: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}); the cross term uses
    the symmetric eigendecomposition of S_a^{1/2} S_b S_a^{1/2}. Covariances
    get ``shrinkage`` added to the diagonal when a set has fewer samples
    than dimensions + 1.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"feature sets must be (n, d) with equal d, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("features contain non-finite values")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(d, d)
    cov_b = np.cov(b, rowvar=False).reshape(d, d)
    if len(a) < d + 1:
        cov_a = cov_a + shrinkage * np.eye(d)
    if len(b) < d + 1:
        cov_b = cov_b + shrinkage * np.eye(d)
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = 0.5 * (inner + inner.T)
    vals = np.linalg.eigvalsh(inner)
    if np.any(vals < -1e-8):
        raise RuntimeError(f"covariance cross-product has negative eigenvalue {vals.min():.3g}")
    vals = np.clip(vals, 0.0, None)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(vals).sum())


def diversity(features, pairs: int, seed: int = 0) -> float:
    """Mean distance over ``pairs`` disjoint random index pairs."""
    f = np.asarray(features, dtype=np.float64)
    if len(f) < 2:
        raise ValueError("diversity needs at least 2 feature vectors")
    if 2 * pairs > len(f):
        raise ValueError(f"{pairs} disjoint pairs need {2 * pairs} features, have {len(f)}")
    perm = np.random.default_rng(seed).permutation(len(f))
    first = f[perm[0: 2 * pairs: 2]]
    second = f[perm[1: 2 * pairs: 2]]
    return float(np.linalg.norm(first - second, axis=1).mean())


def motion_features(sequences, fixed_frames: int = 8, mean=None, std=None):
    """Flattened motion vectors clipped/edge-padded to a fixed frame count.

    Returns (features, mean, std); pass the returned moments back in to
    standardize a second set consistently with the first.
    """
    rows = []
    for frames in sequences:
        f = np.asarray(frames, dtype=np.float64)
        if len(f) >= fixed_frames:
            f = f[:fixed_frames]
        else:
            pad = np.repeat(f[-1:], fixed_frames - len(f), axis=0)
            f = np.vstack([f, pad])
        rows.append(f.ravel())
    feats = np.stack(rows)
    if mean is None:
        mean = feats.mean(axis=0)
        std = np.maximum(feats.std(axis=0), 1e-8)
    return (feats - mean) / std, mean, std


@dataclass
class EvalItem:
    """A sequence plus the object assets needed to score it."""

    sequence: motion.MotionSequence
    mesh: mesh_mod.TriangleMesh
    sdf: mesh_mod.SignedDistanceGrid
    keypoints: np.ndarray
    gt_idf: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.keypoints.shape != (24, 3):
            raise ValueError("EvalItem needs (24, 3) canonical keypoints")


@dataclass
class MetricsReport:
    contact_pct: float
    collision_pct: float
    mdev_mm: float
    foot_sliding: float
    fid: float
    diversity: float
    idf_error: float | None
    per_sequence: list = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "contact_pct": self.contact_pct,
            "collision_pct": self.collision_pct,
            "mdev_mm": self.mdev_mm,
            "foot_sliding_cm_per_frame": self.foot_sliding,
            "fid": self.fid,
            "diversity": self.diversity,
            "idf_error": self.idf_error,
            "per_sequence": self.per_sequence,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        p = json.loads(text)
        return cls(
            contact_pct=p["contact_pct"], collision_pct=p["collision_pct"],
            mdev_mm=p["mdev_mm"], foot_sliding=p["foot_sliding_cm_per_frame"],
            fid=p["fid"], diversity=p["diversity"], idf_error=p["idf_error"],
            per_sequence=p["per_sequence"],
        )

    def to_csv(self) -> str:
        lines = ["metric,value"]
        lines.append(f"contact_pct,{self.contact_pct!r}")
        lines.append(f"collision_pct,{self.collision_pct!r}")
        lines.append(f"mdev_mm,{self.mdev_mm!r}")
        lines.append(f"foot_sliding_cm_per_frame,{self.foot_sliding!r}")
        lines.append(f"fid,{self.fid!r}")
        lines.append(f"diversity,{self.diversity!r}")
        if self.idf_error is not None:
            lines.append(f"idf_error,{self.idf_error!r}")
        return "\n".join(lines) + "\n"


def sequence_idf_error(seq: motion.MotionSequence, gt_idf: np.ndarray,
                       metric: str = "squared") -> float:
    """Mean absolute difference between a sequence's field and a reference field."""
    field_ = idf_mod.compute_idf(
        motion.joints_of(seq.frames), motion.object_keypoints_of(seq.frames), metric
    )
    return float(np.mean(np.abs(field_ - np.asarray(gt_idf))))


def evaluate(items: list[EvalItem], reference: list[EvalItem] | None = None,
             contact_threshold: float = CONTACT_THRESHOLD,
             collision_threshold: float = COLLISION_THRESHOLD,
             mdev_alpha: float = MDEV_ALPHA, fid_frames: int = 8,
             diversity_pairs: int | None = None, seed: int = 0,
             collision_proxy: str = "joints") -> MetricsReport:
    """Aggregate the full metric suite over a set of sequences.

    Distribution metrics compare against ``reference`` when given, otherwise
    against the set itself (fid then sits at 0). Feature standardization uses
    the pooled statistics of both sets.
    """
    if not items:
        raise ValueError("nothing to evaluate")
    per_seq = []
    contact, collision, mdevs, fs, idf_errors = [], [], [], [], []
    for item in items:
        seq = item.sequence
        c = contact_percentage(seq, item.mesh, contact_threshold)
        col = collision_percentage(seq, item.sdf, collision_threshold, collision_proxy)
        joints = motion.joints_of(seq.frames).astype(np.float64)
        rot, trans = _object_transforms(seq.frames)
        kp_world = motion.object_keypoints_world(item.keypoints, trans, rot)
        hands = joints[:, list(motion.PALM_JOINTS)]
        md = mdev(hands, kp_world, mdev_alpha)
        f = motion.foot_sliding_score(seq)
        row = {
            "name": item.name, "contact_pct": c, "collision_pct": col,
            "mdev_mm": md.value_mm, "mdev_windows": md.window_count,
            "foot_sliding_cm_per_frame": f,
        }
        if item.gt_idf is not None:
            err = sequence_idf_error(seq, item.gt_idf)
            idf_errors.append(err)
            row["idf_error"] = err
        per_seq.append(row)
        contact.append(c)
        collision.append(col)
        mdevs.append(md.value_mm)
        fs.append(f)

    eval_frames = [it.sequence.frames for it in items]
    ref_frames = [it.sequence.frames for it in (reference or items)]
    pooled, mean, std = motion_features(eval_frames + ref_frames, fid_frames)
    feats_eval = pooled[: len(eval_frames)]
    feats_ref = pooled[len(eval_frames):]
    fid = frechet_distance(feats_ref, feats_eval)
    pairs = diversity_pairs if diversity_pairs is not None else len(feats_eval) // 2
    div = diversity(feats_eval, pairs, seed) if pairs >= 1 else 0.0

    return MetricsReport(
        contact_pct=float(np.mean(contact)),
        collision_pct=float(np.mean(collision)),
        mdev_mm=float(np.mean(mdevs)),
        foot_sliding=float(np.mean(fs)),
        fid=fid,
        diversity=div,
        idf_error=float(np.mean(idf_errors)) if idf_errors else None,
        per_sequence=per_seq,
    )


def report_delta(a: MetricsReport, b: MetricsReport) -> dict:
    """Per-metric differences (b minus a) for two reports."""
    out = {
        "contact_pct": b.contact_pct - a.contact_pct,
        "collision_pct": b.collision_pct - a.collision_pct,
        "mdev_mm": b.mdev_mm - a.mdev_mm,
        "foot_sliding_cm_per_frame": b.foot_sliding - a.foot_sliding,
        "fid": b.fid - a.fid,
        "diversity": b.diversity - a.diversity,
    }
    if a.idf_error is not None and b.idf_error is not None:
        out["idf_error"] = b.idf_error - a.idf_error
    return out
