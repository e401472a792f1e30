"""Procedural interaction data: primitive object meshes, per-action motion
templates, and dataset generation with manifests.

The templates are deliberately simple stick-figure kinematics. Their job is
to give the losses, guidance, and metrics something statistically stable to
chew on: hands track grasp vertices exactly during attached phases, object
paths are C1-smooth, and ground-truth distance fields come from the clean
(pre-jitter) trajectories.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import idf as idf_mod
from . import mesh as mesh_mod
from . import motion
from .models import TrainingItem

ACTION_NAMES = ("lift", "carry", "put_down", "pull", "kick")
ACTION_IDS = {name: i for i, name in enumerate(ACTION_NAMES)}

OBJECT_KINDS = ("box", "cylinder", "icosphere")
DEFAULT_DIMS = {
    "box": (0.30, 0.24, 0.20),
    "cylinder": (0.11, 0.30),
    "icosphere": (0.14,),
}

_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSA_VERTS = np.array(
    [
        (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
        (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
        (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
    ],
    dtype=np.float64,
)

_ICOSA_FACES = (
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
)


def make_primitive_mesh(kind: str, dims, segments: int = 16, subdivisions: int = 2) -> mesh_mod.TriangleMesh:
    """Watertight primitive: box (12 faces), cylinder, or icosphere.

    Boxes span [0, dims] per axis; cylinders stand on z=0 centered on the z
    axis; icospheres are centered at the origin.
    """
    dims = tuple(float(d) for d in dims)
    if any(d <= 0 for d in dims):
        raise ValueError(f"dimensions must be positive, got {dims}")
    if kind == "box":
        if len(dims) != 3:
            raise ValueError("box needs (lx, ly, lz)")
        corners = np.array(
            [(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64
        ) * np.array(dims)
        faces = []
        for quad in ((0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)):
            faces.append((quad[0], quad[1], quad[2]))
            faces.append((quad[0], quad[2], quad[3]))
        return mesh_mod.TriangleMesh(corners, np.array(faces))
    if kind == "cylinder":
        if len(dims) != 2:
            raise ValueError("cylinder needs (radius, height)")
        radius, height = dims
        theta = 2.0 * np.pi * np.arange(segments) / segments
        ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        verts = [(0.0, 0.0, 0.0), (0.0, 0.0, height)]
        verts += [(x, y, 0.0) for x, y in ring]
        verts += [(x, y, height) for x, y in ring]
        bot = lambda k: 2 + (k % segments)
        top = lambda k: 2 + segments + (k % segments)
        faces = []
        for k in range(segments):
            faces.append((0, bot(k + 1), bot(k)))
            faces.append((1, top(k), top(k + 1)))
            faces.append((bot(k), bot(k + 1), top(k + 1)))
            faces.append((bot(k), top(k + 1), top(k)))
        return mesh_mod.TriangleMesh(np.array(verts), np.array(faces))
    if kind == "icosphere":
        if len(dims) != 1:
            raise ValueError("icosphere needs (radius,)")
        radius = dims[0]
        verts = [v / np.linalg.norm(v) for v in _ICOSA_VERTS]
        faces = [tuple(f) for f in _ICOSA_FACES]
        for _ in range(subdivisions):
            cache: dict[tuple[int, int], int] = {}

            def midpoint(i, j):
                key = (min(i, j), max(i, j))
                if key not in cache:
                    m = verts[i] + verts[j]
                    verts.append(m / np.linalg.norm(m))
                    cache[key] = len(verts) - 1
                return cache[key]

            new_faces = []
            for a, b, c in faces:
                ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
                new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
            faces = new_faces
        return mesh_mod.TriangleMesh(np.array(verts) * radius, np.array(faces))
    raise ValueError(f"unknown primitive kind {kind!r}")


@dataclass
class ScenarioSpec:
    object_kind: str
    object_dims: tuple
    action: int | str
    frames: int = 24
    fps: float = 20.0
    seed: int = 0
    jitter: float = 0.005

    def __post_init__(self):
        if isinstance(self.action, str):
            if self.action not in ACTION_IDS:
                raise ValueError(f"unknown action {self.action!r}; expected one of {ACTION_NAMES}")
            self.action = ACTION_IDS[self.action]
        if not 0 <= self.action < len(ACTION_NAMES):
            raise ValueError(f"action id {self.action} outside [0, {len(ACTION_NAMES)})")
        if not 10 <= self.frames <= 120:
            raise ValueError("frames must lie in [10, 120]")
        if any(d <= 0 for d in self.object_dims):
            raise ValueError("object dimensions must be positive")


@dataclass
class GeneratedSequence:
    sequence: motion.MotionSequence
    clean_frames: np.ndarray
    idf: np.ndarray
    mesh: mesh_mod.TriangleMesh
    keypoints: mesh_mod.KeyPointSet


def _ramp(n: int, start: int, end: int) -> np.ndarray:
    """Per-frame C1 ramp: 0 before start, smoothstep on [start, end], 1 after."""
    i = np.arange(n, dtype=np.float64)
    if end <= start:
        return (i >= start).astype(np.float64)
    u = np.clip((i - start) / (end - start), 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _nearest_vertex(mesh: mesh_mod.TriangleMesh, target) -> int:
    return int(np.argmin(np.linalg.norm(mesh.vertices - np.asarray(target), axis=1)))


def _yaw_matrices(angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    out = np.zeros((len(angles), 3, 3))
    out[:, 0, 0] = c
    out[:, 0, 1] = -s
    out[:, 1, 0] = s
    out[:, 1, 1] = c
    out[:, 2, 2] = 1.0
    return out


def _walk_feet(n: int, body_y: np.ndarray, walk_start: int, walk_end: int,
               step_frames: int = 6, lift: float = 0.06):
    """Alternating planted/swing foot trajectories for a +/-y body offset."""
    feet = {}
    for side, joint in (("l", 10), ("r", 11)):
        rest = motion.REST_JOINTS[joint]
        pos = np.tile(rest, (n, 1))
        planted_y = rest[1] + body_y[0]
        i = walk_start + (0 if side == "l" else step_frames // 2)
        while i < walk_end:
            s0, s1 = i, min(i + step_frames, walk_end)
            target_y = rest[1] + body_y[min(s1, n - 1)]
            u = _ramp(n, s0, s1)
            seg = slice(s0, s1 + 1)
            pos[seg, 1] = planted_y + (target_y - planted_y) * u[seg]
            swing = np.clip((np.arange(n) - s0) / max(s1 - s0, 1), 0.0, 1.0)
            pos[seg, 2] = rest[2] + lift * np.sin(np.pi * swing[seg])
            pos[s1:, 1] = target_y
            planted_y = target_y
            i += 2 * step_frames
        feet[joint] = pos
    return feet


def _hand_chain(joints: np.ndarray, palm_path: np.ndarray, side: str, body_offset: np.ndarray):
    """Place palm/wrist/elbow for one arm given the palm trajectory."""
    idx = {"l": (22, 20, 18, 16), "r": (23, 21, 19, 17)}[side]
    palm_j, wrist_j, elbow_j, shoulder_j = idx
    n = len(joints)
    shoulder = motion.REST_JOINTS[shoulder_j] + body_offset
    to_shoulder = shoulder - palm_path
    norms = np.maximum(np.linalg.norm(to_shoulder, axis=1, keepdims=True), 1e-9)
    wrist = palm_path + 0.07 * to_shoulder / norms
    out_x = 0.05 if side == "l" else -0.05
    elbow = 0.5 * (shoulder + wrist) + np.array([out_x, 0.0, 0.02])
    joints[:, palm_j] = palm_path
    joints[:, wrist_j] = wrist
    joints[:, elbow_j] = elbow


def generate_sequence(spec: ScenarioSpec) -> GeneratedSequence:
    """Build one labeled interaction sequence with its clean distance field."""
    rng = np.random.default_rng(spec.seed)
    obj_mesh = make_primitive_mesh(spec.object_kind, spec.object_dims)
    keypoints = mesh_mod.sample_object_keypoints(obj_mesh, seed=0)
    box = mesh_mod.compute_aabb(obj_mesh)
    center = box.center
    ext = box.extents
    n = spec.frames
    last = n - 1
    action = ACTION_NAMES[spec.action]

    reach_y = rng.uniform(0.42, 0.48)
    lift_h = rng.uniform(0.28, 0.36)
    move_d = rng.uniform(0.40, 0.55)
    pull_d = rng.uniform(0.10, 0.16)
    kick_d = rng.uniform(0.35, 0.50)
    start_h = rng.uniform(0.25, 0.35)

    ground_center = np.array([0.0, reach_y, ext[2] / 2.0])
    t_base = ground_center - center
    if action == "put_down":
        t_base = t_base + np.array([0.0, 0.0, start_h])

    trans = np.tile(t_base, (n, 1))
    yaw = np.zeros(n)

    fa = max(2, int(round(0.22 * last)))      # approach ends (hover pose)
    attach0 = fa + 1
    release = last
    if action == "lift":
        trans[:, 2] += lift_h * _ramp(n, attach0, int(round(0.62 * last)))
    elif action == "carry":
        w0, w1 = int(round(0.45 * last)), int(round(0.90 * last))
        trans[:, 2] += 0.15 * _ramp(n, attach0, int(round(0.40 * last)))
        trans[:, 1] += move_d * _ramp(n, w0, w1)
        yaw = np.deg2rad(20.0) * _ramp(n, w0, w1)
    elif action == "put_down":
        release = int(round(0.70 * last))
        trans[:, 2] -= start_h * _ramp(n, int(round(0.15 * last)), int(round(0.60 * last)))
    elif action == "pull":
        trans[:, 1] -= pull_d * _ramp(n, int(round(0.35 * last)), int(round(0.85 * last)))
    elif action == "kick":
        fi = int(round(0.45 * last))
        trans[:, 1] += kick_d * _ramp(n, fi, int(round(0.90 * last)))

    rot = _yaw_matrices(yaw)

    # body offset follows the object for carry/pull
    body_y = np.zeros(n)
    if action == "carry":
        body_y = move_d * _ramp(n, int(round(0.45 * last)), int(round(0.90 * last)))
    elif action == "pull":
        body_y = -pull_d * _ramp(n, int(round(0.35 * last)), int(round(0.85 * last)))
    body_offset = np.zeros((n, 3))
    body_offset[:, 1] = body_y

    joints = np.tile(motion.REST_JOINTS, (n, 1, 1)) + body_offset[:, None, :]
    if action in ("carry", "pull"):
        w0 = int(round(0.45 * last)) if action == "carry" else int(round(0.35 * last))
        w1 = int(round(0.90 * last)) if action == "carry" else int(round(0.85 * last))
        feet = _walk_feet(n, body_y, w0, w1)
        for joint, pos in feet.items():
            joints[:, joint] = pos
            ankle = 7 if joint == 10 else 8
            hip = 1 if joint == 10 else 2
            joints[:, ankle] = pos + np.array([0.0, -0.12, 0.06])
            joints[:, 5 if joint == 11 else 4] = 0.5 * (joints[:, hip] + joints[:, ankle]) + np.array([0.0, 0.04, 0.0])

    if action == "kick":
        foot_j, ankle_j, knee_j, hip_j = 11, 8, 5, 2
        target_v = obj_mesh.vertices[_nearest_vertex(obj_mesh, center + np.array([0.0, -ext[1] / 2.0, -0.2 * ext[2]]))]
        fi = int(round(0.45 * last))
        k0 = int(round(0.20 * last))
        k3 = int(round(0.75 * last))
        kick_point = target_v + trans[fi]  # object static until impact
        rest_foot = motion.REST_JOINTS[foot_j]
        up = _ramp(n, k0, fi)
        down = _ramp(n, fi + 2, k3)
        path = rest_foot[None, :] + (kick_point - rest_foot)[None, :] * np.clip(up - down, 0.0, 1.0)[:, None]
        joints[:, foot_j] = path
        joints[:, ankle_j] = path + np.array([0.0, -0.12, 0.06])
        joints[:, knee_j] = 0.5 * (joints[:, hip_j] + joints[:, ankle_j]) + np.array([0.0, 0.06, 0.0])

    # hands: approach to a hover point, snap to the grasp vertex, ride the object
    grasp_contact = action in ("lift", "carry", "put_down", "pull")
    if grasp_contact:
        left_v = obj_mesh.vertices[_nearest_vertex(obj_mesh, center + np.array([ext[0] / 2.0, 0.0, 0.45 * ext[2]]))]
        right_v = obj_mesh.vertices[_nearest_vertex(obj_mesh, center + np.array([-ext[0] / 2.0, 0.0, 0.45 * ext[2]]))]
        for side, grasp_c in (("l", left_v), ("r", right_v)):
            grasp_w = (rot @ grasp_c) + trans  # (n, 3)
            outward = grasp_c - center
            outward = outward / max(np.linalg.norm(outward), 1e-9)
            palm = np.zeros((n, 3))
            rest = motion.REST_JOINTS[22 if side == "l" else 23] + body_offset
            if action == "put_down":
                # attached from the first frame; release then retract
                palm[: release + 1] = grasp_w[: release + 1]
                hover = grasp_w[release] + 0.07 * outward
                back = _ramp(n, release + 1, last)
                palm[release + 1:] = hover + (rest[release + 1:] - hover) * back[release + 1:, None]
            else:
                hover = grasp_w[fa] + 0.07 * outward
                u = _ramp(n, 0, fa)
                palm[: attach0] = rest[: attach0] + (hover - rest[: attach0]) * u[: attach0, None]
                palm[attach0:] = grasp_w[attach0:]
            _hand_chain(joints, palm, side, body_offset)

    kp_world = motion.object_keypoints_world(keypoints.points, trans, rot)
    frames = np.zeros((n, motion.FRAME_DIM))
    frames[:, motion.JOINTS] = joints.reshape(n, 72)
    frames[:, motion.ROT6D] = np.tile(motion.IDENTITY_ROT6D, (n, motion.ROT_JOINT_COUNT))
    frames[:, motion.OBJECT_T] = trans
    frames[:, motion.OBJECT_R] = rot.reshape(n, 9)
    frames[:, motion.OBJECT_KP] = kp_world.reshape(n, 72)

    clean_idf = idf_mod.compute_idf(joints, kp_world)

    jittered = frames.copy()
    if spec.jitter > 0:
        jittered[:, motion.JOINTS] += rng.normal(0.0, spec.jitter, size=(n, 72))
    seq = motion.MotionSequence(jittered.astype(np.float32), spec.fps, spec.action)
    return GeneratedSequence(seq, frames, clean_idf, obj_mesh, keypoints)


def _allocate_labels(count: int, mix: dict[int, float] | None) -> list[int]:
    """Largest-remainder allocation of labels to match the requested mix."""
    if mix is None:
        mix = {i: 1.0 for i in range(len(ACTION_NAMES))}
    labels = sorted(mix)
    total = sum(mix[k] for k in labels)
    raw = {k: count * mix[k] / total for k in labels}
    counts = {k: int(np.floor(raw[k])) for k in labels}
    short = count - sum(counts.values())
    by_frac = sorted(labels, key=lambda k: (-(raw[k] - counts[k]), k))
    for k in by_frac[:short]:
        counts[k] += 1
    out = []
    for k in labels:
        out += [k] * counts[k]
    return out


@dataclass
class LoadedSequence:
    """One dataset entry resolved from a manifest."""

    sequence: motion.MotionSequence
    label: int
    object_kind: str
    mesh: mesh_mod.TriangleMesh
    keypoints: mesh_mod.KeyPointSet
    clean_idf: np.ndarray | None
    path: str

    def training_item(self) -> TrainingItem:
        return TrainingItem(
            frames=self.sequence.frames, label=self.label,
            canonical_keypoints=self.keypoints.points,
        )


def generate_dataset(out_dir, count: int, action_mix=None, split_ratio: float = 0.8,
                     seed: int = 0, frames: int = 24, fps: float = 20.0,
                     jitter: float = 0.005):
    """Write HOIM sequences, clean distance fields, assets, and two manifests.

    Train and test splits use disjoint per-sequence seeds. Returns the two
    manifest paths.
    """
    if count < 2:
        raise ValueError("dataset needs at least 2 sequences")
    os.makedirs(out_dir, exist_ok=True)
    asset_dir = os.path.join(out_dir, "assets")
    os.makedirs(asset_dir, exist_ok=True)

    objects = {}
    for kind in OBJECT_KINDS:
        m = make_primitive_mesh(kind, DEFAULT_DIMS[kind])
        obj_rel = os.path.join("assets", f"{kind}.obj")
        kp_rel = os.path.join("assets", f"{kind}_keypoints.json")
        mesh_mod.save_obj(m, os.path.join(out_dir, obj_rel))
        with open(os.path.join(out_dir, kp_rel), "w", encoding="utf-8") as fh:
            fh.write(mesh_mod.sample_object_keypoints(m, seed=0).to_json())
        objects[kind] = {"obj": obj_rel, "keypoints": kp_rel}

    labels = _allocate_labels(count, action_mix)
    kinds = [OBJECT_KINDS[i % len(OBJECT_KINDS)] for i in range(count)]
    order = np.random.default_rng(seed).permutation(count)
    labels = [labels[i] for i in order]

    n_train = int(round(count * split_ratio))
    n_train = min(max(n_train, 1), count - 1) if count > 1 else count
    manifests = {}
    for split, lo, hi, seed_base in (
        ("train", 0, n_train, seed * 1_000_000),
        ("test", n_train, count, seed * 1_000_000 + 500_000),
    ):
        entries = []
        for j, i in enumerate(range(lo, hi)):
            spec = ScenarioSpec(
                object_kind=kinds[i], object_dims=DEFAULT_DIMS[kinds[i]],
                action=labels[i], frames=frames, fps=fps,
                seed=seed_base + j, jitter=jitter,
            )
            gen = generate_sequence(spec)
            stem = f"{split}_{j:04d}"
            motion.save_hoim(gen.sequence, os.path.join(out_dir, f"{stem}.hoim"))
            idf_mod.save_idf(gen.idf, os.path.join(out_dir, f"{stem}.idf"))
            entries.append({
                "path": f"{stem}.hoim", "idf": f"{stem}.idf",
                "label": int(labels[i]), "object": kinds[i], "seed": int(spec.seed),
            })
        manifest = {
            "version": 1, "fps": fps, "frames": frames, "jitter": jitter,
            "objects": objects, "sequences": entries,
        }
        path = os.path.join(out_dir, f"{split}_manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
        manifests[split] = path
    return manifests["train"], manifests["test"]


def load_dataset(manifest_path) -> list[LoadedSequence]:
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    meshes = {}
    keypoints = {}
    for kind, rec in manifest["objects"].items():
        meshes[kind] = mesh_mod.load_obj(os.path.join(base, rec["obj"]))
        with open(os.path.join(base, rec["keypoints"]), "r", encoding="utf-8") as fh:
            keypoints[kind] = mesh_mod.KeyPointSet.from_json(fh.read())
    out = []
    for entry in manifest["sequences"]:
        seq_path = os.path.join(base, entry["path"])
        seq = motion.load_hoim(seq_path)
        clean = None
        if entry.get("idf"):
            idf_path = os.path.join(base, entry["idf"])
            if os.path.exists(idf_path):
                clean = idf_mod.load_idf(idf_path)
        kind = entry["object"]
        out.append(LoadedSequence(
            sequence=seq, label=int(entry["label"]), object_kind=kind,
            mesh=meshes[kind], keypoints=keypoints[kind], clean_idf=clean,
            path=seq_path,
        ))
    return out
