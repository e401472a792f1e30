"""Triangle-mesh geometry: OBJ I/O, bounding boxes, surface keypoint
sampling, and signed-distance grids.

Meshes are plain vertex/face arrays in meters. The 24 object keypoints are
the 8 surface vertices nearest the bounding-box corners plus 16 Poisson-disk
samples on the triangle surfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CORNER_TAG = "corner-nearest"
POISSON_TAG = "poisson"

MIN_FACE_AREA = 1e-12  # m^2, faces below this are degenerate


@dataclass
class TriangleMesh:
    """Triangle surface mesh. vertices: (V, 3) float, faces: (F, 3) int."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must have shape (F, 3)")
        if len(self.vertices) < 4:
            raise ValueError(
                f"mesh needs at least 4 vertices, got {len(self.vertices)}"
            )
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh vertices contain non-finite values")
        if self.faces.size:
            bad_rows = np.any((self.faces < 0) | (self.faces >= len(self.vertices)), axis=1)
            if bad_rows.any():
                raise ValueError(f"face {int(np.argmax(bad_rows))} references a vertex out of range")
        areas = self.face_areas()
        if np.any(areas <= MIN_FACE_AREA):
            bad = int(np.argmin(areas))
            raise ValueError(f"face {bad} is degenerate (area {areas[bad]:.3g} m^2)")

    def triangle_corners(self):
        """Per-face corner positions as three (F, 3) arrays."""
        v = self.vertices
        f = self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def face_areas(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def transformed(self, rotation, translation) -> "TriangleMesh":
        """Rigidly transformed copy: v -> R v + t."""
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)
        return TriangleMesh(self.vertices @ rotation.T + translation, self.faces.copy())


@dataclass
class Aabb:
    """Axis-aligned bounding box, min_corner <= max_corner componentwise."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        self.min_corner = np.asarray(self.min_corner, dtype=np.float64)
        self.max_corner = np.asarray(self.max_corner, dtype=np.float64)
        if np.any(self.min_corner > self.max_corner):
            raise ValueError("AABB min_corner exceeds max_corner")

    def corners(self) -> np.ndarray:
        """The 8 box corners in ascending lexicographic (x, y, z) order."""
        lo, hi = self.min_corner, self.max_corner
        return np.array(
            [(x, y, z) for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
        )

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def extents(self) -> np.ndarray:
        return self.max_corner - self.min_corner


@dataclass
class KeyPointSet:
    """24 object keypoints in the canonical (object-local) frame.

    The first 8 points are tagged corner-nearest, the remaining 16 poisson.
    ``radius`` is the Poisson-disk spacing actually achieved (not serialized).
    """

    points: np.ndarray
    provenance: tuple
    seed: int
    radius: float | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.provenance = tuple(self.provenance)
        if self.points.shape != (24, 3):
            raise ValueError(f"expected 24 x 3 keypoints, got {self.points.shape}")
        if len(self.provenance) != 24:
            raise ValueError("provenance must have 24 entries")
        if self.provenance.count(CORNER_TAG) != 8 or self.provenance.count(POISSON_TAG) != 16:
            raise ValueError("provenance must be 8 corner-nearest + 16 poisson tags")

    def to_json(self) -> str:
        payload = {
            "points": [[float(c) for c in p] for p in self.points],
            "provenance": list(self.provenance),
            "seed": int(self.seed),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "KeyPointSet":
        payload = json.loads(text)
        return cls(
            points=np.array(payload["points"], dtype=np.float64),
            provenance=tuple(payload["provenance"]),
            seed=int(payload["seed"]),
        )


@dataclass
class SignedDistanceGrid:
    """Regular grid of signed distances, negative inside the surface."""

    origin: np.ndarray
    cell_size: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("SDF values must be a 3-d grid")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")

    @property
    def resolution(self):
        return self.values.shape


def load_obj(path) -> TriangleMesh:
    """Load a Wavefront OBJ restricted to `v x y z` and `f i j k` records.

    Faces must be triangles with plain 1-based vertex indices. Blank lines
    and `#` comments are tolerated; any other record type is an error.
    """
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: vertex record needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:]])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: only triangle faces are supported")
                try:
                    idx = [int(x) for x in parts[1:]]
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: face indices must be plain integers") from exc
                for i in idx:
                    if i < 1:
                        raise ValueError(f"{path}:{lineno}: vertex index {i} out of range")
                faces.append([i - 1 for i in idx])
            else:
                raise ValueError(f"{path}:{lineno}: unsupported record '{parts[0]}'")
    if faces:
        fmax = max(max(f) for f in faces)
        if fmax >= len(vertices):
            raise ValueError(
                f"{path}: face references vertex {fmax + 1} but file has {len(vertices)} vertices"
            )
    return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int64))


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write the v/f OBJ subset (1-based indices, deterministic bytes)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def compute_aabb(mesh: TriangleMesh) -> Aabb:
    """Smallest axis-aligned box enclosing the mesh vertices."""
    return Aabb(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


def corner_nearest_points(mesh: TriangleMesh, box: Aabb) -> np.ndarray:
    """For each of the 8 box corners, the nearest mesh vertex.

    Selected vertices are pairwise distinct: corners are processed in
    ascending lexicographic order and a vertex already claimed by an earlier
    corner falls through to the next-nearest unused one. Ties break toward
    the lowest vertex index.
    """
    if len(mesh.vertices) < 8:
        raise ValueError(f"corner-nearest search needs >= 8 vertices, got {len(mesh.vertices)}")
    corners = box.corners()
    chosen = []
    used = np.zeros(len(mesh.vertices), dtype=bool)
    for corner in corners:
        d = np.linalg.norm(mesh.vertices - corner, axis=1)
        d[used] = np.inf
        idx = int(np.argmin(d))
        used[idx] = True
        chosen.append(idx)
    return mesh.vertices[chosen].copy()


def _sample_on_triangles(mesh: TriangleMesh, rng: np.random.Generator, count: int) -> np.ndarray:
    """count uniform surface samples: area-weighted triangle, then barycentric."""
    areas = mesh.face_areas()
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    a, b, c = mesh.triangle_corners()
    tri = np.searchsorted(cdf, rng.random(count), side="left")
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return a[tri] + u[:, None] * (b[tri] - a[tri]) + v[:, None] * (c[tri] - a[tri])


def poisson_disk_sample(
    mesh: TriangleMesh,
    count: int = 16,
    exclude=None,
    seed: int = 0,
    attempts_per_point: int = 30,
    shrink: float = 0.9,
    floor_ratio: float = 0.01,
):
    """Dart-throwing Poisson-disk sampling on the mesh surface.

    Returns ``(points, radius)`` where all pairwise distances among the
    samples, and between samples and excluded points, are >= radius. The
    radius starts at sqrt(area / (2 * 24 * pi)) and shrinks by ``shrink``
    whenever a full round of ``attempts_per_point * count`` darts fails,
    down to a floor of ``floor_ratio`` times the initial radius.
    """
    area = mesh.surface_area()
    if area <= 0:
        raise ValueError("mesh surface area must be positive")
    exclude = (
        np.zeros((0, 3)) if exclude is None else np.asarray(exclude, dtype=np.float64).reshape(-1, 3)
    )
    r0 = float(np.sqrt(area / (2.0 * 24.0 * np.pi)))
    rng = np.random.default_rng(seed)
    radius = r0
    max_attempts = attempts_per_point * count
    while True:
        accepted = np.zeros((0, 3))
        attempts = 0
        while len(accepted) < count and attempts < max_attempts:
            attempts += 1
            p = _sample_on_triangles(mesh, rng, 1)[0]
            others = np.vstack([accepted, exclude])
            if len(others) and np.min(np.linalg.norm(others - p, axis=1)) < radius:
                continue
            accepted = np.vstack([accepted, p[None]])
        if len(accepted) == count:
            return accepted, radius
        if radius <= r0 * floor_ratio:
            raise RuntimeError(
                f"could not place {count} Poisson-disk samples even at the radius floor "
                f"({r0 * floor_ratio:.3g} m); mesh is degenerate"
            )
        radius *= shrink


def sample_object_keypoints(mesh: TriangleMesh, seed: int = 0) -> KeyPointSet:
    """The 24 canonical object keypoints: 8 corner-nearest then 16 Poisson."""
    box = compute_aabb(mesh)
    corner_pts = corner_nearest_points(mesh, box)
    poisson_pts, radius = poisson_disk_sample(mesh, count=16, exclude=corner_pts, seed=seed)
    points = np.vstack([corner_pts, poisson_pts])
    provenance = (CORNER_TAG,) * 8 + (POISSON_TAG,) * 16
    return KeyPointSet(points=points, provenance=provenance, seed=seed, radius=radius)


def point_triangle_distances(points, tri_a, tri_b, tri_c) -> np.ndarray:
    """Exact distances from each point to each triangle, shape (P, F).

    The closest point is the in-plane projection when its barycentric
    coordinates are all nonnegative, otherwise the nearest point on one of
    the three edges.
    """
    p = np.asarray(points, dtype=np.float64)[:, None, :]  # (P, 1, 3)
    a = np.asarray(tri_a, dtype=np.float64)[None, :, :]  # (1, F, 3)
    b = np.asarray(tri_b, dtype=np.float64)[None, :, :]
    c = np.asarray(tri_c, dtype=np.float64)[None, :, :]

    def seg_dist2(s0, s1):
        d = s1 - s0
        t = np.sum((p - s0) * d, axis=-1) / np.maximum(np.sum(d * d, axis=-1), 1e-300)
        t = np.clip(t, 0.0, 1.0)
        closest = s0 + t[..., None] * d
        return np.sum((p - closest) ** 2, axis=-1)

    e0 = b - a
    e1 = c - a
    w = p - a
    d00 = np.sum(e0 * e0, axis=-1)
    d01 = np.sum(e0 * e1, axis=-1)
    d11 = np.sum(e1 * e1, axis=-1)
    d20 = np.sum(w * e0, axis=-1)
    d21 = np.sum(w * e1, axis=-1)
    denom = np.maximum(d00 * d11 - d01 * d01, 1e-300)
    v = (d11 * d20 - d01 * d21) / denom
    u = (d00 * d21 - d01 * d20) / denom
    inside = (v >= 0.0) & (u >= 0.0) & (v + u <= 1.0)

    foot = a + v[..., None] * e0 + u[..., None] * e1
    plane_d2 = np.sum((p - foot) ** 2, axis=-1)
    edge_d2 = np.minimum(np.minimum(seg_dist2(a, b), seg_dist2(b, c)), seg_dist2(c, a))
    return np.sqrt(np.where(inside, plane_d2, edge_d2))


def _check_watertight(mesh: TriangleMesh) -> None:
    """Every undirected edge must be shared by exactly two faces."""
    edges = {}
    for f in mesh.faces:
        for i, j in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (min(i, j), max(i, j))
            edges[key] = edges.get(key, 0) + 1
    for (i, j), n in edges.items():
        if n != 2:
            raise ValueError(
                f"mesh is not watertight: edge ({i}, {j}) belongs to {n} face(s), expected 2"
            )


# Fixed ray directions for the parity test; irrational-looking components make
# hits on edges or vertices of typical meshes vanishingly unlikely.
_RAY_DIRS = (
    np.array([0.5424736283095, 0.7137866767071, 0.4432846902868]),
    np.array([-0.3623748812408, 0.5893567103421, 0.7220096983791]),
)


def _ray_parity_inside(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Boolean inside/outside per point via ray-crossing parity."""
    inside = np.zeros(len(points), dtype=bool)
    if len(points) == 0:
        return inside
    a, b, c = mesh.triangle_corners()
    e1 = (b - a)[None]
    e2 = (c - a)[None]
    pending = np.arange(len(points))
    for d in _RAY_DIRS:
        if pending.size == 0:
            break
        p = points[pending][:, None, :]
        h = np.cross(np.broadcast_to(d, e2.shape), e2)
        det = np.sum(e1 * h, axis=-1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = p - a[None]
        u = np.sum(s * h, axis=-1) * inv
        q = np.cross(s, np.broadcast_to(e1, s.shape))
        v = np.sum(np.broadcast_to(d, q.shape) * q, axis=-1) * inv
        t = np.sum(np.broadcast_to(e2, q.shape) * q, axis=-1) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
        # A hit grazing an edge or vertex would double count; re-cast those
        # points along the next direction instead.
        margin = np.minimum(np.minimum(u, v), 1.0 - u - v)
        suspicious = np.any(hit & (margin < 1e-9), axis=1)
        counts = hit.sum(axis=1)
        settled = ~suspicious
        inside[pending[settled]] = counts[settled] % 2 == 1
        pending = pending[suspicious]
    if pending.size:
        # Both directions grazed; accept the last parity rather than failing.
        inside[pending] = counts[suspicious] % 2 == 1
    return inside


def build_sdf_grid(mesh: TriangleMesh, resolution: int = 32, padding: float = 0.1) -> SignedDistanceGrid:
    """Signed-distance samples on a regular grid around the mesh.

    Node values are exact point-to-triangle distances, negated inside the
    (watertight) surface per a ray-parity test. ``resolution`` counts nodes
    along the longest padded axis; every axis gets at least 8 nodes.
    """
    if not 8 <= resolution <= 256:
        raise ValueError("resolution must be in [8, 256]")
    _check_watertight(mesh)
    box = compute_aabb(mesh)
    lo = box.min_corner - padding
    hi = box.max_corner + padding
    extent = hi - lo
    cell = float(extent.max() / (resolution - 1))
    res = np.maximum(np.ceil(extent / cell).astype(int) + 1, 8)
    axes = [lo[k] + cell * np.arange(res[k]) for k in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    a, b, c = mesh.triangle_corners()
    dist = np.empty(len(nodes))
    chunk = max(1, 2_000_000 // max(len(mesh.faces), 1))
    for start in range(0, len(nodes), chunk):
        sl = slice(start, start + chunk)
        dist[sl] = point_triangle_distances(nodes[sl], a, b, c).min(axis=1)
    inside = _ray_parity_inside(nodes, mesh)
    dist[inside] *= -1.0
    return SignedDistanceGrid(origin=lo, cell_size=cell, values=dist.reshape(res))


def sdf_query(grid: SignedDistanceGrid, points) -> np.ndarray:
    """Trilinear interpolation of grid values; points outside clamp to the boundary."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    res = np.array(grid.values.shape)
    u = (pts - grid.origin) / grid.cell_size
    u = np.clip(u, 0.0, res - 1)
    i0 = np.minimum(u.astype(int), res - 2)
    f = u - i0
    out = np.zeros(len(pts))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (f[:, 0] if dx else 1 - f[:, 0])
                    * (f[:, 1] if dy else 1 - f[:, 1])
                    * (f[:, 2] if dz else 1 - f[:, 2])
                )
                out += w * grid.values[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out[0] if single else out
