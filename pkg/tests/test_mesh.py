import numpy as np
import pytest

from rog import mesh, synth
from conftest import random_rotation


def _write_obj(path, mesh_obj):
    mesh.save_obj(mesh_obj, path)
    return path


class TestLoadObj:
    def test_unit_cube_read_back(self, tmp_path, unit_cube):
        path = _write_obj(tmp_path / "cube.obj", unit_cube)
        m = mesh.load_obj(path)
        assert len(m.vertices) == 8
        assert len(m.faces) == 12
        assert np.allclose(m.vertices, unit_cube.vertices)

    def test_out_of_range_index(self, tmp_path, unit_cube):
        path = tmp_path / "bad.obj"
        lines = [f"v {v[0]} {v[1]} {v[2]}" for v in unit_cube.vertices]
        lines.append("f 1 2 9")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="9"):
            mesh.load_obj(path)

    def test_icosphere_counts_match_text_scan(self, tmp_path, icosphere):
        path = _write_obj(tmp_path / "ico.obj", icosphere)
        m = mesh.load_obj(path)
        # independent oracle: raw line scan of the file
        text = path.read_text().splitlines()
        n_v = sum(1 for line in text if line.startswith("v "))
        n_f = sum(1 for line in text if line.startswith("f "))
        assert (n_v, n_f) == (42, 80)
        assert len(m.vertices) == n_v
        assert len(m.faces) == n_f

    def test_non_triangle_face_rejected(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(ValueError, match="triangle"):
            mesh.load_obj(path)

    def test_unsupported_record_rejected(self, tmp_path):
        path = tmp_path / "vn.obj"
        path.write_text("v 0 0 0\nvn 0 0 1\n")
        with pytest.raises(ValueError, match="vn"):
            mesh.load_obj(path)

    def test_error_carries_line_number(self, tmp_path):
        path = tmp_path / "badv.obj"
        path.write_text("v 0 0 0\nv 1 0 zero\n")
        with pytest.raises(ValueError, match=":2"):
            mesh.load_obj(path)


class TestAabb:
    def test_unit_cube(self, unit_cube):
        box = mesh.compute_aabb(unit_cube)
        assert np.allclose(box.min_corner, [0, 0, 0])
        assert np.allclose(box.max_corner, [1, 1, 1])

    def test_tetrahedron(self):
        verts = np.array([[0, 0, 0], [2, 0, 0], [0, 3, 0], [0, 0, 4.0]])
        faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
        m = mesh.TriangleMesh(verts, faces)
        box = mesh.compute_aabb(m)
        assert np.allclose(box.min_corner, verts.min(axis=0))
        assert np.allclose(box.max_corner, verts.max(axis=0))

    def test_shifted_icosphere_brute_force(self, icosphere):
        shifted = icosphere.transformed(np.eye(3), [2.0, 0.0, 0.0])
        box = mesh.compute_aabb(shifted)
        # brute-force scan oracle
        assert np.allclose(box.min_corner, shifted.vertices.min(axis=0))
        assert np.abs(box.min_corner - [1, -1, -1]).max() < 1e-6
        assert np.abs(box.max_corner - [3, 1, 1]).max() < 1e-6


class TestCornerNearest:
    def test_unit_cube_corners(self, unit_cube):
        box = mesh.compute_aabb(unit_cube)
        pts = mesh.corner_nearest_points(unit_cube, box)
        assert sorted(map(tuple, pts)) == sorted(map(tuple, box.corners()))

    def test_icosphere_corner_vs_exhaustive_scan(self, icosphere):
        box = mesh.compute_aabb(icosphere)
        pts = mesh.corner_nearest_points(icosphere, box)
        corner = np.array([1.0, 1.0, 1.0])
        # exhaustive oracle over the vertex set
        d = np.linalg.norm(icosphere.vertices - corner, axis=1)
        expected = icosphere.vertices[np.argmin(d)]
        # (1,1,1) is the lexicographically largest corner, so it is last
        assert np.allclose(pts[-1], expected)

    def test_duplicate_protection(self):
        verts = np.array([
            [0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10],
            [10, 10, 9], [1, 1, 1], [2, 2, 2], [3, 3, 3],
        ], dtype=float)
        faces = np.array([[0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4, 5], [0, 4, 6], [1, 5, 7]])
        m = mesh.TriangleMesh(verts, faces)
        box = mesh.compute_aabb(m)
        pts = mesh.corner_nearest_points(m, box)
        # vertex (10,10,9) is nearest to both (10,10,0) and (10,10,10)
        assert len({tuple(p) for p in pts}) == 8
        # greedy-with-exclusion oracle, corner by corner
        used: list[int] = []
        for corner in box.corners():
            d = np.linalg.norm(verts - corner, axis=1)
            order = np.argsort(d, kind="stable")
            used.append(next(i for i in order if i not in used))
        assert np.allclose(pts, verts[used])

    def test_too_few_vertices(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
        faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
        m = mesh.TriangleMesh(verts, faces)
        with pytest.raises(ValueError, match="8"):
            mesh.corner_nearest_points(m, mesh.compute_aabb(m))


class TestPoissonDisk:
    def test_spacing_brute_force(self, unit_cube):
        box = mesh.compute_aabb(unit_cube)
        corners = mesh.corner_nearest_points(unit_cube, box)
        pts, r = mesh.poisson_disk_sample(unit_cube, 16, exclude=corners, seed=0)
        assert pts.shape == (16, 3)
        assert r > 0
        everything = np.vstack([pts, corners])
        for i in range(16):
            for j in range(len(everything)):
                if j == i:
                    continue
                assert np.linalg.norm(pts[i] - everything[j]) >= r - 1e-12

    def test_deterministic(self, unit_cube):
        a, ra = mesh.poisson_disk_sample(unit_cube, 16, seed=7)
        b, rb = mesh.poisson_disk_sample(unit_cube, 16, seed=7)
        assert ra == rb
        assert np.array_equal(a, b)

    def test_degenerate_tiny_mesh_errors(self):
        # a single tiny triangle cannot even form a valid mesh (vertex count)
        verts = np.array([[0, 0, 0], [1.5e-5, 0, 0], [0, 1.33e-5, 0]])
        with pytest.raises(ValueError):
            mesh.TriangleMesh(verts, np.array([[0, 1, 2]]))

    def test_placement_failure_at_radius_floor(self, unit_cube):
        # no darts allowed: the schedule bottoms out and reports failure
        with pytest.raises(RuntimeError, match="radius floor"):
            mesh.poisson_disk_sample(unit_cube, 16, seed=0, attempts_per_point=0, floor_ratio=1.0)


class TestObjectKeypoints:
    def test_cube_corners_first(self, unit_cube):
        kps = mesh.sample_object_keypoints(unit_cube, seed=0)
        box = mesh.compute_aabb(unit_cube)
        assert np.allclose(kps.points[:8], box.corners())

    def test_counts_and_provenance(self, icosphere):
        kps = mesh.sample_object_keypoints(icosphere, seed=1)
        assert kps.points.shape == (24, 3)
        assert kps.provenance[:8] == (mesh.CORNER_TAG,) * 8
        assert kps.provenance[8:] == (mesh.POISSON_TAG,) * 16

    def test_points_on_surface(self, icosphere):
        kps = mesh.sample_object_keypoints(icosphere, seed=7)
        a, b, c = icosphere.triangle_corners()
        d = mesh.point_triangle_distances(kps.points, a, b, c).min(axis=1)
        assert d.max() < 1e-9

    def test_rigidity_under_axis_aligned_rotation(self, unit_cube):
        # 90 degrees about z plus a translation
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        t = np.array([0.3, -1.2, 2.0])
        moved = unit_cube.transformed(rot, t)
        kp0 = mesh.sample_object_keypoints(unit_cube, seed=4)
        kp1 = mesh.sample_object_keypoints(moved, seed=4)
        expected = kp0.points @ rot.T + t
        # corner order follows the rotated lexicographic order: compare as sets
        def canon(pts):
            return np.array(sorted(map(tuple, np.round(pts, 9))))
        assert np.abs(canon(kp1.points[:8]) - canon(expected[:8])).max() < 1e-6
        assert np.abs(kp1.points[8:] - expected[8:]).max() < 1e-6

    def test_pds_spacing_all_poisson_pairs(self, unit_cube):
        kps = mesh.sample_object_keypoints(unit_cube, seed=3)
        r = kps.radius
        pts = kps.points
        for i in range(24):
            for j in range(i + 1, 24):
                if kps.provenance[i] == mesh.POISSON_TAG or kps.provenance[j] == mesh.POISSON_TAG:
                    assert np.linalg.norm(pts[i] - pts[j]) >= r - 1e-12

    def test_json_round_trip(self, unit_cube):
        kps = mesh.sample_object_keypoints(unit_cube, seed=0)
        restored = mesh.KeyPointSet.from_json(kps.to_json())
        assert np.allclose(restored.points, kps.points)
        assert restored.provenance == kps.provenance
        assert restored.seed == kps.seed


class TestSdf:
    def test_cube_center_node(self, unit_cube):
        grid = mesh.build_sdf_grid(unit_cube, resolution=24, padding=0.2)
        val = mesh.sdf_query(grid, [0.5, 0.5, 0.5])
        assert abs(val - (-0.5)) < grid.cell_size

    def test_node_one_meter_outside(self, unit_cube):
        grid = mesh.build_sdf_grid(unit_cube, resolution=32, padding=1.1)
        val = mesh.sdf_query(grid, [2.0, 0.5, 0.5])
        assert abs(val - 1.0) < grid.cell_size

    def test_icosphere_vs_analytic(self, icosphere):
        grid = mesh.build_sdf_grid(icosphere, resolution=24, padding=0.3)
        res = grid.values.shape
        axes = [grid.origin[k] + grid.cell_size * np.arange(res[k]) for k in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        analytic = np.linalg.norm(nodes, axis=1) - 1.0
        # mesh surface sits inside the sphere by the chord sagitta
        a, b, c = icosphere.triangle_corners()
        chord_err = 1.0 - mesh.point_triangle_distances(np.zeros((1, 3)), a, b, c).min()
        err = np.abs(grid.values.ravel() - analytic)
        assert err.max() < grid.cell_size + chord_err + 1e-9

    def test_query_at_exact_node(self, unit_cube):
        grid = mesh.build_sdf_grid(unit_cube, resolution=16, padding=0.2)
        node = grid.origin + grid.cell_size * np.array([3, 4, 5])
        assert abs(mesh.sdf_query(grid, node) - grid.values[3, 4, 5]) < 1e-12

    def test_query_midpoint_is_mean(self, unit_cube):
        grid = mesh.build_sdf_grid(unit_cube, resolution=16, padding=0.2)
        p0 = grid.origin + grid.cell_size * np.array([3, 4, 5])
        p1 = grid.origin + grid.cell_size * np.array([4, 4, 5])
        mid = 0.5 * (p0 + p1)
        expected = 0.5 * (grid.values[3, 4, 5] + grid.values[4, 4, 5])
        assert abs(mesh.sdf_query(grid, mid) - expected) < 1e-12

    def test_random_queries_vs_exact_oracle(self, unit_cube):
        grid = mesh.build_sdf_grid(unit_cube, resolution=32, padding=0.2)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.15, 1.15, size=(100, 3))
        a, b, c = unit_cube.triangle_corners()
        exact = mesh.point_triangle_distances(pts, a, b, c).min(axis=1)
        inside = np.all((pts > 0) & (pts < 1), axis=1)
        exact[inside] *= -1.0
        approx = mesh.sdf_query(grid, pts)
        assert np.abs(approx - exact).max() < grid.cell_size

    def test_sign_against_ray_parity(self, unit_cube):
        grid = mesh.build_sdf_grid(unit_cube, resolution=32, padding=0.3)
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.25, 1.25, size=(1000, 3))
        inside = np.all((pts > 0) & (pts < 1), axis=1)
        a, b, c = unit_cube.triangle_corners()
        dist = mesh.point_triangle_distances(pts, a, b, c).min(axis=1)
        clear = dist > grid.cell_size  # interpolation can flip signs near the surface
        vals = mesh.sdf_query(grid, pts)
        assert np.all((vals[clear] < 0) == inside[clear])

    def test_open_mesh_rejected(self, unit_cube):
        open_mesh = mesh.TriangleMesh(unit_cube.vertices, unit_cube.faces[:-1])
        with pytest.raises(ValueError, match="edge"):
            mesh.build_sdf_grid(open_mesh, resolution=8)

    def test_resolution_bounds(self, unit_cube):
        with pytest.raises(ValueError):
            mesh.build_sdf_grid(unit_cube, resolution=4)


def test_transform_roundtrip(unit_cube):
    rng = np.random.default_rng(5)
    rot = random_rotation(rng)
    t = rng.normal(size=3)
    moved = unit_cube.transformed(rot, t)
    back = moved.transformed(rot.T, -rot.T @ t)
    assert np.abs(back.vertices - unit_cube.vertices).max() < 1e-12
