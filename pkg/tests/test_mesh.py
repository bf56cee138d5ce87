"""Mesh loading, camera projection and bilinear sampling."""

import numpy as np
import pytest

from meshmotion.mesh import (
    Camera,
    Mesh,
    MeshFormatError,
    bilinear_sample,
    load_mesh,
    project_point,
    project_points,
    save_mesh,
)
from meshmotion.validation import as_float_array, check_finite

CUBE_OBJ = """\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 2 3
f 1 3 4
f 5 7 6
f 5 8 7
f 1 6 2
f 1 5 6
f 2 7 3
f 2 6 7
f 3 8 4
f 3 7 8
f 4 5 1
f 4 8 5
"""


def write(tmp_path, text, name="mesh.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadMesh:
    def test_single_triangle(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_mesh(p)
        assert mesh.n_vertices == 3
        assert mesh.n_faces == 1
        assert np.array_equal(mesh.faces, [[0, 1, 2]])

    def test_face_index_out_of_range(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 5\n")
        with pytest.raises(MeshFormatError, match="face 0"):
            load_mesh(p)

    def test_cube_counts(self, tmp_path):
        mesh = load_mesh(write(tmp_path, CUBE_OBJ))
        assert mesh.n_vertices == 8
        assert mesh.n_faces == 12
        # every cube face triangle must be non-degenerate
        v = mesh.vertices
        for f in mesh.faces:
            area = np.linalg.norm(np.cross(v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]))
            assert area > 0

    def test_quads_rejected(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(MeshFormatError, match="triangles only"):
            load_mesh(p)

    def test_ignored_lines_and_slash_indices(self, tmp_path):
        text = (
            "# header\nvt 0.5 0.5\nvn 0 0 1\no thing\n"
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n"
        )
        mesh = load_mesh(write(tmp_path, text))
        assert mesh.n_faces == 1

    def test_bad_vertex_coordinate(self, tmp_path):
        p = write(tmp_path, "v 0 zero 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        with pytest.raises(MeshFormatError, match=":1:"):
            load_mesh(p)

    def test_unknown_tag(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nq 1 2 3\n")
        with pytest.raises(MeshFormatError, match="unknown line tag"):
            load_mesh(p)

    def test_zero_index_rejected(self, tmp_path):
        p = write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
        with pytest.raises(MeshFormatError, match="1-based"):
            load_mesh(p)

    def test_no_faces(self, tmp_path):
        with pytest.raises(MeshFormatError, match="no faces"):
            load_mesh(write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\n"))

    def test_save_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        mesh = Mesh(rng.standard_normal((10, 3)) * 1e3, [[0, 1, 2], [3, 4, 5], [6, 7, 8]])
        path = tmp_path / "roundtrip.obj"
        save_mesh(mesh, path)
        back = load_mesh(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.faces, mesh.faces)


class TestMeshInvariants:
    def test_repeated_index_names_face(self):
        with pytest.raises(ValueError, match="face 1"):
            Mesh(np.eye(3), [[0, 1, 2], [1, 1, 2]])

    def test_too_few_vertices(self):
        with pytest.raises(ValueError):
            Mesh(np.zeros((2, 3)), [[0, 1, 0]])

    def test_no_faces(self):
        with pytest.raises(ValueError):
            Mesh(np.eye(3), np.zeros((0, 3), dtype=np.int64))

    def test_index_out_of_range(self):
        with pytest.raises(ValueError, match="face 0"):
            Mesh(np.eye(3), [[0, 1, 3]])

    def test_immutable_arrays(self):
        mesh = Mesh(np.eye(3), [[0, 1, 2]])
        with pytest.raises((ValueError, RuntimeError)):
            mesh.vertices[0, 0] = 5.0

    def test_with_vertices_and_bbox(self):
        mesh = Mesh(np.eye(3), [[0, 1, 2]])
        moved = mesh.with_vertices(mesh.vertices + 1.0)
        assert np.allclose(moved.vertices, mesh.vertices + 1.0)
        assert moved.faces is mesh.faces or np.array_equal(moved.faces, mesh.faces)
        # unit simplex corners: extent (1,1,1)
        assert mesh.bbox_diagonal() == pytest.approx(np.sqrt(3.0))


class TestCamera:
    def test_validation(self):
        with pytest.raises(ValueError):
            Camera(fx=-1, fy=1, cx=0, cy=0, width=4, height=4)
        with pytest.raises(ValueError):
            Camera(fx=1, fy=1, cx=0, cy=0, width=0, height=4)
        with pytest.raises(ValueError):
            Camera(fx=1, fy=1, cx=0, cy=0, width=4, height=4, rotation=np.eye(3) * 2)

    def test_to_camera(self):
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        cam = Camera(1, 1, 0, 0, 4, 4, rotation=rot, translation=np.array([1.0, 2.0, 3.0]))
        out = cam.to_camera(np.array([1.0, 0.0, 0.0]))
        assert np.allclose(out, [1.0, 3.0, 3.0])

    def test_scaled_matches_scaled_pixels(self):
        cam = Camera(900, 800, 64, 32, 128, 64)
        feat = cam.scaled(0.125, 0.125, 16, 8)
        p = np.array([0.3, -0.2, 2.0])
        full = project_point(cam, p)
        small = project_point(feat, p)
        assert small.x == pytest.approx(full.x * 0.125, abs=1e-12)
        assert small.y == pytest.approx(full.y * 0.125, abs=1e-12)
        assert small.depth == full.depth


class TestProjectPoint:
    def test_optical_axis(self):
        cam = Camera(1, 1, 0, 0, 4, 4)
        ip = project_point(cam, (0.0, 0.0, 1.0))
        assert (ip.x, ip.y, ip.depth) == (0.0, 0.0, 1.0)

    def test_similar_triangles(self):
        cam = Camera(1, 1, 0, 0, 4, 4)
        ip = project_point(cam, (2.0, 0.0, 2.0))
        assert (ip.x, ip.y, ip.depth) == (1.0, 0.0, 2.0)

    def test_translated_camera(self):
        # camera moved to (0, 0, -3): world->camera translation is (0, 0, 3)
        fx, fy, cx, cy = 35.0, 45.0, 7.0, 9.0
        cam = Camera(fx, fy, cx, cy, 64, 64, translation=np.array([0.0, 0.0, 3.0]))
        ip = project_point(cam, (1.0, 1.0, 0.0))
        assert ip.x == pytest.approx(fx / 3 + cx, abs=1e-12)
        assert ip.y == pytest.approx(fy / 3 + cy, abs=1e-12)
        assert ip.depth == pytest.approx(3.0)

    def test_behind_camera(self):
        cam = Camera(1, 1, 0, 0, 4, 4)
        with pytest.raises(ValueError, match="behind the camera"):
            project_point(cam, (0.0, 0.0, -1.0))

    def test_similarity_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            t = rng.standard_normal(3)
            cam = Camera(
                fx=rng.uniform(0.5, 100),
                fy=rng.uniform(0.5, 100),
                cx=rng.uniform(-10, 10),
                cy=rng.uniform(-10, 10),
                width=8,
                height=8,
                translation=t,
            )
            p = rng.standard_normal(3)
            if cam.to_camera(p)[2] <= 0.1:
                p[2] += 5.0 - t[2]  # push in front of this camera
            s = rng.uniform(0.1, 10.0)
            scaled_cam = Camera(
                cam.fx, cam.fy, cam.cx, cam.cy, 8, 8, translation=s * t
            )
            a = project_point(cam, p)
            b = project_point(scaled_cam, s * p)
            assert abs(a.x - b.x) <= 1e-6 * max(1.0, abs(a.x))
            assert abs(a.y - b.y) <= 1e-6 * max(1.0, abs(a.y))
            assert b.depth == pytest.approx(s * a.depth, rel=1e-9)


class TestProjectPoints:
    def test_matches_scalar_projection(self):
        rng = np.random.default_rng(5)
        cam = Camera(50, 60, 2, 3, 8, 8, translation=np.array([0.0, 0.0, 4.0]))
        pts = rng.standard_normal((40, 3))
        xy, z = project_points(cam, pts)
        for i in range(40):
            ip = project_point(cam, pts[i])
            assert xy[i, 0] == ip.x and xy[i, 1] == ip.y and z[i] == ip.depth

    def test_behind_camera_nan(self):
        cam = Camera(1, 1, 0, 0, 4, 4)
        xy, z = project_points(cam, np.array([[0.0, 0.0, -2.0], [0.0, 0.0, 2.0]]))
        assert np.isnan(xy[0]).all()
        assert np.isfinite(xy[1]).all()
        assert z[0] == -2.0 and z[1] == 2.0


class TestBilinearSample:
    def test_exact_at_integer_location(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((4, 5, 3))
        assert np.array_equal(bilinear_sample(m, (2.0, 3.0)), m[3, 2])

    def test_midpoint_average(self):
        m = np.zeros((2, 2, 1))
        m[0, 0, 0] = 1.0
        m[0, 1, 0] = 3.0
        assert bilinear_sample(m, (0.5, 0.0))[0] == pytest.approx(2.0)

    def test_clamp_to_corner(self):
        rng = np.random.default_rng(1)
        m = rng.standard_normal((3, 3, 2))
        assert np.array_equal(bilinear_sample(m, (-5.0, -5.0)), m[0, 0])
        assert np.array_equal(bilinear_sample(m, (99.0, 99.0)), m[2, 2])

    def test_2d_map_supported(self):
        m = np.arange(6.0).reshape(2, 3)
        out = bilinear_sample(m, (1.0, 1.0))
        assert out.shape == (1,)
        assert out[0] == 4.0

    def test_affine_exactness(self):
        rng = np.random.default_rng(7)
        h, w = 6, 9
        a, b, c = rng.standard_normal(3)
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        m = (a * ii + b * jj + c)[:, :, None]
        for _ in range(50):
            x = rng.uniform(0, w - 1)
            y = rng.uniform(0, h - 1)
            expect = a * y + b * x + c
            assert bilinear_sample(m, (x, y))[0] == pytest.approx(expect, abs=1e-6)

    def test_lipschitz_bound(self):
        rng = np.random.default_rng(9)
        m = rng.standard_normal((5, 7, 2))
        spread = max(
            np.abs(np.diff(m, axis=0)).max(), np.abs(np.diff(m, axis=1)).max()
        )
        for _ in range(100):
            l1 = rng.uniform([-1, -1], [7, 5])
            l2 = rng.uniform([-1, -1], [7, 5])
            d = np.abs(bilinear_sample(m, l1) - bilinear_sample(m, l2)).max()
            budget = (abs(l1[0] - l2[0]) + abs(l1[1] - l2[1])) * spread
            assert d <= budget + 1e-12

    def test_convex_range(self):
        rng = np.random.default_rng(13)
        m = rng.standard_normal((4, 4, 1))
        for _ in range(50):
            v = bilinear_sample(m, rng.uniform(-2, 6, size=2))[0]
            assert m.min() - 1e-12 <= v <= m.max() + 1e-12


class TestValidationHelpers:
    def test_as_float_array_shape_wildcard(self):
        out = as_float_array([[1, 2], [3, 4]], "x", shape=(-1, 2))
        assert out.dtype == np.float64
        with pytest.raises(ValueError, match="x"):
            as_float_array([[1, 2]], "x", shape=(-1, 3))

    def test_check_finite(self):
        with pytest.raises(ValueError, match="finite"):
            check_finite(np.array([1.0, np.nan]), "vals")
