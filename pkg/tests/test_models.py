"""Animation models: rotations, LBS, blendshapes, Poisson deformation."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from meshmotion.autodiff import (
    Tape,
    backward,
    finite_diff_check,
    mul,
    tensor_sum,
)
from meshmotion.mesh import Mesh
from meshmotion.models import (
    Blendshape,
    JacobianField,
    PoseVector,
    SkeletalLBS,
    apply_pose,
    forward_kinematics,
    joint_positions,
    poisson_solve,
    rotation_from_params,
)

from oracles import chain_world_transforms


def translate4(x, y, z):
    out = np.eye(4)
    out[:3, 3] = [x, y, z]
    return out


def two_bone_chain():
    """Root bone (0,0,0)->(0,1,0), child (0,1,0)->(0,2,0), axis-aligned."""
    verts = np.array(
        [
            [0.0, 0.2, 0.0],   # root-weighted
            [0.1, 0.5, -0.2],  # root-weighted
            [0.0, 1.5, 0.0],   # child-weighted
            [0.3, 1.2, 0.7],   # child-weighted
            [0.0, 1.0, 0.1],   # mixed at the hinge
        ]
    )
    faces = [[0, 1, 2], [2, 3, 4]]
    weights = np.array(
        [[1, 0], [1, 0], [0, 1], [0, 1], [0.5, 0.5]], dtype=np.float64
    )
    rest_local = np.stack([np.eye(4), translate4(0, 1, 0)])
    return SkeletalLBS(
        Mesh(verts, faces),
        parents=[-1, 0],
        rest_local=rest_local,
        weights=weights,
        names=["root", "child"],
        tails=[None, np.array([0.0, 1.0, 0.0])],
    )


def random_chain(rng, n_bones=3, n_verts=9):
    verts = rng.standard_normal((n_verts, 3))
    faces = [[i, i + 1, i + 2] for i in range(n_verts - 2)]
    rest_local = []
    for _ in range(n_bones):
        m = np.eye(4)
        m[:3, :3] = Rotation.from_rotvec(0.4 * rng.standard_normal(3)).as_matrix()
        m[:3, 3] = rng.standard_normal(3)
        rest_local.append(m)
    raw = rng.random((n_verts, n_bones)) + 1e-3
    weights = raw / raw.sum(axis=1, keepdims=True)
    parents = [-1] + [rng.integers(0, b) for b in range(1, n_bones)]
    return SkeletalLBS(Mesh(verts, faces), parents, np.stack(rest_local), weights)


def grid_mesh(nx=5, ny=4, bump=0.3, seed=0):
    """Connected single-component sheet with a smooth height field."""
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(nx, dtype=np.float64),
                         np.arange(ny, dtype=np.float64))
    zs = bump * np.sin(xs) * np.cos(ys) + 0.05 * rng.standard_normal(xs.shape)
    verts = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            faces.append([a, a + 1, a + nx])
            faces.append([a + 1, a + nx + 1, a + nx])
    return Mesh(verts, faces)


class TestRotationFromParams:
    def test_zero_gives_exact_identity(self):
        assert np.array_equal(rotation_from_params(np.zeros(3)), np.eye(3))

    def test_quarter_turn_about_z(self):
        r = rotation_from_params(np.array([0.0, 0.0, np.pi / 2]))
        assert np.allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_reference_rotation(self, seed):
        v = np.random.default_rng(seed).standard_normal(3)
        assert np.allclose(
            rotation_from_params(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-12
        )

    @pytest.mark.parametrize("scale", [1.0, 1e-3, 1e-5, 1e-7])
    def test_orthonormal_at_all_magnitudes(self, scale):
        rng = np.random.default_rng(11)
        for _ in range(10):
            r = rotation_from_params(scale * rng.standard_normal(3))
            assert np.abs(r @ r.T - np.eye(3)).max() < 1e-10
            assert abs(np.linalg.det(r) - 1.0) < 1e-10

    def test_gradient(self):
        rng = np.random.default_rng(5)
        c = rng.standard_normal((3, 3))

        def f(r):
            return tensor_sum(mul(rotation_from_params(r), c))

        assert finite_diff_check(f, rng.standard_normal(3)) < 1e-6
        # inside the small-angle branch the Taylor series must agree too
        assert finite_diff_check(f, np.array([1e-5, -2e-5, 1.5e-5])) < 1e-6


class TestSkeletalLBS:
    def test_rest_pose_bit_identical(self):
        model = two_bone_chain()
        posed = apply_pose(model, model.p_init)
        assert np.array_equal(posed.vertices, model.mesh.vertices)

    def test_random_rig_rest_pose_bit_identical(self):
        model = random_chain(np.random.default_rng(2))
        posed = apply_pose(model, model.p_init)
        assert np.array_equal(posed.vertices, model.mesh.vertices)

    def test_hinge_rotation_rotates_child_vertices(self):
        model = two_bone_chain()
        p = model.p_init
        p[3:6] = [np.pi / 2, 0.0, 0.0]  # child bone, 90 degrees about x
        posed = apply_pose(model, p)
        hinge = np.array([0.0, 1.0, 0.0])
        rot = Rotation.from_rotvec([np.pi / 2, 0, 0]).as_matrix()
        for i in (2, 3):
            expected = rot @ (model.mesh.vertices[i] - hinge) + hinge
            assert np.allclose(posed.vertices[i], expected, atol=1e-9)
        # root-weighted vertices must not move
        assert np.allclose(posed.vertices[:2], model.mesh.vertices[:2], atol=1e-12)

    def test_single_bone_is_rigid_transform(self):
        rng = np.random.default_rng(3)
        verts = rng.standard_normal((6, 3))
        model = SkeletalLBS(
            Mesh(verts, [[0, 1, 2], [3, 4, 5]]),
            parents=[-1],
            rest_local=np.eye(4)[None],
            weights=np.ones((6, 1)),
        )
        p = np.concatenate([rng.standard_normal(3), rng.standard_normal(3)])
        posed = apply_pose(model, p)
        rot = Rotation.from_rotvec(p[:3]).as_matrix()
        assert np.allclose(posed.vertices, verts @ rot.T + 0.1 * p[3:], atol=1e-12)

    def test_translation_scaled_by_tenth(self):
        model = two_bone_chain()
        p = model.p_init
        p[6:] = [1.0, -2.0, 3.0]
        posed = apply_pose(model, p)
        assert np.allclose(
            posed.vertices, model.mesh.vertices + [0.1, -0.2, 0.3], atol=1e-15
        )

    def test_skinning_matches_world_transforms(self):
        # one-hot weighted vertices must land exactly where FK sends them
        rng = np.random.default_rng(7)
        verts = rng.standard_normal((6, 3))
        rest_local = []
        for _ in range(3):
            m = np.eye(4)
            m[:3, :3] = Rotation.from_rotvec(0.3 * rng.standard_normal(3)).as_matrix()
            m[:3, 3] = rng.standard_normal(3)
            rest_local.append(m)
        weights = np.zeros((6, 3))
        weights[np.arange(6), [0, 0, 1, 1, 2, 2]] = 1.0
        model = SkeletalLBS(
            Mesh(verts, [[0, 1, 2], [3, 4, 5]]), [-1, 0, 1],
            np.stack(rest_local), weights,
        )
        rot = 0.6 * rng.standard_normal(9)
        world = forward_kinematics(model, rot)
        posed = apply_pose(model, np.concatenate([rot, np.zeros(3)]))
        for i, b in enumerate([0, 0, 1, 1, 2, 2]):
            skin = world[b] @ np.linalg.inv(model.rest_world[b])
            expected = skin[:3, :3] @ verts[i] + skin[:3, 3]
            assert np.allclose(posed.vertices[i], expected, atol=1e-9)

    def test_gradient_through_deform(self):
        rng = np.random.default_rng(9)
        model = random_chain(rng)
        c = rng.standard_normal((9, 3))

        def f(p):
            return tensor_sum(mul(model.deform(p), c))

        assert finite_diff_check(f, 0.5 * rng.standard_normal(model.n_params)) < 1e-6

    def test_pose_vector_accepted(self):
        model = two_bone_chain()
        posed = apply_pose(model, PoseVector(model.p_init, frame=4))
        assert np.array_equal(posed.vertices, model.mesh.vertices)

    def test_dimension_mismatch(self):
        model = two_bone_chain()
        with pytest.raises(ValueError, match="expects 9"):
            apply_pose(model, np.zeros(7))

    def test_validation_errors(self):
        verts = np.eye(3)
        mesh = Mesh(verts, [[0, 1, 2]])
        eye2 = np.stack([np.eye(4), np.eye(4)])
        good = np.full((3, 2), 0.5)
        with pytest.raises(ValueError, match="single root"):
            SkeletalLBS(mesh, [-1, -1], eye2, good)
        with pytest.raises(ValueError, match="precede"):
            SkeletalLBS(mesh, [-1, 2], eye2, good)
        with pytest.raises(ValueError, match="sum to 1"):
            SkeletalLBS(mesh, [-1, 0], eye2, np.full((3, 2), 0.3))
        with pytest.raises(ValueError, match="non-negative"):
            SkeletalLBS(mesh, [-1, 0], eye2, np.array([[1.5, -0.5]] * 3))
        bad = eye2.copy()
        bad[1, 3, 0] = 0.2
        with pytest.raises(ValueError, match="affine"):
            SkeletalLBS(mesh, [-1, 0], bad, good)


class TestForwardKinematics:
    def test_zero_rotations_give_rest_transforms(self):
        model = random_chain(np.random.default_rng(4))
        world = forward_kinematics(model, np.zeros(3 * model.n_bones))
        assert np.array_equal(world, model.rest_world)

    def test_root_rotation_premultiplies(self):
        model = two_bone_chain()  # root rest transform is the identity
        rv = np.array([0.3, -0.2, 0.5])
        world = forward_kinematics(model, np.concatenate([rv, np.zeros(3)]))
        rot4 = np.eye(4)
        rot4[:3, :3] = Rotation.from_rotvec(rv).as_matrix()
        for b in range(model.n_bones):
            assert np.allclose(world[b], rot4 @ model.rest_world[b], atol=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_matrix_chain_oracle(self, seed):
        rng = np.random.default_rng(seed)
        model = random_chain(rng)
        rot = 0.8 * rng.standard_normal((model.n_bones, 3))
        world = forward_kinematics(model, rot.ravel())
        expected = chain_world_transforms(model.parents, model.rest_local, rot)
        assert np.allclose(world, expected, atol=1e-10)

    def test_wrong_rotation_count(self):
        with pytest.raises(ValueError, match="bone rotations"):
            forward_kinematics(two_bone_chain(), np.zeros(9))


class TestJointPositions:
    def test_rest_joints(self):
        model = two_bone_chain()
        joints = joint_positions(model, model.p_init)
        assert np.allclose(
            joints, [[0, 0, 0], [0, 1, 0], [0, 2, 0]], atol=1e-15
        )

    def test_hinge_moves_leaf_tail(self):
        model = two_bone_chain()
        p = model.p_init
        p[3:6] = [np.pi / 2, 0, 0]
        joints = joint_positions(model, p)
        assert np.allclose(joints[2], [0, 1, 1], atol=1e-12)

    def test_translation_shifts_all_joints(self):
        model = two_bone_chain()
        p = model.p_init
        p[6:] = [10.0, 0.0, 0.0]
        base = joint_positions(model, model.p_init)
        assert np.allclose(joint_positions(model, p), base + [1, 0, 0], atol=1e-12)


class TestBlendshape:
    @staticmethod
    def make(rng, n=8, k=4, scale=5.0, sub=False):
        verts = rng.standard_normal((n, 3))
        faces = [[i, i + 1, i + 2] for i in range(n - 2)]
        mesh = Mesh(verts, faces)
        basis = np.linalg.qr(rng.standard_normal((3 * n, k)))[0]
        skel = None
        if sub:
            weights = np.zeros((n, 2))
            weights[: n // 2, 0] = 1.0
            weights[n // 2 :, 1] = 1.0
            skel = SkeletalLBS(
                mesh, [-1, 0], np.stack([np.eye(4), translate4(0.0, 0.5, 0.0)]),
                weights, names=["skull", "jaw"],
            )
        return Blendshape(mesh, basis, scale=scale, sub_skeleton=skel)

    def test_rest_pose_bit_identical(self):
        model = self.make(np.random.default_rng(0))
        posed = apply_pose(model, model.p_init)
        assert np.array_equal(posed.vertices, model.mesh.vertices)

    @pytest.mark.parametrize("scale", [5.0, 2.5])
    def test_one_hot_coefficient_adds_scaled_basis_column(self, scale):
        model = self.make(np.random.default_rng(1), scale=scale)
        for k in range(model.n_shapes):
            p = model.p_init
            p[k] = 0.7
            posed = apply_pose(model, p)
            expected = model.mesh.vertices + (
                scale * 0.7 * model.basis[:, k]
            ).reshape(-1, 3)
            assert np.allclose(posed.vertices, expected, atol=1e-12)

    def test_default_scale_is_five(self):
        model = self.make(np.random.default_rng(2))
        assert model.scale == 5.0

    def test_sub_skeleton_articulates_jaw(self):
        model = self.make(np.random.default_rng(3), sub=True)
        p = model.p_init
        jaw = model.n_shapes + 3  # second bone's rotation block
        p[jaw : jaw + 3] = [0.4, 0.0, 0.0]
        posed = apply_pose(model, p)
        n = len(model.mesh.vertices)
        assert np.allclose(
            posed.vertices[: n // 2], model.mesh.vertices[: n // 2], atol=1e-12
        )
        assert (
            np.linalg.norm(posed.vertices[n // 2 :] - model.mesh.vertices[n // 2 :],
                           axis=1)
            > 1e-3
        ).any()

    def test_rest_with_sub_skeleton_bit_identical(self):
        model = self.make(np.random.default_rng(4), sub=True)
        posed = apply_pose(model, model.p_init)
        assert np.array_equal(posed.vertices, model.mesh.vertices)

    def test_translation_scaled_by_tenth(self):
        model = self.make(np.random.default_rng(5))
        p = model.p_init
        p[-3:] = [1.0, 2.0, -4.0]
        posed = apply_pose(model, p)
        assert np.allclose(
            posed.vertices, model.mesh.vertices + [0.1, 0.2, -0.4], atol=1e-15
        )

    def test_non_orthonormal_basis_rejected(self):
        rng = np.random.default_rng(6)
        verts = rng.standard_normal((6, 3))
        mesh = Mesh(verts, [[0, 1, 2], [3, 4, 5]])
        basis = np.linalg.qr(rng.standard_normal((18, 3)))[0]
        basis[:, 0] *= 1.001  # norm off by 1e-3, beyond the 1e-4 tolerance
        with pytest.raises(ValueError, match="orthonormal"):
            Blendshape(mesh, basis)

    def test_gradient_through_deform(self):
        rng = np.random.default_rng(7)
        model = self.make(rng, sub=True)
        c = rng.standard_normal((8, 3))

        def f(p):
            return tensor_sum(mul(model.deform(p), c))

        assert finite_diff_check(f, 0.3 * rng.standard_normal(model.n_params)) < 1e-6


class TestPoissonSolve:
    def diag(self, mesh):
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def test_identity_jacobians_recover_rest(self):
        mesh = grid_mesh()
        model = JacobianField(mesh)
        out = poisson_solve(model, np.tile(np.eye(3), (model.n_faces, 1, 1)))
        assert np.abs(out - mesh.vertices).max() < 1e-8 * self.diag(mesh)

    @pytest.mark.parametrize("seed", range(6))
    def test_global_rotation_recovered(self, seed):
        rng = np.random.default_rng(seed)
        mesh = grid_mesh(4 + seed % 3, 3 + seed % 2, seed=seed)
        model = JacobianField(mesh)
        rot = Rotation.from_rotvec(rng.standard_normal(3)).as_matrix()
        out = poisson_solve(model, np.tile(rot, (model.n_faces, 1, 1)))
        pin = mesh.vertices[model.pinned_vertex]
        expected = (mesh.vertices - pin) @ rot.T + pin
        assert np.abs(out - expected).max() < 1e-8 * self.diag(mesh)

    @pytest.mark.parametrize("seed", range(4))
    def test_affine_map_recovered(self, seed):
        rng = np.random.default_rng(100 + seed)
        mesh = grid_mesh(seed=seed)
        model = JacobianField(mesh)
        affine = np.eye(3) + 0.4 * rng.standard_normal((3, 3))
        out = poisson_solve(model, np.tile(affine, (model.n_faces, 1, 1)))
        pin = mesh.vertices[model.pinned_vertex]
        expected = (mesh.vertices - pin) @ affine.T + pin
        assert np.abs(out - expected).max() < 1e-8 * self.diag(mesh)

    def test_solution_affine_in_jacobians(self):
        rng = np.random.default_rng(8)
        mesh = grid_mesh()
        model = JacobianField(mesh)
        m = model.n_faces
        ja = np.eye(3) + 0.3 * rng.standard_normal((m, 3, 3))
        jb = np.eye(3) + 0.3 * rng.standard_normal((m, 3, 3))
        lhs = poisson_solve(model, ja + jb)
        rhs = (
            poisson_solve(model, ja)
            + poisson_solve(model, jb)
            - poisson_solve(model, np.zeros((m, 3, 3)))
        )
        assert np.abs(lhs - rhs).max() < 1e-8 * self.diag(mesh)

    def test_pinned_vertex_held(self):
        mesh = grid_mesh()
        model = JacobianField(mesh, pinned_vertex=5)
        rng = np.random.default_rng(9)
        out = poisson_solve(
            model, np.eye(3) + 0.5 * rng.standard_normal((model.n_faces, 3, 3))
        )
        assert np.array_equal(out[5], mesh.vertices[5])

    def test_disconnected_mesh_rejected(self):
        verts = np.vstack([np.eye(3), np.eye(3) + [5, 0, 0]])
        mesh = Mesh(verts, [[0, 1, 2], [3, 4, 5]])
        with pytest.raises(ValueError, match="connected"):
            JacobianField(mesh)

    def test_degenerate_face_rejected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0.0]])
        mesh = Mesh(verts, [[0, 1, 2], [0, 1, 3]])  # first face is collinear
        with pytest.raises(ValueError, match="degenerate"):
            JacobianField(mesh)

    def test_wrong_jacobian_shape(self):
        model = JacobianField(grid_mesh())
        with pytest.raises(ValueError, match="shape"):
            poisson_solve(model, np.zeros((2, 3, 3)))

    def test_gradient_through_solve(self):
        rng = np.random.default_rng(10)
        mesh = grid_mesh(4, 3)
        model = JacobianField(mesh)
        c = rng.standard_normal((len(mesh.vertices), 3))

        def f(j):
            return tensor_sum(mul(poisson_solve(model, j), c))

        point = np.eye(3) + 0.2 * rng.standard_normal((model.n_faces, 3, 3))
        assert finite_diff_check(f, point) < 1e-6

    def test_adjoint_matches_tape(self):
        # <grad, dJ> must equal the directional derivative of a linear solve
        rng = np.random.default_rng(11)
        mesh = grid_mesh(4, 3)
        model = JacobianField(mesh)
        c = rng.standard_normal((len(mesh.vertices), 3))
        j0 = np.eye(3) + 0.1 * rng.standard_normal((model.n_faces, 3, 3))
        dj = rng.standard_normal(j0.shape)
        tape = Tape()
        leaf = tape.leaf(j0)
        grad = backward(tape, tensor_sum(mul(poisson_solve(model, leaf), c)))[leaf]
        lhs = float((grad * dj).sum())
        rhs = float(
            ((poisson_solve(model, j0 + dj) - poisson_solve(model, j0)) * c).sum()
        )
        assert abs(lhs - rhs) < 1e-8 * max(abs(rhs), 1.0)


class TestJacobianFieldModel:
    def test_rest_pose_within_solver_tolerance(self):
        mesh = grid_mesh()
        model = JacobianField(mesh)
        posed = apply_pose(model, model.p_init)
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        diag = np.linalg.norm(hi - lo)
        assert np.abs(posed.vertices - mesh.vertices).max() < 1e-8 * diag

    def test_global_terms_applied_after_solve(self):
        mesh = grid_mesh()
        model = JacobianField(mesh)
        rng = np.random.default_rng(12)
        rv = rng.standard_normal(3)
        center = rng.standard_normal(3)
        trans = rng.standard_normal(3)
        p = model.p_init
        p[9 * model.n_faces :] = np.concatenate([rv, center, trans])
        posed = apply_pose(model, p)
        base = poisson_solve(model, np.tile(np.eye(3), (model.n_faces, 1, 1)))
        rot = Rotation.from_rotvec(rv).as_matrix()
        expected = (base - center) @ rot.T + center + 0.1 * trans
        assert np.allclose(posed.vertices, expected, atol=1e-9)

    def test_gradient_through_deform(self):
        rng = np.random.default_rng(13)
        mesh = grid_mesh(4, 3)
        model = JacobianField(mesh)
        c = rng.standard_normal((len(mesh.vertices), 3))

        def f(p):
            return tensor_sum(mul(model.deform(p), c))

        assert finite_diff_check(f, 0.1 * rng.standard_normal(model.n_params)) < 1e-5

    def test_pinned_vertex_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            JacobianField(grid_mesh(), pinned_vertex=99)


class TestApplyPoseDispatch:
    def test_rejects_non_model(self):
        with pytest.raises(TypeError, match="animation model"):
            apply_pose(object(), np.zeros(3))

    def test_pose_vector_validation(self):
        with pytest.raises(ValueError):
            PoseVector(np.array([[1.0, 2.0]]))
        with pytest.raises(ValueError):
            PoseVector(np.array([np.nan]))
