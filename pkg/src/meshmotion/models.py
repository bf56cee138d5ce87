"""Animation models mapping per-frame parameter vectors to deformed meshes.

Three model families share a small duck-typed surface:

- ``model.mesh``      rest mesh (vertices and faces)
- ``model.n_params``  pose vector length P
- ``model.p_init``    identity pose (zeros)
- ``model.deform(p)`` posed (N, 3) vertices, differentiable when ``p`` is a
  taped tensor and plain numpy otherwise

Pose vector layouts:

- SkeletalLBS:   [3 rotation params per bone (bone order), 3 global translation]
- Blendshape:    [K expression coefficients, 3 per sub-skeleton bone if any,
                  3 global translation]
- JacobianField: [9 per-face Jacobian offsets (row-major, added to identity),
                  3 global rotation, 3 rotation center, 3 global translation]

All rotations use the exponential map; global translation is scaled by 0.1
before application. Every model satisfies deform(zeros) == rest vertices,
exactly for LBS/blendshapes and to solver accuracy for JacobianField.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .autodiff import (
    _data,
    _record_op,
    add,
    cos,
    div,
    dot,
    embed,
    matmul,
    mul,
    reshape,
    sin,
    skew3,
    slice_of,
    sqrt,
    sub,
    transpose,
)
from .mesh import Mesh
from .validation import as_float_array, check_finite


@dataclass(frozen=True)
class PoseVector:
    """One frame's animation parameters."""

    p: np.ndarray
    frame: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", as_float_array(self.p, "p", (-1,)))
        check_finite(self.p, "p")


def rotation_from_params(r):
    """Exponential-map rotation from a 3-vector; r = 0 gives the exact identity.

    Small angles take a Taylor branch for sin(t)/t and (1 - cos t)/t^2 so the
    result and its gradient stay finite through zero.
    """
    t2 = dot(r, r)
    if float(_data(t2)) < 1e-8:
        a = add(1.0, add(mul(-1.0 / 6.0, t2), mul(1.0 / 120.0, mul(t2, t2))))
        b = add(0.5, add(mul(-1.0 / 24.0, t2), mul(1.0 / 720.0, mul(t2, t2))))
    else:
        theta = sqrt(t2)
        a = div(sin(theta), theta)
        b = div(sub(1.0, cos(theta)), t2)
    k = skew3(r)
    return add(np.eye(3), add(mul(a, k), mul(b, matmul(k, k))))


def _rigid4(rot3):
    out = np.eye(4)
    out[:3, :3] = rot3
    return out


def _skin(verts, weights, deltas):
    """Displacement-form blend skinning: v + sum_b w_b (T_b v - v).

    Keeps the rest pose bit-exact: when every T_b is the identity the
    displacement is exactly zero.
    """
    disp = None
    for b, t in enumerate(deltas):
        rot = slice_of(t, (slice(0, 3), slice(0, 3)))
        tr = slice_of(t, (slice(0, 3), 3))
        moved = add(matmul(verts, transpose(rot)), tr)
        wd = mul(weights[:, b : b + 1], sub(moved, verts))
        disp = wd if disp is None else add(disp, wd)
    return add(verts, disp)


class SkeletalLBS:
    """Skeleton with linear blend skinning.

    Bones are listed in topological order: ``parents[b] < b`` with exactly one
    root (parent -1). ``rest_local[b]`` maps bone space to parent space;
    ``weights`` rows are convex combinations over bones. ``tails[b]`` is an
    optional bone-space tail point used for joint extraction on leaf bones.
    """

    def __init__(self, mesh: Mesh, parents, rest_local, weights,
                 names=None, tails=None):
        self.mesh = mesh
        self.parents = tuple(int(p) for p in parents)
        nb = len(self.parents)
        if nb == 0:
            raise ValueError("skeleton needs at least one bone")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise ValueError("bone 0 must be the single root (parent -1)")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ValueError(
                    f"bone {i} has parent {p}; parents must precede children"
                )
        self.rest_local = as_float_array(rest_local, "rest_local", (nb, 4, 4))
        check_finite(self.rest_local, "rest_local")
        if not np.allclose(self.rest_local[:, 3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("rest_local matrices must be affine (bottom row 0 0 0 1)")
        n = len(mesh.vertices)
        self.weights = as_float_array(weights, "weights", (n, nb))
        check_finite(self.weights, "weights")
        if self.weights.min() < -1e-9:
            raise ValueError("skinning weights must be non-negative")
        sums = self.weights.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("skinning weight rows must sum to 1")
        self.names = tuple(names) if names is not None else tuple(
            f"bone{i}" for i in range(nb)
        )
        if len(self.names) != nb:
            raise ValueError("names length must match bone count")
        if tails is None:
            tails = [None] * nb
        self.tails = tuple(
            None if t is None else as_float_array(t, "tail", (3,)) for t in tails
        )
        if len(self.tails) != nb:
            raise ValueError("tails length must match bone count")

        rest_world = np.empty((nb, 4, 4))
        for b, p in enumerate(self.parents):
            rest_world[b] = (
                self.rest_local[b] if p < 0 else rest_world[p] @ self.rest_local[b]
            )
        self.rest_world = rest_world
        self._rest_world_inv = np.linalg.inv(rest_world)

    @property
    def n_bones(self) -> int:
        return len(self.parents)

    @property
    def n_params(self) -> int:
        return 3 * self.n_bones + 3

    @property
    def p_init(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def _delta_transforms(self, rot_vec):
        """Per-bone skinning matrices T_b = G_b Gbar_b^-1, identity at rest.

        Computed as T_parent (I + Gbar (R - I) Gbar^-1) so a zero rotation
        contributes an exact identity factor.
        """
        eye4 = np.eye(4)
        out = []
        for b, p in enumerate(self.parents):
            r = slice_of(rot_vec, slice(3 * b, 3 * b + 3))
            e = embed(
                sub(rotation_from_params(r), np.eye(3)),
                (4, 4),
                (slice(0, 3), slice(0, 3)),
            )
            step = add(eye4, matmul(matmul(self.rest_world[b], e),
                                    self._rest_world_inv[b]))
            out.append(step if p < 0 else matmul(out[p], step))
        return out

    def deform(self, p):
        deltas = self._delta_transforms(slice_of(p, slice(0, 3 * self.n_bones)))
        skinned = _skin(self.mesh.vertices, self.weights, deltas)
        t = slice_of(p, slice(3 * self.n_bones, 3 * self.n_bones + 3))
        return add(skinned, mul(0.1, t))


def forward_kinematics(model: SkeletalLBS, rotations) -> np.ndarray:
    """World transform per bone from exponential-map rotation parameters.

    Recursive composition root to leaf: G_b = G_parent rest_local_b R_b.
    Zero rotations reproduce the rest world transforms bit for bit.
    """
    rot = as_float_array(rotations, "rotations", (-1,)).reshape(-1, 3)
    if rot.shape[0] != model.n_bones:
        raise ValueError(
            f"expected {model.n_bones} bone rotations, got {rot.shape[0]}"
        )
    out = np.empty((model.n_bones, 4, 4))
    for b, p in enumerate(model.parents):
        local = model.rest_local[b] @ _rigid4(rotation_from_params(rot[b]))
        out[b] = local if p < 0 else out[p] @ local
    return out


def joint_positions(model: SkeletalLBS, p) -> np.ndarray:
    """Joint set for pose error metrics: bone heads plus leaf-bone tails.

    ``p`` is a full pose vector; the scaled global translation shifts every
    joint just as it shifts every skinned vertex.
    """
    vec = np.asarray(_data(p), dtype=np.float64).reshape(-1)
    if vec.shape != (model.n_params,):
        raise ValueError(
            f"pose vector has length {vec.shape[0]}, model expects {model.n_params}"
        )
    world = forward_kinematics(model, vec[: 3 * model.n_bones])
    joints = [world[:, :3, 3]]
    has_child = set(model.parents)
    for b in range(model.n_bones):
        if b not in has_child and model.tails[b] is not None:
            joints.append((world[b, :3, :3] @ model.tails[b] + world[b, :3, 3])[None])
    return np.vstack(joints) + 0.1 * vec[3 * model.n_bones :]


class Blendshape:
    """Rest mesh plus an orthonormal offset basis, optionally a sub-skeleton.

    Expression coefficients are multiplied by ``scale`` (default 5) before the
    basis combination; the optional embedded skeleton articulates regions such
    as a jaw after the blendshape offsets are applied.
    """

    def __init__(self, mesh: Mesh, basis, scale: float = 5.0,
                 sub_skeleton: SkeletalLBS | None = None):
        self.mesh = mesh
        n = len(mesh.vertices)
        self.basis = as_float_array(basis, "basis", (3 * n, -1))
        check_finite(self.basis, "basis")
        gram = self.basis.T @ self.basis
        if np.abs(gram - np.eye(self.basis.shape[1])).max() > 1e-4:
            raise ValueError("basis columns must be orthonormal")
        self.scale = float(scale)
        self.sub_skeleton = sub_skeleton
        if sub_skeleton is not None and sub_skeleton.mesh is not mesh:
            if len(sub_skeleton.mesh.vertices) != n:
                raise ValueError("sub-skeleton must be rigged on the same mesh")

    @property
    def n_shapes(self) -> int:
        return self.basis.shape[1]

    @property
    def n_params(self) -> int:
        sub = 0 if self.sub_skeleton is None else 3 * self.sub_skeleton.n_bones
        return self.n_shapes + sub + 3

    @property
    def p_init(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def deform(self, p):
        k = self.n_shapes
        coeff = mul(self.scale, slice_of(p, slice(0, k)))
        off = matmul(self.basis, reshape(coeff, (k, 1)))
        verts = add(self.mesh.vertices, reshape(off, (-1, 3)))
        cursor = k
        if self.sub_skeleton is not None:
            nb = self.sub_skeleton.n_bones
            deltas = self.sub_skeleton._delta_transforms(
                slice_of(p, slice(cursor, cursor + 3 * nb))
            )
            verts = _skin(verts, self.sub_skeleton.weights, deltas)
            cursor += 3 * nb
        t = slice_of(p, slice(cursor, cursor + 3))
        return add(verts, mul(0.1, t))


def _face_gradient_frames(vertices: np.ndarray, faces: np.ndarray):
    """Hat-function gradients (3 per face) and face areas of a rest mesh."""
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    normal = np.cross(v1 - v0, v2 - v0)
    twice_area = np.linalg.norm(normal, axis=1)
    scale = max(float(np.abs(vertices).max()), 1.0)
    bad = np.nonzero(twice_area <= 1e-12 * scale * scale)[0]
    if bad.size:
        raise ValueError(f"face {bad[0]} is degenerate (zero area)")
    unit = normal / twice_area[:, None]
    g0 = np.cross(unit, v2 - v1) / twice_area[:, None]
    g1 = np.cross(unit, v0 - v2) / twice_area[:, None]
    g2 = np.cross(unit, v1 - v0) / twice_area[:, None]
    return (g0, g1, g2), twice_area / 2.0


class JacobianField:
    """Per-face target Jacobians realized through an area-weighted Poisson solve.

    The rest mesh fixes a sparse gradient operator G (3M x N) and face-area
    weights D; the solve minimizes sum_i |f_i| ||grad_i(phi) - J_i||_F^2 with
    one pinned vertex removing the translational null space. The normal
    equations GtDG phi = GtD J are factorized once and reused for every solve
    and for its adjoint.
    """

    def __init__(self, mesh: Mesh, pinned_vertex: int = 0):
        self.mesh = mesh
        n = len(mesh.vertices)
        m = len(mesh.faces)
        if not 0 <= pinned_vertex < n:
            raise ValueError(f"pinned vertex {pinned_vertex} out of range")
        self.pinned_vertex = int(pinned_vertex)

        faces = mesh.faces
        adj = sparse.coo_matrix(
            (
                np.ones(3 * m),
                (
                    np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]]),
                    np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]]),
                ),
            ),
            shape=(n, n),
        )
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise ValueError(
                f"mesh has {n_comp} connected components; the Poisson system "
                "needs a single component per pinned vertex"
            )

        grads, areas = _face_gradient_frames(mesh.vertices, faces)
        rows, cols, vals = [], [], []
        base = 3 * np.arange(m)
        for corner in range(3):
            for axis in range(3):
                rows.append(base + axis)
                cols.append(faces[:, corner])
                vals.append(grads[corner][:, axis])
        g = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * m, n),
        ).tocsr()
        d = sparse.diags(np.repeat(areas, 3))
        self._gtd = (g.T @ d).tocsr()
        self._dg = (d @ g).tocsr()
        lap = (self._gtd @ g).tocsr()

        self._free = np.array(
            [i for i in range(n) if i != self.pinned_vertex], dtype=np.int64
        )
        l_ff = lap[self._free][:, self._free].tocsc()
        self._l_fp = lap[self._free][:, [self.pinned_vertex]].toarray()
        self._rest_pin = mesh.vertices[self.pinned_vertex].copy()
        try:
            self._factor = splu(l_ff)
        except RuntimeError as exc:
            raise ValueError(f"poisson system is singular: {exc}") from exc

    @property
    def n_faces(self) -> int:
        return len(self.mesh.faces)

    @property
    def n_params(self) -> int:
        return 9 * self.n_faces + 9

    @property
    def p_init(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def deform(self, p):
        m = self.n_faces
        off = reshape(slice_of(p, slice(0, 9 * m)), (m, 3, 3))
        jac = add(np.broadcast_to(np.eye(3), (m, 3, 3)), off)
        verts = poisson_solve(self, jac)
        r = slice_of(p, slice(9 * m, 9 * m + 3))
        center = slice_of(p, slice(9 * m + 3, 9 * m + 6))
        t = slice_of(p, slice(9 * m + 6, 9 * m + 9))
        rot = rotation_from_params(r)
        turned = add(matmul(sub(verts, center), transpose(rot)), center)
        return add(turned, mul(0.1, t))


def poisson_solve(model: JacobianField, jacobians):
    """Vertex positions whose face gradients best match the target Jacobians.

    Differentiable in ``jacobians``; the adjoint reuses the cached
    factorization (the system matrix is symmetric) and maps vertex gradients
    back through D G.
    """
    jd = _data(jacobians)
    m = model.n_faces
    if jd.shape != (m, 3, 3):
        raise ValueError(f"expected jacobians of shape {(m, 3, 3)}, got {jd.shape}")
    free = model._free
    pin = model.pinned_vertex

    def run(j):
        stacked = j.transpose(0, 2, 1).reshape(3 * m, 3)
        rhs = (model._gtd @ stacked)[free] - model._l_fp @ model._rest_pin[None, :]
        sol = model._factor.solve(rhs)
        out = np.empty((len(model.mesh.vertices), 3))
        out[free] = sol
        out[pin] = model._rest_pin
        return out

    def vjp(g):
        z = model._factor.solve(np.ascontiguousarray(g[free]))
        zpad = np.zeros((len(model.mesh.vertices), 3))
        zpad[free] = z
        gs = model._dg @ zpad
        return np.ascontiguousarray(gs.reshape(m, 3, 3).transpose(0, 2, 1))

    return _record_op(run(jd), (jacobians,), (vjp,))


def apply_pose(model, p) -> Mesh:
    """Pose a model: tau(M, p). Accepts a PoseVector or a flat parameter vector."""
    if not hasattr(model, "deform") or not hasattr(model, "n_params"):
        raise TypeError(f"not an animation model: {type(model).__name__}")
    vec = p.p if isinstance(p, PoseVector) else as_float_array(p, "p", (-1,))
    if vec.shape != (model.n_params,):
        raise ValueError(
            f"pose vector has length {vec.shape[0]}, model expects {model.n_params}"
        )
    return model.mesh.with_vertices(model.deform(vec))
