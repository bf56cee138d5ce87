"""Triangle meshes, pinhole cameras and bilinear map sampling.

Conventions fixed for the whole package:

* World coordinates are right-handed; the camera looks down +Z in camera
  space, x goes right and y goes down in the image.
* Texel (i, j) of an H x W map sits at continuous location (x=j, y=i);
  sampling locations outside [0, W-1] x [0, H-1] clamp to the border.
* Feature-map locations are expressed in pixel units of the feature
  resolution, not the RGB resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_float_array, check_faces, check_rotation, check_vertices

__all__ = [
    "Camera",
    "ImagePoint",
    "Mesh",
    "MeshFormatError",
    "bilinear_sample",
    "load_mesh",
    "project_point",
    "project_points",
    "save_mesh",
]


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed or violates mesh invariants."""


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh: N x 3 vertex positions, M x 3 face indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = check_vertices(self.vertices)
        faces = check_faces(self.faces, verts.shape[0])
        verts.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same topology, new vertex positions."""
        return Mesh(vertices, self.faces)

    def bbox_diagonal(self) -> float:
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got ({self.width}, {self.height})")
        rot = check_rotation(self.rotation)
        trans = as_float_array(self.translation, "translation", shape=(3,))
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) to camera space."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def scaled(self, sx: float, sy: float, width: int, height: int) -> "Camera":
        """Camera for a resampled image plane (e.g. RGB resolution -> feature resolution)."""
        return Camera(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=width,
            height=height,
            rotation=self.rotation,
            translation=self.translation,
        )


@dataclass(frozen=True)
class ImagePoint:
    """Continuous pixel location plus camera-space depth."""

    x: float
    y: float
    depth: float


def load_mesh(path) -> Mesh:
    """Read an ASCII mesh file: `v x y z` and `f i j k` lines, 1-based indices.

    Comment (`#`), `vt` and `vn` lines are ignored; quads are rejected.
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag in ("vt", "vn", "o", "g", "s", "mtllib", "usemtl"):
                continue
            if tag == "v":
                if len(parts) != 4:
                    raise MeshFormatError(f"{path}:{lineno}: vertex line needs 3 coordinates")
                try:
                    vertices.append([float(p) for p in parts[1:]])
                except ValueError as exc:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshFormatError(
                        f"{path}:{lineno}: face line needs exactly 3 indices (triangles only)"
                    )
                idx = []
                for p in parts[1:]:
                    token = p.split("/")[0]
                    try:
                        idx.append(int(token))
                    except ValueError as exc:
                        raise MeshFormatError(f"{path}:{lineno}: bad face index {p!r}") from exc
                if any(i < 1 for i in idx):
                    raise MeshFormatError(f"{path}:{lineno}: face indices are 1-based")
                faces.append([i - 1 for i in idx])
            else:
                raise MeshFormatError(f"{path}:{lineno}: unknown line tag {tag!r}")
    if not vertices:
        raise MeshFormatError(f"{path}: no vertices")
    if not faces:
        raise MeshFormatError(f"{path}: no faces")
    n = len(vertices)
    for m, face in enumerate(faces):
        if any(i >= n for i in face):
            raise MeshFormatError(
                f"{path}: face {m} references vertex index {max(face) + 1} "
                f"but only {n} vertices are defined"
            )
    try:
        return Mesh(np.asarray(vertices), np.asarray(faces))
    except ValueError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def project_point(camera: Camera, point) -> ImagePoint:
    """Pinhole projection of one world point; raises for points behind the camera."""
    p_cam = camera.to_camera(np.asarray(point, dtype=np.float64).reshape(3))
    z = float(p_cam[2])
    if z <= 0:
        raise ValueError(f"point {tuple(point)} is behind the camera (depth {z:.6g})")
    return ImagePoint(
        x=float(camera.fx * p_cam[0] / z + camera.cx),
        y=float(camera.fy * p_cam[1] / z + camera.cy),
        depth=z,
    )


def project_points(camera: Camera, points: np.ndarray):
    """Vectorized projection of (N, 3) world points.

    Returns (xy, depth): xy is (N, 2), depth is (N,). Points at or behind the
    camera plane get non-finite xy; callers decide whether that is an error.
    """
    p_cam = camera.to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = camera.fx * p_cam[:, 0] / z + camera.cx
        y = camera.fy * p_cam[:, 1] / z + camera.cy
    bad = z <= 0
    if bad.any():
        x = np.where(bad, np.nan, x)
        y = np.where(bad, np.nan, y)
    return np.stack([x, y], axis=1), z


def bilinear_sample(map_hwd: np.ndarray, loc) -> np.ndarray:
    """Bilinearly interpolate an H x W x D map at continuous (x, y).

    Locations outside the map clamp to the border, making this a total
    function. Integer locations return the exact texel.
    """
    arr = np.asarray(map_hwd, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, _ = arr.shape
    x = min(max(float(loc[0]), 0.0), float(w - 1))
    y = min(max(float(loc[1]), 0.0), float(h - 1))
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = (1.0 - fx) * arr[y0, x0] + fx * arr[y0, x1]
    bot = (1.0 - fx) * arr[y1, x0] + fx * arr[y1, x1]
    return (1.0 - fy) * top + fy * bot
