"""Input validation helpers shared across the package.

All checks raise ValueError with a message naming the offending input, so
estimator and CLI entry points can fail fast before any expensive compute.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_float_array",
    "check_faces",
    "check_finite",
    "check_rotation",
    "check_vertices",
]


def as_float_array(x, name: str, shape=None, dtype=np.float64) -> np.ndarray:
    """Convert to a float ndarray, optionally enforcing a shape pattern.

    ``shape`` entries may be -1 to accept any size along that axis.
    """
    arr = np.asarray(x, dtype=dtype)
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(
                f"{name}: expected {len(shape)} dimensions, got shape {arr.shape}"
            )
        for axis, want in enumerate(shape):
            if want != -1 and arr.shape[axis] != want:
                raise ValueError(
                    f"{name}: expected size {want} along axis {axis}, got shape {arr.shape}"
                )
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_vertices(vertices) -> np.ndarray:
    verts = as_float_array(vertices, "vertices", shape=(-1, 3))
    check_finite(verts, "vertices")
    if verts.shape[0] < 3:
        raise ValueError(f"vertices: need at least 3, got {verts.shape[0]}")
    return verts


def check_faces(faces, n_vertices: int) -> np.ndarray:
    arr = np.asarray(faces, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"faces: expected shape (M, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("faces: need at least 1 face")
    if arr.min(initial=0) < 0 or arr.max(initial=0) >= n_vertices:
        bad = int(np.argmax((arr < 0).any(axis=1) | (arr >= n_vertices).any(axis=1)))
        raise ValueError(
            f"faces: face {bad} has vertex index out of range [0, {n_vertices})"
        )
    degen = (arr[:, 0] == arr[:, 1]) | (arr[:, 1] == arr[:, 2]) | (arr[:, 0] == arr[:, 2])
    if degen.any():
        raise ValueError(f"faces: face {int(np.argmax(degen))} repeats a vertex index")
    return arr


def check_rotation(rot, tol: float = 1e-6) -> np.ndarray:
    """Validate a 3x3 rotation matrix: orthonormal, determinant +1."""
    arr = as_float_array(rot, "rotation", shape=(3, 3))
    err = np.abs(arr @ arr.T - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"rotation: not orthonormal (max deviation {err:.3g})")
    det = np.linalg.det(arr)
    if abs(det - 1.0) > tol:
        raise ValueError(f"rotation: determinant {det:.6f}, expected +1")
    return arr
