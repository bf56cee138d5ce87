"""Feature, depth, and mask rasterization with interpolation-only gradients.

Hard rasterization: a pixel belongs to the nearest triangle whose projected
footprint contains the pixel center, and that assignment is treated as
locally constant. Gradients flow through the projected vertex positions via
the barycentric weights and through the vertex attributes, never through
coverage changes.

Conventions (shared with the brute-force oracle; changing any of these breaks
exact-equality tests):
  - screen-space barycentric interpolation, no perspective correction
  - faces with any vertex at camera depth <= 1e-9 are dropped (no clipping)
  - zero-area projected faces are dropped; back faces are kept
  - boundary pixels: edge direction d (oriented by the sign of the signed
    area) admits the pixel iff d.y > 0 or (d.y == 0 and d.x < 0), so a shared
    edge gives each boundary pixel to exactly one face
  - equal interpolated depth: the lower face index wins
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _data, add, div, gather_rows, matmul, mul, reshape, scatter_rows
from .mesh import Camera, Mesh

__all__ = [
    "DepthMask",
    "FeatureImage",
    "rasterize_features",
    "render_depth_mask",
    "save_pgm",
    "vertex_depths",
]

_NEAR_EPS = 1e-9


@dataclass
class FeatureImage:
    """Rasterized attribute image; ``data`` may be a Tensor inside a fit."""

    data: object
    mask: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return _data(self.data)


@dataclass(frozen=True)
class DepthMask:
    depth: np.ndarray
    mask: np.ndarray


def _edge(ax, ay, bx, by, px, py):
    """Signed doubled area of triangle (a, b, p); works on arrays or Tensors."""
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _project(vertices, camera: Camera):
    """Camera projection mirroring ``mesh.project_points`` bit for bit.

    Returns (x, y, z) as Tensors when ``vertices`` is tracked. Depths at or
    below the near epsilon are divided by 1 instead so no non-finite values
    (or gradients) can leak out of rows the rasterizer later discards.
    """
    pc = add(matmul(vertices, camera.rotation.T), camera.translation)
    x_cam = pc[:, 0]
    y_cam = pc[:, 1]
    z = pc[:, 2]
    zd = _data(z)
    bad = np.nonzero(zd <= _NEAR_EPS)[0]
    z_safe = scatter_rows(z, bad, np.ones(bad.size)) if bad.size else z
    x = add(div(mul(camera.fx, x_cam), z_safe), camera.cx)
    y = add(div(mul(camera.fy, y_cam), z_safe), camera.cy)
    return x, y, z


def _candidate_pixels(x0, x1, y0, y1, width, height):
    """Ragged bbox-to-pixel expansion: (face id, px, py) for every candidate.

    Bounds are inclusive float bbox corners per face, padded by a hair: the
    edge functions are built from coordinate differences and can round to an
    admitted 0.0 at a pixel center a few ULPs outside the raw bbox (a corner
    projecting to 3+4e-16 must not exclude row 3). The pad only adds
    candidates when a corner sits within 1e-6 of an integer; coverage itself
    is still decided by the edge rule, so extra candidates change nothing.
    """
    pad = 1e-6
    lo_x = np.maximum(np.ceil(x0 - pad), 0.0).astype(np.int64)
    hi_x = np.minimum(np.floor(x1 + pad), width - 1.0).astype(np.int64)
    lo_y = np.maximum(np.ceil(y0 - pad), 0.0).astype(np.int64)
    hi_y = np.minimum(np.floor(y1 + pad), height - 1.0).astype(np.int64)
    nx = np.maximum(hi_x - lo_x + 1, 0)
    ny = np.maximum(hi_y - lo_y + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    face_id = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    within = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    fx_n = nx[face_id]
    px = lo_x[face_id] + within % fx_n
    py = lo_y[face_id] + within // fx_n
    return face_id, px, py


def _select_winners(xd, yd, zd, faces, width, height):
    """Coverage plus nearest-depth selection, all in plain float64 numpy.

    Returns (pixel flat index, face index, interpolated depth) per won pixel,
    sorted by pixel index. Expressions here are the single source of truth
    the differentiable re-pass and the test oracle must reproduce exactly.
    """
    i0, i1, i2 = faces[:, 0], faces[:, 1], faces[:, 2]
    ok = (zd[i0] > _NEAR_EPS) & (zd[i1] > _NEAR_EPS) & (zd[i2] > _NEAR_EPS)
    ax, ay = xd[i0], yd[i0]
    bx, by = xd[i1], yd[i1]
    cx_, cy_ = xd[i2], yd[i2]
    area2 = _edge(ax, ay, bx, by, cx_, cy_)
    ok &= np.isfinite(area2) & (area2 != 0.0)
    kept = np.nonzero(ok)[0]
    if kept.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)

    ax, ay, bx, by, cx_, cy_ = (v[kept] for v in (ax, ay, bx, by, cx_, cy_))
    area2 = area2[kept]
    bb_x0 = np.minimum(np.minimum(ax, bx), cx_)
    bb_x1 = np.maximum(np.maximum(ax, bx), cx_)
    bb_y0 = np.minimum(np.minimum(ay, by), cy_)
    bb_y1 = np.maximum(np.maximum(ay, by), cy_)
    cand_f, px, py = _candidate_pixels(bb_x0, bb_x1, bb_y0, bb_y1, width, height)
    if cand_f.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)

    pxf = px.astype(np.float64)
    pyf = py.astype(np.float64)
    cax, cay = ax[cand_f], ay[cand_f]
    cbx, cby = bx[cand_f], by[cand_f]
    ccx, ccy = cx_[cand_f], cy_[cand_f]
    e0 = _edge(cbx, cby, ccx, ccy, pxf, pyf)
    e1 = _edge(ccx, ccy, cax, cay, pxf, pyf)
    e2 = _edge(cax, cay, cbx, cby, pxf, pyf)
    s = np.where(area2[cand_f] > 0.0, 1.0, -1.0)

    def admits(dx, dy):
        return (dy > 0.0) | ((dy == 0.0) & (dx < 0.0))

    in0 = (s * e0 > 0.0) | ((e0 == 0.0) & admits(s * (ccx - cbx), s * (ccy - cby)))
    in1 = (s * e1 > 0.0) | ((e1 == 0.0) & admits(s * (cax - ccx), s * (cay - ccy)))
    in2 = (s * e2 > 0.0) | ((e2 == 0.0) & admits(s * (cbx - cax), s * (cby - cay)))
    covered = np.nonzero(in0 & in1 & in2)[0]
    if covered.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)

    cand_f = cand_f[covered]
    orig_face = kept[cand_f]
    pix = py[covered] * width + px[covered]
    ca2 = area2[cand_f]
    w0 = e0[covered] / ca2
    w1 = e1[covered] / ca2
    w2 = e2[covered] / ca2
    fi = faces[orig_face]
    depth = w0 * zd[fi[:, 0]] + w1 * zd[fi[:, 1]] + w2 * zd[fi[:, 2]]

    order = np.lexsort((orig_face, depth, pix))
    pix_s = pix[order]
    first = np.ones(pix_s.size, dtype=bool)
    first[1:] = pix_s[1:] != pix_s[:-1]
    win = order[first]
    return pix[win], orig_face[win], depth[win]


def _unpack(mesh, faces):
    if isinstance(mesh, Mesh):
        return mesh.vertices, mesh.faces
    if faces is None:
        raise ValueError("faces are required when passing raw vertices")
    return mesh, np.asarray(faces, dtype=np.int64)


def _col(w):
    return reshape(w, (w.shape[0], 1)) if isinstance(w, Tensor) else w[:, None]


def rasterize_features(mesh, camera: Camera, vertex_features, background, *, faces=None):
    """Render per-vertex features to an image, nearest triangle per pixel.

    ``mesh`` is a Mesh, or posed vertices (Tensor or array) with ``faces``
    supplied. Uncovered pixels copy ``background`` exactly. The result data
    is a Tensor whenever any tracked input makes it one.
    """
    vertices, face_arr = _unpack(mesh, faces)
    n = _data(vertices).shape[0]
    feat = vertex_features
    fd = _data(feat)
    if fd.ndim != 2 or fd.shape[0] != n:
        raise ValueError(
            f"vertex_features must have shape ({n}, D), got {fd.shape}"
        )
    bg = background
    bgd = _data(bg)
    expected = (camera.height, camera.width, fd.shape[1])
    if bgd.shape != expected:
        raise ValueError(f"background must have shape {expected}, got {bgd.shape}")
    height, width, depth_ch = bgd.shape

    pix, rows = _rasterize_rows(vertices, camera, feat, face_arr)
    mask = np.zeros(height * width, dtype=bool)
    mask[pix] = True
    mask = mask.reshape(height, width)
    flat_bg = reshape(bg, (height * width, depth_ch))
    if pix.size == 0:
        data = reshape(flat_bg, (height, width, depth_ch))
        if not isinstance(data, Tensor):
            data = data.copy()
        return FeatureImage(data=data, mask=mask)
    data = reshape(scatter_rows(flat_bg, pix, rows), (height, width, depth_ch))
    return FeatureImage(data=data, mask=mask)


def _rasterize_rows(vertices, camera: Camera, feat, face_arr):
    """Interpolated feature rows for covered pixels only, no background.

    Returns (flat pixel indices, feature rows); rows is None when nothing is
    covered. Gradients flow through the barycentric weights exactly as in
    rasterize_features, which scatters these rows over the background.
    """
    width, height = camera.width, camera.height
    x, y, z = _project(vertices, camera)
    pix, win_face, _ = _select_winners(
        _data(x), _data(y), _data(z), face_arr, width, height
    )
    if pix.size == 0:
        return pix, None
    tri = face_arr[win_face]
    i0, i1, i2 = tri[:, 0], tri[:, 1], tri[:, 2]
    qxf = (pix % width).astype(np.float64)
    qyf = (pix // width).astype(np.float64)
    ax, ay = gather_rows(x, i0), gather_rows(y, i0)
    bx, by = gather_rows(x, i1), gather_rows(y, i1)
    cx_, cy_ = gather_rows(x, i2), gather_rows(y, i2)
    area2 = _edge(ax, ay, bx, by, cx_, cy_)
    w0 = div(_edge(bx, by, cx_, cy_, qxf, qyf), area2)
    w1 = div(_edge(cx_, cy_, ax, ay, qxf, qyf), area2)
    w2 = div(_edge(ax, ay, bx, by, qxf, qyf), area2)
    f0 = gather_rows(feat, i0)
    f1 = gather_rows(feat, i1)
    f2 = gather_rows(feat, i2)
    rows = mul(_col(w0), f0) + mul(_col(w1), f1) + mul(_col(w2), f2)
    return pix, rows


def render_depth_mask(mesh, camera: Camera, *, faces=None) -> DepthMask:
    """Nearest interpolated depth per pixel (+inf where empty) and coverage."""
    vertices, face_arr = _unpack(mesh, faces)
    x, y, z = _project(_data(vertices), camera)
    pix, _, win_depth = _select_winners(x, y, z, face_arr, camera.width, camera.height)
    depth = np.full(camera.height * camera.width, np.inf)
    depth[pix] = win_depth
    mask = np.isfinite(depth)
    return DepthMask(
        depth=depth.reshape(camera.height, camera.width),
        mask=mask.reshape(camera.height, camera.width),
    )


def vertex_depths(mesh, camera: Camera, *, faces=None):
    """Camera-space Z per vertex (visible or not); differentiable."""
    vertices = mesh.vertices if isinstance(mesh, Mesh) else mesh
    pc = add(matmul(vertices, camera.rotation.T), camera.translation)
    return pc[:, 2]


def save_pgm(path, image, max_val: int = 65535) -> None:
    """Write a 2-D array as an ASCII portable graymap, linearly normalized.

    Non-finite entries map to 0. Intended for eyeballing depth/mask/channel
    dumps, not for round-tripping data.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    finite = np.isfinite(img)
    out = np.zeros_like(img)
    if finite.any():
        lo = img[finite].min()
        hi = img[finite].max()
        span = hi - lo
        if span > 0:
            out[finite] = (img[finite] - lo) / span * max_val
        else:
            out[finite] = max_val
    levels = np.rint(out).astype(np.int64)
    h, w = img.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{w} {h}\n{max_val}\n")
        for row in levels:
            fh.write(" ".join(str(v) for v in row) + "\n")
