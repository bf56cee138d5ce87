"""Feature videos: the FTRV interchange format and the frame-0 feature bridge.

FTRV binary layout, all integers little-endian:

    magic   4 bytes       b"FTRV"
    version u8            1
    dims    4 x u32       L, H, W, D
    ref     u32           reference frame index
    mask    u8            1 when a reference foreground mask follows payload
    meta    u32 + bytes   UTF-8 producer string (sampled step, timestep, model)
    payload L*H*W*D f32   frame-major, row-major, channel-last
    mask    H*W u8        only when the mask flag is set

The payload is exactly the float32 tensor; round-trips are bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .mesh import Camera, Mesh
from .raster import _NEAR_EPS, _project, render_depth_mask

_MAGIC = b"FTRV"
_VERSION = 1
_MAX_ELEMENTS = 1 << 40


@dataclass(frozen=True)
class FeatureVideo:
    """L frames of H x W x D features plus reference-frame bookkeeping."""

    data: np.ndarray
    reference: int = 0
    mask: np.ndarray | None = None
    metadata: str = ""

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 4 or data.shape[0] < 1:
            raise ValueError(
                f"feature video needs shape (L, H, W, D) with L >= 1, "
                f"got {data.shape}"
            )
        object.__setattr__(self, "data", data)
        if not 0 <= self.reference < data.shape[0]:
            raise ValueError(
                f"reference frame {self.reference} out of range for "
                f"{data.shape[0]} frames"
            )
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != data.shape[1:3]:
                raise ValueError(
                    f"mask shape {mask.shape} does not match frames "
                    f"{data.shape[1:3]}"
                )
            object.__setattr__(self, "mask", mask)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def frame_shape(self) -> tuple:
        return self.data.shape[1:]


@dataclass(frozen=True)
class VertexFeatures:
    """Per-vertex feature rows sampled from a reference frame."""

    features: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if feats.ndim != 2 or vis.shape != (feats.shape[0],):
            raise ValueError(
                f"features {feats.shape} and visibility {vis.shape} disagree"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "visible", vis)


def write_ftrv(fv: FeatureVideo, path) -> None:
    l, h, w, d = fv.data.shape
    if max(l, h, w, d) >= 1 << 32:
        raise ValueError(f"shape {fv.data.shape} overflows the u32 header")
    meta = fv.metadata.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        fh.write(struct.pack("<4I", l, h, w, d))
        fh.write(struct.pack("<I", fv.reference))
        fh.write(struct.pack("<B", 0 if fv.mask is None else 1))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(fv.data.astype("<f4", copy=False).tobytes())
        if fv.mask is not None:
            fh.write(fv.mask.astype(np.uint8).tobytes())


def read_ftrv(path) -> FeatureVideo:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not an FTRV file (bad magic)")
    if len(blob) < 30:
        raise ValueError(f"{path}: truncated header")
    version = blob[4]
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported FTRV version {version}")
    l, h, w, d = struct.unpack_from("<4I", blob, 5)
    reference = struct.unpack_from("<I", blob, 21)[0]
    mask_flag = blob[25]
    meta_len = struct.unpack_from("<I", blob, 26)[0]
    cursor = 30
    if len(blob) < cursor + meta_len:
        raise ValueError(f"{path}: truncated metadata")
    metadata = blob[cursor : cursor + meta_len].decode("utf-8")
    cursor += meta_len

    n_elem = l * h * w * d
    if n_elem > _MAX_ELEMENTS:
        raise ValueError(f"{path}: header shape ({l}, {h}, {w}, {d}) overflows")
    need = n_elem * 4
    if len(blob) < cursor + need:
        raise ValueError(
            f"{path}: truncated payload, expected {need} bytes, "
            f"found {len(blob) - cursor}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=n_elem, offset=cursor)
    data = data.reshape(l, h, w, d)
    cursor += need

    mask = None
    if mask_flag:
        if len(blob) < cursor + h * w:
            raise ValueError(f"{path}: truncated mask")
        mask = (
            np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=cursor)
            .reshape(h, w)
            .astype(bool)
        )
        cursor += h * w
    if cursor != len(blob):
        raise ValueError(f"{path}: {len(blob) - cursor} unexpected trailing bytes")
    return FeatureVideo(data, reference=int(reference), mask=mask,
                        metadata=metadata)


def project_features_to_vertices(
    fv: FeatureVideo, mesh: Mesh, camera: Camera
) -> VertexFeatures:
    """Sample the reference frame at each vertex projection (projective texturing).

    Projections happen at the camera's RGB resolution and are scaled by
    (W_feat / W, H_feat / H) before bilinear sampling. Every vertex gets a
    feature row; the visibility flags are diagnostics only. They come from the
    reference foreground mask when present, otherwise from a depth test
    against the rendered mesh (tolerance 1e-4 of the bounding-box diagonal).
    Behind-camera vertices are flagged invisible and receive the clamped
    border sample of their rotated position (depth treated as 1).
    """
    ref = fv.data[fv.reference].astype(np.float64)
    h_feat, w_feat, _ = ref.shape
    x, y, z = _project(mesh.vertices, camera)
    sx = w_feat / camera.width
    sy = h_feat / camera.height
    xs = np.clip(x * sx, 0.0, w_feat - 1.0)
    ys = np.clip(y * sy, 0.0, h_feat - 1.0)

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w_feat - 1)
    y1 = np.minimum(y0 + 1, h_feat - 1)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[:, None]
    top = (1.0 - fx) * ref[y0, x0] + fx * ref[y0, x1]
    bot = (1.0 - fx) * ref[y1, x0] + fx * ref[y1, x1]
    feats = (1.0 - fy) * top + fy * bot

    in_front = z > _NEAR_EPS
    if fv.mask is not None:
        px = np.clip(np.rint(xs), 0, w_feat - 1).astype(np.int64)
        py = np.clip(np.rint(ys), 0, h_feat - 1).astype(np.int64)
        visible = in_front & fv.mask[py, px]
    else:
        dm = render_depth_mask(mesh.vertices, camera, faces=mesh.faces)
        px = np.clip(np.rint(x), 0, camera.width - 1).astype(np.int64)
        py = np.clip(np.rint(y), 0, camera.height - 1).astype(np.int64)
        tol = 1e-4 * mesh.bbox_diagonal()
        # empty pixels carry depth +inf, so silhouette-edge vertices whose
        # nearest pixel the rasterizer left uncovered still count as visible
        visible = in_front & (z <= dm.depth[py, px] + tol)
    return VertexFeatures(feats, visible)


def inpaint_background_features(frame, mask) -> np.ndarray:
    """Fill the foreground region with the per-channel mean of the background.

    ``mask`` is True on foreground. Background texels pass through untouched,
    so the result is a plausible constant backdrop where the object stood. An
    all-foreground mask falls back to the global per-channel mean.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3:
        raise ValueError(f"expected an (H, W, D) frame, got {frame.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match frame {frame.shape}")
    background = ~mask
    if background.any():
        fill = frame[background].mean(axis=0)
    else:
        fill = frame.reshape(-1, frame.shape[2]).mean(axis=0)
    out = frame.copy()
    out[mask] = fill
    return out


def _flat_cosine(a: np.ndarray, b: np.ndarray) -> float:
    af = a.ravel()
    bf = b.ravel()
    denom = max(float(np.linalg.norm(af) * np.linalg.norm(bf)), 1e-30)
    return float(af @ bf / denom)


def select_reference_frame(per_step_features) -> int:
    """Pick the frame whose features drift least across producer steps.

    For each consecutive step pair, per-frame flattened cosine similarities
    are z-scored across frames (zeros when the spread is zero) and summed;
    the frame with the highest total wins, ties resolving to the lowest index.
    """
    steps = [np.asarray(s, dtype=np.float64) for s in per_step_features]
    if len(steps) < 2:
        raise ValueError(f"need at least 2 producer steps, got {len(steps)}")
    shape = steps[0].shape
    if len(shape) != 4:
        raise ValueError(f"steps must be (L, H, W, D) tensors, got {shape}")
    for s in steps[1:]:
        if s.shape != shape:
            raise ValueError(f"step shapes disagree: {s.shape} vs {shape}")
    n_frames = shape[0]
    scores = np.zeros(n_frames)
    for prev, cur in zip(steps, steps[1:]):
        sims = np.array(
            [_flat_cosine(cur[l], prev[l]) for l in range(n_frames)]
        )
        sd = sims.std()
        if sd > 0:
            scores += (sims - sims.mean()) / sd
    return int(np.argmax(scores))
