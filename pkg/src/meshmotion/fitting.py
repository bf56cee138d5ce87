"""Pose-sequence optimization against a dense feature video.

The pipeline: project the reference frame's features onto the mesh vertices,
inpaint a constant background, then run Adam on a small MLP that regresses a
per-frame pose offset from a frequency-encoded frame index. Each iteration
rasterizes the posed mesh and scores it with a rendering loss plus depth,
smoothness, fidelity, and (for Jacobian-field models) deformation-gradient
regularizers. Frames enter the objective gradually: the active frame count
grows linearly from 1 to L across the warm-up window, and frames beyond it
contribute nothing.

Loss normalization follows a fixed convention: the smoothness and fidelity
terms divide by the vertex count N even though pose vectors are P-dimensional.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    _data,
    absolute,
    add,
    backward,
    cosine_similarity_rows,
    div,
    matmul,
    mul,
    reshape,
    sqrt,
    sub,
    tanh,
    tensor_mean,
    tensor_sum,
)
from .features import (
    FeatureVideo,
    inpaint_background_features,
    project_features_to_vertices,
)
from .mesh import Camera, Mesh, as_float_array, save_mesh
from .models import JacobianField, PoseVector, apply_pose
from .optim import adam_init, adam_step
from .raster import _rasterize_rows, render_depth_mask, vertex_depths

__all__ = [
    "FitConfig",
    "PoseRegressor",
    "AnimationClip",
    "frequency_encode",
    "active_frame_count",
    "loss_render",
    "loss_depth",
    "loss_smooth",
    "loss_fidelity",
    "loss_jacobian",
    "total_loss",
    "reference_alignment_cosine",
    "fit_motion",
    "save_clip",
    "load_clip",
    "diagnostics_log_lines",
]

_CLIP_FORMAT = "meshmotion-clip"
_CLIP_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    """Weights, regressor shape, and optimizer schedule for fit_motion."""

    w_render: float = 5.0
    w_depth: float = 0.01
    w_smooth: float = 0.1
    w_fidelity: float = 0.01
    w_jacobian: float = 0.5
    offset_scale: float = 0.01
    encoding_order: int = 6
    n_layers: int = 6
    hidden: int = 256
    learning_rate: float = 5e-4
    iterations: int = 1000
    warmup_end: int = 500
    distance: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        for name in ("w_render", "w_depth", "w_smooth", "w_fidelity", "w_jacobian"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.offset_scale <= 0:
            raise ValueError("offset_scale must be positive")
        if self.encoding_order < 1:
            raise ValueError("encoding_order must be at least 1")
        if self.n_layers < 2:
            raise ValueError("n_layers must be at least 2")
        if self.hidden < 1:
            raise ValueError("hidden must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if not 0 <= self.warmup_end <= self.iterations:
            raise ValueError("warmup_end must lie in [0, iterations]")
        if self.distance not in ("cosine", "mse"):
            raise ValueError(f"unknown distance mode {self.distance!r}")


def frequency_encode(l, k: int = 6):
    """(l, sin(2^0*pi*l), cos(2^0*pi*l), ..., sin(2^(k-1)*pi*l), cos(2^(k-1)*pi*l)).

    ``l`` is a normalized frame index (scalar or array); an array input yields
    one encoding row per entry.
    """
    if k < 1:
        raise ValueError("encoding order k must be at least 1")
    l = np.asarray(l, dtype=np.float64)
    angles = l[..., None] * (np.pi * 2.0 ** np.arange(k))
    out = np.empty(l.shape + (2 * k + 1,))
    out[..., 0] = l
    out[..., 1::2] = np.sin(angles)
    out[..., 2::2] = np.cos(angles)
    return out


def active_frame_count(iteration: int, n_frames: int, warmup_end: int = 500) -> int:
    """Frames included in the loss at one iteration: 1 at the start, all after
    the warm-up window, linear (round half up) in between."""
    if n_frames < 1:
        raise ValueError("n_frames must be positive")
    frac = 1.0 if warmup_end <= 0 else min(iteration / warmup_end, 1.0)
    return int(np.floor(1.0 + (n_frames - 1) * frac + 0.5))


class PoseRegressor:
    """MLP from a frequency-encoded frame index to a raw pose offset.

    Dense layers with tanh hidden activations and a linear, zero-initialized
    final layer, so the regressed offsets start exactly at zero and fitting
    begins from p_init.
    """

    def __init__(self, n_params: int, *, n_layers: int = 6, hidden: int = 256,
                 encoding_order: int = 6, seed: int = 0):
        if n_params < 1:
            raise ValueError("n_params must be positive")
        if n_layers < 2:
            raise ValueError("n_layers must be at least 2")
        rng = np.random.default_rng(seed)
        dims = [2 * encoding_order + 1] + [hidden] * (n_layers - 1) + [n_params]
        self.encoding_order = encoding_order
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(n_layers):
            fan_in, fan_out = dims[i], dims[i + 1]
            if i == n_layers - 1:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def parameter_names(self) -> list:
        out = []
        for i in range(len(self.weights)):
            out.append(f"layer{i}.weight")
            out.append(f"layer{i}.bias")
        return out

    def set_parameters(self, values: list) -> None:
        """Overwrite weights and biases from an alternating [w0, b0, ...] list."""
        current = self.parameters()
        if len(values) != len(current):
            raise ValueError(
                f"expected {len(current)} parameter arrays, got {len(values)}"
            )
        for old, new in zip(current, values):
            if np.shape(new) != old.shape:
                raise ValueError(
                    f"parameter shape {np.shape(new)} does not match {old.shape}"
                )
        n = len(self.weights)
        for i in range(n):
            self.weights[i] = np.asarray(values[2 * i], dtype=np.float64)
            self.biases[i] = np.asarray(values[2 * i + 1], dtype=np.float64)

    def leaves(self, tape: Tape) -> list:
        """Register every weight and bias on ``tape``; order matches parameters()."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append(tape.leaf(w, name=f"layer{i}.weight"))
            out.append(tape.leaf(b, name=f"layer{i}.bias"))
        return out

    @staticmethod
    def forward(params, encodings):
        """Run the MLP given an alternating [w0, b0, w1, b1, ...] param list.

        Tensor params give a differentiable result; plain arrays fold to numpy.
        """
        h = encodings
        n_layers = len(params) // 2
        for i in range(n_layers):
            h = add(matmul(h, params[2 * i]), params[2 * i + 1])
            if i < n_layers - 1:
                h = tanh(h)
        return h

    def offsets(self, l_norm) -> np.ndarray:
        """Raw (unscaled) offsets for normalized frame indices, plain numpy."""
        enc = frequency_encode(l_norm, self.encoding_order)
        return _data(self.forward(self.parameters(), enc))


# ---------------------------------------------------------------------------
# losses


def _frame_list(frames, what: str):
    """Normalize (L, ...) arrays / FeatureVideo / sequences to per-frame items."""
    if isinstance(frames, FeatureVideo):
        return [frames.data[i].astype(np.float64) for i in range(frames.n_frames)]
    if isinstance(frames, (Tensor, np.ndarray)):
        return [frames[i] for i in range(_data(frames).shape[0])]
    if isinstance(frames, (list, tuple)):
        return list(frames)
    raise TypeError(f"{what} must be an array, FeatureVideo, or sequence of frames")


def _image_data(frame):
    if hasattr(frame, "data") and hasattr(frame, "mask"):  # FeatureImage
        return frame.data
    return frame


def loss_render(rendered, target, mode: str = "cosine"):
    """Feature mismatch over full frames.

    cosine: 1 - mean per-pixel cosine similarity across all frames and pixels
    (zero-vector pairs guarded). mse: plain mean squared difference over every
    frame, pixel, and channel.
    """
    if mode not in ("cosine", "mse"):
        raise ValueError(f"unknown distance mode {mode!r}")
    rend = [_image_data(f) for f in _frame_list(rendered, "rendered")]
    tgt = [_image_data(f) for f in _frame_list(target, "target")]
    if len(rend) != len(tgt) or not rend:
        raise ValueError(
            f"rendered has {len(rend)} frames, target has {len(tgt)}"
        )
    total = 0.0
    pixel_count = 0
    for r, t in zip(rend, tgt):
        shape = _data(r).shape
        if shape != _data(t).shape or len(shape) != 3:
            raise ValueError(
                f"frame shapes disagree: {shape} vs {_data(t).shape}"
            )
        h, w, d = shape
        flat_r = reshape(r, (h * w, d))
        flat_t = reshape(t, (h * w, d))
        if mode == "cosine":
            total = add(total, tensor_sum(cosine_similarity_rows(flat_r, flat_t)))
            pixel_count += h * w
        else:
            diff = sub(flat_r, flat_t)
            total = add(total, tensor_sum(mul(diff, diff)))
            pixel_count += h * w * d
    mean = div(total, float(pixel_count))
    return sub(1.0, mean) if mode == "cosine" else mean


def loss_depth(depths):
    """Mean absolute change of mean-centered vertex depths relative to frame 0.

    ``depths`` is an (L, N) array or a sequence of per-frame N-vectors; frame 0
    anchors the comparison, so global depth shifts cancel.
    """
    frames = _frame_list(depths, "depths")
    n = _data(frames[0]).size
    ref = sub(tensor_mean(frames[0]), frames[0])
    total = 0.0
    for d in frames:
        if _data(d).size != n:
            raise ValueError("depth frames must all have the same vertex count")
        total = add(total, tensor_sum(absolute(sub(ref, sub(tensor_mean(d), d)))))
    return div(total, float(len(frames) * n))


def _pose_matrix(poses, what: str):
    if isinstance(poses, (Tensor, np.ndarray)):
        if len(_data(poses).shape) != 2:
            raise ValueError(f"{what} must be 2-D (L, P)")
        return poses, _data(poses).shape[0]
    rows = [p.p if isinstance(p, PoseVector) else np.asarray(p, dtype=np.float64)
            for p in poses]
    return np.stack(rows), len(rows)


def loss_smooth(poses, n_vertices: int):
    """L1 of consecutive pose differences, averaged over (L-1) steps times the
    vertex count."""
    mat, L = _pose_matrix(poses, "poses")
    if L < 2:
        raise ValueError("loss_smooth needs L >= 2 frames")
    diff = sub(mat[: L - 1], mat[1:])
    return div(tensor_sum(absolute(diff)), float((L - 1) * n_vertices))


def loss_fidelity(offsets, n_vertices: int):
    """L1 of pose offsets from p_init, averaged over L frames times the vertex
    count."""
    mat, L = _pose_matrix(offsets, "offsets")
    return div(tensor_sum(absolute(mat)), float(L * n_vertices))


def loss_jacobian(jacobians):
    """Frobenius plus entrywise-L1 distance of per-face Jacobians from the
    identity, averaged with the 1/(2M) factor."""
    shape = _data(jacobians).shape
    if len(shape) != 3 or shape[1:] != (3, 3):
        raise ValueError(f"jacobians must be (M, 3, 3), got {shape}")
    delta = sub(jacobians, np.eye(3))
    fro = sqrt(tensor_sum(mul(delta, delta), axis=(1, 2)))
    l1 = tensor_sum(absolute(delta), axis=(1, 2))
    return div(tensor_sum(add(fro, l1)), float(2 * shape[0]))


def total_loss(render, depth, smooth, fidelity, *, jacobian=None, config=None):
    """Weighted objective; the Jacobian term joins only when one is supplied."""
    cfg = config if config is not None else FitConfig()
    total = add(
        add(mul(cfg.w_render, render), mul(cfg.w_depth, depth)),
        add(mul(cfg.w_smooth, smooth), mul(cfg.w_fidelity, fidelity)),
    )
    if jacobian is not None:
        total = add(total, mul(cfg.w_jacobian, jacobian))
    return total


# ---------------------------------------------------------------------------
# the optimization loop


@dataclass(frozen=True)
class AnimationClip:
    """Fitted per-frame poses, their posed vertices, and fit diagnostics."""

    poses: tuple
    vertices: np.ndarray | None
    diagnostics: dict

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("a clip needs at least one frame")
        dim = self.poses[0].p.size
        if any(p.p.size != dim for p in self.poses):
            raise ValueError("pose vectors must share one dimension")
        if self.vertices is not None and len(self.vertices) != len(self.poses):
            raise ValueError("vertex frames and poses disagree in length")

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    def pose_matrix(self) -> np.ndarray:
        return np.stack([p.p for p in self.poses])


def _row_cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = (a * b).sum(axis=-1)
    denom = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return num / np.maximum(denom, 1e-30)


def reference_alignment_cosine(model, video: FeatureVideo, camera: Camera,
                               *, p_init=None, vertex_features=None) -> float:
    """Mean cosine between the rest-pose render and the reference frame.

    Covered pixels only; 0.0 when nothing rasterizes. Values near 1 mean the
    reference frame really shows the model at ``p_init``; low values predict
    a poor fit because the projected vertex descriptors start out wrong.
    """
    if not isinstance(video, FeatureVideo):
        raise TypeError("video must be a FeatureVideo")
    h, w, d = video.frame_shape
    if p_init is None:
        p_init = np.zeros(model.n_params)
    p_init = as_float_array(p_init, "p_init", shape=(model.n_params,))
    rest = apply_pose(model, p_init)
    feat_cam = camera.scaled(w / camera.width, h / camera.height, w, h)
    if vertex_features is None:
        feats = project_features_to_vertices(video, rest, camera).features
    else:
        feats = as_float_array(vertex_features, "vertex_features",
                               shape=(rest.vertices.shape[0], d))
    pix, rows = _rasterize_rows(rest.vertices, feat_cam, feats, rest.faces)
    if not pix.size:
        return 0.0
    target = video.data[video.reference].astype(np.float64).reshape(h * w, d)
    return float(_row_cosines(_data(rows), target[pix]).mean())


def fit_motion(model, video: FeatureVideo, camera: Camera, config: FitConfig | None = None,
               *, p_init=None, vertex_features=None, callback=None) -> AnimationClip:
    """Optimize per-frame poses of ``model`` so its rasterized features track
    ``video``.

    ``camera`` views the scene at its own (RGB) resolution; rendering happens
    at the video's resolution through a proportionally scaled camera. Vertex
    descriptors come from the reference frame at p_init (projective texturing)
    unless ``vertex_features`` supplies exact ones; the rasterization backdrop
    comes from background inpainting of the reference frame. Deterministic for
    a fixed config. Raises FloatingPointError (with the iteration index) if
    the loss or a gradient goes non-finite.
    """
    cfg = config if config is not None else FitConfig()
    if not isinstance(video, FeatureVideo):
        raise TypeError("video must be a FeatureVideo")
    L = video.n_frames
    h, w, d = video.frame_shape
    if L < 2 and cfg.w_smooth > 0:
        raise ValueError(
            "smoothness needs L >= 2 frames; set w_smooth=0 for single-frame fits"
        )
    mesh = model.mesh
    n_verts = mesh.vertices.shape[0]
    if p_init is None:
        p_init = np.zeros(model.n_params)
    p_init = as_float_array(p_init, "p_init", shape=(model.n_params,))
    rest = apply_pose(model, p_init)

    feat_cam = camera.scaled(w / camera.width, h / camera.height, w, h)
    if vertex_features is None:
        feats = project_features_to_vertices(video, rest, camera).features
    else:
        feats = as_float_array(vertex_features, "vertex_features",
                               shape=(n_verts, d))
    mask = video.mask
    if mask is None:
        mask = render_depth_mask(rest, feat_cam).mask
    background = inpaint_background_features(
        video.data[video.reference].astype(np.float64), mask
    )

    targets = video.data.astype(np.float64).reshape(L, h * w, d)
    bg_flat = background.reshape(h * w, d)
    if cfg.distance == "cosine":
        bg_per_pixel = np.stack([_row_cosines(bg_flat, targets[l]) for l in range(L)])
    else:
        bg_per_pixel = np.stack(
            [((bg_flat - targets[l]) ** 2).sum(axis=1) for l in range(L)]
        )
    bg_totals = bg_per_pixel.sum(axis=1)

    # diagnostic: how well the reference frame matches the rest-pose render
    reference_cosine = reference_alignment_cosine(
        model, video, camera, p_init=p_init, vertex_features=feats
    )

    l_norm = np.arange(L) / (L - 1) if L > 1 else np.zeros(1)
    encodings = frequency_encode(l_norm, cfg.encoding_order)
    regressor = PoseRegressor(
        model.n_params,
        n_layers=cfg.n_layers,
        hidden=cfg.hidden,
        encoding_order=cfg.encoding_order,
        seed=cfg.seed,
    )
    names = regressor.parameter_names()
    params = dict(zip(names, regressor.parameters()))
    adam = adam_init(params, lr=cfg.learning_rate)
    is_njf = isinstance(model, JacobianField)
    faces = mesh.faces
    history = []
    started = time.perf_counter()

    for i in range(cfg.iterations):
        n_act = active_frame_count(i, L, cfg.warmup_end)
        tape = Tape()
        leaves = regressor.leaves(tape)
        raw = PoseRegressor.forward(leaves, encodings[:n_act])
        pose_offsets = mul(cfg.offset_scale, raw)
        poses = add(pose_offsets, p_init[None, :])

        match_total = 0.0
        depth_frames = []
        jac_total = 0.0
        for l in range(n_act):
            verts = model.deform(poses[l])
            pix, rows = _rasterize_rows(verts, feat_cam, feats, faces)
            if rows is None:
                frame_match = bg_totals[l]
            else:
                if cfg.distance == "cosine":
                    covered = tensor_sum(
                        cosine_similarity_rows(rows, targets[l][pix])
                    )
                else:
                    diff = sub(rows, targets[l][pix])
                    covered = tensor_sum(mul(diff, diff))
                frame_match = add(
                    covered, bg_totals[l] - bg_per_pixel[l][pix].sum()
                )
            match_total = add(match_total, frame_match)
            depth_frames.append(vertex_depths(verts, feat_cam))
            if is_njf:
                jacs = add(
                    reshape(poses[l][: 9 * model.n_faces], (model.n_faces, 3, 3)),
                    np.eye(3),
                )
                jac_total = add(jac_total, loss_jacobian(jacs))

        if cfg.distance == "cosine":
            l_render = sub(1.0, div(match_total, float(n_act * h * w)))
        else:
            l_render = div(match_total, float(n_act * h * w * d))
        l_depth = loss_depth(depth_frames)
        l_smooth = loss_smooth(poses, n_verts) if n_act >= 2 else 0.0
        l_fidelity = loss_fidelity(pose_offsets, n_verts)
        l_jac = div(jac_total, float(n_act)) if is_njf else None
        loss = total_loss(
            l_render, l_depth, l_smooth, l_fidelity, jacobian=l_jac, config=cfg
        )

        try:
            grads = backward(tape, loss)
        except FloatingPointError as err:
            raise FloatingPointError(f"{err} (iteration {i})") from err
        params = adam_step(
            params, dict(zip(names, (grads[leaf] for leaf in leaves))), adam
        )
        regressor.set_parameters([params[name] for name in names])

        history.append(
            {
                "iteration": i,
                "active_frames": n_act,
                "render": float(_data(l_render)),
                "depth": float(_data(l_depth)),
                "smooth": float(_data(l_smooth)),
                "fidelity": float(_data(l_fidelity)),
                "jacobian": float(_data(l_jac)) if is_njf else 0.0,
                "total": float(_data(loss)),
            }
        )
        if callback is not None:
            callback(i, history[-1])

    wall_time = time.perf_counter() - started
    final_offsets = cfg.offset_scale * regressor.offsets(l_norm)
    pose_rows = final_offsets + p_init[None, :]
    pose_vectors = [PoseVector(pose_rows[l], frame=l) for l in range(L)]
    vertices = np.stack(
        [apply_pose(model, pv).vertices for pv in pose_vectors]
    )
    final = history[-1]
    diagnostics = {
        "losses": {k: final[k] for k in
                   ("render", "depth", "smooth", "fidelity", "jacobian", "total")},
        "iterations": cfg.iterations,
        "wall_time": wall_time,
        "reference_cosine": reference_cosine,
        "distance": cfg.distance,
        "history": history,
    }
    return AnimationClip(poses=pose_vectors, vertices=vertices,
                         diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# clip serialization


def save_clip(path, clip: AnimationClip, *, mesh: Mesh | None = None) -> None:
    """Write a clip as versioned JSON; with ``mesh``, also dump one OBJ per
    frame (stem_f000.obj, ...) next to it."""
    import pathlib

    path = pathlib.Path(path)
    doc = {
        "format": _CLIP_FORMAT,
        "version": _CLIP_VERSION,
        "poses": [p.p.tolist() for p in clip.poses],
        "diagnostics": clip.diagnostics,
    }
    path.write_text(json.dumps(doc, indent=1))
    if mesh is not None:
        if clip.vertices is None:
            raise ValueError("clip has no vertex frames to dump")
        for l in range(clip.n_frames):
            save_mesh(mesh.with_vertices(clip.vertices[l]),
                      path.with_name(f"{path.stem}_f{l:03d}.obj"))


def load_clip(path, model=None) -> AnimationClip:
    """Read a clip written by save_clip; with ``model``, rebuild the vertex
    frames through apply_pose."""
    import pathlib

    text = pathlib.Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ValueError(f"not a clip file: {err}") from err
    if doc.get("format") != _CLIP_FORMAT:
        raise ValueError(f"unrecognized clip format tag {doc.get('format')!r}")
    if doc.get("version") != _CLIP_VERSION:
        raise ValueError(f"unsupported clip version {doc.get('version')!r}")
    rows = doc.get("poses")
    if not rows:
        raise ValueError("clip file holds no poses")
    poses = [PoseVector(np.asarray(row, dtype=np.float64), frame=l)
             for l, row in enumerate(rows)]
    vertices = None
    if model is not None:
        vertices = np.stack([apply_pose(model, p).vertices for p in poses])
    return AnimationClip(poses=poses, vertices=vertices,
                         diagnostics=doc.get("diagnostics", {}))


def diagnostics_log_lines(clip: AnimationClip) -> list:
    """One line per recorded iteration: index plus every loss component."""
    lines = []
    for row in clip.diagnostics.get("history", []):
        lines.append(
            "iter={iteration} active={active_frames} render={render:.6e} "
            "depth={depth:.6e} smooth={smooth:.6e} fidelity={fidelity:.6e} "
            "jacobian={jacobian:.6e} total={total:.6e}".format(**row)
        )
    return lines
