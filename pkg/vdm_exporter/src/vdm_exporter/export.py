"""Export denoiser activations as FTRV feature videos.

Two entry points: ``export_features`` runs one conditioned generation and
dumps the hooked layer's activations; ``extract_from_video`` noises existing
frames to a given step and reads the activations of a single denoising pass.
Both validate everything validatable (model id, layer and step ranges, frame
budget, input files) before a denoiser is loaded, write the activation
header metadata as JSON, and emit files that the motion-fitting engine's
``read_ftrv`` accepts unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from meshmotion import FeatureVideo, write_ftrv

from .catalog import ModelSpec, get_model_spec, load_denoiser

PRODUCER = "vdm-exporter"


@dataclass(frozen=True)
class ExportJob:
    """Everything one conditioned export needs, validated on construction.

    ``layer`` indexes the decoder block whose activations are recorded and
    ``step`` the sampling step they are read at; both are checked against
    the model's catalog entry here, so a bad job never reaches weight
    loading. ``step=None`` picks the model family's preferred step.
    """

    image: str
    prompt: str
    model_id: str
    out_path: str
    layer: int = 3
    step: int | None = None
    guidance: float = 6.0
    n_frames: int = 16

    def __post_init__(self):
        spec = get_model_spec(self.model_id)
        spec.validate_layer(self.layer)
        if self.step is None:
            object.__setattr__(self, "step", spec.default_step)
        spec.validate_step(self.step)
        if self.guidance <= 0.0:
            raise ValueError(f"guidance must be positive, got {self.guidance}")
        if not 1 <= self.n_frames <= spec.context:
            raise ValueError(
                f"n_frames must lie in [1, {spec.context}], got {self.n_frames}"
            )
        if not Path(self.image).is_file():
            raise ValueError(f"conditioning image not found: {self.image}")

    @property
    def spec(self) -> ModelSpec:
        return get_model_spec(self.model_id)


def read_pgm(path) -> np.ndarray:
    """Read a P2/P5 PGM (maxval <= 65535) into floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith((b"P2", b"P5")):
        raise ValueError(f"{path}: not a P2/P5 PGM")
    binary = raw.startswith(b"P5")
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos or not raw[start:pos].isdigit():
            raise ValueError(f"{path}: malformed PGM header")
        fields.append(int(raw[start:pos]))
    width, height, maxval = fields
    if min(width, height) < 1 or not 0 < maxval <= 65535:
        raise ValueError(
            f"{path}: unsupported size {width}x{height} maxval {maxval}"
        )
    if binary:
        # one whitespace byte separates maxval from samples; wide samples
        # are two bytes, most significant first
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        payload = raw[pos + 1 : pos + 1 + width * height * dtype.itemsize]
        pixels = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        pixels = np.array(raw[pos:].split()[: width * height], dtype=np.float64)
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated payload")
    return pixels.reshape(height, width) / maxval


def read_image(path) -> np.ndarray:
    """Load a conditioning image: .npy array or grayscale PGM."""
    path = Path(path)
    if path.suffix == ".npy":
        img = np.load(path)
        if img.ndim not in (2, 3):
            raise ValueError(f"{path}: image must be (H, W[, C]), got {img.shape}")
        return np.asarray(img, dtype=np.float64)
    if path.suffix == ".pgm":
        return read_pgm(path)
    raise ValueError(f"{path}: unsupported image format (use .npy or .pgm)")


def read_video(path) -> np.ndarray:
    """Load video frames: one .npy stack or a directory of frame images."""
    path = Path(path)
    if path.is_dir():
        frame_files = sorted(
            p for p in path.iterdir() if p.suffix in (".npy", ".pgm")
        )
        if not frame_files:
            raise ValueError(f"{path}: no .npy/.pgm frames in directory")
        frames = [read_image(p) for p in frame_files]
        if any(f.shape != frames[0].shape for f in frames):
            raise ValueError(f"{path}: frames disagree on shape")
        return np.stack(frames)
    if path.suffix == ".npy":
        video = np.asarray(np.load(path), dtype=np.float64)
        if video.ndim not in (3, 4):
            raise ValueError(
                f"{path}: video must be (L, H, W[, C]), got {video.shape}"
            )
        return video
    raise ValueError(
        f"{path}: cannot decode (use an .npy stack or a frame directory)"
    )


def _check_shape(acts: np.ndarray, spec: ModelSpec, n_frames: int,
                 feature_dim: int) -> None:
    expected = (n_frames, *spec.feature_hw, feature_dim)
    if acts.shape != expected:
        raise ValueError(
            f"denoiser returned {acts.shape} but the header declares {expected}"
        )


def _metadata(source: str, spec: ModelSpec, *, prompt: str, layer: int,
              step: int, guidance: float, seed: int) -> str:
    return json.dumps(
        {
            "producer": PRODUCER,
            "source": source,
            "model": spec.model_id,
            "prompt": prompt,
            "layer": layer,
            "step": step,
            "guidance": guidance,
            "seed": seed,
        },
        sort_keys=True,
    )


def metadata_fields(metadata: str) -> dict:
    """Decode the JSON header written by this package."""
    try:
        doc = json.loads(metadata)
    except json.JSONDecodeError as exc:
        raise ValueError(f"metadata is not JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("producer") != PRODUCER:
        raise ValueError("metadata was not written by vdm-exporter")
    return doc


def export_features(job: ExportJob, *, denoiser=None, seed: int = 0,
                    steps_path=None) -> Path:
    """Run one conditioned generation and write its activations as FTRV.

    ``steps_path`` additionally records the per-sampling-step activation
    archive (.npz, arrays ``step_000``..) that reference-frame selection
    consumes downstream.
    """
    spec = job.spec
    if denoiser is None:
        denoiser = load_denoiser(spec)
    image = read_image(job.image)
    acts, steps = denoiser.generate(
        image,
        job.prompt,
        layer=job.layer,
        step=job.step,
        guidance=job.guidance,
        n_frames=job.n_frames,
        seed=seed,
        record_steps=steps_path is not None,
    )
    _check_shape(acts, spec, job.n_frames, denoiser.feature_dim)
    video = FeatureVideo(
        acts,
        reference=0,
        metadata=_metadata(
            "conditioned-generation", spec, prompt=job.prompt, layer=job.layer,
            step=job.step, guidance=job.guidance, seed=seed,
        ),
    )
    write_ftrv(video, job.out_path)
    if steps_path is not None:
        for arr in steps:
            _check_shape(arr, spec, job.n_frames, denoiser.feature_dim)
        np.savez(
            steps_path,
            **{f"step_{i:03d}": arr for i, arr in enumerate(steps)},
        )
    return Path(job.out_path)


def extract_from_video(video_path, model_id: str, step: int | None = None,
                       layer: int = 3, *, out_path=None, denoiser=None,
                       seed: int = 0) -> Path:
    """Noise existing frames to ``step`` and dump one pass's activations."""
    spec = get_model_spec(model_id)
    spec.validate_layer(layer)
    if step is None:
        step = spec.default_step
    spec.validate_step(step)
    frames = read_video(video_path)
    if frames.shape[0] > spec.context:
        raise ValueError(
            f"{frames.shape[0]} frames exceed the model context {spec.context}"
        )
    if denoiser is None:
        denoiser = load_denoiser(spec)
    acts = denoiser.extract(frames, layer=layer, step=step, seed=seed)
    _check_shape(acts, spec, frames.shape[0], denoiser.feature_dim)
    if out_path is None:
        out_path = Path(video_path).with_suffix(".ftrv")
    video = FeatureVideo(
        acts,
        reference=0,
        metadata=_metadata(
            "video-extraction", spec, prompt="", layer=layer, step=step,
            guidance=0.0, seed=seed,
        ),
    )
    write_ftrv(video, out_path)
    return Path(out_path)
