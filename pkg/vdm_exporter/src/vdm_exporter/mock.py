"""Deterministic stand-in for a real video-diffusion denoiser.

The mock honors the same duck-typed surface a pipeline backend must expose
(``feature_dim``, ``generate``, ``extract``) but derives every activation
from a PCG64 stream seeded by a digest of the inputs. It deliberately sticks
to integer draws, ``Generator.random`` and elementwise arithmetic: no
transcendental functions, so outputs are byte-identical across platforms and
the golden-file test stays meaningful.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .catalog import ModelSpec


def _digest_seed(*parts) -> int:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(str(part).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


def _signed(rng: np.random.Generator, shape) -> np.ndarray:
    return 2.0 * rng.random(shape) - 1.0


def _pool(frame: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    """Mean-pool a 2-D array onto an (h, w) grid with integer bin edges."""
    h, w = hw
    src_h, src_w = frame.shape
    ys = (np.arange(h + 1) * src_h) // h
    xs = (np.arange(w + 1) * src_w) // w
    rows = np.add.reduceat(frame, ys[:-1], axis=0)
    cells = np.add.reduceat(rows, xs[:-1], axis=1)
    areas = np.diff(ys)[:, None] * np.diff(xs)[None, :]
    return cells / np.maximum(areas, 1)


class MockDenoiser:
    """Emits deterministic activations shaped like a cataloged model's layers.

    ``constant`` short-circuits generation to a uniform payload, which is
    handy for plumbing tests where any structure would be noise.
    """

    def __init__(self, spec: ModelSpec, feature_dim: int = 8,
                 constant: float | None = None):
        if feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        self.spec = spec
        self.feature_dim = int(feature_dim)
        self.constant = constant

    def _field(self, rng: np.random.Generator, n_frames: int) -> np.ndarray:
        h, w = self.spec.feature_hw
        d = self.feature_dim
        rows = _signed(rng, (h, 1, d))
        cols = _signed(rng, (1, w, d))
        per_frame = 0.3 * _signed(rng, (n_frames, 1, 1, d))
        return (rows * cols)[None] + per_frame

    def generate(self, conditioning: np.ndarray, prompt: str, *, layer: int,
                 step: int, guidance: float, n_frames: int, seed: int,
                 record_steps: bool = False):
        """One conditioned generation: activations at (layer, step).

        With ``record_steps`` the per-sampling-step activations leading down
        to ``step`` are returned as well, newest last; frames drift across
        steps by individually drawn amounts so downstream reference-frame
        selection has real structure to rank.
        """
        self.spec.validate_layer(layer)
        self.spec.validate_step(step)
        key = _digest_seed(
            "generate", self.spec.model_id, conditioning.tobytes(),
            conditioning.shape, prompt, layer, step, guidance, n_frames, seed,
        )
        rng = np.random.default_rng(key)
        shape = (n_frames, *self.spec.feature_hw, self.feature_dim)
        if self.constant is not None:
            acts = np.full(shape, self.constant, dtype=np.float32)
            steps = [acts.copy() for _ in range(2)] if record_steps else None
            return acts, steps

        base = self._field(rng, n_frames) * (guidance / 6.0) + 0.05 * layer
        acts = base.astype(np.float32)
        steps = None
        if record_steps:
            drift = 0.05 + 0.95 * rng.random(n_frames)
            drift[int(rng.integers(n_frames))] = 0.01
            steps = []
            for _ in range(5):
                wiggle = drift[:, None, None, None] * _signed(rng, base.shape)
                steps.append((base + 0.1 * wiggle).astype(np.float32))
            steps.append(acts)
        return acts, steps

    def extract(self, video: np.ndarray, *, layer: int, step: int,
                seed: int) -> np.ndarray:
        """Noise the given frames to ``step`` and read layer activations."""
        self.spec.validate_layer(layer)
        self.spec.validate_step(step)
        frames = np.asarray(video, dtype=np.float64)
        if frames.ndim == 4:
            frames = frames.mean(axis=3)
        if frames.ndim != 3:
            raise ValueError(f"video must be (L, H, W[, C]), got {frames.shape}")
        key = _digest_seed(
            "extract", self.spec.model_id, frames.tobytes(), frames.shape,
            layer, step, seed,
        )
        rng = np.random.default_rng(key)
        pooled = np.stack([_pool(f, self.spec.feature_hw) for f in frames])
        level = step / self.spec.total_steps
        noisy = (1.0 - level) * pooled + level * _signed(rng, pooled.shape)
        gain = _signed(rng, self.feature_dim)
        bias = _signed(rng, self.feature_dim)
        acts = noisy[..., None] * gain + bias + 0.05 * layer
        return acts.astype(np.float32)
