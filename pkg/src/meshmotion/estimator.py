"""Estimator-style front end: configure once, fit feature videos, predict poses.

MotionFitter follows the scikit-learn calling convention (constructor stores
hyperparameters verbatim, ``fit`` validates and learns, fitted state lives in
trailing-underscore attributes, ``get_params``/``set_params`` support cloning
and grid search) without depending on scikit-learn itself.
"""

from __future__ import annotations

from dataclasses import fields

import numpy as np

from .fitting import FitConfig, fit_motion
from .models import apply_pose

__all__ = ["MotionFitter"]

_CONFIG_FIELDS = tuple(f.name for f in fields(FitConfig))


class MotionFitter:
    """Fit per-frame animation parameters of a rigged model to a feature video.

    The constructor accepts every FitConfig field as a keyword plus the two
    scene-level objects: ``model`` (any rig with deform/n_params, e.g.
    SkeletalLBS) and ``camera`` viewing it. Nothing is validated until fit.
    """

    def __init__(self, model=None, camera=None, *, w_render=5.0, w_depth=0.01,
                 w_smooth=0.1, w_fidelity=0.01, w_jacobian=0.5,
                 offset_scale=0.01, encoding_order=6, n_layers=6, hidden=256,
                 learning_rate=5e-4, iterations=1000, warmup_end=500,
                 distance="cosine", seed=0):
        self.model = model
        self.camera = camera
        self.w_render = w_render
        self.w_depth = w_depth
        self.w_smooth = w_smooth
        self.w_fidelity = w_fidelity
        self.w_jacobian = w_jacobian
        self.offset_scale = offset_scale
        self.encoding_order = encoding_order
        self.n_layers = n_layers
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.warmup_end = warmup_end
        self.distance = distance
        self.seed = seed

    _PARAM_NAMES = ("model", "camera") + _CONFIG_FIELDS

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "MotionFitter":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(
                    f"unknown parameter {name!r}; valid parameters are "
                    f"{sorted(self._PARAM_NAMES)}"
                )
            setattr(self, name, value)
        return self

    def _config(self) -> FitConfig:
        return FitConfig(**{name: getattr(self, name) for name in _CONFIG_FIELDS})

    def fit(self, X, y=None, **fit_kwargs) -> "MotionFitter":
        """Fit to a FeatureVideo ``X``; ``y`` is ignored (API symmetry).

        Extra keyword arguments (p_init, vertex_features, callback) pass
        through to the underlying optimizer.
        """
        if self.model is None or self.camera is None:
            raise ValueError("set model and camera before calling fit")
        clip = fit_motion(self.model, X, self.camera, self._config(), **fit_kwargs)
        self.clip_ = clip
        self.poses_ = clip.pose_matrix()
        self.vertices_ = clip.vertices
        self.diagnostics_ = clip.diagnostics
        self.n_frames_ = clip.n_frames
        return self

    def _check_fitted(self):
        if not hasattr(self, "clip_"):
            raise ValueError("this MotionFitter is not fitted yet; call fit first")

    def _pose_rows(self, X) -> np.ndarray:
        self._check_fitted()
        if X is None:
            return self.poses_
        idx = np.asarray(X, dtype=np.float64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() > self.n_frames_ - 1):
            raise ValueError(
                f"frame indices must lie in [0, {self.n_frames_ - 1}]"
            )
        # fitted pose offsets vary smoothly with the frame index, so linear
        # interpolation is a faithful resampling between fitted frames
        lo = np.floor(idx).astype(int)
        hi = np.minimum(lo + 1, self.n_frames_ - 1)
        t = (idx - lo)[:, None]
        return (1.0 - t) * self.poses_[lo] + t * self.poses_[hi]

    def predict(self, X=None) -> np.ndarray:
        """Pose vectors for the given (possibly fractional) frame indices.

        ``None`` returns the full fitted pose matrix (L, P).
        """
        return self._pose_rows(X)

    def transform(self, X=None) -> np.ndarray:
        """Posed vertex positions (n, V, 3) for the given frame indices."""
        poses = self._pose_rows(X)
        return np.stack([apply_pose(self.model, p).vertices for p in poses])
