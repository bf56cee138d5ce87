"""Model catalog: which denoisers exist and where their weights live.

Each supported pipeline family is described by a static ModelSpec so that
job validation (layer range, step budget, context length) runs before any
weights are touched. Weights are resolved under the directory named by the
``VDM_WEIGHT_CACHE`` environment variable; actual pipeline backends register
themselves under the ``vdm_exporter.denoisers`` entry-point group, keeping
this package importable without torch or multi-gigabyte checkpoints.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib.metadata import entry_points
from pathlib import Path

WEIGHT_CACHE_ENV = "VDM_WEIGHT_CACHE"
DEFAULT_CACHE = "~/.cache/vdm_exporter"


class MissingWeightsError(RuntimeError):
    """Raised when a model's weight file is absent from the cache."""


class NoBackendError(RuntimeError):
    """Raised when weights exist but no pipeline backend is registered."""


@dataclass(frozen=True)
class ModelSpec:
    """Static description of one denoiser family.

    ``feature_hw`` is the activation resolution at the hooked decoder layers
    (1/8 of the pixel resolution the family generates at); ``n_layers`` is
    how many decoder blocks can be hooked, so valid layer indices are
    0..n_layers-1.
    """

    model_id: str
    family: str
    pixel_hw: tuple[int, int]
    feature_hw: tuple[int, int]
    n_layers: int
    default_step: int
    total_steps: int = 50
    context: int = 16

    def validate_layer(self, layer: int) -> None:
        if not 0 <= layer < self.n_layers:
            raise ValueError(
                f"{self.model_id}: layer {layer} out of range "
                f"[0, {self.n_layers - 1}]"
            )

    def validate_step(self, step: int) -> None:
        if not 0 <= step < self.total_steps:
            raise ValueError(
                f"{self.model_id}: step {step} out of range "
                f"[0, {self.total_steps - 1}]"
            )


MODELS = {
    spec.model_id: spec
    for spec in (
        # text+image conditioned video composition, 1280x704-class output
        ModelSpec(
            model_id="vc-base",
            family="vc",
            pixel_hw=(704, 1280),
            feature_hw=(88, 160),
            n_layers=4,
            default_step=20,
        ),
        # image-to-video crafting, 1024x576-class output
        ModelSpec(
            model_id="dc-base",
            family="dc",
            pixel_hw=(576, 1024),
            feature_hw=(72, 128),
            n_layers=4,
            default_step=40,
        ),
    )
}


def get_model_spec(model_id: str) -> ModelSpec:
    try:
        return MODELS[model_id]
    except KeyError:
        known = ", ".join(sorted(MODELS))
        raise ValueError(f"unknown model {model_id!r}; known models: {known}") from None


def weight_cache_dir() -> Path:
    return Path(os.environ.get(WEIGHT_CACHE_ENV, DEFAULT_CACHE)).expanduser()


def resolve_weights(spec: ModelSpec) -> Path:
    path = weight_cache_dir() / spec.model_id / "weights.safetensors"
    if not path.is_file():
        raise MissingWeightsError(
            f"no weights for {spec.model_id} under {path.parent} "
            f"(set ${WEIGHT_CACHE_ENV} or pass --mock)"
        )
    return path


def load_denoiser(spec: ModelSpec):
    """Instantiate the real pipeline adapter for ``spec``.

    Resolves weights first so the common misconfiguration (no cache) fails
    with a clear message, then looks the family's factory up among installed
    backends.
    """
    weights = resolve_weights(spec)
    for ep in entry_points(group="vdm_exporter.denoisers"):
        if ep.name == spec.family:
            return ep.load()(spec, weights)
    raise NoBackendError(
        f"weights found at {weights} but no backend is registered for "
        f"family {spec.family!r}; install one exposing the "
        f"'vdm_exporter.denoisers' entry point"
    )
