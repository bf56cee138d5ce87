"""Record video-diffusion denoiser activations as FTRV feature videos."""

__version__ = "0.1.0"

from .catalog import (
    MODELS,
    MissingWeightsError,
    ModelSpec,
    NoBackendError,
    WEIGHT_CACHE_ENV,
    get_model_spec,
    load_denoiser,
    resolve_weights,
    weight_cache_dir,
)
from .export import (
    ExportJob,
    export_features,
    extract_from_video,
    metadata_fields,
    read_image,
    read_pgm,
    read_video,
)
from .mock import MockDenoiser

__all__ = [
    "ExportJob",
    "MODELS",
    "MissingWeightsError",
    "MockDenoiser",
    "ModelSpec",
    "NoBackendError",
    "WEIGHT_CACHE_ENV",
    "export_features",
    "extract_from_video",
    "get_model_spec",
    "load_denoiser",
    "metadata_fields",
    "read_image",
    "read_pgm",
    "read_video",
    "resolve_weights",
    "weight_cache_dir",
]
