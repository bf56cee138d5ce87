"""Command-line front end mirroring the motion-fitting tool's conventions.

Subcommands write their artifacts plus a ``manifest.json`` (resolved config,
sha256 of it, component versions) into ``--out``. Exit codes: 0 success,
1 numerical failure, 2 usage or validation errors. All validation runs
before any model work starts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import meshmotion
import numpy as np

from . import __version__
from .catalog import MODELS, get_model_spec, load_denoiser
from .export import ExportJob, export_features, extract_from_video
from .mock import MockDenoiser


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _versions() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "meshmotion": meshmotion.__version__,
        "vdm_exporter": __version__,
    }


def _write_manifest(outdir: Path, command: str, config: dict,
                    artifacts: dict) -> None:
    manifest = {
        "format": "vdm-exporter-manifest",
        "version": 1,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "versions": _versions(),
        "artifacts": artifacts,
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _denoiser(args, spec):
    if args.mock:
        return MockDenoiser(spec, feature_dim=args.feature_dim,
                            constant=args.constant)
    return load_denoiser(spec)


def cmd_export(args) -> int:
    outdir = Path(args.out)
    job = ExportJob(
        image=args.image,
        prompt=args.prompt,
        model_id=args.model,
        out_path=str(outdir / "features.ftrv"),
        layer=args.layer,
        step=args.step,
        guidance=args.guidance,
        n_frames=args.frames,
    )
    spec = job.spec
    denoiser = _denoiser(args, spec)
    outdir.mkdir(parents=True, exist_ok=True)
    steps_path = outdir / "steps.npz" if args.record_steps else None
    export_features(job, denoiser=denoiser, seed=args.seed,
                    steps_path=steps_path)
    config = {
        "model": args.model, "image": args.image, "prompt": args.prompt,
        "layer": job.layer, "step": job.step, "guidance": job.guidance,
        "frames": job.n_frames, "seed": args.seed, "mock": args.mock,
        "feature_dim": denoiser.feature_dim,
    }
    artifacts = {"features": "features.ftrv"}
    if steps_path is not None:
        artifacts["steps"] = "steps.npz"
    _write_manifest(outdir, "export", config, artifacts)
    if not args.quiet:
        print(f"wrote {job.n_frames}x{spec.feature_hw[0]}x{spec.feature_hw[1]}"
              f"x{denoiser.feature_dim} features to {outdir}")
    return 0


def cmd_extract(args) -> int:
    spec = get_model_spec(args.model)
    outdir = Path(args.out)
    spec.validate_layer(args.layer)
    if not Path(args.video).exists():
        raise ValueError(f"video not found: {args.video}")
    denoiser = _denoiser(args, spec)
    outdir.mkdir(parents=True, exist_ok=True)
    out = extract_from_video(
        args.video, args.model, args.step, args.layer,
        out_path=outdir / "features.ftrv", denoiser=denoiser, seed=args.seed,
    )
    step = args.step if args.step is not None else spec.default_step
    config = {
        "model": args.model, "video": args.video, "layer": args.layer,
        "step": step, "seed": args.seed, "mock": args.mock,
        "feature_dim": denoiser.feature_dim,
    }
    _write_manifest(outdir, "extract", config, {"features": "features.ftrv"})
    if not args.quiet:
        print(f"wrote features to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--model", required=True,
                        help=f"model id ({', '.join(sorted(MODELS))})")
    common.add_argument("--layer", type=int, default=3,
                        help="decoder layer to hook (default: 3)")
    common.add_argument("--step", type=int, default=None,
                        help="sampling step to read (default: per model)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--mock", action="store_true",
                        help="use the deterministic mock denoiser")
    common.add_argument("--feature-dim", type=int, default=8,
                        help="mock feature channels (default: 8)")
    common.add_argument("--constant", type=float, default=None,
                        help="mock emits this constant activation value")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(
        prog="vdm-exporter",
        description="Record video-diffusion denoiser activations as FTRV.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("export", parents=[common],
                       help="conditioned generation -> feature video")
    p.add_argument("--image", required=True,
                   help="conditioning image (.npy or .pgm)")
    p.add_argument("--prompt", default="", help="text prompt")
    p.add_argument("--guidance", type=float, default=6.0)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--record-steps", action="store_true",
                   help="also write the per-step activation archive")
    p.set_defaults(run=cmd_export)

    p = sub.add_parser("extract", parents=[common],
                       help="existing video -> feature video")
    p.add_argument("--video", required=True,
                   help=".npy frame stack or directory of frames")
    p.set_defaults(run=cmd_extract)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.run(args)
    except FloatingPointError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, KeyError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
