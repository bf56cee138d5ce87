"""Command-line pipeline driver: synthesize, fit, evaluate, dump debug images.

Every run writes a ``manifest.json`` into its output directory recording the
resolved configuration, its sha256 hash, and component versions. Passing a
manifest (or any JSON config with the same keys) back through ``--config``
reruns the command with identical settings; explicit flags win over file
values. Manifest artifact entries double as default inputs downstream, so
``fit --config <synth dir>/manifest.json`` finds the rig, feature video, and
camera on its own.

Exit codes: 0 success, 1 numerical failure while fitting, 2 usage/validation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .evaluation import compute_pose_error, generate_scenario
from .features import read_ftrv, write_ftrv
from .fitting import (
    AnimationClip,
    FitConfig,
    diagnostics_log_lines,
    fit_motion,
    load_clip,
    reference_alignment_cosine,
    save_clip,
)
from .mesh import Camera
from .models import PoseVector, SkeletalLBS, apply_pose, joint_positions
from .raster import render_depth_mask, save_pgm
from .rig_io import load_rig, save_rig

__all__ = [
    "RunConfig",
    "camera_to_json",
    "camera_from_json",
    "config_hash",
    "main",
]

_MANIFEST_FORMAT = "meshmotion-manifest"
_MANIFEST_VERSION = 1

# config entries that hold file paths; resolved relative to the config file
_PATH_KEYS = ("mesh", "rig", "features", "gt_clip", "clip")


@dataclass(frozen=True)
class RunConfig:
    """One validated invocation: resolved inputs, options, output directory."""

    subcommand: str
    inputs: dict
    options: dict
    outdir: Path
    seed: int
    verbosity: int = 1

    def __post_init__(self):
        missing = [
            f"{name} ({path})"
            for name, path in self.inputs.items()
            if not Path(path).is_file()
        ]
        if missing:
            raise ValueError("missing input files: " + ", ".join(missing))


# ---------------------------------------------------------------------------
# config plumbing


def camera_to_json(camera: Camera) -> dict:
    return {
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
        "rotation": camera.rotation.tolist(),
        "translation": camera.translation.tolist(),
    }


def camera_from_json(doc) -> Camera:
    if not isinstance(doc, dict):
        raise ValueError("camera must be a JSON object")
    try:
        return Camera(
            fx=float(doc["fx"]),
            fy=float(doc["fy"]),
            cx=float(doc["cx"]),
            cy=float(doc["cy"]),
            width=int(doc["width"]),
            height=int(doc["height"]),
            rotation=np.asarray(doc.get("rotation", np.eye(3).tolist()), dtype=np.float64),
            translation=np.asarray(doc.get("translation", [0.0, 0.0, 0.0]), dtype=np.float64),
        )
    except KeyError as exc:
        raise ValueError(f"camera entry is missing {exc}") from exc


def config_hash(config: dict) -> str:
    """sha256 of the canonical (sorted, compact) JSON encoding."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _component_versions() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "meshmotion": __version__,
    }


def _load_config(path) -> dict:
    """Read a config or manifest file into one flat option dict."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    cfg = doc
    if doc.get("format") == _MANIFEST_FORMAT:
        cfg = doc.get("config")
        if not isinstance(cfg, dict):
            raise ValueError(f"{path}: manifest has no config object")
        cfg = dict(cfg)
        for name, rel in doc.get("artifacts", {}).items():
            cfg.setdefault(name, rel)
    else:
        cfg = dict(cfg)
    base = path.resolve().parent
    for key in _PATH_KEYS:
        if isinstance(cfg.get(key), str):
            cfg[key] = str(base / cfg[key])
    return cfg


def _file_config(args) -> dict:
    return _load_config(args.config) if getattr(args, "config", None) else {}


def _pick(flag_value, cfg: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    return cfg.get(key, default)


def _camera_doc(args, cfg: dict):
    """Camera dict from --camera (bare, config, or manifest JSON) or config."""
    if getattr(args, "camera", None):
        doc = json.loads(Path(args.camera).read_text(encoding="utf-8"))
        if isinstance(doc, dict) and "camera" not in doc and "config" in doc:
            doc = doc["config"]
        if isinstance(doc, dict) and "camera" in doc:
            doc = doc["camera"]
        return doc
    return cfg.get("camera")


def _verbosity(args) -> int:
    if args.quiet:
        return 0
    return 1 + args.verbose


def _write_manifest(run: RunConfig, artifacts: dict) -> Path:
    doc = {
        "format": _MANIFEST_FORMAT,
        "version": _MANIFEST_VERSION,
        "command": run.subcommand,
        "seed": run.seed,
        "config": run.options,
        "config_hash": config_hash(run.options),
        "versions": _component_versions(),
        "artifacts": artifacts,
    }
    path = run.outdir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _file_config(args)
    size = list(args.feature_size) if args.feature_size else None
    opts = {
        "seed": _pick(args.seed, cfg, "seed", 0),
        "bones": _pick(args.bones, cfg, "bones", 2),
        "vertices": _pick(args.vertices, cfg, "vertices", 400),
        "frames": _pick(args.frames, cfg, "frames", 8),
        "feature_dim": _pick(args.feature_dim, cfg, "feature_dim", 64),
        "amplitude": _pick(args.amplitude, cfg, "amplitude", 0.3),
        "noise": _pick(args.noise, cfg, "noise", 0.0),
        "feature_size": _pick(size, cfg, "feature_size", [88, 160]),
        "camera": cfg.get("camera"),
    }
    run = RunConfig("synth", {}, opts, Path(args.out), opts["seed"], _verbosity(args))
    camera = camera_from_json(opts["camera"]) if opts["camera"] else None
    scenario = generate_scenario(
        opts["seed"],
        n_bones=opts["bones"],
        n_vertices=opts["vertices"],
        n_frames=opts["frames"],
        feature_dim=opts["feature_dim"],
        amplitude=opts["amplitude"],
        noise=opts["noise"],
        feature_size=tuple(opts["feature_size"]),
        camera=camera,
    )
    opts["camera"] = camera_to_json(scenario.camera)

    run.outdir.mkdir(parents=True, exist_ok=True)
    save_rig(run.outdir / "rig.json", scenario.rig, mesh_name="mesh.obj")
    write_ftrv(scenario.feature_video, run.outdir / "features.ftrv")
    gt_clip = AnimationClip(
        poses=[PoseVector(p, frame=l) for l, p in enumerate(scenario.gt_poses)],
        vertices=None,
        diagnostics={"source": "synth", "seed": opts["seed"]},
    )
    save_clip(run.outdir / "gt_clip.json", gt_clip)
    artifacts = {
        "mesh": "mesh.obj",
        "rig": "rig.json",
        "features": "features.ftrv",
        "gt_clip": "gt_clip.json",
    }
    manifest = _write_manifest(run, artifacts)
    if run.verbosity:
        n_frames, h, w, d = scenario.feature_video.data.shape
        print(
            f"scenario seed={opts['seed']}: {scenario.mesh.vertices.shape[0]} vertices, "
            f"{len(scenario.mesh.faces)} faces, video {n_frames}x{h}x{w}x{d}"
        )
        print(f"wrote {len(artifacts)} artifacts + {manifest.name} to {run.outdir}")
    return 0


def _fit_config(args, cfg: dict) -> FitConfig:
    """Defaults, overlaid by the config file's fit section, overlaid by flags."""
    defaults = FitConfig()
    names = {f.name for f in fields(FitConfig)}
    merged = asdict(defaults)
    file_fit = cfg.get("fit", {})
    if not isinstance(file_fit, dict):
        raise ValueError("config entry 'fit' must be an object")
    merged.update({k: v for k, v in file_fit.items() if k in names})
    flag_map = {
        "iterations": args.iterations,
        "learning_rate": args.learning_rate,
        "warmup_end": args.warmup_end,
        "distance": args.loss_mode,
        "w_render": args.w_render,
        "w_depth": args.w_depth,
        "w_smooth": args.w_smooth,
        "w_fidelity": args.w_fidelity,
        "w_jacobian": args.w_jacobian,
        "seed": args.seed,
    }
    merged.update({k: v for k, v in flag_map.items() if v is not None})
    # a short run should still see the full schedule: the warm-up window never
    # outlives the iteration budget unless --warmup-end says so explicitly
    if args.warmup_end is None:
        base = file_fit.get("warmup_end", defaults.warmup_end)
        merged["warmup_end"] = min(base, merged["iterations"])
    return FitConfig(**merged)


def cmd_fit(args) -> int:
    cfg = _file_config(args)
    rig_path = _pick(args.rig, cfg, "rig", None)
    ftrv_path = _pick(args.features, cfg, "features", None)
    if rig_path is None or ftrv_path is None:
        raise ValueError("fit needs --rig and --features (or a config providing them)")
    camera_doc = _camera_doc(args, cfg)
    if camera_doc is None:
        raise ValueError("fit needs --camera or a config with a camera entry")
    fit_cfg = _fit_config(args, cfg)
    opts = {
        "rig": str(Path(rig_path).resolve()),
        "features": str(Path(ftrv_path).resolve()),
        "camera": camera_doc,
        "fit": asdict(fit_cfg),
        "dump_meshes": bool(args.dump_meshes),
    }
    run = RunConfig(
        "fit",
        {"rig": rig_path, "features": ftrv_path},
        opts,
        Path(args.out),
        fit_cfg.seed,
        _verbosity(args),
    )

    model = load_rig(rig_path)
    video = read_ftrv(ftrv_path)
    camera = camera_from_json(camera_doc)
    ref_cos = reference_alignment_cosine(model, video, camera)
    if ref_cos < 0.95:
        print(
            f"warning: reference frame cosine {ref_cos:.4f} is below 0.95; "
            f"frame {video.reference} may not show the rest pose",
            file=sys.stderr,
        )

    callback = None
    if run.verbosity:
        every = 1 if run.verbosity > 1 else max(1, fit_cfg.iterations // 10)

        def callback(i, row):
            if i % every == 0 or i == fit_cfg.iterations - 1:
                print(
                    f"iter={i} active={row['active_frames']} "
                    f"total={row['total']:.6e}"
                )

    clip = fit_motion(model, video, camera, fit_cfg, callback=callback)

    run.outdir.mkdir(parents=True, exist_ok=True)
    save_clip(
        run.outdir / "clip.json",
        clip,
        mesh=model.mesh if args.dump_meshes else None,
    )
    (run.outdir / "loss_log.txt").write_text(
        "\n".join(diagnostics_log_lines(clip)) + "\n", encoding="utf-8"
    )
    artifacts = {"clip": "clip.json", "loss_log": "loss_log.txt"}
    _write_manifest(run, artifacts)
    if run.verbosity:
        losses = clip.diagnostics["losses"]
        terms = " ".join(f"{k}={v:.6e}" for k, v in losses.items())
        print(f"fit {clip.n_frames} frames in {clip.diagnostics['wall_time']:.1f}s: {terms}")
        print(f"reference cosine {ref_cos:.4f}; wrote clip.json to {run.outdir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _file_config(args)
    rig_path = _pick(args.rig, cfg, "rig", None)
    clip_path = _pick(args.clip, cfg, "clip", None)
    gt_path = _pick(args.gt, cfg, "gt_clip", None)
    missing = [n for n, p in (("--rig", rig_path), ("--clip", clip_path), ("--gt", gt_path)) if p is None]
    if missing:
        raise ValueError(f"eval needs {', '.join(missing)} (or a config providing them)")
    opts = {
        "rig": str(Path(rig_path).resolve()),
        "clip": str(Path(clip_path).resolve()),
        "gt_clip": str(Path(gt_path).resolve()),
    }
    run = RunConfig(
        "eval",
        {"rig": rig_path, "clip": clip_path, "gt_clip": gt_path},
        opts,
        Path(args.out),
        0,
        _verbosity(args),
    )

    model = load_rig(rig_path)
    if not isinstance(model, SkeletalLBS):
        raise ValueError("joint metrics need a skeletal rig")
    pred = load_clip(clip_path, model=model)
    truth = load_clip(gt_path, model=model)
    if pred.n_frames != truth.n_frames:
        raise ValueError(
            f"clips disagree on frame count: {pred.n_frames} vs {truth.n_frames}"
        )
    pred_joints = np.stack([joint_positions(model, pv.p) for pv in pred.poses])
    gt_joints = np.stack([joint_positions(model, pv.p) for pv in truth.poses])
    report = compute_pose_error(pred_joints, gt_joints, pred.vertices, truth.vertices)

    flat = truth.vertices.reshape(-1, 3)
    diagonal = float(np.linalg.norm(flat.max(axis=0) - flat.min(axis=0)))
    doc = report.to_dict()
    doc["bbox_diagonal"] = diagonal
    if diagonal > 0:
        doc["normalized"] = {
            "mpjpe": report.mpjpe / diagonal,
            "pa_mpjpe": report.pa_mpjpe / diagonal,
            "pve": report.pve / diagonal,
        }

    run.outdir.mkdir(parents=True, exist_ok=True)
    (run.outdir / "report.json").write_text(
        json.dumps(doc, indent=2) + "\n", encoding="utf-8"
    )
    (run.outdir / "report.txt").write_text(
        "\n".join(report.lines()) + "\n", encoding="utf-8"
    )
    _write_manifest(run, {"report": "report.json", "report_text": "report.txt"})
    if run.verbosity:
        for line in report.lines():
            print(line)
        if diagonal > 0:
            print(f"bbox diagonal: {diagonal:.6f}")
    return 0


def cmd_dump(args) -> int:
    cfg = _file_config(args)
    ftrv_path = _pick(args.features, cfg, "features", None)
    rig_path = _pick(args.rig, cfg, "rig", None)
    if ftrv_path is None and rig_path is None:
        raise ValueError("dump needs --features and/or --rig")
    inputs = {}
    if ftrv_path is not None:
        inputs["features"] = ftrv_path
    if rig_path is not None:
        inputs["rig"] = rig_path
    opts = {name: str(Path(p).resolve()) for name, p in inputs.items()}
    if args.frame is not None:
        opts["frame"] = args.frame
    run = RunConfig("dump", inputs, opts, Path(args.out), 0, _verbosity(args))
    run.outdir.mkdir(parents=True, exist_ok=True)

    artifacts = {}
    if ftrv_path is not None:
        video = read_ftrv(ftrv_path)
        if args.frame is None:
            frame_ids = range(video.n_frames)
        elif 0 <= args.frame < video.n_frames:
            frame_ids = [args.frame]
        else:
            raise ValueError(
                f"frame index {args.frame} out of range for {video.n_frames} frames"
            )
        for l in frame_ids:
            name = f"feature_norm_f{l:03d}.pgm"
            norms = np.linalg.norm(video.data[l].astype(np.float64), axis=2)
            save_pgm(run.outdir / name, norms)
            artifacts[f"feature_norm_f{l:03d}"] = name
        if video.mask is not None:
            save_pgm(run.outdir / "video_mask.pgm", video.mask.astype(np.float64))
            artifacts["video_mask"] = "video_mask.pgm"

    if rig_path is not None:
        camera_doc = _camera_doc(args, cfg)
        if camera_doc is None:
            raise ValueError("dump --rig needs --camera or a config with a camera entry")
        model = load_rig(rig_path)
        camera = camera_from_json(camera_doc)
        rest = apply_pose(model, np.zeros(model.n_params))
        dm = render_depth_mask(rest, camera)
        save_pgm(run.outdir / "depth.pgm", dm.depth)
        save_pgm(run.outdir / "mask.pgm", dm.mask.astype(np.float64))
        artifacts["depth"] = "depth.pgm"
        artifacts["mask"] = "mask.pgm"

    _write_manifest(run, artifacts)
    if run.verbosity:
        print(f"wrote {len(artifacts)} images to {run.outdir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _parse_size(text: str):
    try:
        h, w = (int(part) for part in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc
    return [h, w]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="JSON config or manifest to rerun from")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(
        prog="meshmotion",
        description="Fit mesh animation parameters to dense feature videos.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--bones", type=int)
    p.add_argument("--vertices", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--noise", type=float,
                   help="fraction of each later frame hallucinated")
    p.add_argument("--feature-size", type=_parse_size, metavar="HxW")

    p = sub.add_parser("fit", parents=[common], help="fit motion to a feature video")
    p.add_argument("--rig", help="rig JSON (mesh resolves next to it)")
    p.add_argument("--features", help="FTRV feature video")
    p.add_argument("--camera", help="JSON file with a camera entry")
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--warmup-end", type=int)
    p.add_argument("--loss-mode", choices=("cosine", "mse"))
    p.add_argument("--w-render", type=float)
    p.add_argument("--w-depth", type=float)
    p.add_argument("--w-smooth", type=float)
    p.add_argument("--w-fidelity", type=float)
    p.add_argument("--w-jacobian", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dump-meshes", action="store_true",
                   help="also write one OBJ per fitted frame")

    p = sub.add_parser("eval", parents=[common], help="score a clip against ground truth")
    p.add_argument("--rig")
    p.add_argument("--clip", help="fitted clip JSON")
    p.add_argument("--gt", help="ground-truth clip JSON")

    p = sub.add_parser("dump", parents=[common], help="write debug PGM images")
    p.add_argument("--features", help="FTRV to dump per-frame feature norms from")
    p.add_argument("--frame", type=int, help="single frame index (default: all)")
    p.add_argument("--rig", help="rig whose rest-pose depth/mask to render")
    p.add_argument("--camera", help="JSON file with a camera entry")

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "dump": cmd_dump,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return _COMMANDS[args.command](args)
    except FloatingPointError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
