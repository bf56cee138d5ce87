"""Rig files: JSON descriptions of animation models plus a sibling mesh file.

A rig file stores everything needed to rebuild a model except the rest mesh,
which lives in a separate OBJ referenced by relative path. Dense tables
(skinning weights, blendshape bases) are base64-encoded little-endian float64
with an explicit shape so files stay self-describing. See
docs/rig_format.md for the full layout and a checked-in example.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .mesh import Mesh, load_mesh, save_mesh
from .models import Blendshape, JacobianField, SkeletalLBS

_FORMAT = "meshmotion-rig"
_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "dtype": "float64",
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(obj, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        if obj["dtype"] != "float64":
            raise ValueError(f"{name}: unsupported dtype {obj['dtype']!r}")
        raw = base64.b64decode(obj["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{name}: malformed array record ({exc})") from exc
    flat = np.frombuffer(raw, dtype="<f8")
    if flat.size != int(np.prod(shape)):
        raise ValueError(
            f"{name}: payload holds {flat.size} values, shape {shape} "
            f"needs {int(np.prod(shape))}"
        )
    return flat.reshape(shape).astype(np.float64)


def _bones_to_json(model: SkeletalLBS) -> list:
    out = []
    for b in range(model.n_bones):
        tail = model.tails[b]
        out.append(
            {
                "name": model.names[b],
                "parent": model.parents[b],
                "rest_local": [float(v) for v in model.rest_local[b].ravel()],
                "tail": None if tail is None else [float(v) for v in tail],
            }
        )
    return out


def _skeleton_from_json(obj, mesh: Mesh, name: str) -> SkeletalLBS:
    try:
        bones = obj["bones"]
        parents = [int(b["parent"]) for b in bones]
        names = [str(b["name"]) for b in bones]
        rest_local = np.array(
            [np.asarray(b["rest_local"], dtype=np.float64).reshape(4, 4)
             for b in bones]
        )
        tails = [
            None if b.get("tail") is None
            else np.asarray(b["tail"], dtype=np.float64)
            for b in bones
        ]
        weights = _decode_array(obj["weights"], f"{name}.weights")
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{name}: missing or malformed field ({exc})") from exc
    return SkeletalLBS(mesh, parents, rest_local, weights,
                       names=names, tails=tails)


def save_rig(path, model, mesh_name: str | None = None) -> None:
    """Write a rig JSON and its rest mesh OBJ next to each other."""
    if not isinstance(model, (SkeletalLBS, Blendshape, JacobianField)):
        raise TypeError(f"cannot serialize model type {type(model).__name__}")
    path = Path(path)
    if mesh_name is None:
        mesh_name = path.stem + ".obj"
    save_mesh(model.mesh, path.parent / mesh_name)
    doc: dict = {"format": _FORMAT, "version": _VERSION, "mesh": mesh_name}
    if isinstance(model, SkeletalLBS):
        doc["type"] = "skeletal"
        doc["bones"] = _bones_to_json(model)
        doc["weights"] = _encode_array(model.weights)
    elif isinstance(model, Blendshape):
        doc["type"] = "blendshape"
        doc["basis"] = _encode_array(model.basis)
        doc["scale"] = model.scale
        if model.sub_skeleton is not None:
            doc["sub_skeleton"] = {
                "bones": _bones_to_json(model.sub_skeleton),
                "weights": _encode_array(model.sub_skeleton.weights),
            }
    else:
        doc["type"] = "jacobian_field"
        doc["pinned_vertex"] = model.pinned_vertex
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_rig(path):
    """Load a rig file back into its model; the mesh path resolves relatively."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT:
        raise ValueError(f"{path}: not a {_FORMAT} file")
    if doc.get("version") != _VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')!r}")
    if "mesh" not in doc:
        raise ValueError(f"{path}: missing mesh reference")
    mesh = load_mesh(path.parent / doc["mesh"])
    kind = doc.get("type")
    if kind == "skeletal":
        return _skeleton_from_json(doc, mesh, str(path))
    if kind == "blendshape":
        if "basis" not in doc:
            raise ValueError(f"{path}: blendshape rig is missing its basis")
        sub = None
        if "sub_skeleton" in doc:
            sub = _skeleton_from_json(doc["sub_skeleton"], mesh,
                                      f"{path} (sub_skeleton)")
        return Blendshape(
            mesh,
            _decode_array(doc["basis"], f"{path}: basis"),
            scale=float(doc.get("scale", 5.0)),
            sub_skeleton=sub,
        )
    if kind == "jacobian_field":
        return JacobianField(mesh, pinned_vertex=int(doc.get("pinned_vertex", 0)))
    raise ValueError(f"{path}: unknown rig type {kind!r}")
