"""JSON scene files.

A scene file looks like::

    {
      "version": "lostu-scene/1",
      "views": [{"fx": 800, "fy": 800, "cx": 0, "cy": 0, "skew": 0,
                 "rotation": [1, 0, 0, 0], "center": [0, 0, -10],
                 "rot_cov": [[...]], "center_cov": [[...]],
                 "intrinsics_var": {"fx": 4.0}}],
      "tracks": [{"point_id": 0,
                  "observations": [{"view_id": 0, "px": 1.5, "py": -2.0,
                                    "cov2d": [[1, 0], [0, 1]]}]}],
      "points": [[0, 0, 0]]
    }

``rotation`` is a w-first unit quaternion of the world-to-camera rotation.
``points`` (ground truth indexed by ``point_id``) is optional, as is
``intrinsics_var``. Any other key is an error.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

from .errors import SchemaError
from .geometry import (INTRINSIC_ENTRIES, CameraIntrinsics, CameraPose, Observation,
                       PoseUncertainty, Scene, Track, View)

SCHEMA_VERSION = "lostu-scene/1"

_TOP_REQUIRED = {"version", "views", "tracks"}
_TOP_OPTIONAL = {"points"}
_VIEW_REQUIRED = {"fx", "fy", "cx", "cy", "skew", "rotation", "center", "rot_cov", "center_cov"}
_VIEW_OPTIONAL = {"intrinsics_var"}
_TRACK_KEYS = {"point_id", "observations"}
_OBS_KEYS = {"view_id", "px", "py", "cov2d"}


def _keys(obj, required, optional, where):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    missing = required - obj.keys()
    if missing:
        raise SchemaError(f"{where}: missing field(s) {sorted(missing)}")
    unknown = obj.keys() - required - optional
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")


def _number(x, where):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise SchemaError(f"{where}: expected a finite number")
    return float(x)


def _integer(x, where):
    if isinstance(x, bool) or not isinstance(x, int):
        raise SchemaError(f"{where}: expected an integer")
    return x


def _array(x, shape, where):
    if not isinstance(x, list):
        raise SchemaError(f"{where}: expected a list")
    try:
        a = np.array(x, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: expected numbers") from None
    if a.shape != shape:
        raise SchemaError(f"{where}: expected shape {shape}, got {a.shape}")
    for v in np.ravel(np.array(x, dtype=object)):
        _number(v, where)
    return a


def _cov(x, n, where):
    a = _array(x, (n, n), where)
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise SchemaError(f"{where}: covariance is not symmetric")
    return a


def _view(d, i):
    where = f"views[{i}]"
    _keys(d, _VIEW_REQUIRED, _VIEW_OPTIONAL, where)
    try:
        K = CameraIntrinsics(*(_number(d[k], f"{where}.{k}") for k in ("fx", "fy", "cx", "cy", "skew")))
        q = _array(d["rotation"], (4,), f"{where}.rotation")
        pose = CameraPose.from_quaternion(q, _array(d["center"], (3,), f"{where}.center"))
        unc = PoseUncertainty(_cov(d["rot_cov"], 3, f"{where}.rot_cov"),
                              _cov(d["center_cov"], 3, f"{where}.center_cov"))
        var = None
        if "intrinsics_var" in d:
            if not isinstance(d["intrinsics_var"], dict):
                raise SchemaError(f"{where}.intrinsics_var: expected an object")
            var = {}
            for k, v in d["intrinsics_var"].items():
                if k not in INTRINSIC_ENTRIES:
                    raise SchemaError(f"{where}.intrinsics_var: unknown entry {k!r}")
                var[k] = _number(v, f"{where}.intrinsics_var.{k}")
        return View(K, pose, unc, var)
    except SchemaError:
        raise
    except ValueError as e:
        raise SchemaError(f"{where}: {e}") from None


def _track(d, i):
    where = f"tracks[{i}]"
    _keys(d, _TRACK_KEYS, set(), where)
    pid = _integer(d["point_id"], f"{where}.point_id")
    if not isinstance(d["observations"], list):
        raise SchemaError(f"{where}.observations: expected a list")
    entries = []
    for k, o in enumerate(d["observations"]):
        ow = f"{where}.observations[{k}]"
        _keys(o, _OBS_KEYS, set(), ow)
        try:
            obs = Observation([_number(o["px"], f"{ow}.px"), _number(o["py"], f"{ow}.py")],
                              _cov(o["cov2d"], 2, f"{ow}.cov2d"))
        except SchemaError:
            raise
        except ValueError as e:
            raise SchemaError(f"{ow}: {e}") from None
        entries.append((_integer(o["view_id"], f"{ow}.view_id"), obs))
    try:
        return Track(pid, entries)
    except ValueError as e:
        raise SchemaError(f"{where}: {e}") from None


def scene_from_dict(doc: Any) -> Scene:
    """Validate a parsed scene document and build a :class:`Scene`."""
    _keys(doc, _TOP_REQUIRED, _TOP_OPTIONAL, "scene")
    if doc["version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported version {doc['version']!r}; expected {SCHEMA_VERSION!r}")
    for k in ("views", "tracks"):
        if not isinstance(doc[k], list):
            raise SchemaError(f"{k}: expected a list")
    views = [_view(v, i) for i, v in enumerate(doc["views"])]
    tracks = [_track(t, i) for i, t in enumerate(doc["tracks"])]
    points = None
    if "points" in doc:
        if not isinstance(doc["points"], list):
            raise SchemaError("points: expected a list")
        points = [_array(p, (3,), f"points[{i}]") for i, p in enumerate(doc["points"])]
    try:
        return Scene(views, tracks, points)
    except ValueError as e:
        raise SchemaError(str(e)) from None


def _floats(a):
    return [float(x) for x in np.ravel(a)] if np.ndim(a) == 1 else [_floats(r) for r in a]


def scene_to_dict(scene: Scene) -> dict:
    """Inverse of :func:`scene_from_dict`."""
    views = []
    for v in scene.views:
        K = v.intrinsics
        d = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "skew": K.skew,
             "rotation": [float(x) for x in v.pose.as_quaternion()],
             "center": _floats(v.center),
             "rot_cov": _floats(v.uncertainty.rot_cov),
             "center_cov": _floats(v.uncertainty.center_cov)}
        if v.intrinsics_var is not None:
            d["intrinsics_var"] = {k: float(x) for k, x in v.intrinsics_var.items()}
        views.append(d)
    tracks = [{"point_id": t.point_id,
               "observations": [{"view_id": j, "px": float(o.pixel[0]), "py": float(o.pixel[1]),
                                 "cov2d": _floats(o.cov2d)} for j, o in t.entries]}
              for t in scene.tracks]
    doc = {"version": SCHEMA_VERSION, "views": views, "tracks": tracks}
    if scene.points is not None:
        doc["points"] = [_floats(p) for p in scene.points]
    return doc


def loads_scene(text: str) -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}") from None
    return scene_from_dict(doc)


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as f:
        return loads_scene(f.read())


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2)


def dump_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_scene(scene))
        f.write("\n")
