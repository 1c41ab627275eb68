import json
import subprocess
import sys

import numpy as np
import pytest

from lostu import (CameraIntrinsics, CameraPose, Observation, PoseUncertainty, Scene, SchemaError,
                   Track, View, project)
from lostu.cli import estimates_to_csv, main, triangulate_scene
from lostu.sceneio import dumps_scene, loads_scene, scene_from_dict, scene_to_dict

X_TRUE = np.array([0.3, -0.2, 5.0])


def make_scene(sigma_phi=0.0, sigma_c=0.0, n=2, kvar=None):
    centers = [[0, 0, 0], [2, 0, 0.5], [-1, 1, 0], [0.5, -1.5, 1.0]][:n]
    views = [View(CameraIntrinsics(500, 520, 10, 5, 0.3), CameraPose.look_at(c, X_TRUE),
                  PoseUncertainty.isotropic(sigma_phi, sigma_c), kvar) for c in centers]
    obs = [(j, Observation(project(X_TRUE, v).pixel[:2], 2.0 * np.eye(2))) for j, v in enumerate(views)]
    return Scene(views, [Track(7, obs)], [X_TRUE])


def write(tmp_path, scene, name="scene.json"):
    p = tmp_path / name
    p.write_text(dumps_scene(scene))
    return p


def test_round_trip_is_field_identical():
    s = make_scene(1e-3, 0.02, n=3, kvar={"fx": 4.0, "cy": 0.5})
    doc = scene_to_dict(s)
    doc2 = scene_to_dict(scene_from_dict(json.loads(json.dumps(doc))))
    assert doc == doc2
    text = dumps_scene(s)
    assert dumps_scene(loads_scene(text)) == text


def test_file_quaternions_survive_round_trip():
    doc = scene_to_dict(make_scene())
    q = np.array(doc["views"][0]["rotation"])
    doc["views"][0]["rotation"] = list(q * (1 + 4e-7))  # within tolerance, not unit
    assert scene_to_dict(scene_from_dict(doc))["views"][0]["rotation"] == doc["views"][0]["rotation"]


def mutate(path_fn):
    doc = scene_to_dict(make_scene())
    path_fn(doc)
    return doc


@pytest.mark.parametrize("edit", [
    lambda d: d.update(extra=1),
    lambda d: d.update(version="lostu-scene/0"),
    lambda d: d.pop("tracks"),
    lambda d: d["views"][0].update(rotation=[1.0, 0, 0, 0.01]),
    lambda d: d["views"][0].update(rotation=[1.0, 0, 0]),
    lambda d: d["views"][0].update(R=[[1, 0, 0], [0, 1, 0], [0, 0, 1]]),
    lambda d: d["views"][0].pop("skew"),
    lambda d: d["views"][0].update(fx=-1.0),
    lambda d: d["views"][0].update(fx="800"),
    lambda d: d["views"][0].update(center_cov=[[1, 2, 0], [0, 1, 0], [0, 0, 1]]),
    lambda d: d["views"][0].update(rot_cov=[[-1, 0, 0], [0, 1, 0], [0, 0, 1]]),
    lambda d: d["views"][0].update(intrinsics_var={"k22": 1.0}),
    lambda d: d["tracks"][0]["observations"][0].update(view_id=9),
    lambda d: d["tracks"][0]["observations"][0].update(view_id=1.0),
    lambda d: d["tracks"][0]["observations"][0].update(pz=1.0),
    lambda d: d["tracks"][0]["observations"][1].update(view_id=0),
    lambda d: d["tracks"][0].update(observations=[]),
    lambda d: d.update(points=[[0, 0]]),
])
def test_schema_violations(edit):
    with pytest.raises(SchemaError):
        scene_from_dict(mutate(edit))


def test_malformed_json():
    with pytest.raises(SchemaError):
        loads_scene("{not json")


def read_csv(text):
    lines = text.strip().splitlines()
    return lines[0].split(","), [l.split(",") for l in lines[1:]]


@pytest.mark.parametrize("method", ["midpoint", "dlt", "lost", "lostu", "hs"])
def test_cli_recovers_truth(tmp_path, method, capsys):
    p = write(tmp_path, make_scene(1e-3, 0.01))
    out = tmp_path / "out.csv"
    assert main(["triangulate", "--scene", str(p), "--method", method, "--out", str(out)]) == 0
    head, rows = read_csv(out.read_text())
    assert head == ["point_id", "x", "y", "z", "cov_xx", "cov_xy", "cov_xz", "cov_yy", "cov_yz",
                    "cov_zz", "residual_cost", "method"]
    assert rows[0][0] == "7" and rows[0][-1] == method
    np.testing.assert_allclose([float(x) for x in rows[0][1:4]], X_TRUE, atol=1e-8)


def test_cli_lostu_reduces_to_lost(tmp_path):
    p = write(tmp_path, make_scene(n=4))
    res = {}
    for m in ("lost", "lostu"):
        out = tmp_path / f"{m}.csv"
        assert main(["triangulate", "--scene", str(p), "--method", m, "--out", str(out)]) == 0
        res[m] = np.array([float(x) for x in read_csv(out.read_text())[1][0][1:4]])
    np.testing.assert_allclose(res["lostu"], res["lost"], atol=1e-8)


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["triangulate", "--scene", str(bad)]) == 2
    assert capsys.readouterr().err
    assert main(["triangulate", "--scene", str(tmp_path / "missing.json")]) == 2

    # all tracks degenerate: two identical cameras
    s = make_scene(sigma_c=0.01)
    dup = Scene([s.views[0], s.views[0]], [Track(0, [(0, s.tracks[0].entries[0][1]),
                                                    (1, s.tracks[0].entries[0][1])])])
    p = write(tmp_path, dup)
    assert main(["triangulate", "--scene", str(p), "--method", "dlt"]) == 3
    err = capsys.readouterr().err
    assert "track 0" in err

    # hs on a 3-view track is logged and skipped, other tracks still written
    s = make_scene(n=3)
    two = Track(1, s.tracks[0].entries[:2])
    p = write(tmp_path, Scene(s.views, [s.tracks[0], two]))
    assert main(["triangulate", "--scene", str(p), "--method", "hs"]) == 0
    cap = capsys.readouterr()
    assert "track 7" in cap.err and len(read_csv(cap.out)[1]) == 1

    assert main(["triangulate", "--scene", str(p), "--method", "dlt", "--diag-approx"]) == 2


def test_cli_diag_approx(tmp_path, capsys):
    p = write(tmp_path, make_scene(1e-3, 0.01, n=3))
    assert main(["triangulate", "--scene", str(p), "--method", "lostu", "--diag-approx"]) == 0
    row = read_csv(capsys.readouterr().out)[1][0]
    np.testing.assert_allclose([float(x) for x in row[1:4]], X_TRUE, atol=1e-8)


def test_cli_is_thin_shell(tmp_path, capsys):
    s = make_scene(1e-3, 0.01, n=4)
    p = write(tmp_path, s)
    assert main(["triangulate", "--scene", str(p), "--method", "lostu"]) == 0
    done, failed = triangulate_scene(loads_scene(p.read_text()), "lostu")
    assert capsys.readouterr().out == estimates_to_csv(done) and not failed


def test_module_entry_point(tmp_path):
    p = write(tmp_path, make_scene())
    r = subprocess.run([sys.executable, "-m", "lostu", "triangulate", "--scene", str(p),
                        "--method", "dlt"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("point_id,")
