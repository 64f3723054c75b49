import json

import numpy as np
import pytest

from invrender import cli, formats, scenefile
from invrender.scene import look_at


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = cli.main(["make-synthetic", "--views", "3", "--resolution", "32", "--spp", "4", "--downsample", "2",
                   "--out-dir", str(out)])
    assert rc == 0
    return out


def test_parser_defaults():
    p = cli.build_parser()
    a = p.parse_args(["render", "s.json", "--out", "x"])
    assert (a.spp, a.bounces, a.camera) == (16, 3, 0)
    o = p.parse_args(["optimize", "s.json", "--out-dir", "d"])
    assert (o.lr_diffuse, o.lr_geometry, o.lr_specular, o.lr_lights) == (0.1, 0.5, 0.01, 0.05)
    assert o.stages == "diffuse,geometry,lights,specular"


def test_make_synthetic_outputs(synth, capsys):
    truth = scenefile.load_scene(synth / "truth.json")
    start = scenefile.load_scene(synth / "start.json")
    assert len(truth.views) == 3 and truth.held_out == 2
    assert np.array_equal(truth.views[0].image, start.views[0].image)
    assert not np.array_equal(truth.scene.mesh.diffuse, start.scene.mesh.diffuse)


def test_render_deterministic_and_black_at_zero_bounces(synth, tmp_path):
    scene = str(synth / "truth.json")
    for name in ("a", "b"):
        assert cli.main(["render", scene, "1", "--spp", "2", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.pfm").read_bytes() == (tmp_path / "b.pfm").read_bytes()
    assert (tmp_path / "a.png").exists()
    assert cli.main(["render", scene, "--bounces", "0", "--spp", "1", "--out", str(tmp_path / "z")]) == 0
    assert np.all(formats.read_pfm(tmp_path / "z.pfm") == 0)


def test_render_errors(synth, tmp_path, capsys):
    assert cli.main(["render", str(synth / "truth.json"), "9", "--out", str(tmp_path / "x")]) == 1
    assert "out of range" in capsys.readouterr().err
    assert cli.main(["render", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 1
    assert cli.main(["render", str(synth / "truth.json"), "--downsample", "3", "--out", str(tmp_path / "x")]) == 1


def test_novel_view(synth, tmp_path):
    scene = str(synth / "truth.json")
    bundle = scenefile.load_scene(scene)
    pose = bundle.views[1].camera.world_to_camera.ravel()
    args = ["--spp", "2", "--seed", "3"]
    assert cli.main(["render", scene, "1", *args, "--out", str(tmp_path / "r")]) == 0
    assert cli.main(["novel-view", scene, "--camera", "1", "--pose=" + ",".join(repr(float(x)) for x in pose), *args,
                     "--out", str(tmp_path / "n")]) == 0
    assert (tmp_path / "r.pfm").read_bytes() == (tmp_path / "n.pfm").read_bytes()
    # same position, looking directly away from the object
    eye = -bundle.views[1].camera.rotation.T @ bundle.views[1].camera.world_to_camera[:, 3]
    away = look_at(eye, 2 * eye)
    assert cli.main(["novel-view", scene, "--pose=" + ",".join(repr(float(x)) for x in away.ravel()), *args,
                     "--out", str(tmp_path / "away")]) == 0
    assert np.all(formats.read_pfm(tmp_path / "away.pfm") == 0)
    assert cli.main(["novel-view", scene, "--pose", "1", "0", "0", "--out", str(tmp_path / "bad")]) == 1


def test_relight_with_own_lights_matches_render(synth, tmp_path):
    scene = str(synth / "truth.json")
    bundle = scenefile.load_scene(scene)
    lights = tmp_path / "lights.json"
    lights.write_text(json.dumps([scenefile.light_to_dict(l) for l in bundle.scene.lights]))
    args = ["--spp", "2", "--seed", "5", "--bounces", "2"]
    assert cli.main(["relight", scene, str(lights), "--views", "0,2", *args, "--out", str(tmp_path / "relit")]) == 0
    assert cli.main(["render", scene, "2", *args, "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "relit" / "view_002.pfm").read_bytes() == (tmp_path / "r2.pfm").read_bytes()
    assert not (tmp_path / "relit" / "view_001.pfm").exists()
    assert cli.main(["relight", scene, str(lights), "--views", "7", "--out", str(tmp_path / "bad")]) == 1


def test_optimize_zero_cycles_copies_scene(synth, tmp_path):
    assert cli.main(["optimize", str(synth / "start.json"), "--cycles", "0", "--out-dir", str(tmp_path)]) == 0
    a = scenefile.load_scene(synth / "start.json")
    b = scenefile.load_scene(tmp_path / "scene.json")
    assert np.array_equal(a.scene.mesh.vertices, b.scene.mesh.vertices)
    assert np.array_equal(a.scene.mesh.diffuse, b.scene.mesh.diffuse)
    assert np.array_equal(a.scene.light_intensities(), b.scene.light_intensities())
    assert np.array_equal(a.views[0].image, b.views[0].image)


def test_optimize_short_run(synth, tmp_path):
    rc = cli.main(["optimize", str(synth / "start.json"), "--inner", "2", "--bounces", "1", "--downsample", "2",
                   "--eval-spp", "2", "--out-dir", str(tmp_path)])
    assert rc == 0
    for name in ("scene.json", "trace.csv", "stages.csv", "metrics.csv"):
        assert (tmp_path / name).exists()
    ckpts = sorted(p.name for p in (tmp_path / "checkpoints").glob("*.json"))
    assert ckpts == ["cycle0_diffuse.json", "cycle0_geometry.json", "cycle0_lights.json", "cycle0_specular.json"]
    final = scenefile.load_scene(tmp_path / "scene.json")
    last = scenefile.load_scene(tmp_path / "checkpoints" / "cycle0_specular.json")
    assert np.array_equal(final.scene.mesh.specular, last.scene.mesh.specular)
    mesh = final.scene.mesh
    assert np.all(mesh.diffuse >= 0) and np.all(mesh.diffuse + mesh.specular <= 1 + 1e-12)
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 1 + 8


def test_grad_check(synth, capsys, monkeypatch):
    scene = str(synth / "start.json")
    assert cli.main(["grad-check", scene, "--group", "lights", "--downsample", "2"]) == 0
    assert "pass" in capsys.readouterr().out
    assert cli.main(["grad-check", scene, "--group", "diffuse", "--downsample", "2", "--bounces", "2"]) == 0
    monkeypatch.setitem(cli.GRAD_TOLERANCES, "lights", 0.0)
    assert cli.main(["grad-check", scene, "--group", "lights", "--downsample", "2"]) == 2


def test_metrics_command(synth, tmp_path, capsys):
    img = synth / "images" / "truth_000.pfm"
    assert cli.main(["metrics", str(img), str(img), "--mask", str(synth / "masks" / "truth_000.png")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "psnr,ssim,masked_pixels"
    assert lines[1].startswith("99.000000,1.000000,")
