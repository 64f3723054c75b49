import json

import numpy as np
import pytest

from invrender import formats, scenefile
from invrender.scene import Camera, LightSource, Mesh, RenderConfig, Scene, SceneError, ViewObservation, look_at

from test_formats import random_mesh


def write_minimal(tmp_path, mask_size=4):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    mesh = Mesh(v, [[0, 1, 2]], np.full((3, 3), 0.5), np.zeros((3, 3)))
    formats.write_ply(tmp_path / "tri.ply", mesh)
    formats.write_pfm(tmp_path / "img.pfm", np.zeros((4, 4, 3)))
    formats.save_mask(tmp_path / "mask.png", np.ones((mask_size, mask_size), bool))
    data = {
        "mesh": "tri.ply",
        "lights": [{"kind": "point", "position": [0, 0, 2], "intensity": [1, 1, 1]}],
        "views": [{"image": "img.pfm", "mask": "mask.png", "fx": 4, "fy": 4, "cx": 2, "cy": 2, "width": 4,
                   "height": 4, "worldToCamera": [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 2]}],
        "render": {"spp": 2, "maxBounces": 1, "seed": 5, "downsample": 1},
    }
    (tmp_path / "scene.json").write_text(json.dumps(data))
    return tmp_path / "scene.json"


def test_minimal_scene_loads(tmp_path):
    b = scenefile.load_scene(write_minimal(tmp_path))
    assert b.scene.mesh.num_vertices == 3 and b.scene.num_lights == 1
    assert b.config.spp == 2 and b.config.max_bounces == 1 and b.config.seed == 5
    assert len(b.views) == 1 and b.views[0].mask.all()


def test_mask_size_mismatch_is_reported(tmp_path):
    with pytest.raises(SceneError, match=r"views\[0\]"):
        scenefile.load_scene(write_minimal(tmp_path, mask_size=5))


def test_missing_mesh_and_bad_camera(tmp_path):
    path = write_minimal(tmp_path)
    data = json.loads(path.read_text())
    data["mesh"] = "nope.ply"
    path.write_text(json.dumps(data))
    with pytest.raises(SceneError, match="mesh"):
        scenefile.load_scene(path)
    data["mesh"] = "tri.ply"
    del data["views"][0]["fx"]
    path.write_text(json.dumps(data))
    with pytest.raises(SceneError, match="fx"):
        scenefile.load_scene(path)
    data["views"][0]["fx"] = 4
    data["views"][0]["worldToCamera"] = [1, 0, 0, 0, 0, 2, 0, 0, 0, 0, 1, 0]
    path.write_text(json.dumps(data))
    with pytest.raises(SceneError, match="orthonormal"):
        scenefile.load_scene(path)


def test_round_trip_is_bit_exact(tmp_path, rng):
    for trial in range(3):
        mesh = random_mesh(rng)
        lights = [LightSource("ambient", rng.uniform(0, 1, 3)),
                  LightSource("point", rng.uniform(0, 5, 3), position=rng.normal(size=3)),
                  LightSource("directional", rng.uniform(0, 5, 3), direction=rng.normal(size=3))]
        scene = Scene(mesh, lights, distribution="beckmann", f0=0.05)
        cam = Camera(*rng.uniform(5, 7, 2), 3.5, 2.5, look_at(rng.normal(size=3) * 3, [0, 0, 0]), 8, 6,
                     exposure=rng.uniform(0.5, 2))
        img = rng.uniform(0, 2, (6, 8, 3)).astype(np.float32).astype(np.float64)
        view = ViewObservation(cam, img, rng.uniform(size=(6, 8)) > 0.3)
        cfg = RenderConfig(spp=3, max_bounces=2, seed=int(rng.integers(2 ** 63)), downsample=2)
        path = tmp_path / f"s{trial}" / "scene.json"
        scenefile.save_scene(scene, [view], cfg, path, held_out=0)
        b = scenefile.load_scene(path)
        for name in ("vertices", "diffuse", "specular", "faces", "normals"):
            assert np.array_equal(getattr(b.scene.mesh, name), getattr(mesh, name)), name
        assert b.scene.mesh.roughness == mesh.roughness and b.scene.distribution == "beckmann"
        for a, c in zip(b.scene.lights, lights):
            assert a.kind == c.kind and np.array_equal(a.intensity, c.intensity)
            for attr in ("position", "direction"):
                x, y = getattr(a, attr), getattr(c, attr)
                assert (x is None and y is None) or np.array_equal(x, y)
        assert np.array_equal(b.views[0].camera.world_to_camera, cam.world_to_camera)
        assert b.views[0].camera.exposure == cam.exposure
        assert np.array_equal(b.views[0].image, img) and np.array_equal(b.views[0].mask, view.mask)
        assert b.config == cfg and b.held_out == 0


def test_empty_light_list_saves(tmp_path, rng):
    scene = Scene(random_mesh(rng), [])
    scenefile.save_scene(scene, [], RenderConfig(), tmp_path / "e.json")
    assert scenefile.load_scene(tmp_path / "e.json").scene.num_lights == 0


def test_light_spec_errors(tmp_path):
    p = tmp_path / "l.json"
    p.write_text('[{"kind": "point", "intensity": [1, 1, 1]}]')
    with pytest.raises(SceneError, match="position"):
        scenefile.load_lights(p)
    p.write_text('{"lights": [{"kind": "ambient", "intensity": [1, 1, 1]}]}')
    assert scenefile.load_lights(p)[0].kind == "ambient"


def test_quaternions():
    np.testing.assert_array_equal(scenefile.quaternion_to_rotation(1, 0, 0, 0), np.eye(3))
    rz = np.array([[-1.0, 0, 0], [0, -1, 0], [0, 0, 1]])
    np.testing.assert_allclose(scenefile.quaternion_to_rotation(0, 0, 0, 1), rz, atol=1e-15)
    # 90 degrees about x, compared with the axis-angle matrix
    c = np.sqrt(0.5)
    rx = np.array([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]])
    np.testing.assert_allclose(scenefile.quaternion_to_rotation(c, c, 0, 0), rx, atol=1e-15)


def test_colmap_import(tmp_path):
    (tmp_path / "cameras.txt").write_text(
        "# Camera list\n1 SIMPLE_PINHOLE 8 6 5.0 4.0 3.0\n2 PINHOLE 8 6 5.0 6.0 4.0 3.0\n")
    (tmp_path / "images.txt").write_text(
        "# Image list\n1 1 0 0 0 0 0 0 1 a.png\n1.0 2.0 -1\n2 0 0 0 1 0.5 0 0 2 b.png\n\n")
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    for n in ("a", "b"):
        formats.write_png(imgs / f"{n}.png", np.full((6, 8, 3), 0.2))
    views = scenefile.import_colmap_text(tmp_path / "cameras.txt", tmp_path / "images.txt", imgs)
    assert len(views) == 2
    a, b = views
    assert a.camera.fx == a.camera.fy == 5.0 and (a.camera.cx, a.camera.cy) == (4.0, 3.0)
    assert np.array_equal(a.camera.world_to_camera, np.hstack([np.eye(3), np.zeros((3, 1))]))
    assert (b.camera.fx, b.camera.fy) == (5.0, 6.0)
    np.testing.assert_allclose(b.camera.translation, [0.5, 0, 0])


def test_colmap_rejects_unsupported_model(tmp_path):
    (tmp_path / "cameras.txt").write_text("1 OPENCV 8 6 5 5 4 3 0 0 0 0\n")
    with pytest.raises(SceneError, match="OPENCV"):
        scenefile.read_colmap_cameras(tmp_path / "cameras.txt")
    (tmp_path / "cameras.txt").write_text("1 PINHOLE 8 6 5 5 4 3\n")
    (tmp_path / "images.txt").write_text("1 1 0 0 0 0 0 0 7 a.png\n\n")
    with pytest.raises(SceneError, match="unknown camera"):
        scenefile.import_colmap_text(tmp_path / "cameras.txt", tmp_path / "images.txt", tmp_path)
