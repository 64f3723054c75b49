import math
import warnings

import numpy as np
import pytest

from invrender import accel, render
from invrender.scene import Camera, LightSource, RenderConfig, Scene, look_at

from conftest import (oblique_camera, plane_scene, textured_scene, top_camera, uniform_mesh)
from invrender import shapes


def plane_oracle(camera: Camera, light_pos, intensity, rho, exposure=1.0, sub=8):
    """Closed-form direct lighting on the z=0 plane, box-filtered over each pixel."""
    h, w = camera.height, camera.width
    g = (np.arange(sub) + 0.5) / sub
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    px = np.broadcast_to(jj[..., None, None] + g[None, None, None, :], (h, w, sub, sub)).reshape(-1)
    py = np.broadcast_to(ii[..., None, None] + g[None, None, :, None], (h, w, sub, sub)).reshape(-1)
    rot, trans = camera.world_to_camera[:, :3], camera.world_to_camera[:, 3]
    eye = -rot.T @ trans
    d_cam = np.stack([(px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, np.ones_like(px)], axis=1)
    d = d_cam @ rot
    t = -eye[2] / d[:, 2]
    x = eye + t[:, None] * d
    to_light = np.asarray(light_pos) - x
    r2 = (to_light ** 2).sum(axis=1)
    cos = to_light[:, 2] / np.sqrt(r2)
    val = rho / math.pi * cos * intensity / r2 * exposure
    return val.reshape(h, w, sub * sub).mean(axis=2)


def test_zero_bounces_is_black():
    scene = textured_scene()
    bvh = accel.build_bvh(scene.mesh)
    film = render.render(scene, bvh, oblique_camera(16), RenderConfig(spp=2, max_bounces=0))
    assert np.all(film.pixels == 0)


def test_point_light_single_bounce_value():
    scene = plane_scene(light_height=2.0, intensity=1.0, rho=0.5)
    bvh = accel.build_bvh(scene.mesh)
    org = np.array([[0.0, 0.0, 1.0]])
    d = np.array([[0.0, 0.0, -1.0]])
    sampler = render.PixelSampler(0, [0], 1)
    val = render.trace_radiance(scene, bvh, org, d, 1, sampler)
    np.testing.assert_allclose(val, (0.5 / math.pi) * 0.25, rtol=1e-12)
    assert abs(val[0, 0] - 0.039789) < 1e-6


def test_occluder_blocks_light():
    base = plane_scene()
    v, f = shapes.grid_plane(1, 1, size=(1.0, 1.0), z=1.0)
    verts = np.vstack([base.mesh.vertices, v])
    faces = np.vstack([base.mesh.faces, f + base.mesh.num_vertices])
    blocked = Scene(uniform_mesh(verts, faces), base.lights)
    org = np.array([[0.01, 0.02, 0.5]])
    d = np.array([[0.0, 0.0, -1.0]])
    s = render.PixelSampler(0, [0], 1)
    lit = render.trace_radiance(base, accel.build_bvh(base.mesh), org, d, 1, s)
    dark = render.trace_radiance(blocked, accel.build_bvh(blocked.mesh), org, d, 1, s)
    assert lit[0, 0] > 0 and np.all(dark == 0)


def test_empty_lights_black_with_warning():
    scene = Scene(plane_scene().mesh, [])
    bvh = accel.build_bvh(scene.mesh)
    with pytest.warns(UserWarning):
        film = render.render(scene, bvh, top_camera(8), RenderConfig(spp=1))
    assert np.all(film.pixels == 0)


def test_doubling_lights_doubles_single_bounce_pixels():
    scene = textured_scene()
    bvh = accel.build_bvh(scene.mesh)
    cam = oblique_camera(16)
    cfg = RenderConfig(spp=3, max_bounces=1, seed=5)
    a = render.render(scene, bvh, cam, cfg).pixels
    doubled = Scene(scene.mesh, [l.with_intensity(2 * l.intensity) for l in scene.lights])
    b = render.render(doubled, bvh, cam, cfg).pixels
    assert np.array_equal(b, 2 * a)


def test_exposure_scales_linearly():
    scene = textured_scene()
    bvh = accel.build_bvh(scene.mesh)
    cam = oblique_camera(16)
    cam2 = Camera(cam.fx, cam.fy, cam.cx, cam.cy, cam.world_to_camera, cam.width, cam.height, exposure=0.5)
    cfg = RenderConfig(spp=2, max_bounces=2)
    np.testing.assert_allclose(render.render(scene, bvh, cam2, cfg).pixels,
                               0.5 * render.render(scene, bvh, cam, cfg).pixels, rtol=1e-15)


def test_analytic_plane_small():
    scene = plane_scene(light_height=2.0, intensity=1.0, rho=0.5)
    bvh = accel.build_bvh(scene.mesh)
    cam = top_camera(16)
    film = render.render(scene, bvh, cam, RenderConfig(spp=64, max_bounces=1))
    ref = plane_oracle(cam, [0, 0, 2.0], 1.0, 0.5)
    rel = np.abs(film.pixels[..., 0] - ref) / ref
    assert rel.mean() < 0.01


def test_records_match_film_and_replay():
    scene = textured_scene()
    bvh = accel.build_bvh(scene.mesh)
    cam = oblique_camera(16)
    cfg = RenderConfig(spp=2, max_bounces=3, seed=11)
    film, chunks = render.render_with_records(scene, bvh, cam, cfg)
    assert np.array_equal(film.pixels, render.render(scene, bvh, cam, cfg).pixels)
    assert np.array_equal(render.replay(scene, cam, cfg, chunks), film.pixels)
    for _, rec in chunks:
        assert len(rec.bounces) <= cfg.max_bounces
        assert all(len(rec.path(i)) <= cfg.max_bounces for i in range(0, rec.num_paths, 37))


def test_backends_render_identically():
    if len(accel.BACKENDS) < 2:
        pytest.skip("compiled kernel not built")
    scene = textured_scene()
    bvh = accel.build_bvh(scene.mesh)
    cfg = RenderConfig(spp=2, max_bounces=3, seed=2)
    a = render.render(scene, bvh, oblique_camera(16), cfg, backend="python").pixels
    b = render.render(scene, bvh, oblique_camera(16), cfg, backend="compiled").pixels
    assert np.array_equal(a, b)


def test_chunking_does_not_change_pixels(monkeypatch):
    scene = textured_scene()
    bvh = accel.build_bvh(scene.mesh)
    cfg = RenderConfig(spp=4, max_bounces=2, seed=3)
    full = render.render(scene, bvh, oblique_camera(16), cfg).pixels
    monkeypatch.setattr(render, "CHUNK_PATHS", 64)
    assert np.array_equal(render.render(scene, bvh, oblique_camera(16), cfg).pixels, full)


def test_more_bounces_add_light():
    scene = textured_scene(specular=False)
    bvh = accel.build_bvh(scene.mesh)
    cam = oblique_camera(16)
    means = [render.render(scene, bvh, cam, RenderConfig(spp=16, max_bounces=t, seed=1)).pixels.mean()
             for t in (1, 2, 3)]
    assert means[0] < means[1] < means[2]


def test_error_shrinks_with_samples():
    scene = textured_scene()
    bvh = accel.build_bvh(scene.mesh)
    cam = oblique_camera(12)
    ref = render.render(scene, bvh, cam, RenderConfig(spp=512, max_bounces=2, seed=99)).pixels
    err = [np.mean((render.render(scene, bvh, cam, RenderConfig(spp=s, max_bounces=2, seed=4)).pixels - ref) ** 2)
           for s in (2, 32)]
    assert err[1] < err[0] / 4


def test_coverage_mask_and_validation():
    scene = plane_scene(size=1.0)
    bvh = accel.build_bvh(scene.mesh)
    mask = render.coverage_mask(scene, bvh, top_camera(16))
    assert mask[8, 8] and not mask[0, 0]
    from invrender.scene import SceneError
    with pytest.raises(SceneError):
        render.validate_config(top_camera(16), RenderConfig(downsample=3))


def test_camera_never_sees_point_light():
    scene = Scene(plane_scene().mesh, [LightSource("point", [100.0] * 3, position=[0, 0, -1.0])])
    bvh = accel.build_bvh(scene.mesh)
    # light is under the plane; camera above sees only the unlit side
    film = render.render(scene, bvh, top_camera(8), RenderConfig(spp=1, max_bounces=1))
    assert np.all(film.pixels == 0)
