"""Ground-truth synthetic scenes with rendered views and a perturbed start."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import accel, render, shapes
from .scene import (Camera, LightSource, Mesh, RenderConfig, Scene, ViewObservation, look_at,
                    project_albedo)

PRESETS = ("sphere-plane", "two-boxes")


def _smooth_albedo(v: np.ndarray, lo: float, hi: float, phase: float) -> np.ndarray:
    """Low-frequency RGB pattern over vertex positions, within [lo, hi]."""
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    waves = np.stack([
        np.sin(2.1 * x + 1.3 * z + phase),
        np.sin(1.7 * y - 0.9 * x + 2.0 + phase),
        np.cos(1.5 * z + 1.1 * y + 0.7 * phase),
    ], axis=1)
    return lo + (hi - lo) * (0.5 + 0.5 * waves)


def sphere_plane(subdivisions: int = 3) -> Scene:
    sphere = shapes.icosphere(subdivisions, 0.5, (0.0, 0.0, 0.5))
    plane = shapes.grid_plane(8, 8, size=(3.0, 3.0))
    v, f = shapes.merge(sphere, plane)
    n_sphere = len(sphere[0])
    diffuse = _smooth_albedo(v, 0.15, 0.4, 0.0)
    specular = np.full((len(v), 3), 0.05)
    specular[:n_sphere] = 0.15
    mesh = Mesh(v, f, diffuse, specular, roughness=0.3)
    lights = [
        LightSource("ambient", [0.25, 0.25, 0.25]),
        LightSource("point", [3.0, 2.8, 2.5], position=[1.6, -1.2, 2.2]),
        LightSource("point", [1.5, 1.8, 2.4], position=[-1.8, -0.6, 1.8]),
        LightSource("point", [2.0, 2.0, 2.0], position=[0.2, 1.9, 2.4]),
    ]
    return Scene(mesh, lights)


def two_boxes() -> Scene:
    parts = [
        shapes.box((-0.8, -0.5, 0.0), (-0.1, 0.2, 0.7)),
        shapes.box((0.2, -0.2, 0.0), (0.8, 0.6, 0.45)),
        shapes.grid_plane(8, 8, size=(3.0, 3.0), z=0.0),
    ]
    v, f = shapes.merge(*parts)
    diffuse = _smooth_albedo(v, 0.15, 0.4, 1.0)
    specular = np.full((len(v), 3), 0.08)
    mesh = Mesh(v, f, diffuse, specular, roughness=0.3)
    lights = [
        LightSource("ambient", [0.25, 0.25, 0.25]),
        LightSource("point", [3.0, 2.8, 2.5], position=[1.6, -1.2, 2.2]),
        LightSource("point", [1.5, 1.8, 2.4], position=[-1.8, -0.6, 1.8]),
        LightSource("directional", [0.6, 0.6, 0.6], direction=[0.3, 0.4, -1.0]),
    ]
    return Scene(mesh, lights)


def build_preset(name: str) -> Scene:
    if name == "sphere-plane":
        return sphere_plane()
    if name == "two-boxes":
        return two_boxes()
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def ring_cameras(count: int, resolution: int, distance: float = 2.8, elevation_deg: float = 35.0,
                 target=(0.0, 0.0, 0.35), fov_deg: float = 50.0) -> list:
    """Cameras evenly spaced on a ring around the target, all looking at it."""
    f = 0.5 * resolution / np.tan(np.radians(fov_deg) / 2.0)
    c = resolution / 2.0
    el = np.radians(elevation_deg)
    cams = []
    for i in range(count):
        az = 2.0 * np.pi * i / count
        eye = np.asarray(target) + distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(Camera(f, f, c, c, look_at(eye, target), resolution, resolution))
    return cams


@dataclass
class SyntheticSet:
    truth: Scene
    start: Scene
    views: list
    held_out: int
    config: RenderConfig


def perturb(scene: Scene, rng: np.random.Generator, albedo_noise: float = 0.3, light_scale: float = 0.5,
            jitter: float = 0.01) -> Scene:
    """Albedo noise (uniform +-albedo_noise, then projected), scaled lights and vertex jitter."""
    mesh = scene.mesh
    rd = mesh.diffuse + rng.uniform(-albedo_noise, albedo_noise, mesh.diffuse.shape)
    rs = mesh.specular + rng.uniform(-albedo_noise, albedo_noise, mesh.specular.shape)
    rd, rs = project_albedo(rd, rs)
    radius = mesh.bounding_sphere()[1]
    verts = mesh.vertices + rng.uniform(-1.0, 1.0, mesh.vertices.shape) * (jitter * radius / np.sqrt(3.0))
    mesh = mesh.with_vertices(verts).with_albedo(rd, rs)
    return Scene(mesh, [l.with_intensity(l.intensity * light_scale) for l in scene.lights],
                 scene.distribution, scene.f0)


def make_synthetic(preset: str = "sphere-plane", views: int = 13, resolution: int = 64, spp: int = 64,
                   max_bounces: int = 2, seed: int = 0, downsample: int = 1,
                   held_out: Optional[int] = None) -> SyntheticSet:
    """Ground truth, rendered views with exact coverage masks and a perturbed start.

    The last view is held out unless ``held_out`` says otherwise.
    """
    if views < 2:
        raise ValueError("need at least 2 views")
    truth = build_preset(preset)
    bvh = accel.build_bvh(truth.mesh)
    cfg = RenderConfig(spp=spp, max_bounces=max_bounces, seed=seed)
    obs = []
    for i, cam in enumerate(ring_cameras(views, resolution)):
        img = render.render(truth, bvh, cam, cfg).pixels
        mask = render.coverage_mask(truth, bvh, cam)
        obs.append(ViewObservation(cam, img * mask[:, :, None], mask, name=f"view{i:03d}"))
    rng = np.random.default_rng(seed + 1)
    start = perturb(truth, rng)
    opt_cfg = RenderConfig(spp=1, max_bounces=max_bounces, seed=seed, downsample=downsample)
    return SyntheticSet(truth, start, obs, views - 1 if held_out is None else held_out, opt_cfg)
