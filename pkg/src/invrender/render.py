"""Forward path tracing with next-event estimation.

Each camera sample is traced for at most ``max_bounces`` surface hits. At
every hit one light is chosen uniformly from all sources and its
contribution estimated directly (point lights fall off with the inverse
square of distance, directional lights are constant, ambient light adds
rho_d * L in closed form); the path then continues along a cosine-weighted
direction. Paths are traced in batches ("wavefront"), and tracing is split
from shading: ``trace_paths`` makes every geometric and random decision,
``evaluate_paths`` turns a record of those decisions into radiance using the
live material and light parameters. Rendering is trace + evaluate, so
re-evaluating a record reproduces the film bit for bit, and the backward pass
differentiates exactly the estimator that was rendered.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import accel
from .brdf import INV_PI, Lobe, ShadingFrame, sample_cosine_hemisphere
from .sampling import DIM_PIXEL_X, DIM_PIXEL_Y, PixelSampler, bounce_dims
from .scene import Camera, RenderConfig, Scene, SceneError

log = logging.getLogger(__name__)

KIND_POINT, KIND_DIRECTIONAL, KIND_AMBIENT = 0, 1, 2
_KIND_CODES = {"point": KIND_POINT, "directional": KIND_DIRECTIONAL, "ambient": KIND_AMBIENT}

# paths traced per batch; bounds record memory
CHUNK_PATHS = 1 << 15


@dataclass
class Film:
    pixels: np.ndarray
    spp: int
    seed: int

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class LightArrays:
    kind: np.ndarray
    position: np.ndarray
    direction: np.ndarray
    intensity: np.ndarray

    @classmethod
    def from_scene(cls, scene: Scene) -> "LightArrays":
        m = scene.num_lights
        kind = np.array([_KIND_CODES[l.kind] for l in scene.lights], dtype=np.int64)
        pos = np.zeros((m, 3))
        dirs = np.zeros((m, 3))
        for i, l in enumerate(scene.lights):
            if l.position is not None:
                pos[i] = l.position
            if l.direction is not None:
                dirs[i] = l.direction
        return cls(kind, pos, dirs, scene.light_intensities().reshape(m, 3))

    def __len__(self) -> int:
        return len(self.kind)


@dataclass
class BounceRecord:
    """Decisions made at one surface interaction, for the paths alive there.

    ``index`` maps rows to path slots of the owning :class:`PathRecords`.
    """

    index: np.ndarray
    origin: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    face: np.ndarray
    bary: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    flip: np.ndarray
    light: np.ndarray
    light_visible: np.ndarray
    wi: Optional[np.ndarray] = None
    pdf: Optional[np.ndarray] = None


@dataclass
class PathRecords:
    """Per-bounce records for a batch of camera paths."""

    num_paths: int
    bounces: list = field(default_factory=list)

    def path(self, i: int) -> list:
        """Records of a single path as a list of per-bounce dicts."""
        out = []
        for k, b in enumerate(self.bounces):
            rows = np.flatnonzero(b.index == i)
            if rows.size == 0:
                break
            r = rows[0]
            out.append(
                {
                    "bounce": k,
                    "face": int(b.face[r]),
                    "t": float(b.t[r]),
                    "point": b.point[r].copy(),
                    "normal": b.normal[r].copy(),
                    "barycentrics": b.bary[r].copy(),
                    "wo": -b.direction[r],
                    "wi": None if b.wi is None else b.wi[r].copy(),
                    "pdf": None if b.pdf is None else float(b.pdf[r]),
                    "light": int(b.light[r]),
                    "light_visible": bool(b.light_visible[r]),
                }
            )
        return out


def trace_paths(scene: Scene, bvh: accel.Bvh, origins, directions, max_bounces: int, sampler,
                backend: Optional[str] = None) -> PathRecords:
    """Trace camera rays and record hits, light choices, visibility and bounce directions.

    ``sampler`` supplies per-path uniforms via ``get(dim)``. Nothing here
    depends on albedos or light intensities.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    rec = PathRecords(n)
    lights = LightArrays.from_scene(scene)
    m = len(lights)
    if m == 0 or max_bounces == 0 or n == 0:
        return rec
    mesh = scene.mesh
    eps = bvh.epsilon
    index = np.arange(n)
    org, dirs = origins, directions
    tmin = np.zeros(n)
    for k in range(max_bounces):
        t, face, bary = accel.intersect_batch(bvh, org, dirs, tmin, None, backend)
        hit = face >= 0
        index, org, dirs, t, face, bary = index[hit], org[hit], dirs[hit], t[hit], face[hit], bary[hit]
        if index.size == 0:
            break
        point = org + t[:, None] * dirs
        _, normal, flip = accel.shading_frame_at(mesh, face, bary, dirs)

        dim_light, dim_u1, dim_u2 = bounce_dims(k)
        u = sampler.get(dim_light)[index]
        light = np.minimum((u * m).astype(np.int64), m - 1)
        kind = lights.kind[light]
        visible = np.ones(index.size, dtype=bool)
        sel = kind == KIND_POINT
        if np.any(sel):
            visible[sel] = ~accel.segments_occluded(bvh, point[sel], lights.position[light[sel]], backend)
        sel = kind == KIND_DIRECTIONAL
        if np.any(sel):
            to_light = -lights.direction[light[sel]]
            visible[sel] = ~accel.occluded_batch(bvh, point[sel], to_light, eps, np.inf, backend)

        b = BounceRecord(index, org, dirs, t, face, bary, point, normal, flip, light, visible)
        rec.bounces.append(b)
        if k + 1 == max_bounces:
            break
        frame = ShadingFrame.from_normal(normal)
        wi, pdf = sample_cosine_hemisphere(frame, sampler.get(dim_u1)[index], sampler.get(dim_u2)[index])
        b.wi, b.pdf = wi, pdf
        org, dirs = point, wi
        tmin = np.full(index.size, eps)
    return rec


@dataclass
class BounceShading:
    """Intermediate values of one bounce, kept for the reverse pass."""

    verts: np.ndarray
    rho_d: np.ndarray
    rho_s: np.ndarray
    kind: np.ndarray
    emitted: np.ndarray
    nee_lobe: Optional[Lobe]
    nee_sel: np.ndarray
    nee_wi: np.ndarray
    nee_cos: np.ndarray
    nee_falloff: np.ndarray
    nee_delta: np.ndarray
    weight: Optional[np.ndarray]
    bounce_lobe: Optional[Lobe]
    bounce_q: Optional[np.ndarray]
    beta: np.ndarray


def _interp(values: np.ndarray, verts: np.ndarray, bary: np.ndarray) -> np.ndarray:
    return (
        bary[:, 0:1] * values[verts[:, 0]]
        + bary[:, 1:2] * values[verts[:, 1]]
        + bary[:, 2:3] * values[verts[:, 2]]
    )


def evaluate_paths(scene: Scene, records: PathRecords, keep: bool = False):
    """Radiance of every recorded path under the scene's current parameters.

    Returns ``(radiance, shading)``; ``shading`` holds per-bounce
    intermediates when ``keep`` is set (needed by the gradient code).
    """
    n = records.num_paths
    radiance = np.zeros((n, 3))
    shading = []
    if not records.bounces:
        return radiance, shading
    mesh = scene.mesh
    lights = LightArrays.from_scene(scene)
    m = float(len(lights))
    alpha, f0, dist = mesh.roughness, scene.f0, scene.distribution
    beta = np.ones((records.bounces[0].index.size, 3))
    prev_index = records.bounces[0].index
    for k, b in enumerate(records.bounces):
        if k > 0:
            # rows of bounce k are a subset of the rows of bounce k-1, in order
            beta = beta[np.searchsorted(prev_index, b.index)]
        verts = mesh.faces[b.face]
        rho_d = _interp(mesh.diffuse, verts, b.bary)
        rho_s = _interp(mesh.specular, verts, b.bary)
        wo = -b.direction
        kind = lights.kind[b.light]
        intensity = lights.intensity[b.light]

        emitted = np.zeros_like(rho_d)
        amb = kind == KIND_AMBIENT
        emitted[amb] = m * rho_d[amb] * intensity[amb]

        sel = ~amb
        nee_wi = np.zeros((int(sel.sum()), 3))
        falloff = np.ones(nee_wi.shape[0])
        delta = np.zeros_like(nee_wi)
        lobe = None
        cos_l = np.zeros(nee_wi.shape[0])
        if np.any(sel):
            li = b.light[sel]
            point = lights.kind[li] == KIND_POINT
            delta = lights.position[li] - b.point[sel]
            r2 = np.sum(delta * delta, axis=1)
            dist_ = np.sqrt(r2)
            nee_wi = np.where(point[:, None], delta / np.where(point, dist_, 1.0)[:, None], -lights.direction[li])
            falloff = np.where(point, 1.0 / np.where(point, r2, 1.0), 1.0)
            n_sel = b.normal[sel]
            lobe = Lobe(dist, alpha, f0, n_sel, nee_wi, wo[sel])
            cos_l = np.sum(n_sel * nee_wi, axis=1)
            fr = np.where(lobe.valid[:, None], rho_d[sel] * INV_PI, 0.0) + rho_s[sel] * lobe.value[:, None]
            scale = np.where(b.light_visible[sel], m * cos_l * falloff, 0.0)
            emitted[sel] = fr * (scale[:, None] * intensity[sel])

        radiance[b.index] += beta * emitted

        weight = bounce_lobe = q = None
        if k + 1 < len(records.bounces):
            bounce_lobe = Lobe(dist, alpha, f0, b.normal, b.wi, wo)
            cos_b = np.sum(b.normal * b.wi, axis=1)
            q = np.where(b.pdf > 0.0, cos_b / np.where(b.pdf > 0.0, b.pdf, 1.0), 0.0)
            fr_b = np.where(bounce_lobe.valid[:, None], rho_d * INV_PI, 0.0) + rho_s * bounce_lobe.value[:, None]
            weight = fr_b * q[:, None]
        if keep:
            shading.append(
                BounceShading(verts, rho_d, rho_s, kind, emitted, lobe, sel, nee_wi, cos_l, falloff, delta,
                              weight, bounce_lobe, q, beta)
            )
        if weight is not None:
            beta = beta * weight
            prev_index = b.index
    return radiance, shading


def trace_radiance(scene: Scene, bvh: accel.Bvh, origins, directions, max_bounces: int, sampler,
                   records: Optional[list] = None, backend: Optional[str] = None) -> np.ndarray:
    """Radiance estimates along the given rays; appends the PathRecords to ``records`` if given."""
    rec = trace_paths(scene, bvh, origins, directions, max_bounces, sampler, backend)
    if records is not None:
        records.append(rec)
    return evaluate_paths(scene, rec)[0]


class ChunkPlan:
    """Pixel tiles of a camera with their samplers and primary rays.

    ``pixels`` restricts the plan to a subset of flat pixel ids; each pixel
    gets the same samples it would get in a full render.
    """

    def __init__(self, camera: Camera, spp: int, seed: int, pixels: Optional[np.ndarray] = None):
        self.camera = camera
        self.spp = spp
        self.seed = seed
        self.num_pixels = camera.width * camera.height
        self.pixels = np.arange(self.num_pixels) if pixels is None else np.asarray(pixels, dtype=np.int64)
        per = max(1, CHUNK_PATHS // spp)
        self.bounds = [(s, min(s + per, self.pixels.size)) for s in range(0, self.pixels.size, per)]

    def chunk(self, lo: int, hi: int):
        pixels = self.pixels[lo:hi]
        sampler = PixelSampler(self.seed, pixels, self.spp)
        row = np.repeat(pixels // self.camera.width, self.spp).astype(np.float64)
        col = np.repeat(pixels % self.camera.width, self.spp).astype(np.float64)
        px = col + sampler.get(DIM_PIXEL_X)
        py = row + sampler.get(DIM_PIXEL_Y)
        org, dirs = self.camera.generate_rays(px, py)
        return pixels, sampler, org, dirs


def prepare_camera(camera: Camera, config: RenderConfig) -> Camera:
    return camera.scaled(config.downsample)


def _check_lights(scene: Scene) -> None:
    if scene.num_lights == 0 or scene.total_light_power() <= 0.0:
        warnings.warn("scene has no light with positive intensity; the render is black", stacklevel=3)


def render_with_records(scene: Scene, bvh: accel.Bvh, camera: Camera, config: RenderConfig,
                        backend: Optional[str] = None, keep_records: bool = True):
    """Render and return ``(film, chunks)``.

    ``chunks`` lists ``(pixel_ids, PathRecords)`` per pixel tile; paths are
    ordered pixel-major, ``spp`` consecutive slots per pixel.
    """
    cam = prepare_camera(camera, config)
    _check_lights(scene)
    plan = ChunkPlan(cam, config.spp, config.seed)
    out = np.zeros((plan.num_pixels, 3))
    chunks = []
    for lo, hi in plan.bounds:
        pixels, sampler, org, dirs = plan.chunk(lo, hi)
        rec = trace_paths(scene, bvh, org, dirs, config.max_bounces, sampler, backend)
        radiance, _ = evaluate_paths(scene, rec)
        out[pixels] = resolve_pixels(radiance, config.spp, cam.exposure)
        if keep_records:
            chunks.append((pixels, rec))
    film = Film(out.reshape(cam.height, cam.width, 3), config.spp, config.seed)
    return film, chunks


def resolve_pixels(radiance: np.ndarray, spp: int, exposure: float) -> np.ndarray:
    """Average the spp samples of each pixel and apply the exposure time."""
    return exposure * radiance.reshape(-1, spp, 3).mean(axis=1)


def render(scene: Scene, bvh: accel.Bvh, camera: Camera, config: RenderConfig,
           backend: Optional[str] = None) -> Film:
    """Exposure-scaled average of ``spp`` stratified samples per pixel."""
    t0 = time.perf_counter()
    film, _ = render_with_records(scene, bvh, camera, config, backend, keep_records=False)
    log.debug("rendered %dx%d spp=%d in %.3fs", film.width, film.height, config.spp, time.perf_counter() - t0)
    return film


def replay(scene: Scene, camera: Camera, config: RenderConfig, chunks) -> np.ndarray:
    """Film pixels recomputed from stored records only (no ray casting)."""
    cam = prepare_camera(camera, config)
    out = np.zeros((cam.width * cam.height, 3))
    for pixels, rec in chunks:
        radiance, _ = evaluate_paths(scene, rec)
        out[pixels] = resolve_pixels(radiance, config.spp, cam.exposure)
    return out.reshape(cam.height, cam.width, 3)


def coverage_mask(scene: Scene, bvh: accel.Bvh, camera: Camera, backend: Optional[str] = None) -> np.ndarray:
    """Pixels whose center ray hits the mesh."""
    h, w = camera.height, camera.width
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    org, dirs = camera.generate_rays(jj.ravel(), ii.ravel())
    _, face, _ = accel.intersect_batch(bvh, org, dirs, None, None, backend)
    return (face >= 0).reshape(h, w)


def validate_config(camera: Camera, config: RenderConfig) -> None:
    if camera.width % config.downsample or camera.height % config.downsample:
        raise SceneError(
            f"downsample {config.downsample} does not divide {camera.width}x{camera.height}", "render.downsample"
        )
