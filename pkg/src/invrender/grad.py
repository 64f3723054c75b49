"""Objective and reverse-mode gradients of rendered views.

The backward pass replays the recorded path decisions (hits, light choices,
visibility, bounce directions) and differentiates the per-path estimator

    L = sum_k beta_k E_k,    beta_{k+1} = beta_k W_k

where E_k is the light gathered at bounce k and W_k = fr cos / pdf the
throughput factor of the continuation. Sweeping the bounces backwards gives

    G_k = g * E_k + G_{k+1} * W_k,   dE_k = g * beta_k,   dW_k = G_{k+1} * beta_k

from which albedo and light adjoints follow directly. Geometry is
differentiated through shading only: rays, light choices and visibility stay
fixed, each hit slides along its ray as its triangle moves, and the
interpolated normal follows the area-weighted vertex normals. Silhouette and
visibility changes are ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import accel, render
from .brdf import INV_PI
from .scene import RenderConfig, Scene, ViewObservation

log = logging.getLogger(__name__)

GROUPS = ("diffuse", "specular", "lights", "geometry")


@dataclass
class GradientSet:
    diffuse: np.ndarray
    specular: np.ndarray
    lights: np.ndarray
    vertices: np.ndarray

    @classmethod
    def zeros(cls, scene: Scene) -> "GradientSet":
        v = scene.mesh.num_vertices
        return cls(np.zeros((v, 3)), np.zeros((v, 3)), np.zeros((scene.num_lights, 3)), np.zeros((v, 3)))

    def group(self, name: str) -> np.ndarray:
        return {"diffuse": self.diffuse, "specular": self.specular, "lights": self.lights,
                "geometry": self.vertices}[name]

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(self.diffuse + other.diffuse, self.specular + other.specular,
                           self.lights + other.lights, self.vertices + other.vertices)


def masked_pixel_count(observations: Sequence[ViewObservation]) -> int:
    return int(sum(int(o.mask.sum()) for o in observations))


def objective(images: Sequence[np.ndarray], observations: Sequence[ViewObservation]) -> float:
    """Mean over masked-in pixels of the squared RGB error (summed over channels)."""
    count = masked_pixel_count(observations)
    if count == 0:
        return 0.0
    total = 0.0
    for img, obs in zip(images, observations):
        diff = (np.asarray(img) - obs.image)[obs.mask]
        total += float(np.sum(diff * diff))
    return total / count


def _scatter(target: np.ndarray, index: np.ndarray, weights: np.ndarray) -> None:
    """target[index] += weights for (n,) indices and (n, 3) weights."""
    size = len(target)
    for c in range(3):
        target[:, c] += np.bincount(index, weights=weights[:, c], minlength=size)


def _scatter_vertices(target, verts, bary, values) -> None:
    for i in range(3):
        _scatter(target, verts[:, i], bary[:, i:i + 1] * values)


def _cross(a, b):
    return np.cross(a, b)


def _dot(a, b):
    return np.sum(a * b, axis=1)


class _Accumulator:
    """Adjoint buffers shared by all chunks of a backward pass."""

    def __init__(self, scene: Scene, groups: Iterable[str]):
        self.groups = set(groups)
        unknown = self.groups - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")
        self.grads = GradientSet.zeros(scene)
        self.geometry = "geometry" in self.groups
        # adjoint of the (unit) vertex normals, pushed through normalization at the end
        self.normal_adj = np.zeros((scene.mesh.num_vertices, 3)) if self.geometry else None


def _backprop_paths(scene: Scene, records: render.PathRecords, shading: list, g_path: np.ndarray,
                    acc: _Accumulator) -> None:
    mesh = scene.mesh
    lights = render.LightArrays.from_scene(scene)
    m = float(len(lights))
    grads = acc.grads
    g_next = None  # adjoint of beta_{k+1} on the rows of bounce k+1
    for k in range(len(records.bounces) - 1, -1, -1):
        b, s = records.bounces[k], shading[k]
        nk = b.index.size
        g = g_path[b.index]
        adj_e = g * s.beta
        g_here = g * s.emitted
        adj_w = None
        if g_next is not None:
            full = np.zeros((nk, 3))
            full[np.searchsorted(b.index, records.bounces[k + 1].index)] = g_next
            adj_w = full * s.beta
            g_here = g_here + full * s.weight
        g_next = g_here

        intensity = lights.intensity[b.light]
        amb = s.kind == render.KIND_AMBIENT
        sel = s.nee_sel
        a_d = np.zeros((nk, 3))
        a_s = np.zeros((nk, 3))
        a_light = np.zeros((nk, 3))
        a_d[amb] = adj_e[amb] * m * intensity[amb]
        a_light[amb] = adj_e[amb] * m * s.rho_d[amb]
        if np.any(sel):
            lobe = s.nee_lobe
            vis = b.light_visible[sel]
            scale = np.where(vis, m * s.nee_cos * s.nee_falloff, 0.0)
            k_sel = scale[:, None] * intensity[sel]
            valid = lobe.valid[:, None]
            a_d[sel] = adj_e[sel] * k_sel * np.where(valid, INV_PI, 0.0)
            a_s[sel] = adj_e[sel] * k_sel * lobe.value[:, None]
            fr = np.where(valid, s.rho_d[sel] * INV_PI, 0.0) + s.rho_s[sel] * lobe.value[:, None]
            a_light[sel] = adj_e[sel] * fr * scale[:, None]
        if adj_w is not None:
            lobe_b = s.bounce_lobe
            q = s.bounce_q[:, None]
            a_d += adj_w * q * np.where(lobe_b.valid[:, None], INV_PI, 0.0)
            a_s += adj_w * q * lobe_b.value[:, None]

        if "diffuse" in acc.groups:
            _scatter_vertices(grads.diffuse, s.verts, b.bary, a_d)
        if "specular" in acc.groups:
            _scatter_vertices(grads.specular, s.verts, b.bary, a_s)
        if "lights" in acc.groups:
            _scatter(grads.lights, b.light, a_light)
        if acc.geometry:
            _backprop_geometry(scene, b, s, adj_e, adj_w, a_d, a_s, intensity, m, acc)


def _backprop_geometry(scene, b, s, adj_e, adj_w, a_d, a_s, intensity, m, acc) -> None:
    mesh = scene.mesh
    nk = b.index.size
    verts, bary = s.verts, b.bary
    adj_n = np.zeros((nk, 3))
    adj_x = np.zeros((nk, 3))
    # albedo is interpolated with the barycentrics
    adj_b = np.stack(
        [np.sum(a_d * mesh.diffuse[verts[:, i]] + a_s * mesh.specular[verts[:, i]], axis=1) for i in range(3)],
        axis=1,
    )
    sel = s.nee_sel
    if np.any(sel):
        lobe = s.nee_lobe
        vis = b.light_visible[sel]
        wl, n_sel = s.nee_wi, b.normal[sel]
        fr = np.where(lobe.valid[:, None], s.rho_d[sel] * INV_PI, 0.0) + s.rho_s[sel] * lobe.value[:, None]
        base = np.where(vis, m, 0.0)
        e_sel, i_sel = adj_e[sel], intensity[sel]
        scale = base * s.nee_cos * s.nee_falloff
        adj_spec = np.sum(e_sel * s.rho_s[sel] * i_sel, axis=1) * scale
        g_n, g_wl, _ = lobe.vjp(adj_spec)
        flux = np.sum(e_sel * fr * i_sel, axis=1)
        adj_cos = flux * base * s.nee_falloff
        g_n += adj_cos[:, None] * wl
        g_wl += adj_cos[:, None] * n_sel
        point = s.kind[sel] == render.KIND_POINT
        if np.any(point):
            delta = s.nee_delta[point]
            r2 = _dot(delta, delta)
            dist = np.sqrt(r2)
            w = wl[point]
            gw = g_wl[point]
            adj_fall = flux[point] * base[point] * s.nee_cos[point]
            g_delta = (gw - w * _dot(w, gw)[:, None]) / dist[:, None]
            g_delta -= (2.0 * adj_fall / (r2 * r2))[:, None] * delta
            rows = np.flatnonzero(sel)[point]
            adj_x[rows] -= g_delta
        adj_n[sel] += g_n
    if adj_w is not None:
        lobe_b = s.bounce_lobe
        adj_spec_b = np.sum(adj_w * s.rho_s, axis=1) * s.bounce_q
        adj_n += lobe_b.vjp(adj_spec_b)[0]

    # n = sign * normalize(sum_i b_i N_i)
    interp = render._interp(mesh.normals, verts, bary)
    length = np.linalg.norm(interp, axis=1)
    ok = length > 1e-12
    ls = np.where(ok, length, 1.0)[:, None]
    nhat = interp / ls
    sign = np.where(b.flip, -1.0, 1.0)[:, None]
    a_hat = sign * adj_n
    a_m = np.where(ok[:, None], (a_hat - nhat * _dot(nhat, a_hat)[:, None]) / ls, 0.0)
    for i in range(3):
        adj_b[:, i] += _dot(a_m, mesh.normals[verts[:, i]])
    _scatter_vertices(acc.normal_adj, verts, bary, a_m)

    # hit point x = o + t d with (t, u, v) from the ray/triangle solve; b = (1-u-v, u, v)
    p0, p1, p2 = (mesh.vertices[verts[:, i]] for i in range(3))
    d, o = b.direction, b.origin
    a_t = _dot(adj_x, d)
    a_u = adj_b[:, 1] - adj_b[:, 0]
    a_v = adj_b[:, 2] - adj_b[:, 0]
    e1, e2 = p1 - p0, p2 - p0
    sv = o - p0
    pvec = _cross(d, e2)
    det = _dot(e1, pvec)
    inv = 1.0 / det
    qvec = _cross(sv, e1)
    t = _dot(e2, qvec) * inv
    u = _dot(sv, pvec) * inv
    v = _dot(d, qvec) * inv
    a_tn, a_un, a_vn = a_t * inv, a_u * inv, a_v * inv
    a_det = -(a_t * t + a_u * u + a_v * v) * inv
    a_e2 = a_tn[:, None] * qvec
    a_q = a_tn[:, None] * e2 + a_vn[:, None] * d
    a_s = a_un[:, None] * pvec
    a_p = a_un[:, None] * sv + a_det[:, None] * e1
    a_e1 = a_det[:, None] * pvec
    a_s += _cross(e1, a_q)
    a_e1 += _cross(a_q, sv)
    a_e2 += _cross(a_p, d)
    g0 = -a_s - a_e1 - a_e2
    grads = acc.grads.vertices
    _scatter(grads, verts[:, 0], g0)
    _scatter(grads, verts[:, 1], a_e1)
    _scatter(grads, verts[:, 2], a_e2)


def _finish_normals(mesh, acc: _Accumulator) -> None:
    """Push the unit vertex-normal adjoint through normalization and the face cross products."""
    p0, p1, p2 = (mesh.vertices[mesh.faces[:, k]] for k in range(3))
    e1, e2 = p1 - p0, p2 - p0
    fn = _cross(e1, e2)
    raw = np.zeros_like(mesh.vertices)
    for k in range(3):
        _scatter(raw, mesh.faces[:, k], fn)
    length = np.linalg.norm(raw, axis=1)
    ok = length > 0.0
    unit = raw / np.where(ok, length, 1.0)[:, None]
    adj = acc.normal_adj
    a_raw = np.where(ok[:, None], (adj - unit * _dot(unit, adj)[:, None]) / np.where(ok, length, 1.0)[:, None], 0.0)
    a_fn = a_raw[mesh.faces[:, 0]] + a_raw[mesh.faces[:, 1]] + a_raw[mesh.faces[:, 2]]
    g1 = _cross(e2, a_fn)
    g2 = _cross(a_fn, e1)
    grads = acc.grads.vertices
    _scatter(grads, mesh.faces[:, 1], g1)
    _scatter(grads, mesh.faces[:, 2], g2)
    _scatter(grads, mesh.faces[:, 0], -(g1 + g2))


@dataclass
class BackwardResult:
    value: float
    gradients: GradientSet
    images: list = field(default_factory=list)


def _render_masked(scene, bvh, cam, config, mask, seed, backend):
    """Pixels under ``mask`` rendered with ``seed``; zeros elsewhere (``cam`` is already downsampled)."""
    plan = render.ChunkPlan(cam, config.spp, seed, np.flatnonzero(mask.ravel()))
    out = np.zeros((plan.num_pixels, 3))
    for lo, hi in plan.bounds:
        pixels, sampler, org, dirs = plan.chunk(lo, hi)
        rec = render.trace_paths(scene, bvh, org, dirs, config.max_bounces, sampler, backend)
        out[pixels] = render.resolve_pixels(render.evaluate_paths(scene, rec)[0], config.spp, cam.exposure)
    return out


def backward(scene: Scene, observations: Sequence[ViewObservation], config: RenderConfig,
             groups: Iterable[str] = GROUPS, bvh: Optional[accel.Bvh] = None,
             residual_seed: Optional[int] = None, backend: Optional[str] = None,
             view_subset: Optional[Sequence[int]] = None) -> BackwardResult:
    """Objective over ``observations`` and its gradient for the requested groups.

    Observations are given at native resolution and box-downsampled by
    ``config.downsample``. With ``residual_seed`` the image residual comes
    from an independent render with that seed, so the residual and the
    replayed paths do not share noise; otherwise both use ``config.seed`` and
    the gradient is exactly that of the rendered objective.
    """
    if bvh is None:
        bvh = accel.build_bvh(scene.mesh)
    acc = _Accumulator(scene, groups)
    if view_subset is not None:
        observations = [observations[i] for i in view_subset]
    views = [o.downsampled(config.downsample) for o in observations]
    count = masked_pixel_count(views)
    images = []
    total = 0.0
    for obs in views:
        cam = obs.camera
        mask = obs.mask.ravel()
        target = obs.image.reshape(-1, 3)
        img = np.zeros_like(target)
        plan = render.ChunkPlan(cam, config.spp, config.seed, np.flatnonzero(mask))
        residual_img = None
        if residual_seed is not None:
            residual_img = _render_masked(scene, bvh, cam, config, obs.mask, residual_seed, backend)
        for lo, hi in plan.bounds:
            pixels, sampler, org, dirs = plan.chunk(lo, hi)
            rec = render.trace_paths(scene, bvh, org, dirs, config.max_bounces, sampler, backend)
            radiance, shading = render.evaluate_paths(scene, rec, keep=True)
            img[pixels] = render.resolve_pixels(radiance, config.spp, cam.exposure)
            current = img[pixels] if residual_img is None else residual_img[pixels]
            diff = current - target[pixels]
            total += float(np.sum(diff * diff))
            if count == 0 or not rec.bounces:
                continue
            g_pix = (2.0 / count) * diff * (cam.exposure / config.spp)
            g_path = np.repeat(g_pix, config.spp, axis=0)
            _backprop_paths(scene, rec, shading, g_path, acc)
        images.append(img.reshape(obs.image.shape))
    if acc.geometry:
        _finish_normals(scene.mesh, acc)
    value = total / count if count else 0.0
    return BackwardResult(value, acc.grads, images)


def render_views(scene: Scene, observations: Sequence[ViewObservation], config: RenderConfig,
                 bvh: Optional[accel.Bvh] = None, backend: Optional[str] = None) -> list:
    if bvh is None:
        bvh = accel.build_bvh(scene.mesh)
    return [render.render(scene, bvh, o.camera, config, backend).pixels for o in observations]


def evaluate_objective(scene: Scene, observations: Sequence[ViewObservation], config: RenderConfig,
                       bvh: Optional[accel.Bvh] = None, backend: Optional[str] = None) -> float:
    views = [o.downsampled(config.downsample) for o in observations]
    if bvh is None:
        bvh = accel.build_bvh(scene.mesh)
    images = [render.render(scene, bvh, o.camera, RenderConfig(config.spp, config.max_bounces, config.seed, 1),
                            backend).pixels for o in views]
    return objective(images, views)


def perturbed(scene: Scene, group: str, index: tuple, delta: float) -> Scene:
    """Copy of ``scene`` with one scalar parameter shifted by ``delta``."""
    row, col = index
    if group == "diffuse":
        arr = scene.mesh.diffuse.copy()
        arr[row, col] += delta
        return scene.with_mesh(scene.mesh.with_albedo(diffuse=arr))
    if group == "specular":
        arr = scene.mesh.specular.copy()
        arr[row, col] += delta
        return scene.with_mesh(scene.mesh.with_albedo(specular=arr))
    if group == "lights":
        arr = scene.light_intensities().copy()
        arr[row, col] += delta
        return scene.with_light_intensities(arr)
    if group == "geometry":
        arr = scene.mesh.vertices.copy()
        arr[row, col] += delta
        return scene.with_mesh(scene.mesh.with_vertices(arr))
    raise ValueError(f"unknown parameter group {group!r}")


def finite_difference(scene: Scene, observations: Sequence[ViewObservation], config: RenderConfig,
                      group: str, index: tuple, step: float, backend: Optional[str] = None) -> float:
    """Central difference of the objective in one parameter, same samples on both sides."""
    plus = evaluate_objective(perturbed(scene, group, index, step), observations, config, backend=backend)
    minus = evaluate_objective(perturbed(scene, group, index, -step), observations, config, backend=backend)
    return (plus - minus) / (2.0 * step)


def finite_difference_gradient(scene: Scene, group: str, indices: Sequence[tuple], step: float,
                               observations: Sequence[ViewObservation], config: RenderConfig,
                               backend: Optional[str] = None) -> np.ndarray:
    """Central differences for each selected (row, component) of ``group``."""
    if step <= 0:
        raise ValueError("step must be positive")
    return np.array([finite_difference(scene, observations, config, group, tuple(i), step, backend)
                     for i in indices])


def default_step(scene: Scene, group: str) -> float:
    if group == "geometry":
        return 1e-4 * scene.mesh.bounding_sphere()[1]
    return 1e-4


# ------------------------------------------------------------- regularizer

def uniform_laplacian(num_vertices: int, faces: np.ndarray) -> sp.csr_matrix:
    """I - D^-1 A over the undirected edge graph (rows of isolated vertices are zero)."""
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    edges = np.unique(edges, axis=0)
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.csr_matrix((np.ones(i.size), (i, j)), shape=(num_vertices, num_vertices))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    eye = sp.diags((deg > 0).astype(np.float64))
    return (eye - sp.diags(inv) @ adj).tocsr()


def laplacian_regularizer(vertices: np.ndarray, faces: np.ndarray, weight: float,
                          operator: Optional[sp.csr_matrix] = None):
    """weight * sum_v |x_v - mean of neighbours|^2 and its gradient."""
    lap = uniform_laplacian(len(vertices), faces) if operator is None else operator
    delta = lap @ vertices
    value = weight * float(np.sum(delta * delta))
    return value, 2.0 * weight * (lap.T @ delta)
