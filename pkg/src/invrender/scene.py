"""Scene data model: mesh, lights, cameras, observations and render settings.

Arrays are float64 throughout. Objects are treated as immutable while a
render is in flight; optimizers build new instances via the ``with_*``
helpers instead of writing into shared buffers.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

LIGHT_KINDS = ("point", "directional", "ambient")


class SceneError(ValueError):
    """Invalid scene content. ``location`` names the file/field at fault."""

    def __init__(self, message: str, location: str = ""):
        self.message = message
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


def project_albedo(diffuse: np.ndarray, specular: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamp both albedos to [0, 1] and rescale pairs whose sum exceeds one."""
    rd = np.clip(np.asarray(diffuse, dtype=np.float64), 0.0, 1.0)
    rs = np.clip(np.asarray(specular, dtype=np.float64), 0.0, 1.0)
    total = rd + rs
    over = total > 1.0
    if np.any(over):
        scale = np.where(over, 1.0 / np.where(over, total, 1.0), 1.0)
        rd = np.where(over, rd * scale, rd)
        rs = np.where(over, rs * scale, rs)
    return rd, rs


def compute_vertex_normals(vertices: np.ndarray, faces: np.ndarray, warn: bool = True) -> np.ndarray:
    """Area-weighted vertex normals.

    Each face contributes its unnormalized cross product (length = twice the
    area). Vertices without incident area keep a zero normal.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    acc = np.zeros_like(vertices)
    if len(faces):
        p0, p1, p2 = (vertices[faces[:, k]] for k in range(3))
        fn = np.cross(p1 - p0, p2 - p0)
        for k in range(3):
            for c in range(3):
                acc[:, c] += np.bincount(faces[:, k], weights=fn[:, c], minlength=len(vertices))
    length = np.linalg.norm(acc, axis=1)
    zero = length == 0.0
    if warn and np.any(zero):
        warnings.warn(
            f"{int(zero.sum())} vertices have no incident face area; their normal is zero "
            "and they are excluded from shading",
            stacklevel=2,
        )
    return acc / np.where(zero, 1.0, length)[:, None]


def _as_rgb(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise SceneError(f"expected 3 components, got {arr.size}", name)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise SceneError("components must be finite and >= 0", name)
    return arr


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    roughness: float = 0.1
    normals: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        self.diffuse = np.ascontiguousarray(self.diffuse, dtype=np.float64).reshape(n, 3)
        self.specular = np.ascontiguousarray(self.specular, dtype=np.float64).reshape(n, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= n):
            raise SceneError("face index out of range", "mesh.faces")
        if not np.all(np.isfinite(self.vertices)):
            raise SceneError("non-finite vertex position", "mesh.vertices")
        if not 0.0 < float(self.roughness) <= 1.0:
            raise SceneError(f"roughness must lie in (0, 1], got {self.roughness}", "roughness")
        self.roughness = float(self.roughness)
        if self.normals is None:
            self.normals = compute_vertex_normals(self.vertices, self.faces)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        p0, p1, p2 = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Center of the AABB and the radius enclosing every vertex."""
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        center = 0.5 * (lo + hi)
        return center, float(np.linalg.norm(self.vertices - center, axis=1).max())

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        vertices = np.array(vertices, dtype=np.float64)
        return replace(self, vertices=vertices, normals=compute_vertex_normals(vertices, self.faces, warn=False))

    def with_albedo(self, diffuse: Optional[np.ndarray] = None, specular: Optional[np.ndarray] = None) -> "Mesh":
        return replace(
            self,
            diffuse=self.diffuse.copy() if diffuse is None else np.array(diffuse, dtype=np.float64),
            specular=self.specular.copy() if specular is None else np.array(specular, dtype=np.float64),
            normals=self.normals,
        )

    def copy(self) -> "Mesh":
        return replace(
            self,
            vertices=self.vertices.copy(),
            faces=self.faces.copy(),
            diffuse=self.diffuse.copy(),
            specular=self.specular.copy(),
            normals=self.normals.copy(),
        )

    def validate_albedo(self) -> None:
        for name, arr in (("diffuse", self.diffuse), ("specular", self.specular)):
            if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
                raise SceneError("albedo outside [0, 1]", f"mesh.{name}")
        if np.any(self.diffuse + self.specular > 1.0):
            raise SceneError("diffuse + specular albedo exceeds 1", "mesh")

    def drop_degenerate_faces(self) -> "Mesh":
        keep = self.face_areas() > 0.0
        if np.all(keep):
            return self
        warnings.warn(f"dropping {int((~keep).sum())} zero-area faces", stacklevel=2)
        faces = self.faces[keep]
        return replace(self, faces=faces, normals=compute_vertex_normals(self.vertices, faces, warn=False))


@dataclass
class LightSource:
    kind: str
    intensity: np.ndarray
    position: Optional[np.ndarray] = None
    direction: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in LIGHT_KINDS:
            raise SceneError(f"unknown light kind {self.kind!r}", "lights.kind")
        self.intensity = _as_rgb(self.intensity, "lights.intensity")
        if self.kind == "point":
            if self.position is None:
                raise SceneError("point light needs a position", "lights.position")
            self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
            self.direction = None
        elif self.kind == "directional":
            if self.direction is None:
                raise SceneError("directional light needs a direction", "lights.direction")
            d = np.asarray(self.direction, dtype=np.float64).reshape(3)
            norm = np.linalg.norm(d)
            if norm == 0 or not np.isfinite(norm):
                raise SceneError("direction must be a nonzero vector", "lights.direction")
            # stored unit length; the direction is the one light travels along
            self.direction = d / norm if abs(norm - 1.0) > 1e-12 else d
            self.position = None
        else:
            self.position = None
            self.direction = None

    def with_intensity(self, intensity) -> "LightSource":
        return replace(self, intensity=np.array(intensity, dtype=np.float64))


@dataclass
class Camera:
    """Pinhole camera, OpenCV axes (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    width: int
    height: int
    exposure: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.world_to_camera, dtype=np.float64)
        if m.size == 12:
            m = m.reshape(3, 4)
        elif m.shape == (4, 4):
            m = m[:3]
        else:
            raise SceneError("worldToCamera needs 12 values", "views.worldToCamera")
        self.world_to_camera = np.ascontiguousarray(m)
        rot = m[:, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise SceneError("rotation is not orthonormal with det +1", "views.worldToCamera")
        self.width, self.height = int(self.width), int(self.height)
        if self.width <= 0 or self.height <= 0:
            raise SceneError("zero-resolution camera", "views.width")
        if not (self.fx > 0 and self.fy > 0):
            raise SceneError("focal lengths must be positive", "views.fx")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SceneError("principal point outside the image", "views.cx")
        if not self.exposure > 0:
            raise SceneError("exposure must be positive", "views.exposure")
        self.fx, self.fy, self.cx, self.cy = map(float, (self.fx, self.fy, self.cx, self.cy))
        self.exposure = float(self.exposure)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def scaled(self, factor: int) -> "Camera":
        """Camera for an image downsampled by an integer factor."""
        if factor == 1:
            return self
        if self.width % factor or self.height % factor:
            raise SceneError(f"downsample {factor} does not divide {self.width}x{self.height}", "render.downsample")
        return replace(
            self,
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=self.cx / factor,
            cy=self.cy / factor,
            width=self.width // factor,
            height=self.height // factor,
        )

    def with_pose(self, world_to_camera) -> "Camera":
        return replace(self, world_to_camera=np.array(world_to_camera, dtype=np.float64))

    def generate_rays(self, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World-space rays through continuous pixel coordinates.

        Pixel (i, j) covers [j, j+1) x [i, i+1); its center is at +0.5.
        """
        d_cam = np.stack(
            [(px - self.cx) / self.fx, (py - self.cy) / self.fy, np.ones_like(px, dtype=np.float64)], axis=-1
        )
        d_world = d_cam @ self.rotation  # R^T d for row vectors
        d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
        origin = np.broadcast_to(self.center, d_world.shape).copy()
        return origin, d_world


@dataclass
class Scene:
    mesh: Mesh
    lights: list = field(default_factory=list)
    distribution: str = "ggx"
    f0: float = 0.04

    def __post_init__(self):
        if self.distribution not in ("ggx", "beckmann"):
            raise SceneError(f"unknown microfacet distribution {self.distribution!r}", "distribution")

    @property
    def num_lights(self) -> int:
        return len(self.lights)

    def light_intensities(self) -> np.ndarray:
        if not self.lights:
            return np.zeros((0, 3))
        return np.stack([l.intensity for l in self.lights])

    def with_light_intensities(self, intensities: np.ndarray) -> "Scene":
        intensities = np.asarray(intensities, dtype=np.float64)
        lights = [l.with_intensity(intensities[i]) for i, l in enumerate(self.lights)]
        return replace(self, lights=lights)

    def with_mesh(self, mesh: Mesh) -> "Scene":
        return replace(self, mesh=mesh)

    def with_lights(self, lights: Sequence[LightSource]) -> "Scene":
        return replace(self, lights=list(lights))

    def copy(self) -> "Scene":
        return replace(self, mesh=self.mesh.copy(), lights=[replace(l, intensity=l.intensity.copy()) for l in self.lights])

    def total_light_power(self) -> float:
        return float(self.light_intensities().sum())


@dataclass
class ViewObservation:
    camera: Camera
    image: np.ndarray
    mask: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.image = np.ascontiguousarray(self.image, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask).astype(bool)
        h, w = self.camera.height, self.camera.width
        where = f"views[{self.name}]" if self.name else "views"
        if self.image.shape != (h, w, 3):
            raise SceneError(f"image is {self.image.shape[:2]}, camera is {(h, w)}", f"{where}.image")
        if self.mask.shape != (h, w):
            raise SceneError(f"mask is {self.mask.shape}, camera is {(h, w)}", f"{where}.mask")
        if not np.all(np.isfinite(self.image)) or np.any(self.image < 0):
            raise SceneError("image values must be finite and >= 0", f"{where}.image")

    def downsampled(self, factor: int) -> "ViewObservation":
        """Box-filtered image; a pixel stays in the mask only if fully covered."""
        if factor == 1:
            return self
        cam = self.camera.scaled(factor)
        h, w = cam.height, cam.width
        img = self.image.reshape(h, factor, w, factor, 3).mean(axis=(1, 3))
        mask = self.mask.reshape(h, factor, w, factor).all(axis=(1, 3))
        return ViewObservation(cam, img, mask, self.name)


@dataclass
class RenderConfig:
    spp: int = 16
    max_bounces: int = 3
    seed: int = 0
    downsample: int = 1

    def __post_init__(self):
        if int(self.spp) < 1:
            raise SceneError("spp must be >= 1", "render.spp")
        if int(self.max_bounces) < 0:
            raise SceneError("maxBounces must be >= 0", "render.maxBounces")
        if int(self.downsample) < 1:
            raise SceneError("downsample must be a positive integer", "render.downsample")
        self.spp, self.max_bounces, self.downsample = int(self.spp), int(self.max_bounces), int(self.downsample)
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF


def fibonacci_directions(count: int) -> np.ndarray:
    """Near-uniform unit vectors on the sphere (Fibonacci lattice)."""
    i = np.arange(count, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def default_lights(mesh: Mesh, count: int = 32, intensity: float = 0.5, ambient: float = 0.5) -> list:
    """Initial environment: one ambient term plus point lights on a sphere
    of three times the mesh bounding radius."""
    center, radius = mesh.bounding_sphere()
    lights = [LightSource("ambient", np.full(3, ambient))]
    for d in fibonacci_directions(count):
        lights.append(LightSource("point", np.full(3, intensity), position=center + 3.0 * radius * d))
    return lights


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera [R|t] (OpenCV axes) for a camera at ``eye`` facing ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return np.concatenate([rot, (-rot @ eye)[:, None]], axis=1)
