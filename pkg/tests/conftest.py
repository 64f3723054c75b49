import numpy as np
import pytest

from invrender import shapes
from invrender.scene import Camera, LightSource, Mesh, Scene, look_at


def uniform_mesh(v, f, diffuse=0.5, specular=0.0, roughness=0.3):
    n = len(v)
    return Mesh(v, f, np.broadcast_to(np.asarray(diffuse, float), (n, 3)).copy(),
                np.broadcast_to(np.asarray(specular, float), (n, 3)).copy(), roughness=roughness)


def top_camera(size=32, height=3.0, focal=None):
    focal = focal or size * 1.2
    return Camera(focal, focal, size / 2, size / 2, look_at([0, 0, height], [0, 0, 0], up=(0, 1, 0)), size, size)


def plane_scene(light_height=2.0, intensity=1.0, rho=0.5, size=8.0):
    v, f = shapes.grid_plane(4, 4, size=(size, size))
    mesh = uniform_mesh(v, f, diffuse=rho)
    return Scene(mesh, [LightSource("point", [intensity] * 3, position=[0, 0, light_height])])


def textured_scene(seed=0, specular=True):
    """Sphere on a plane, random albedos, one light of each kind."""
    rng = np.random.default_rng(seed)
    v, f = shapes.merge(shapes.icosphere(2, 0.5, (0, 0, 0.5)), shapes.grid_plane(6, 6, size=(3, 3)))
    rd = rng.uniform(0.2, 0.6, (len(v), 3))
    rs = rng.uniform(0.0, 0.3, (len(v), 3)) if specular else np.zeros((len(v), 3))
    mesh = Mesh(v, f, rd, rs, roughness=0.3)
    lights = [
        LightSource("ambient", [0.3, 0.3, 0.3]),
        LightSource("point", [3.0, 2.0, 2.0], position=[1.0, -1.0, 2.0]),
        LightSource("directional", [1.0, 1.0, 1.5], direction=[0.3, 0.2, -1.0]),
    ]
    return Scene(mesh, lights)


def oblique_camera(size=32):
    return Camera(size * 0.95, size * 0.95, size / 2, size / 2, look_at([1.8, -1.8, 1.8], [0, 0, 0.3]), size, size)


def heightfield_scene(seed=2):
    """Gently curved terrain; seen from above every camera ray hits and no light is blocked."""
    rng = np.random.default_rng(seed)
    v, f = shapes.grid_plane(8, 8, size=(4, 4), height=lambda x, y: 0.15 * np.sin(1.3 * x) * np.cos(1.1 * y))
    mesh = Mesh(v, f, rng.uniform(0.2, 0.6, (len(v), 3)), rng.uniform(0, 0.3, (len(v), 3)), roughness=0.3)
    lights = [
        LightSource("ambient", [0.3] * 3),
        LightSource("point", [3, 2, 2], position=[0.5, -0.3, 2.0]),
        LightSource("directional", [1, 1, 1.5], direction=[0.3, 0.2, -1.0]),
    ]
    return Scene(mesh, lights)


def heightfield_camera(size=32):
    return Camera(size * 1.25, size * 1.25, size / 2, size / 2, look_at([0.0, 0.2, 2.5], [0, 0, 0]), size, size)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
