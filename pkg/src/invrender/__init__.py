"""Inverse rendering of triangle meshes with a differentiable path tracer."""

from .scene import Camera, LightSource, Mesh, RenderConfig, Scene, SceneError, ViewObservation

__all__ = ["Camera", "LightSource", "Mesh", "RenderConfig", "Scene", "SceneError", "ViewObservation"]
__version__ = "0.1.0"
