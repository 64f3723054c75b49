"""Scene description files and COLMAP text import.

A scene file is JSON::

    {
      "mesh": "mesh.ply",            # relative to the scene file
      "roughness": 0.1,
      "distribution": "ggx",
      "f0": 0.04,
      "lights": [{"kind": "point", "position": [..], "intensity": [..]}, ...],
      "views": [{"image": "images/v0.pfm", "mask": "masks/v0.png",
                 "fx": .., "fy": .., "cx": .., "cy": .., "width": .., "height": ..,
                 "exposure": 1.0, "worldToCamera": [12 floats, row-major]}],
      "render": {"spp": 16, "maxBounces": 3, "seed": 0, "downsample": 1},
      "heldOut": 12                  # optional
    }

Python's JSON writer emits the shortest repr of each float, so every value
survives a save/load cycle exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import formats
from .scene import Camera, LightSource, RenderConfig, Scene, SceneError, ViewObservation


@dataclass
class SceneBundle:
    scene: Scene
    views: list
    config: RenderConfig
    held_out: Optional[int] = None
    path: Optional[Path] = None


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise SceneError(f"missing key {key!r}", where)
    return block[key]


def light_to_dict(light: LightSource) -> dict:
    out = {"kind": light.kind, "intensity": [float(x) for x in light.intensity]}
    if light.position is not None:
        out["position"] = [float(x) for x in light.position]
    if light.direction is not None:
        out["direction"] = [float(x) for x in light.direction]
    return out


def light_from_dict(block: dict, where: str) -> LightSource:
    if not isinstance(block, dict):
        raise SceneError("light entry must be an object", where)
    kind = _require(block, "kind", where)
    intensity = _require(block, "intensity", where)
    try:
        return LightSource(
            kind=kind,
            intensity=intensity,
            position=block.get("position"),
            direction=block.get("direction"),
        )
    except SceneError as exc:
        raise SceneError(exc.message, f"{where}: {exc.location}") from None
    except (TypeError, ValueError) as exc:
        raise SceneError(str(exc), where) from None


def load_lights(path) -> list:
    """A light list from a JSON file holding either a list or {"lights": [...]}."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot read light spec: {exc}", str(path)) from None
    if isinstance(data, dict):
        data = data.get("lights")
    if not isinstance(data, list):
        raise SceneError("light spec must be a list of lights", str(path))
    return [light_from_dict(b, f"{path}: lights[{i}]") for i, b in enumerate(data)]


def camera_from_dict(block: dict, where: str) -> Camera:
    try:
        return Camera(
            fx=float(_require(block, "fx", where)),
            fy=float(_require(block, "fy", where)),
            cx=float(_require(block, "cx", where)),
            cy=float(_require(block, "cy", where)),
            world_to_camera=np.asarray(_require(block, "worldToCamera", where), dtype=np.float64),
            width=int(_require(block, "width", where)),
            height=int(_require(block, "height", where)),
            exposure=float(block.get("exposure", 1.0)),
        )
    except SceneError as exc:
        raise SceneError(exc.message, f"{where}: {exc.location}") from None
    except (TypeError, ValueError) as exc:
        raise SceneError(str(exc), where) from None


def camera_to_dict(cam: Camera) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height, "exposure": cam.exposure,
        "worldToCamera": [float(x) for x in cam.world_to_camera.ravel()],
    }


def load_scene(path) -> SceneBundle:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise SceneError(f"cannot read scene file: {exc.strerror}", str(path)) from None
    except json.JSONDecodeError as exc:
        raise SceneError(f"malformed scene file: {exc}", str(path)) from None
    base = path.parent
    roughness = float(data.get("roughness", 0.1))
    mesh_path = base / str(_require(data, "mesh", f"{path}"))
    if not mesh_path.exists():
        raise SceneError("mesh file not found", f"{path}: mesh ({mesh_path})")
    mesh = formats.read_ply(mesh_path, roughness=roughness).drop_degenerate_faces()
    lights = [light_from_dict(b, f"{path}: lights[{i}]") for i, b in enumerate(data.get("lights", []))]
    scene = Scene(mesh, lights, distribution=data.get("distribution", "ggx"), f0=float(data.get("f0", 0.04)))
    views = []
    for i, block in enumerate(data.get("views", [])):
        where = f"{path}: views[{i}]"
        cam = camera_from_dict(block, where)
        image = mask = None
        if "image" in block:
            ip = base / block["image"]
            if not ip.exists():
                raise SceneError("image file not found", f"{where}.image ({ip})")
            image = formats.load_image(ip)
        else:
            image = np.zeros((cam.height, cam.width, 3))
        if "mask" in block:
            mp = base / block["mask"]
            if not mp.exists():
                raise SceneError("mask file not found", f"{where}.mask ({mp})")
            mask = formats.load_mask(mp)
        else:
            mask = np.ones((cam.height, cam.width), dtype=bool)
        try:
            views.append(ViewObservation(cam, image, mask, name=block.get("name", str(i))))
        except SceneError as exc:
            raise SceneError(exc.message, f"{where}: {exc.location}") from None
    rb = data.get("render", {})
    try:
        config = RenderConfig(
            spp=rb.get("spp", 16), max_bounces=rb.get("maxBounces", 3),
            seed=rb.get("seed", 0), downsample=rb.get("downsample", 1),
        )
    except SceneError as exc:
        raise SceneError(exc.message, f"{path}: {exc.location}") from None
    held = data.get("heldOut")
    if held is not None and not 0 <= int(held) < len(views):
        raise SceneError("heldOut index out of range", f"{path}: heldOut")
    return SceneBundle(scene, views, config, None if held is None else int(held), path)


def save_scene(scene: Scene, views: Sequence[ViewObservation], config: RenderConfig, path,
               held_out: Optional[int] = None, mesh_name: Optional[str] = None,
               write_images: bool = True, image_paths: Optional[Sequence[tuple]] = None) -> None:
    """Write the scene file, its PLY mesh and (optionally) view images and masks.

    ``image_paths`` reuses existing (image, mask) files, given relative to
    the scene file, instead of writing new ones.
    """
    path = Path(path)
    base = path.parent
    base.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    mesh_name = mesh_name or f"{stem}.ply"
    formats.write_ply(base / mesh_name, scene.mesh)
    view_blocks = []
    for i, v in enumerate(views):
        block = camera_to_dict(v.camera)
        block["name"] = v.name or str(i)
        if image_paths is not None:
            block["image"], block["mask"] = image_paths[i]
        elif write_images:
            img_rel = f"images/{stem}_{i:03d}.pfm"
            mask_rel = f"masks/{stem}_{i:03d}.png"
            (base / "images").mkdir(exist_ok=True)
            (base / "masks").mkdir(exist_ok=True)
            formats.write_pfm(base / img_rel, v.image)
            formats.save_mask(base / mask_rel, v.mask)
            block["image"], block["mask"] = img_rel, mask_rel
        view_blocks.append(block)
    data = {
        "mesh": mesh_name,
        "roughness": scene.mesh.roughness,
        "distribution": scene.distribution,
        "f0": scene.f0,
        "lights": [light_to_dict(l) for l in scene.lights],
        "views": view_blocks,
        "render": {"spp": config.spp, "maxBounces": config.max_bounces, "seed": config.seed,
                   "downsample": config.downsample},
    }
    if held_out is not None:
        data["heldOut"] = int(held_out)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(json.dumps(data, indent=2))
        os.replace(tmp, path)
    except OSError as exc:
        raise SceneError(f"cannot write scene file: {exc.strerror}", str(path)) from None


def view_file_paths(bundle: SceneBundle) -> list:
    """(image, mask) paths of each view as written in the bundle's scene file."""
    data = json.loads(Path(bundle.path).read_text())
    return [(b.get("image"), b.get("mask")) for b in data.get("views", [])]


# ------------------------------------------------------------------ COLMAP

def quaternion_to_rotation(qw: float, qx: float, qy: float, qz: float) -> np.ndarray:
    q = np.array([qw, qx, qy, qz], dtype=np.float64)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _data_lines(path: Path):
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            yield line


def read_colmap_cameras(path) -> dict:
    path = Path(path)
    cams = {}
    for line in _data_lines(path):
        parts = line.split()
        cam_id, model, w, h = int(parts[0]), parts[1], int(parts[2]), int(parts[3])
        p = [float(x) for x in parts[4:]]
        if model == "SIMPLE_PINHOLE":
            fx = fy = p[0]
            cx, cy = p[1], p[2]
        elif model == "PINHOLE":
            fx, fy, cx, cy = p[:4]
        else:
            raise SceneError(f"unsupported camera model {model}", f"{path}: camera {cam_id}")
        cams[cam_id] = (fx, fy, cx, cy, w, h)
    return cams


def read_colmap_images(path) -> list:
    """(name, camera id, 3x4 world-to-camera) per registered image."""
    path = Path(path)
    out = []
    # image lines alternate with their 2D point lines; point lines may be empty
    raw = [l for l in path.read_text().splitlines() if not l.strip().startswith("#")]
    i = 0
    while i < len(raw):
        line = raw[i].strip()
        if not line:
            i += 1
            continue
        parts = line.split()
        if len(parts) < 10:
            raise SceneError("malformed image line", f"{path}: {line[:40]}")
        qw, qx, qy, qz, tx, ty, tz = map(float, parts[1:8])
        rot = quaternion_to_rotation(qw, qx, qy, qz)
        pose = np.concatenate([rot, np.array([[tx], [ty], [tz]])], axis=1)
        out.append((parts[9], int(parts[8]), pose))
        i += 2
    return out


def import_colmap_text(cameras_file, images_file, image_dir, mask_dir=None) -> list:
    cams = read_colmap_cameras(cameras_file)
    views = []
    for name, cam_id, pose in read_colmap_images(images_file):
        if cam_id not in cams:
            raise SceneError(f"image {name} references unknown camera {cam_id}", str(images_file))
        fx, fy, cx, cy, w, h = cams[cam_id]
        cam = Camera(fx, fy, cx, cy, pose, w, h)
        ip = Path(image_dir) / name
        if not ip.exists():
            raise SceneError("registered image not found", str(ip))
        image = formats.load_image(ip)
        if mask_dir is not None:
            mp = Path(mask_dir) / (Path(name).stem + ".png")
            if not mp.exists():
                raise SceneError("mask not found", str(mp))
            mask = formats.load_mask(mp)
        else:
            mask = np.ones((h, w), dtype=bool)
        views.append(ViewObservation(cam, image, mask, name=name))
    return views
