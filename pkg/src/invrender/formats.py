"""Readers and writers for PLY meshes, PFM/PNG images and sRGB conversion."""

from __future__ import annotations

import os

import numpy as np

from .scene import Mesh, SceneError

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1.0 / 2.4) - 0.055)


def to_display(img: np.ndarray) -> np.ndarray:
    """Linear radiance -> sRGB-encoded values clamped to [0, 1]."""
    return np.clip(linear_to_srgb(img), 0.0, 1.0)


# ---------------------------------------------------------------- PFM

def write_pfm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        header = b"PF"
    elif img.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"unsupported PFM image shape {img.shape}")
    h, w = img.shape[:2]
    data = np.flipud(img).astype("<f4")  # PFM rows run bottom to top
    with open(path, "wb") as f:
        f.write(header + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise SceneError("not a PFM file", os.fspath(path))
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    if data.size != w * h * channels:
        raise SceneError("truncated PFM data", os.fspath(path))
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64) * abs(scale)


# ---------------------------------------------------------------- PNG

def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    return arr.astype(np.float64) / 255.0


def write_png(path, image: np.ndarray, encode_srgb: bool = True) -> None:
    from PIL import Image

    img = to_display(image) if encode_srgb else np.clip(image, 0.0, 1.0)
    Image.fromarray(np.round(img * 255.0).astype(np.uint8)).save(path)


def load_image(path) -> np.ndarray:
    """HDR linear RGB image from PFM, or sRGB PNG converted to linear."""
    path = os.fspath(path)
    if path.lower().endswith(".pfm"):
        img = read_pfm(path)
    else:
        img = srgb_to_linear(read_png(path))
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return np.ascontiguousarray(img[:, :, :3])


def load_mask(path) -> np.ndarray:
    path = os.fspath(path)
    arr = read_pfm(path) if path.lower().endswith(".pfm") else read_png(path)
    if arr.ndim == 3:
        arr = arr[:, :, :3].max(axis=2) if arr.shape[2] >= 3 else arr[:, :, 0]
    return arr > 0


def save_mask(path, mask: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


# ---------------------------------------------------------------- PLY

def _parse_ply_header(f, path):
    if f.readline().strip() != b"ply":
        raise SceneError("missing 'ply' magic", path)
    fmt = None
    elements = []
    while True:
        line = f.readline()
        if not line:
            raise SceneError("unterminated header", path)
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise SceneError("property before element", path)
            if tok[1] == "list":
                elements[-1][2].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]], None, None))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise SceneError(f"unsupported PLY format {fmt!r}", path)
    return fmt, elements


def _read_element_binary(f, count, props, endian):
    if all(kind != "list" for _, kind, _, _ in props):
        dtype = np.dtype([(name, endian + kind) for name, kind, _, _ in props])
        data = np.frombuffer(f.read(dtype.itemsize * count), dtype=dtype, count=count)
        return {name: data[name] for name, *_ in props}
    if len(props) == 1:
        # fast path: every polygon is a triangle
        name, _, cnt_t, item_t = props[0]
        rec = np.dtype([("n", endian + cnt_t), ("i", endian + item_t, (3,))])
        start = f.tell()
        raw = f.read(rec.itemsize * count)
        if len(raw) == rec.itemsize * count:
            data = np.frombuffer(raw, dtype=rec, count=count)
            if np.all(data["n"] == 3):
                return {name: data["i"].astype(np.int64)}
        f.seek(start)
    out = {name: [] for name, *_ in props}
    for _ in range(count):
        for name, kind, cnt_t, item_t in props:
            if kind == "list":
                ct = np.dtype(endian + cnt_t)
                n = int(np.frombuffer(f.read(ct.itemsize), ct)[0])
                it = np.dtype(endian + item_t)
                out[name].append(np.frombuffer(f.read(it.itemsize * n), it).astype(np.int64))
            else:
                dt = np.dtype(endian + kind)
                out[name].append(np.frombuffer(f.read(dt.itemsize), dt)[0])
    return out


def _read_element_ascii(lines, count, props):
    out = {name: [] for name, *_ in props}
    for _ in range(count):
        tok = next(lines).split()
        pos = 0
        for name, kind, _, _ in props:
            if kind == "list":
                n = int(tok[pos])
                out[name].append(np.array([int(x) for x in tok[pos + 1:pos + 1 + n]], dtype=np.int64))
                pos += 1 + n
            else:
                out[name].append(float(tok[pos]) if kind.startswith("f") else int(tok[pos]))
                pos += 1
    return out


def read_ply(path, roughness: float = 0.1) -> Mesh:
    """Triangle mesh with optional per-vertex albedos (dr,dg,db / sr,sg,sb).

    Polygons with more than three corners are fan-triangulated. Missing
    albedo properties default to diffuse 0.5 and specular 0.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise SceneError("mesh file not found", path)
    with open(path, "rb") as f:
        fmt, elements = _parse_ply_header(f, path)
        data = {}
        if fmt == "ascii":
            lines = (ln for ln in f.read().decode("ascii").splitlines() if ln.strip())
            for name, count, props in elements:
                data[name] = _read_element_ascii(lines, count, props)
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            for name, count, props in elements:
                data[name] = _read_element_binary(f, count, props, endian)

    if "vertex" not in data:
        raise SceneError("no vertex element", path)
    vert = data["vertex"]
    try:
        vertices = np.stack([np.asarray(vert[k], dtype=np.float64) for k in "xyz"], axis=1)
    except KeyError as exc:
        raise SceneError(f"vertex property {exc} missing", path) from None
    n = len(vertices)

    def rgb(keys, default):
        if all(k in vert for k in keys):
            return np.stack([np.asarray(vert[k], dtype=np.float64) for k in keys], axis=1)
        return np.full((n, 3), default)

    diffuse = rgb(("dr", "dg", "db"), 0.5)
    specular = rgb(("sr", "sg", "sb"), 0.0)

    faces = []
    face_el = data.get("face", {})
    idx_key = next((k for k in ("vertex_indices", "vertex_index") if k in face_el), None)
    if idx_key is not None:
        for poly in face_el[idx_key]:
            poly = np.asarray(poly, dtype=np.int64)
            for k in range(1, len(poly) - 1):
                faces.append((poly[0], poly[k], poly[k + 1]))
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        raise SceneError("mesh has no faces", path)
    try:
        mesh = Mesh(vertices, faces, diffuse, specular, roughness=roughness)
    except SceneError as exc:
        raise SceneError(str(exc), path) from None
    return mesh


def write_ply(path, mesh: Mesh, binary: bool = True) -> None:
    """Write vertices and albedos as doubles so a reload is bit-exact."""
    n, m = mesh.num_vertices, mesh.num_faces
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {n}",
        *[f"property double {k}" for k in ("x", "y", "z", "dr", "dg", "db", "sr", "sg", "sb")],
        f"element face {m}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    block = np.concatenate([mesh.vertices, mesh.diffuse, mesh.specular], axis=1)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
            fdt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
            rec = np.empty(m, dtype=fdt)
            rec["n"] = 3
            rec["i"] = mesh.faces
            f.write(rec.tobytes())
        else:
            for row in block:
                f.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))
            for tri in mesh.faces:
                f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode("ascii"))

