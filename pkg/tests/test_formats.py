import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invrender import formats, shapes
from invrender.scene import Mesh, SceneError


def random_mesh(rng, subdiv=1):
    v, f = shapes.icosphere(subdiv)
    v = v + rng.normal(scale=0.01, size=v.shape)
    rd = rng.uniform(0, 0.5, v.shape)
    rs = rng.uniform(0, 0.5, v.shape)
    return Mesh(v, f, rd, rs, roughness=0.2)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip_is_bit_exact(tmp_path, rng, binary):
    mesh = random_mesh(rng)
    path = tmp_path / "m.ply"
    formats.write_ply(path, mesh, binary=binary)
    back = formats.read_ply(path, roughness=0.2)
    for name in ("vertices", "diffuse", "specular", "faces"):
        assert np.array_equal(getattr(back, name), getattr(mesh, name)), name


def test_ply_big_endian_float_and_quads(tmp_path):
    header = (
        "ply\nformat binary_big_endian 1.0\ncomment quad\nelement vertex 4\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float dr\nproperty float dg\nproperty float db\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
    )
    verts = np.array([[0, 0, 0, .1, .2, .3], [1, 0, 0, .1, .2, .3], [1, 1, 0, .1, .2, .3], [0, 1, 0, .1, .2, .3]],
                     dtype=">f4")
    face = np.array([4], dtype="u1").tobytes() + np.array([0, 1, 2, 3], dtype=">i4").tobytes()
    path = tmp_path / "q.ply"
    path.write_bytes(header.encode() + verts.tobytes() + face)
    mesh = formats.read_ply(path)
    assert mesh.num_faces == 2
    np.testing.assert_allclose(mesh.diffuse[0], [0.1, 0.2, 0.3], rtol=1e-6)
    assert np.all(mesh.specular == 0.0)


def test_ply_ascii_minimal(tmp_path):
    path = tmp_path / "t.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
    )
    mesh = formats.read_ply(path)
    assert mesh.num_vertices == 3 and mesh.num_faces == 1
    np.testing.assert_allclose(mesh.normals, np.tile([0, 0, 1.0], (3, 1)))


def test_ply_errors_name_the_file(tmp_path):
    with pytest.raises(SceneError, match="not found"):
        formats.read_ply(tmp_path / "missing.ply")
    bad = tmp_path / "bad.ply"
    bad.write_text("hello\n")
    with pytest.raises(SceneError, match="bad.ply"):
        formats.read_ply(bad)


def test_pfm_round_trip(tmp_path, rng):
    img = rng.uniform(0, 10, (5, 7, 3)).astype(np.float32).astype(np.float64)
    formats.write_pfm(tmp_path / "a.pfm", img)
    assert np.array_equal(formats.read_pfm(tmp_path / "a.pfm"), img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"PF\n7 5\n-1.0\n")


def test_pfm_rows_are_stored_bottom_up(tmp_path):
    img = np.zeros((2, 1, 3))
    img[0] = 1.0  # top row
    formats.write_pfm(tmp_path / "b.pfm", img)
    data = np.frombuffer((tmp_path / "b.pfm").read_bytes()[-24:], dtype="<f4")
    assert np.all(data[:3] == 0.0) and np.all(data[3:] == 1.0)


@given(st.floats(0.0, 1.0))
def test_srgb_round_trip(x):
    assert abs(formats.srgb_to_linear(formats.linear_to_srgb(x)) - x) < 1e-12


def test_srgb_reference_points():
    np.testing.assert_allclose(formats.linear_to_srgb(np.array([0.0, 1.0, 0.0031308])), [0.0, 1.0, 0.04045],
                               atol=1e-6)
    np.testing.assert_allclose(formats.srgb_to_linear(0.5), 0.21404114, atol=1e-8)


def test_png_image_and_mask(tmp_path):
    img = np.full((4, 4, 3), 0.21404114)
    formats.write_png(tmp_path / "i.png", img)
    back = formats.load_image(tmp_path / "i.png")
    np.testing.assert_allclose(back, img, atol=2e-3)
    mask = np.eye(4, dtype=bool)
    formats.save_mask(tmp_path / "m.png", mask)
    assert np.array_equal(formats.load_mask(tmp_path / "m.png"), mask)
