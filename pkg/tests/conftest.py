import numpy as np
import pytest
import torch

from shapestyle.data import build_template
from shapestyle.mesh import Mesh
from shapestyle.models import TransferPipeline
from shapestyle.data import Normalization

# toy network: full-scale widths divided by 8 (input/output stay 3)
TOY_ENCODER = (3, 8, 16, 128)
TOY_STYLE = (128, 64, 32)
TOY_DECODER = (128, 128, 64, 32, 3)
TOY_DISC_POINT = (3, 8, 16, 32)
TOY_DISC_HEAD = (32, 8, 1)


def icosahedron() -> Mesh:
    """Regular icosahedron: 12 vertices, 20 faces."""
    phi = (1 + 5**0.5) / 2
    verts = []
    for a, b in [(1, phi), (-1, phi), (1, -phi), (-1, -phi)]:
        verts += [(0, a, b), (a, b, 0), (b, 0, a)]
    faces = [
        (0, 1, 4), (0, 4, 9), (9, 4, 5), (4, 8, 5), (4, 1, 8),
        (8, 1, 10), (8, 10, 3), (5, 8, 3), (5, 3, 2), (2, 3, 7),
        (7, 3, 10), (7, 10, 6), (7, 6, 11), (11, 6, 0), (0, 6, 1),
        (6, 10, 1), (9, 11, 0), (9, 2, 11), (9, 5, 2), (7, 11, 2),
    ]
    return Mesh(
        vertices=np.array(verts, dtype=np.float64),
        faces=np.array(faces, dtype=np.int64),
        template_id="icosahedron",
    )


def toy_pipeline(seed=0, dtype=torch.float64, num_vertices=12) -> TransferPipeline:
    norm = Normalization(center=np.zeros(3), scale=np.ones(3))
    return TransferPipeline.initialize(
        normalization=norm,
        template_id="toy",
        num_vertices=num_vertices,
        resolution=0,
        seed=seed,
        dtype=dtype,
        encoder_widths=TOY_ENCODER,
        style_widths=TOY_STYLE,
        decoder_widths=TOY_DECODER,
        disc_point_widths=TOY_DISC_POINT,
        disc_head_widths=TOY_DISC_HEAD,
    )


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f over a float64 array, in place."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture(scope="session")
def template0():
    return build_template(0)


@pytest.fixture(scope="session")
def template1():
    return build_template(1)


@pytest.fixture
def ico():
    return icosahedron()
