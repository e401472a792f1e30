import numpy as np
import pytest

from rog import synth


@pytest.fixture
def unit_cube():
    return synth.make_primitive_mesh("box", (1.0, 1.0, 1.0))


@pytest.fixture
def icosphere():
    return synth.make_primitive_mesh("icosphere", (1.0,), subdivisions=1)


def random_rotation(rng):
    """Uniform-ish random proper rotation via QR."""
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q
