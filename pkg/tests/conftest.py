import numpy as np
import pytest

from pact.forward import AcousticMedium, ReceiveChain
from pact.geometry import build_hemisphere_grid
from pact.volume import GridSpec


@pytest.fixture
def medium():
    return AcousticMedium(c0=1500.0)


@pytest.fixture
def grid8():
    return GridSpec((8, 8, 8), 1e-3)


@pytest.fixture
def array10():
    # 2x5 hemisphere = 10 detectors around an 8 mm cube.
    return build_hemisphere_grid(2, 5, 0.1)


@pytest.fixture
def chain16():
    return ReceiveChain(fs=20e6, n_t=2000, n_freq=16)


def dyadic_volume(rng, shape, bits=12):
    """float32 array whose values are exactly representable dyadic rationals."""
    q = float(1 << bits)
    return (np.floor(rng.random(shape) * q) / q).astype(np.float32)


def greens_matrix(grid, sensors, medium, chain):
    """Dense [n_det*n_freq x n_voxels] operator built entry-wise (oracle).

    Independent of the forward module's vectorized evaluation: one detector
    row at a time, straight from the Green's-function formula.
    """
    coords = grid.voxel_coords()
    pos = sensors.positions[sensors.active]
    omega = chain.omega
    dV = grid.pitch_m**3
    rows = []
    for m in range(pos.shape[0]):
        R = np.linalg.norm(coords - pos[m], axis=1)
        for k in range(chain.n_freq):
            rows.append(chain.response[k] * np.exp(1j * omega[k] * R / medium.c0)
                        / (4 * np.pi * R) * dV)
    return np.array(rows)
