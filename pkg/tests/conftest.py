import math

import numpy as np
import pytest

from nearfield.model import QuadrupoleParams

DRIVE_MHZ = 1092.547


def reference_params(Bp=5.0):
    """Reference quadrupole (B/B' = 8.5 μm) at a chosen gradient scale."""
    return QuadrupoleParams(B=8.5 * Bp, Bp=Bp, alpha=math.radians(24.3),
                            beta=math.radians(99.9), psi=math.radians(6.4),
                            x0=45.5, z0=-0.8, freq=DRIVE_MHZ)


@pytest.fixture
def reference():
    return reference_params()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_params(rng, n, psi_max=math.pi / 4 * 0.98):
    """Parameter sets inside the canonical domains with ``|psi| < pi/4``."""
    out = []
    for _ in range(n):
        Bp = rng.uniform(0.1, 20.0)
        out.append(QuadrupoleParams(
            B=rng.uniform(-50.0, 50.0), Bp=Bp,
            alpha=rng.uniform(0.0, math.pi), beta=rng.uniform(0.0, math.pi),
            psi=rng.uniform(-psi_max, psi_max),
            x0=rng.uniform(-50, 50), z0=rng.uniform(-50, 50), freq=DRIVE_MHZ))
    return out
