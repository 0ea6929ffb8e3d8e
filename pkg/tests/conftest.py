import time

import numpy as np
import pytest

from weylrec.model import reference_system, sector_geometry
from weylrec.reconstruct import ReconstructionConfig, reconstruct_q

ROUND_TRIP_X = (0.5, 1.0, 2.0)


@pytest.fixture(scope="session")
def ref2():
    return reference_system("reference_n2")


@pytest.fixture(scope="session")
def ref3():
    return reference_system("reference_n3")


@pytest.fixture(scope="session")
def free2():
    return reference_system("free_n2")


@pytest.fixture(scope="session")
def geom2(ref2):
    return sector_geometry(ref2.b)


@pytest.fixture(scope="session")
def round_trip(ref2):
    """Reference n=2 reconstruction on the default schedule; shared because it is the slowest solve."""
    start = time.perf_counter()
    res = reconstruct_q(ref2, ROUND_TRIP_X, ReconstructionConfig())
    res.elapsed = time.perf_counter() - start
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
