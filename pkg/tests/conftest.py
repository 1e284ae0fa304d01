import numpy as np
import pytest

from nudich import examples as E
from nudich.core import CosineExponent, DiagonalFamily, GridSpec, coordinate_projection


@pytest.fixture(scope="session")
def ex25():
    return E.build("Ex2_5")


@pytest.fixture(scope="session")
def ex32():
    return E.build("Ex3_2")


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(t_max=6.0, time_points=13, anchor_period=np.pi / 2)


def scalar_stable(nu):
    """One-dimensional family e^{-nu (t-s)} with P = Id."""
    return DiagonalFamily((CosineExponent(nu, 0.0),), (-1,)), coordinate_projection(1, [0])
