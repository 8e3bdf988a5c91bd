import math

import numpy as np
import pytest

from ldp_unifier.alphabet import LinearAlphabet, PlanarGrid
from ldp_unifier.mechanisms import MatrixChannel, krr


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def line10():
    return LinearAlphabet(size=10)


@pytest.fixture
def small_grid():
    return PlanarGrid(cols=3, rows=2, cell_size=0.5)


@pytest.fixture
def opposite_pair():
    """Two informative 2x2 channels whose equal-weight average is uniform."""
    a = MatrixChannel(np.array([[0.75, 0.25], [0.25, 0.75]]))
    b = MatrixChannel(np.array([[0.25, 0.75], [0.75, 0.25]]))
    return a, b


@pytest.fixture
def krr_ln3():
    return krr(2, math.log(3))


@pytest.fixture
def identity2():
    return MatrixChannel(np.eye(2), family='identity')
