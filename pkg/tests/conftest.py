import math

import numpy as np
import pytest
from hypothesis import strategies as st

from cgmc.lattice_model import LatticeSpec, MeanField, ModelSpec, NearestNeighbor, SpinConfig, Tabulated

couplings = st.floats(-3.0, 3.0, allow_nan=False)


@st.composite
def models(draw, sizes=(4, 6, 8, 12, 16), tabulated=True):
    N = draw(st.sampled_from(sizes))
    K, J, h = draw(couplings), draw(couplings), draw(couplings)
    if tabulated and draw(st.booleans()):
        L = draw(st.integers(1, N // 2))
        values = draw(st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=L, max_size=L))
        long = Tabulated(values)
    else:
        long = MeanField(J)
    return ModelSpec(LatticeSpec(N), NearestNeighbor(K), long, h)


@st.composite
def model_and_state(draw, **kw):
    model = draw(models(**kw))
    bits = draw(st.lists(st.integers(0, 1), min_size=model.N, max_size=model.N))
    return model, SpinConfig(bits)


def smooth_kernel(N, L, total=2.0):
    """J(d) proportional to a smooth bump of range L."""
    return Tabulated.from_profile(lambda r: math.exp(-3.0 * r * r), L, total, N)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
