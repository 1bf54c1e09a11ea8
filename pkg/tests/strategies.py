"""Hypothesis strategies shared by the comm tests and the acceptance suite."""

import numpy as np
from hypothesis import strategies as st

from fedsim.comm import Message

u32 = st.integers(0, 2**32 - 1)
floats = st.floats(allow_nan=True, allow_infinity=True, width=64)
values = st.one_of(
    floats,
    st.integers(-(2**63), 2**63 - 1),
    st.lists(floats, max_size=12).map(lambda xs: np.array(xs, dtype=np.float64)),
    st.text(max_size=20),
    st.binary(max_size=20),
)


@st.composite
def messages(draw):
    keys = draw(st.lists(st.text(max_size=8), max_size=6, unique=True))
    params = [(k, draw(values)) for k in keys]
    return Message(draw(u32), draw(u32), draw(u32), params)
