"""Property-based checks for the integerizer and the weighted median."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from smallarea.indicators import weighted_median
from smallarea.integerize import RngSpec, trs_zone

weights_lists = st.lists(
    st.floats(min_value=0.0, max_value=6.0, allow_nan=False), min_size=1, max_size=25
)


@settings(max_examples=200, deadline=None)
@given(w=weights_lists, extra=st.integers(0, 8), seed=st.integers(0, 2**31))
def test_trs_total_and_floor(w, extra, seed):
    w = np.asarray(w)
    if w.sum() == 0:
        w[0] = 1.0
    target = int(np.floor(w).sum()) + extra
    counts = trs_zone(w, target, RngSpec(seed).stream(0))
    assert counts.sum() == target
    assert np.all(counts >= np.floor(w))


@settings(max_examples=200, deadline=None)
@given(
    values=st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
        min_size=1,
        max_size=20,
    ),
    data=st.data(),
)
def test_weighted_median_bounds_and_shift(values, data):
    counts = data.draw(
        st.lists(
            st.integers(1, 9), min_size=len(values), max_size=len(values)
        )
    )
    m = weighted_median(values, counts)
    assert min(values) <= m <= max(values)
    shifted = weighted_median([v + 10.0 for v in values], counts)
    assert abs(shifted - (m + 10.0)) < 1e-6
