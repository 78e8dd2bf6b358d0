import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssnet.geometry import OrientedBox, obb_intersect, separation_margin

from .oracles import sampled_overlap, sampling_margin

coords = st.floats(-5.0, 5.0, allow_nan=False)
angles = st.floats(-math.pi, math.pi, allow_nan=False)
halves = st.floats(0.2, 3.0, allow_nan=False)
boxes = st.builds(lambda x, y, a, l, w: OrientedBox((x, y), a, l, w), coords, coords, angles, halves, halves)


def _tuple(b):
    return (b.center, b.yaw, b.half_length, b.half_width)


class TestExamples:
    def test_overlapping_axis_aligned(self):
        assert obb_intersect(OrientedBox((0, 0), 0, 2, 1), OrientedBox((3, 0), 0, 2, 1))

    def test_separated(self):
        assert not obb_intersect(OrientedBox((0, 0), 0, 2, 1), OrientedBox((5, 0), 0, 2, 1))

    def test_touching_counts(self):
        a = OrientedBox((0.0, 0.0), 0.0, 1.0, 1.0)
        b = OrientedBox((2.0, 0.0), 0.0, 1.0, 1.0)
        assert separation_margin(a, b) == 0.0
        assert obb_intersect(a, b)

    def test_rotated_corner_gap(self):
        # a diamond whose tip stops just short of the square's face
        a = OrientedBox((0.0, 0.0), 0.0, 1.0, 1.0)
        b = OrientedBox((1.0 + math.sqrt(2) + 0.01, 0.0), math.pi / 4, 1.0, 1.0)
        assert not obb_intersect(a, b)

    def test_corners_are_on_the_boundary(self):
        box = OrientedBox((1.0, 2.0), 0.3, 2.0, 0.5)
        c = box.corners()
        assert c.shape == (4, 2)
        np.testing.assert_allclose(c.mean(axis=0), [1.0, 2.0])

    def test_non_positive_extent(self):
        with pytest.raises(ValueError):
            OrientedBox((0, 0), 0, 0.0, 1.0)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(boxes, boxes)
    def test_symmetric(self, a, b):
        assert obb_intersect(a, b) == obb_intersect(b, a)
        assert separation_margin(a, b) == separation_margin(b, a)

    @settings(max_examples=100, deadline=None)
    @given(boxes, st.floats(-10, 10), st.floats(-10, 10), angles)
    def test_rigid_motion_invariant(self, a, dx, dy, rot):
        b = OrientedBox((a.center[0] + 1.0, a.center[1] - 0.5), a.yaw + 0.7, 1.0, 0.8)
        c, s = math.cos(rot), math.sin(rot)

        def move(box):
            x, y = box.center
            return OrientedBox((c * x - s * y + dx, s * x + c * y + dy), box.yaw + rot, box.half_length, box.half_width)

        assert separation_margin(move(a), move(b)) == pytest.approx(separation_margin(a, b), abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(boxes)
    def test_self_intersects(self, a):
        assert obb_intersect(a, a)


class TestPointSamplingOracle:
    def test_agrees_on_random_pairs(self):
        rng = np.random.default_rng(0)
        disagreements = 0
        for _ in range(1000):
            a = OrientedBox(tuple(rng.uniform(-3, 3, 2)), rng.uniform(-math.pi, math.pi), *rng.uniform(0.3, 2.5, 2))
            b = OrientedBox(tuple(rng.uniform(-3, 3, 2)), rng.uniform(-math.pi, math.pi), *rng.uniform(0.3, 2.5, 2))
            margin = separation_margin(a, b)
            if abs(margin) <= sampling_margin(_tuple(a), _tuple(b)):
                continue
            disagreements += obb_intersect(a, b) != sampled_overlap(_tuple(a), _tuple(b))
        assert disagreements == 0
