import math

import numpy as np
from hypothesis import given, strategies as st

from netprofile.baselines.stats import FEATURE_NAMES, SeriesStats, merge_stats, stats_to_features

sizes = st.lists(st.integers(40, 1514), max_size=40)


def direct(values):
    a = np.asarray(values, dtype=np.float64)
    return a.mean(), a.std()


def test_known_values():
    s = SeriesStats.of([100, 200, 300])
    assert s.mean == 200 and s.min == 100 and s.max == 300
    assert abs(s.std - math.sqrt(20000 / 3)) < 1e-12
    assert SeriesStats.of([]).mean == 0.0 and SeriesStats.of([]).std == 0.0


def test_merge_matches_concatenation_over_random_trials():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a = rng.integers(40, 1515, size=rng.integers(1, 60)).tolist()
        b = rng.integers(40, 1515, size=rng.integers(1, 60)).tolist()
        m = SeriesStats.of(a).merge(SeriesStats.of(b))
        mean, std = direct(a + b)
        assert abs(m.mean - mean) <= 1e-9 * abs(mean)
        assert abs(m.std - std) <= 1e-9 * max(std, 1e-300) or std == 0 and m.std == 0


@given(sizes, sizes, sizes)
def test_merge_associative_and_commutative(a, b, c):
    A, B, C = SeriesStats.of(a), SeriesStats.of(b), SeriesStats.of(c)
    left, right = A.merge(B).merge(C), A.merge(B.merge(C))
    for x, y in ((left, right), (A.merge(B), B.merge(A))):
        for f in ("mean", "std"):
            u, v = getattr(x, f), getattr(y, f)
            assert abs(u - v) <= 1e-12 * max(abs(u), abs(v), 1.0)
        assert (x.n, x.min, x.max) == (y.n, y.min, y.max)


@given(st.lists(st.integers(40, 1514), min_size=1, max_size=60))
def test_moment_bounds(v):
    s = SeriesStats.of(v)
    assert s.variance >= 0
    assert s.min <= s.mean <= s.max


def test_empty_is_identity():
    s = SeriesStats.of([5, 7])
    assert s.merge(SeriesStats()) == s and SeriesStats().merge(s) == s


class FakeStream:
    def __init__(self, sizes, out):
        self.sizes, self.out = np.array(sizes), np.array(out)

    def timeline(self):
        return np.zeros(len(self.sizes)), self.out, self.sizes


def test_feature_layout_and_flow_merge():
    from netprofile.baselines.stats import compute_stats

    a = compute_stats(FakeStream([100, 1500, 60], [True, False, True]))
    f = stats_to_features(a)
    assert len(f) == len(FEATURE_NAMES) == 15
    d = dict(zip(FEATURE_NAMES, f))
    assert d["incoming.n"] == 1 and d["incoming.mean"] == 1500 and d["incoming.std"] == 0
    assert d["outgoing.min"] == 60 and d["outgoing.max"] == 100 and d["full.n"] == 3
    only_in = compute_stats(FakeStream([70], [False]))
    assert stats_to_features(only_in)[10:].tolist() == [0.0] * 5
    m = merge_stats(a, only_in)
    assert m.incoming.n == 2 and m.full.n == 4
