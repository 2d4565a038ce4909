import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priorguide.divide import assign_sets, fuse, prior_clean_prob, save_divide_csv
from priorguide.errors import ConfigError
from priorguide.prior import PriorPartition


def small_partition():
    # ids: 0,1 easy; 2 hard (p_h .8); 3 classified noisy (p_n .7); 4 direct noisy
    return PriorPartition(
        num_samples=5, easy=np.array([0, 1]), hard=np.array([2]), noisy_direct=np.array([4]),
        noisy_classified=np.array([3]), middle=np.array([2, 3]), p_h=np.array([0.8, 0.3]),
        p_n=np.array([0.2, 0.7]),
    )


class TestPriorCleanProb:
    def test_piecewise(self):
        w = prior_clean_prob(small_partition())
        assert w.tolist() == [1.0, 1.0, 0.8, pytest.approx(0.3, abs=1e-15), 0.0]

    def test_all_easy(self):
        part = PriorPartition(3, np.arange(3), *(np.array([], dtype=np.int64),) * 4, np.zeros(0), np.zeros(0))
        assert prior_clean_prob(part).tolist() == [1.0, 1.0, 1.0]


class TestFuse:
    def test_arithmetic(self):
        w = fuse([0.9], [0.3], [False], 0.5)
        assert w[0] == pytest.approx(0.6, abs=1e-15)

    def test_m_one_ignores_prior(self):
        w_it = np.array([0.2, 0.7, 0.4])
        assert np.array_equal(fuse(w_it, [0.0, 1.0, 0.3], [False] * 3, 1.0), w_it)

    def test_easy_pinned(self):
        w = fuse([0.01, 0.3], [1.0, 0.2], [True, False], 0.5)
        assert w[0] == 1.0

    def test_bad_m(self):
        with pytest.raises(ConfigError):
            fuse([0.5], [0.5], [False], 1.5)

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(0, 1), b=st.floats(0, 1), wip=st.floats(0, 1), m=st.floats(0, 1))
    def test_monotone_in_w_it(self, a, b, wip, m):
        lo, hi = sorted((a, b))
        assert fuse([lo], [wip], [False], m)[0] <= fuse([hi], [wip], [False], m)[0]


class TestAssignSets:
    def test_rules(self):
        d = assign_sets(np.array([1.0, 0.7, 0.2, 0.5]), easy_mask=[True, False, False, False])
        assert d.easy.tolist() == [0] and d.hard.tolist() == [1] and d.noisy.tolist() == [2, 3]

    def test_branch_not_float(self):
        d = assign_sets(np.array([1.0, 1.0]), easy_mask=[False, True])
        assert d.easy.tolist() == [1] and d.hard.tolist() == [0]

    def test_threshold_without_prior(self):
        d = assign_sets(np.array([0.96, 0.94, 0.3]), easy_threshold=0.95)
        assert d.easy.tolist() == [0] and d.hard.tolist() == [1] and d.noisy.tolist() == [2]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
    def test_partition(self, w):
        d = assign_sets(np.array(w), easy_mask=np.array(w) == 1.0)
        ids = np.concatenate([d.easy, d.hard, d.noisy])
        assert sorted(ids.tolist()) == list(range(len(w)))

    def test_quality(self):
        d = assign_sets(np.array([1.0, 0.9, 0.1, 0.2]), easy_mask=[True, False, False, False])
        q = d.quality(np.array([False, False, True, False]))
        assert q["easy_purity"] == 1.0 and q["noisy_recall"] == 1.0 and q["noisy_precision"] == 0.5


def test_divide_csv(tmp_path):
    w_ip = prior_clean_prob(small_partition())
    w_it = np.array([0.9, 0.1, 0.6, 0.5, 0.4])
    d = assign_sets(fuse(w_it, w_ip, small_partition().easy_mask(), 0.5), small_partition().easy_mask())
    save_divide_csv(tmp_path / "d.csv", w_ip, w_it, d)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "id,w_ip,w_it,w_i,set"
    assert lines[1].endswith(",easy") and lines[3].endswith(",hard") and lines[5].endswith(",noisy")
