import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sge.data import DatasetConfig, SyntheticDataset
from sge.errors import BadBinCount, LayerNotFound
from sge.nn import build_model, toy_specs
from sge.reference import activation_lengths_reference
from sge.stats import (activation_histogram, activation_lengths, group_variance_distribution, histogram_pair,
                       normalize_unit_interval, relative_spread, write_histogram_csv, write_variance_csv)
from sge.tensor import group_split


def dataset(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return SyntheticDataset(rng.standard_normal((n, 1, 16, 16)).astype(np.float32),
                            rng.integers(0, 4, n), DatasetConfig())


@pytest.fixture(scope="module")
def model():
    m = build_model(toy_specs("sge", groups=8), seed=0)
    i = m.sge_layers()[0]
    m.layers[i].params["gamma"][...] = np.linspace(-1, 2, 8)
    return m


class TestActivationLengths:
    def test_three_four_five(self):
        x = np.array([3.0, 4.0]).reshape(1, 2, 1, 1)
        assert activation_lengths(group_split(x, 1), 0, 0)[0] == 5.0

    def test_zero(self):
        assert activation_lengths(group_split(np.zeros((1, 3, 2, 2)), 1), 0, 0).tolist() == [0.0] * 4

    def test_matches_loop_oracle(self):
        x = np.random.default_rng(3).standard_normal((2, 12, 3, 4))
        v = group_split(x, 3)
        for n in range(2):
            for g in range(3):
                np.testing.assert_allclose(activation_lengths(v, n, g),
                                           activation_lengths_reference(v.group(n, g)), rtol=1e-6)

    def test_index_error(self):
        with pytest.raises(IndexError):
            activation_lengths(group_split(np.zeros((1, 2, 2, 2)), 2), 0, 2)


class TestNormalize:
    def test_basic(self):
        np.testing.assert_array_equal(normalize_unit_interval([0, 5, 10]), [0, 0.5, 1])

    def test_degenerate(self):
        np.testing.assert_array_equal(normalize_unit_interval([7, 7, 7]), [0, 0, 0])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_extremes_and_idempotence(self, values):
        v = np.array(values)
        out = normalize_unit_interval(v)
        assert np.all((out >= 0) & (out <= 1))
        if v.max() > v.min():
            assert out.min() == 0.0 and out.max() == 1.0
            np.testing.assert_allclose(normalize_unit_interval(out), out, atol=1e-7)
        else:
            assert not out.any()


class TestGroupVariance:
    def test_spatially_constant_activations(self):
        # zero conv weights and a positive bias give constant maps at the SGE site
        m = build_model(toy_specs("sge", groups=8), seed=0)
        m.layers[3].params["weight"][...] = 0
        m.layers[3].params["bias"][...] = 0.7
        out = group_variance_distribution(m, dataset())
        for phase in ("pre", "post"):
            assert np.all(out[phase].per_sample == 0)

    def test_single_sample_std_is_zero(self, model):
        s = group_variance_distribution(model, dataset(1), pre_or_post="post")
        assert s.phase == "post"
        assert np.all(s.std_variance == 0)
        assert np.all(s.mean_variance >= 0)

    def test_shuffle_invariance(self, model):
        data = dataset(8)
        perm = np.random.default_rng(1).permutation(8)
        a = group_variance_distribution(model, data)
        b = group_variance_distribution(model, data.subset(perm))
        for phase in ("pre", "post"):
            np.testing.assert_allclose(a[phase].mean_variance, b[phase].mean_variance, rtol=1e-12)
            np.testing.assert_allclose(a[phase].std_variance, b[phase].std_variance, rtol=1e-9, atol=1e-15)

    def test_layer_not_found(self, model):
        with pytest.raises(LayerNotFound):
            group_variance_distribution(model, dataset(), layer=0)
        baseline = build_model(toy_specs("none"), seed=0)
        with pytest.raises(LayerNotFound):
            group_variance_distribution(baseline, dataset())

    def test_csv(self, model, tmp_path):
        out = group_variance_distribution(model, dataset())
        path = tmp_path / "v.csv"
        write_variance_csv(path, out.values(), {"seed": 3})
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=3"
        rows = list(csv.DictReader(lines[1:]))
        assert list(rows[0]) == ["group", "mean_variance", "std_variance", "phase"]
        assert len(rows) == 16
        assert {r["phase"] for r in rows} == {"pre", "post"}


class TestHistogram:
    def test_all_equal_single_bin(self):
        h = histogram_pair(np.full(10, 2.0), np.full(10, 2.0), bins=8)
        assert (h.count_pre > 0).sum() == 1 and (h.count_post > 0).sum() == 1

    def test_conservation(self, model):
        data = dataset(5)
        h = activation_histogram(model, data, group=2, bins=16)
        m = 8 * 8
        assert h.count_pre.sum() == 5 * m and h.count_post.sum() == 5 * m
        assert len(h.edges) == 17

    def test_shared_range(self):
        h = histogram_pair(np.array([0.0, 1.0]), np.array([0.5, 3.0]), bins=4)
        assert h.edges[0] == 0.0 and h.edges[-1] == 3.0

    def test_bad_bins(self, model):
        with pytest.raises(BadBinCount):
            activation_histogram(model, dataset(), bins=1)

    def test_low_mass_shift(self):
        h = histogram_pair(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.0, 0.0, 3.0, 4.0]), bins=4)
        pre, post = h.low_mass()
        # bins [0,1) [1,2) [2,3) [3,4]: only the two zeros land in the lowest bin
        assert pre == 0.0 and post == 0.5
        assert h.low_mass_shift() == 0.5

    def test_csv(self, model, tmp_path):
        h = activation_histogram(model, dataset(), bins=8)
        path = tmp_path / "h.csv"
        write_histogram_csv(path, h)
        rows = list(csv.DictReader(path.read_text().splitlines()))
        assert list(rows[0]) == ["bin_low", "bin_high", "count_pre", "count_post"]
        assert sum(int(r["count_pre"]) for r in rows) == h.count_pre.sum()


class TestRelativeSpread:
    def test_scale_free(self):
        lengths = np.random.default_rng(0).random((4, 3, 10))
        np.testing.assert_allclose(relative_spread(lengths * 7.5), relative_spread(lengths), rtol=1e-12)

    def test_hand_value_and_dead_samples(self):
        lengths = np.array([[[1.0, 3.0]], [[0.0, 0.0]]])
        # var([1, 3]) = 1, mean = 2; the all-zero sample is skipped
        assert relative_spread(lengths).tolist() == [0.25]
        assert relative_spread(np.zeros((2, 1, 3))).tolist() == [0.0]
