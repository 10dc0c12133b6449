import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbusemann.errors import DatasetError, DomainError, InvalidMeasureError
from wbusemann.measures import (
    Discrete1D,
    EmpiricalMeasure,
    GaussianMeasure,
    GaussianMixture,
    LabeledDataset,
    class_conditional,
    gaussian_moments,
    load_dataset_csv,
    load_mixture_json,
    quantile_eval,
    save_dataset_csv,
    save_mixture_json,
)


class TestQuantile:
    def test_two_atoms(self):
        m = Discrete1D([0.0, 2.0])
        assert quantile_eval(m, 0.5) == 0.0
        assert quantile_eval(m, 0.75) == 2.0
        assert quantile_eval(m, 1.0) == 2.0

    def test_standard_normal_median(self):
        assert quantile_eval(GaussianMeasure.from_1d(0.0, 1.0), 0.5) == 0.0

    @pytest.mark.parametrize("u", [0.0, -0.1, 1.5, np.nan])
    def test_domain(self, u):
        with pytest.raises(DomainError):
            quantile_eval(Discrete1D([1.0]), u)

    def test_monotone_in_u(self, rng):
        m = Discrete1D(rng.standard_normal(17), rng.dirichlet(np.ones(17)))
        g = GaussianMeasure.from_1d(1.0, 2.0)
        u = rng.uniform(1e-9, 1, size=(1000, 2))
        lo, hi = u.min(axis=1), u.max(axis=1)
        for meas in (m, g):
            assert np.all(quantile_eval(meas, lo) <= quantile_eval(meas, hi))

    def test_midpoint_mean_is_sample_mean(self, rng):
        x = rng.standard_normal(40)
        m = Discrete1D(x)
        u = (np.arange(1, 41) - 0.5) / 40
        assert np.mean(quantile_eval(m, u)) == pytest.approx(x.mean(), abs=1e-14)


class TestContainers:
    def test_discrete_sorted_and_readonly(self):
        m = Discrete1D([3.0, 1.0, 2.0], [0.5, 0.25, 0.25])
        assert m.values.tolist() == [1.0, 2.0, 3.0]
        assert m.weights.tolist() == [0.25, 0.25, 0.5]
        with pytest.raises(ValueError):
            m.values[0] = 5

    def test_bad_weights(self):
        with pytest.raises(InvalidMeasureError):
            Discrete1D([0.0, 1.0], [0.7, 0.7])
        with pytest.raises(InvalidMeasureError):
            EmpiricalMeasure([[0.0], [1.0]], [1.5, -0.5])

    def test_gaussian_asymmetric_rejected(self):
        with pytest.raises(InvalidMeasureError):
            GaussianMeasure([0, 0], [[1.0, 0.5], [0.0, 1.0]])

    def test_gaussian_jitter(self):
        g = GaussianMeasure([0, 0], np.diag([1.0, 0.0]))
        assert np.linalg.eigvalsh(g.cov)[0] > 0
        assert g.cov[1, 1] == pytest.approx(0.5e-9)

    def test_mixture_json_round_trip(self, tmp_path, rng):
        from conftest import random_mixture

        mix = random_mixture(rng, 3, 2)
        path = tmp_path / "mix.json"
        save_mixture_json(mix, path)
        back = load_mixture_json(path)
        assert np.allclose(back.weights, mix.weights, atol=0, rtol=1e-15)
        assert np.array_equal(back.means, mix.means)
        data = json.loads(path.read_text())
        assert set(data) == {"weights", "means", "covs"}

    def test_mixture_weights(self):
        with pytest.raises(InvalidMeasureError):
            GaussianMixture.from_arrays([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])


class TestMoments:
    def test_two_points(self):
        g = gaussian_moments(EmpiricalMeasure([[0.0, 0.0], [2.0, 0.0]]))
        assert np.allclose(g.mean, [1.0, 0.0])
        assert g.cov[0, 0] == pytest.approx(1.0, abs=1e-8)
        assert 0 < g.cov[1, 1] < 1e-8

    def test_single_point(self):
        g = gaussian_moments(EmpiricalMeasure([[5.0]]))
        assert g.mean[0] == 5.0
        assert 0 < g.cov[0, 0] < 1e-8

    def test_large_sample(self):
        x = np.random.default_rng(0).standard_normal((100_000, 3))
        g = gaussian_moments(EmpiricalMeasure(x))
        assert np.abs(g.mean).max() < 0.02
        assert np.abs(g.cov - np.eye(3)).max() < 0.05

    def test_error_rate(self):
        # quadrupling n should roughly halve the mean-estimation error
        target = GaussianMeasure([1.0, -1.0], [[2.0, 0.3], [0.3, 1.0]])
        errs = []
        for n in (1000, 4000, 16000):
            e = [np.linalg.norm(gaussian_moments(EmpiricalMeasure(target.sample(n, np.random.default_rng(s)))).mean - target.mean)
                 for s in range(300)]
            errs.append(np.mean(e))
        for a, b in zip(errs, errs[1:]):
            assert 1.6 <= a / b <= 2.4


class TestDataset:
    def test_class_conditional(self):
        d = LabeledDataset([[0.0], [1.0], [2.0]], [1, 1, 2])
        assert class_conditional(d, 1).points.ravel().tolist() == [0.0, 1.0]
        assert class_conditional(d, 2).points.ravel().tolist() == [2.0]
        with pytest.raises(DomainError):
            class_conditional(d, 3)

    def test_single_label_is_whole_measure(self):
        d = LabeledDataset([[0.0], [1.0], [2.0]], [1, 1, 1])
        assert np.array_equal(class_conditional(d, 1).points, d.features)

    def test_non_contiguous(self):
        with pytest.raises(DatasetError):
            LabeledDataset([[0.0], [1.0]], [1, 3])

    def test_remap_first_appearance(self):
        d = LabeledDataset.from_arrays([[0.0], [1.0], [2.0]], [7, 3, 7])
        assert d.labels.tolist() == [1, 2, 1]


class TestCSV:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,f1,label\n0,1,5\n1,1,5\n2,0,9\n")
        d = load_dataset_csv(p)
        assert (d.n, d.n_classes, d.dim) == (3, 2, 2)

    def test_nan_names_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,label\n0,1\nnan,1\n")
        with pytest.raises(DatasetError, match="row 3"):
            load_dataset_csv(p)

    def test_parse_error_names_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,label\n0,1\n1,1\nabc,2\n")
        with pytest.raises(DatasetError, match="row 4"):
            load_dataset_csv(p)

    def test_round_trip(self, tmp_path, rng):
        d = LabeledDataset(rng.standard_normal((20, 3)), np.repeat([1, 2], 10))
        p = tmp_path / "d.csv"
        save_dataset_csv(d, p)
        back = load_dataset_csv(p)
        assert np.abs(back.features - d.features).max() <= 1e-12
        assert np.array_equal(back.labels, d.labels)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(1e-6, 1.0))
def test_quantile_in_support(values, u):
    m = Discrete1D(values)
    assert quantile_eval(m, u) in set(m.values.tolist())
