import itertools

import numpy as np
import pytest

from wbusemann.errors import CapacityError, DomainError
from wbusemann.measures import Discrete1D, EmpiricalMeasure, GaussianMeasure, LabeledDataset, class_conditional
from wbusemann.ot import (
    bw_distance,
    bw_map,
    exact_ot_lp,
    geodesic_1d,
    geodesic_bw,
    otdd_exact,
    w2_1d,
    w2_1d_squared,
    w2sq_sorted_uniform,
    wasserstein_bw_mixtures,
)

from conftest import random_gaussian, random_spd


def _emp(v, w=None):
    return EmpiricalMeasure(np.asarray(v, dtype=float)[:, None], w)


class TestW2_1D:
    def test_points(self):
        assert w2_1d(Discrete1D([0.0]), Discrete1D([3.0])) == 3.0

    def test_translation(self):
        assert w2_1d(Discrete1D([0.0, 2.0]), Discrete1D([1.0, 3.0])) == pytest.approx(1.0, abs=1e-15)

    def test_matches_assignment(self, rng):
        for _ in range(20):
            a, b = rng.standard_normal(8), rng.standard_normal(8)
            lp = exact_ot_lp(_emp(a), _emp(b)).cost
            assert w2_1d_squared(Discrete1D(a), Discrete1D(b)) == pytest.approx(lp, abs=1e-9)

    def test_weighted_unequal_sizes(self, rng):
        a, b = rng.standard_normal(5), rng.standard_normal(7)
        wa, wb = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(7))
        lp = exact_ot_lp(_emp(a, wa), _emp(b, wb)).cost
        assert w2_1d_squared(Discrete1D(a, wa), Discrete1D(b, wb)) == pytest.approx(lp, abs=1e-9)

    def test_sorted_uniform_columns_symmetric(self, rng):
        a = np.sort(rng.standard_normal((6, 4)), axis=0)
        b = np.sort(rng.standard_normal((9, 4)), axis=0)
        ab, ba = w2sq_sorted_uniform(a, b), w2sq_sorted_uniform(b, a)
        assert np.array_equal(ab, ba)
        assert ab[0] == pytest.approx(w2_1d_squared(Discrete1D(a[:, 0]), Discrete1D(b[:, 0])), abs=1e-12)


class TestBW:
    def test_equal_covariances(self):
        assert bw_distance(GaussianMeasure([0, 0], np.eye(2)), GaussianMeasure([3, 4], np.eye(2))) == pytest.approx(5.0)

    def test_scalar(self):
        assert bw_distance(GaussianMeasure([0.0], [[4.0]]), GaussianMeasure([0.0], [[9.0]])) == pytest.approx(1.0)

    def test_diagonal(self):
        a = GaussianMeasure([0, 0], np.diag([1.0, 4.0]))
        b = GaussianMeasure([0, 0], np.diag([4.0, 1.0]))
        assert bw_distance(a, b) == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_symmetric(self, rng):
        a, b = random_gaussian(rng, 4), random_gaussian(rng, 4)
        assert bw_distance(a, b) == pytest.approx(bw_distance(b, a), rel=1e-10)

    def test_map_cases(self, rng):
        cov = random_spd(rng, 3)
        m = bw_map(GaussianMeasure(np.zeros(3), np.eye(3)), GaussianMeasure(np.zeros(3), cov))
        w, v = np.linalg.eigh(cov)
        assert np.allclose(m.A, (v * np.sqrt(w)) @ v.T, atol=1e-10)
        same = bw_map(GaussianMeasure(np.zeros(3), cov), GaussianMeasure(np.ones(3), cov))
        assert np.allclose(same.A, np.eye(3), atol=1e-8)
        diag = bw_map(GaussianMeasure([0, 0], np.diag([1.0, 4.0])), GaussianMeasure([0, 0], np.diag([9.0, 1.0])))
        assert np.allclose(diag.A, np.diag([3.0, 0.5]), atol=1e-12)

    def test_map_pushes_forward(self, rng):
        a, b = random_gaussian(rng, 3), random_gaussian(rng, 3)
        A = bw_map(a, b).A
        assert np.allclose(A @ a.cov @ A, b.cov, atol=1e-8)
        assert np.all(np.linalg.eigvalsh(A) > 0)


class TestGeodesics:
    def test_endpoints_and_midpoint(self):
        a, b = Discrete1D([0.0, 2.0]), Discrete1D([2.0, 4.0])
        assert geodesic_1d(a, b, 0.0) is a
        mid = geodesic_1d(a, b, 0.5)
        assert np.allclose(mid.values, [1.0, 3.0])

    def test_constant_speed_1d(self, rng):
        a, b = Discrete1D(rng.standard_normal(7)), Discrete1D(rng.standard_normal(5))
        d = w2_1d(a, b)
        for s, t in rng.uniform(0, 1, size=(10, 2)):
            assert w2_1d(geodesic_1d(a, b, s), geodesic_1d(a, b, t)) == pytest.approx(abs(t - s) * d, abs=1e-10)

    def test_bw_end_and_1d(self, rng):
        a, b = random_gaussian(rng, 3), random_gaussian(rng, 3)
        end = geodesic_bw(a, b, 1.0)
        assert np.allclose(end.cov, b.cov, rtol=1e-8, atol=1e-10)
        g = geodesic_bw(GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([2.0], [[9.0]]), 0.25)
        assert g.std == pytest.approx(1.5)
        assert g.mean[0] == pytest.approx(0.5)

    def test_constant_speed_bw(self, rng):
        a, b = random_gaussian(rng, 3), random_gaussian(rng, 3)
        d = bw_distance(a, b)
        for s, t in rng.uniform(0, 1, size=(10, 2)):
            assert bw_distance(geodesic_bw(a, b, s), geodesic_bw(a, b, t)) == pytest.approx(abs(t - s) * d, abs=1e-8)

    def test_strict_outside(self):
        with pytest.raises(DomainError):
            geodesic_1d(Discrete1D([0.0, 1.0]), Discrete1D([0.0, 0.5]), 5.0, strict=True)


class TestExactLP:
    def test_single_atom(self):
        p = exact_ot_lp(_emp([1.0]), _emp([4.0]))
        assert p.plan.tolist() == [[1.0]]
        assert p.cost == 9.0

    def test_permutation_cost(self):
        perm = np.array([2, 0, 3, 1])
        cost = np.ones((4, 4))
        cost[np.arange(4), perm] = 0.0
        p = exact_ot_lp(np.full(4, 0.25), np.full(4, 0.25), cost)
        assert p.cost == 0.0

    def test_marginals_network_simplex(self, rng):
        a, b = _emp(rng.standard_normal(5), rng.dirichlet(np.ones(5))), _emp(rng.standard_normal(3))
        p = exact_ot_lp(a, b)
        assert np.allclose(p.plan.sum(axis=1), a.weights)
        assert np.allclose(p.plan.sum(axis=0), b.weights)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            exact_ot_lp(np.full(10, 0.1), np.full(10, 0.1), np.zeros((10, 10)), max_entries=50)

    def test_csv(self, tmp_path):
        p = exact_ot_lp(_emp([0.0, 1.0]), _emp([1.0, 0.0]))
        p.to_csv(tmp_path / "plan.csv")
        lines = (tmp_path / "plan.csv").read_text().splitlines()
        assert lines[0] == "i,j,mass" and len(lines) == 3


class TestOTDD:
    def test_identity(self, rng):
        d = LabeledDataset(rng.standard_normal((12, 2)), np.repeat([1, 2, 3], 4))
        assert otdd_exact(d, d) == 0.0

    def test_single_class(self, rng):
        P = LabeledDataset(rng.standard_normal((6, 2)), np.ones(6, dtype=int))
        Q = LabeledDataset(rng.standard_normal((6, 2)) + 1.0, np.ones(6, dtype=int))
        feat = exact_ot_lp(EmpiricalMeasure(P.features), EmpiricalMeasure(Q.features)).cost
        assert otdd_exact(P, Q) == pytest.approx(np.sqrt(2 * feat), abs=1e-9)

    def test_brute_force(self, rng):
        P = LabeledDataset(rng.standard_normal((6, 2)), [1, 1, 1, 2, 2, 2])
        Q = LabeledDataset(rng.standard_normal((6, 2)) + 0.5, [1, 2, 1, 2, 1, 2])

        def w2sq(x, y):
            return min(np.mean(np.sum((x - y[list(p)]) ** 2, axis=1)) for p in itertools.permutations(range(len(y))))

        lab = {(i, j): w2sq(class_conditional(P, i).points, class_conditional(Q, j).points) for i in (1, 2) for j in (1, 2)}
        cost = np.array([[np.sum((P.features[a] - Q.features[b]) ** 2) + lab[P.labels[a], Q.labels[b]]
                          for b in range(6)] for a in range(6)])
        best = min(cost[np.arange(6), list(p)].mean() for p in itertools.permutations(range(6)))
        assert otdd_exact(P, Q) ** 2 == pytest.approx(best, abs=1e-9)


def test_mixture_distance_single_component(rng):
    from conftest import random_mixture

    a, b = random_mixture(rng, 1, 2), random_mixture(rng, 1, 2)
    assert wasserstein_bw_mixtures(a, b) == pytest.approx(bw_distance(a.components[0], b.components[0]), abs=1e-12)
