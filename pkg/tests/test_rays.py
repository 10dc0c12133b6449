import math

import numpy as np
import pytest

from wbusemann.errors import DomainError, InvalidRayError
from wbusemann.measures import Discrete1D
from wbusemann.ot import bw_distance, w2_1d
from wbusemann.rays import (
    Ray1DEmpirical,
    Ray1DGaussian,
    RayBW,
    RayDirac1D,
    check_unit_speed,
    extension_interval_1d,
    is_ray_1d,
    is_ray_1d_gaussian,
    is_ray_bw,
    ray_extension_interval_1d_gaussian,
    ray_extension_interval_bw,
    ray_from_dict,
    sample_ray_1d_dirac,
    sample_ray_1d_gaussian,
    sample_ray_bw,
)


class TestPredicates:
    def test_1d_cases(self):
        assert is_ray_1d(Discrete1D([0.0, 1.0]), Discrete1D([0.0, 2.0]))
        assert not is_ray_1d(Discrete1D([0.0, 1.0]), Discrete1D([0.0, 0.5]))

    def test_translation_is_ray(self, rng):
        x = rng.standard_normal(9)
        assert is_ray_1d(Discrete1D(x), Discrete1D(x + 0.3))
        assert is_ray_1d(Discrete1D(x + 0.3), Discrete1D(x))

    @pytest.mark.parametrize("s0,s1,ok", [(1, 2, True), (1, 0.5, False), (1, 1, True)])
    def test_gaussian(self, s0, s1, ok):
        assert is_ray_1d_gaussian(s0, s1) is ok

    def test_bw(self):
        assert is_ray_bw(np.eye(2), 4 * np.eye(2))
        assert not is_ray_bw(4 * np.eye(2), np.eye(2))

    def test_bw_diag_matches_per_axis(self, rng):
        for _ in range(30):
            s0, s1 = rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 3)
            per_axis = all(is_ray_1d_gaussian(a, b) for a, b in zip(s0, s1))
            assert is_ray_bw(np.diag(s0**2), np.diag(s1**2)) == per_axis


class TestIntervals:
    @pytest.mark.parametrize("s0,s1,expected", [(1, 2, (-1, math.inf)), (1, 1, (-math.inf, math.inf)), (2, 1, (-math.inf, 2))])
    def test_gaussian(self, s0, s1, expected):
        assert ray_extension_interval_1d_gaussian(s0, s1) == expected

    def test_discrete_interval_edges(self):
        a, b = Discrete1D([0.0, 1.0]), Discrete1D([0.0, 0.5])
        lo, hi = extension_interval_1d(a, b)
        assert lo == -math.inf and hi == pytest.approx(2.0)

    def test_bw_matches_scalar(self):
        assert ray_extension_interval_bw([[1.0]], [[4.0]]) == pytest.approx((-1.0, math.inf))


class TestContainers:
    def test_invalid_gaussian_ray(self):
        with pytest.raises(InvalidRayError):
            Ray1DGaussian(0.0, 2.0, 1.0, 1.0)

    def test_zero_speed(self):
        with pytest.raises(InvalidRayError):
            Ray1DGaussian(0.0, 1.0, 0.0, 1.0)

    def test_dirac_negative_time(self):
        with pytest.raises(DomainError):
            RayDirac1D(0.5, 0.5).point(-1.0)

    def test_empirical_constant_speed_far(self, rng):
        x = np.sort(rng.standard_normal(6))
        ray = Ray1DEmpirical(Discrete1D(x), Discrete1D(2 * x + 1))
        for s, t in [(0.0, 40.0), (3.0, 17.5)]:
            assert w2_1d(ray.point(s), ray.point(t)) == pytest.approx(abs(t - s) * ray.speed, rel=1e-10)

    def test_dict_round_trip(self, rng):
        rays = [
            Ray1DGaussian(0.0, 1.0, 1.0, 2.0),
            RayDirac1D(0.6, 0.8),
            Ray1DEmpirical(Discrete1D([0.0, 1.0]), Discrete1D([0.0, 3.0])),
            sample_ray_bw(3, rng),
        ]
        for r in rays:
            back = ray_from_dict(r.to_dict())
            assert type(back) is type(r)
            assert back.speed == pytest.approx(r.speed, rel=1e-9)


class TestSamplers:
    def test_bw_unit_speed_and_valid(self, rng):
        for d in (1, 2, 5):
            for _ in range(10):
                ray = sample_ray_bw(d, rng)
                assert check_unit_speed(ray, 1e-10)
                assert is_ray_bw(np.eye(d), ray.cov1)
                assert bw_distance(ray.base, ray.point(1.0)) == pytest.approx(1.0, abs=1e-10)

    def test_bw_d1_reduces(self, rng):
        ray = sample_ray_bw(1, rng)
        s = ray.tangent[0, 0]
        assert math.sqrt(ray.cov1[0, 0]) == pytest.approx(1 + abs(s), abs=1e-12)

    def test_dirac_identity(self, rng):
        for _ in range(100):
            r = sample_ray_1d_dirac(rng)
            assert abs(r.m1**2 + r.s1**2 - 1.0) <= 1e-15

    def test_dirac_edges(self):
        class Fixed:
            def __init__(self, v):
                self.v = v

            def uniform(self, *a):
                return self.v

        assert sample_ray_1d_dirac(Fixed(0.0)).s1 == 1.0
        assert sample_ray_1d_dirac(Fixed(1.0)).s1 == 0.0

    def test_gaussian_unit_speed(self, rng):
        for _ in range(50):
            r = sample_ray_1d_gaussian(rng)
            assert r.speed == pytest.approx(1.0, abs=1e-14)
            assert r.s1 >= r.s0

    def test_bw_ray_rejects_non_loewner(self):
        with pytest.raises(InvalidRayError):
            RayBW(np.zeros(2), 4 * np.eye(2), np.ones(2), np.eye(2))
