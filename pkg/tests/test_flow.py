import itertools

import numpy as np
import pytest

from wbusemann.errors import DomainError
from wbusemann.flow import (
    FlowConfig,
    FlowDiverged,
    FlowState,
    GMMFlowConfig,
    GMMFlowState,
    flow_step,
    gaussian_source,
    gmm_flow_step,
    read_snapshot,
    rings_target,
    run_flow,
    sliced_objective,
    sliced_particle_grad,
    wow_distance_eval,
    write_snapshot,
)
from wbusemann.measures import GaussianMixture, LabeledDataset
from wbusemann.ot import w2_1d_squared
from wbusemann.measures import Discrete1D

from conftest import random_mixture


def _blobs(rng, C=3, n=6, d=3, shift=0.0):
    x = rng.standard_normal((C, n, d)) + shift + np.arange(C)[:, None, None]
    return FlowState(x)


def fd_check(metric, state, target, L=16, seed=3, coords=12, rng=None, h=1e-5):
    grad, _ = sliced_particle_grad(metric, state, target, L, seed, wow=False)
    errs = []
    for _ in range(coords):
        c, i, k = (int(rng.integers(s)) for s in state.particles.shape)
        xp, xm = state.particles.copy(), state.particles.copy()
        xp[c, i, k] += h
        xm[c, i, k] -= h
        fd = (sliced_objective(metric, xp, target, L, seed) - sliced_objective(metric, xm, target, L, seed)) / (2 * h)
        errs.append(abs(fd - grad[c, i, k]) / max(abs(fd), abs(grad[c, i, k]), 1e-8))
    return max(errs)


@pytest.fixture(scope="module")
def rings_run():
    target = rings_target(80, mode="uniform")
    res = run_flow(gaussian_source(target), target, FlowConfig(iterations=300, metric="swbg", projections=64))
    return np.array([r["objective"] for r in res.trajectory[:-1]])


class TestGradient:
    @pytest.mark.parametrize("metric", ["sw", "swb1dg", "swbg", "sotdd"])
    def test_zero_at_target(self, metric, rng):
        state = _blobs(rng)
        grad, terms = sliced_particle_grad(metric, state, state.to_dataset(), 32, 0)
        assert np.abs(grad).max() <= 1e-12
        assert terms.max() <= 1e-20

    @pytest.mark.parametrize("metric", ["sw", "swb1dg", "swbg", "sotdd"])
    def test_finite_differences(self, metric, rng):
        state, target = _blobs(rng), _blobs(rng, shift=0.7).to_dataset()
        assert fd_check(metric, state, target, rng=rng) <= 1e-4

    def test_sorted_pair_1d(self):
        state = FlowState(np.array([[[0.3], [1.5]]]))
        target = LabeledDataset([[1.0], [-0.2]], [1, 1])
        grad, _ = sliced_particle_grad("sw", state, target, 5, 0, wow=False)
        # matching is 0.3 -> -0.2 and 1.5 -> 1.0
        assert np.allclose(grad.ravel(), 2 * np.array([0.5, 0.5]) / 2, atol=1e-14)
        wow, _ = sliced_particle_grad("sw", state, target, 5, 0)
        assert np.allclose(wow, 2 * grad)

    def test_wow_rescaling(self, rng):
        state, target = _blobs(rng, C=2, n=5), _blobs(rng, C=2, n=5, shift=1.0).to_dataset()
        g, _ = sliced_particle_grad("swb1dg", state, target, 20, 1, wow=False)
        w, _ = sliced_particle_grad("swb1dg", state, target, 20, 1)
        assert np.array_equal(w, g * 10)

    def test_unknown_metric(self, rng):
        with pytest.raises(DomainError):
            sliced_particle_grad("bgmsw", _blobs(rng), _blobs(rng).to_dataset(), 4, 0)


class TestStep:
    def test_zero_gradient(self, rng):
        s = _blobs(rng)
        out = flow_step(s, np.zeros_like(s.particles), FlowConfig())
        assert np.array_equal(out.particles, s.particles)

    def test_plain_descent(self, rng):
        s = _blobs(rng)
        g = rng.standard_normal(s.particles.shape)
        out = flow_step(s, g, FlowConfig(step=1.0, momentum=0.0))
        assert np.array_equal(out.particles, s.particles - g)

    def test_momentum_unrolled(self, rng):
        s = _blobs(rng)
        g1, g2 = rng.standard_normal((2,) + s.particles.shape)
        cfg = FlowConfig(step=0.5, momentum=0.9)
        out = flow_step(flow_step(s, g1, cfg), g2, cfg)
        v1 = g1
        v2 = 0.9 * v1 + g2
        assert np.array_equal(out.particles, (s.particles - 0.5 * v1) - 0.5 * v2)
        assert out.iteration == 2

    def test_config_validation(self):
        with pytest.raises(DomainError):
            FlowConfig(momentum=1.0)
        with pytest.raises(DomainError):
            FlowConfig(step=0.0)


class TestRunFlow:
    def test_stationary_at_target(self, rng):
        data = _blobs(rng).to_dataset()
        res = run_flow(data, data, FlowConfig(iterations=5, metric="swb1dg", projections=16))
        assert np.abs(res.state.particles - FlowState.from_dataset(data).particles).max() <= 1e-9

    @pytest.mark.xfail(strict=True, reason="fresh projections per step make consecutive estimates noisy; about 55-60% decrease")
    def test_objective_decreases_per_step(self, rings_run):
        assert np.mean(np.diff(rings_run[50:]) < 0) >= 0.8

    def test_objective_decreases_per_window(self, rings_run):
        windows = np.median(rings_run[:300].reshape(6, 50), axis=1)
        assert np.all(np.diff(windows) < 0)
        assert windows[-1] < 1e-6 * windows[0]

    def test_small_step_exact_objective(self, rng):
        source = LabeledDataset(rng.standard_normal((16, 2)), np.repeat([1, 2], 8))
        target = LabeledDataset(rng.standard_normal((16, 2)) + [2.0, 0.0], np.repeat([1, 2], 8))
        cfg = FlowConfig(step=0.05, momentum=0.0, iterations=60, projections=256, metric="sw", eval_every=1)
        wd = [r["wow_distance"] for r in run_flow(source, target, cfg).trajectory]
        assert np.mean(np.diff(wd) <= 1e-12) >= 0.95

    def test_translation_equivariant(self, rng):
        target = _blobs(rng, C=2, n=6, d=2, shift=1.0).to_dataset()
        source = _blobs(rng, C=2, n=6, d=2).to_dataset()
        v = np.array([3.0, -1.0])
        shift = lambda D: LabeledDataset(D.features + v, D.labels)  # noqa: E731
        cfg = FlowConfig(iterations=20, metric="swb1dg", projections=32, step=0.1)
        a = run_flow(source, target, cfg).state.particles
        b = run_flow(shift(source), shift(target), cfg).state.particles
        assert np.abs(b - v - a).max() <= 1e-9

    def test_divergence_guard(self, rng):
        data = _blobs(rng).to_dataset()
        tgt = _blobs(rng, shift=5.0).to_dataset()
        with pytest.raises(FlowDiverged) as exc:
            run_flow(data, tgt, FlowConfig(iterations=50, step=1e4, metric="sw", projections=8, divergence_factor=10))
        assert len(exc.value.trajectory) >= 1

    def test_snapshot_round_trip(self, tmp_path, rng):
        x = rng.standard_normal((3, 4, 2))
        write_snapshot(x, tmp_path / "snap", iteration=7)
        assert np.array_equal(read_snapshot(tmp_path / "snap"), x)

    def test_trajectory_csv(self, tmp_path, rng):
        data = _blobs(rng).to_dataset()
        res = run_flow(data, _blobs(rng, shift=1).to_dataset(), FlowConfig(iterations=3, metric="sw", projections=8, eval_every=2))
        res.write_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iteration,objective,wow_distance" and len(lines) == 5


class TestRings:
    def test_even(self):
        r = rings_target()
        assert np.array_equal(r.class_sizes(), [80, 80, 80])
        assert np.abs(np.linalg.norm(r.features[r.labels == 1], axis=1) - 1.0).max() <= 1e-12

    def test_uniform_reproducible(self):
        a, b = rings_target(mode="uniform", seed=4), rings_target(mode="uniform", seed=4)
        assert np.array_equal(a.features, b.features)

    def test_bad_radii(self):
        with pytest.raises(DomainError):
            rings_target(radii=(1.0, 1.0))


class TestWoW:
    def test_identity_and_permutation(self, rng):
        P = _blobs(rng).to_dataset()
        assert wow_distance_eval(P, P) == 0.0
        perm = LabeledDataset(P.features, np.array([3, 1, 2])[P.labels - 1])
        assert wow_distance_eval(P, perm) == 0.0

    def test_brute_force(self, rng):
        P = LabeledDataset(rng.standard_normal((6, 1)), [1, 1, 1, 2, 2, 2])
        Q = LabeledDataset(rng.standard_normal((6, 1)) + 1, [1, 1, 1, 2, 2, 2])
        w = lambda a, b: w2_1d_squared(Discrete1D(P.features[P.labels == a, 0]), Discrete1D(Q.features[Q.labels == b, 0]))  # noqa: E731
        best = min(0.5 * (w(1, s[0]) + w(2, s[1])) for s in itertools.permutations((1, 2)))
        assert wow_distance_eval(P, Q) ** 2 == pytest.approx(best, abs=1e-12)


class TestGMMFlow:
    def test_at_target(self, rng):
        mix = random_mixture(rng, 2, 2)
        s = GMMFlowState.from_mixture(mix)
        out = gmm_flow_step(s, mix, config=GMMFlowConfig(L=50))
        delta = np.concatenate([(out.means - s.means).ravel(), (out.covs - s.covs).ravel(), (out.weights - s.weights)])
        assert np.abs(delta).max() <= 1e-6

    def test_invariants(self, rng):
        s = GMMFlowState.from_mixture(random_mixture(rng, 3, 2))
        target = random_mixture(rng, 2, 2)
        for _ in range(3):
            s = gmm_flow_step(s, target, "bgmsw", GMMFlowConfig(step=0.5, L=30))
            assert abs(s.weights.sum() - 1.0) <= 1e-12
            assert np.linalg.eigvalsh(s.covs).min() >= s.floor * (1 - 1e-9)

    def test_near_floor(self):
        tiny = GaussianMixture.from_arrays([1.0], [[0.0, 0.0]], [np.diag([2e-6, 1.0])])
        target = GaussianMixture.from_arrays([1.0], [[1.0, 0.0]], [np.eye(2)])
        out = gmm_flow_step(GMMFlowState.from_mixture(tiny), target, "b1dgmsw", GMMFlowConfig(L=20))
        assert np.all(np.isfinite(out.covs))

    def test_objective_decreases(self, rng):
        target = random_mixture(rng, 2, 2)
        s = GMMFlowState.from_mixture(random_mixture(rng, 2, 2))
        from wbusemann.sliced import b1dgmsw

        before = b1dgmsw(s.to_mixture(), target, L=100).value
        for _ in range(10):
            s = gmm_flow_step(s, target, "b1dgmsw", GMMFlowConfig(step=0.2, L=100))
        assert b1dgmsw(s.to_mixture(), target, L=100).value < before
