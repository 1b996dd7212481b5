"""Tests for the forward/reverse diffusion kernels and type perturbation."""

import numpy as np
import pytest

from dpcdvae.diffusion import (
    forward_perturb,
    perturb_types,
    reverse_step_periodic,
    reverse_step_standard,
    sample_trajectory,
    type_perturbation_probs,
)
from dpcdvae.errors import DivergenceError
from dpcdvae.lattice import lattice_from_params, wrap_pi
from dpcdvae.schedule import make_sigmoid_schedule

SCHED = make_sigmoid_schedule(1000)


class TestForwardPerturb:
    def test_near_zero_noise_start(self):
        # at t=1 the retention is ~1, so r_t ~ r_0
        r0 = np.array([[0.25, 0.5, 0.75]])
        state = forward_perturb(r0, 1, SCHED, np.zeros((1, 3)))
        ab1 = SCHED.alpha_bar_at(1)
        np.testing.assert_allclose(state.r, np.sqrt(ab1) * r0, rtol=1e-12)
        np.testing.assert_allclose(state.r, r0, atol=1e-4)

    def test_pure_noise_end(self):
        r0 = np.array([[0.25, 0.5, 0.75]])
        eps = np.array([[1.3, -0.4, 0.2]])
        state = forward_perturb(r0, 1000, SCHED, eps)
        np.testing.assert_allclose(state.r, eps, atol=2e-2)
        ab = SCHED.alpha_bar_at(1000)
        np.testing.assert_allclose(
            state.r, np.sqrt(ab) * r0 + np.sqrt(1 - ab) * eps, rtol=1e-12)

    def test_wrap_consistency(self):
        rng = np.random.default_rng(0)
        r0 = rng.random((20, 3))
        state = forward_perturb(r0, 700, SCHED, rng.standard_normal((20, 3)))
        np.testing.assert_array_equal(state.r_frac, wrap_pi(state.r))

    def test_monte_carlo_moments(self):
        # empirical mean and variance of r_t match Gaussian reparameterization
        rng = np.random.default_rng(1)
        n = 10_000
        r0 = np.full((n, 3), 0.4)
        t = 600
        state = forward_perturb(r0, t, SCHED, rng.standard_normal((n, 3)))
        ab = SCHED.alpha_bar_at(t)
        se_mean = np.sqrt((1 - ab) / n)
        assert abs(state.r.mean() - np.sqrt(ab) * 0.4) < 3 * se_mean
        var = state.r.var(ddof=1)
        se_var = (1 - ab) * np.sqrt(2.0 / (3 * n - 1))
        assert abs(var - (1 - ab)) < 3 * se_var

    def test_rejects_unwrapped_input(self):
        with pytest.raises(ValueError):
            forward_perturb(np.array([[1.5, 0, 0]]), 10, SCHED, np.zeros((1, 3)))

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            forward_perturb(np.zeros((1, 3)), 1001, SCHED, np.zeros((1, 3)))


class TestReverseStandard:
    def test_zero_inputs_algebra(self):
        r_t = np.array([[0.3, 0.6, 0.9]])
        t = 500
        out = reverse_step_standard(r_t, np.zeros((1, 3)), t, SCHED, np.zeros((1, 3)))
        np.testing.assert_allclose(out, r_t / np.sqrt(SCHED.alpha_at(t)), rtol=1e-14)

    def test_t1_deterministic(self):
        rng = np.random.default_rng(2)
        r_t = rng.random((4, 3))
        eps = rng.standard_normal((4, 3))
        noise = rng.standard_normal((4, 3))
        out_noisy = reverse_step_standard(r_t, eps, 1, SCHED, noise)
        out_zero = reverse_step_standard(r_t, eps, 1, SCHED, np.zeros((4, 3)))
        np.testing.assert_array_equal(out_noisy, out_zero)

    def test_oracle_inversion_at_t1(self):
        # with alpha_bar_1 = alpha_1, the oracle noise inverts exactly
        rng = np.random.default_rng(3)
        r0 = rng.random((6, 3))
        ab1 = SCHED.alpha_bar_at(1)
        r1 = np.sqrt(ab1) * r0 + np.sqrt(1 - ab1) * rng.standard_normal((6, 3))
        eps_oracle = (r1 - np.sqrt(ab1) * r0) / np.sqrt(1 - ab1)
        out = reverse_step_standard(r1, eps_oracle, 1, SCHED, np.zeros((6, 3)))
        np.testing.assert_allclose(out, r0, atol=1e-10)


class TestReversePeriodic:
    @pytest.mark.parametrize("t", [1, 250, 500, 750, 1000])
    def test_oracle_inversion_any_t(self, t):
        rng = np.random.default_rng(t)
        r0 = rng.random((5, 3))
        r_f_t = wrap_pi(np.sqrt(SCHED.alpha_bar_at(t)) * r0
                        + np.sqrt(1 - SCHED.alpha_bar_at(t))
                        * rng.standard_normal((5, 3)))
        ab = SCHED.alpha_bar_at(t)
        eps_oracle = (r_f_t - np.sqrt(ab) * r0) / np.sqrt(1 - ab)
        out, out_frac = reverse_step_periodic(r_f_t, eps_oracle, t, SCHED,
                                              np.zeros((5, 3)))
        np.testing.assert_allclose(out, r0, atol=1e-10)
        np.testing.assert_array_equal(out_frac, wrap_pi(out))

    def test_zero_fixed_point(self):
        out, out_frac = reverse_step_periodic(
            np.zeros((2, 3)), np.zeros((2, 3)), 400, SCHED, np.zeros((2, 3)))
        np.testing.assert_array_equal(out, 0.0)
        np.testing.assert_array_equal(out_frac, 0.0)

    def test_output_always_wrapped(self):
        rng = np.random.default_rng(4)
        for t in (1, 37, 999):
            _, out_frac = reverse_step_periodic(
                rng.random((8, 3)), rng.standard_normal((8, 3)), t, SCHED,
                rng.standard_normal((8, 3)))
            assert np.all(out_frac >= 0) and np.all(out_frac < 1)

    def test_shift_equivariance(self):
        # Affine identity of the periodic step for boundary-free shifts:
        # step(wrap(r+s)) == wrap(step(r) + s/sqrt(ab)).
        rng = np.random.default_rng(5)
        for t in (2, 100, 800):
            r = 0.25 + 0.5 * rng.random((6, 3))
            s = rng.uniform(-0.2, 0.2)
            eps = rng.standard_normal((6, 3))
            noise = rng.standard_normal((6, 3))
            ab = SCHED.alpha_bar_at(t)
            lhs, lhs_frac = reverse_step_periodic(wrap_pi(r + s), eps, t, SCHED, noise)
            rhs, _ = reverse_step_periodic(r, eps, t, SCHED, noise)
            np.testing.assert_allclose(lhs_frac, wrap_pi(rhs + s / np.sqrt(ab)),
                                       atol=1e-10)


class TestTypePerturbation:
    def test_probs_zero_sigma(self):
        probs = type_perturbation_probs(np.array([[1.0, 0.0]]), np.array([0.5, 0.5]),
                                        0.0)
        expected = np.exp(1) / (np.exp(1) + 1)
        assert probs[0, 0] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.7311, rel=1e-4)

    def test_uniform_composition_symmetry(self):
        # A uniform composition vector shifts every logit equally, so the
        # perturbation never leaves softmax(A): the true type keeps weight
        # e/(e+K-1) and all wrong types stay exchangeable at any scale.
        for sigma in (0.0, 1.0, 1e6):
            probs = type_perturbation_probs(np.eye(3), np.full(3, 1 / 3), sigma)
            np.testing.assert_allclose(
                probs[0], [np.e / (np.e + 2), 1 / (np.e + 2), 1 / (np.e + 2)],
                atol=1e-12)

    def test_large_sigma_follows_composition(self):
        # With a skewed composition, large scales concentrate every atom's
        # distribution on the dominant species.
        probs = type_perturbation_probs(np.eye(3), np.array([0.2, 0.5, 0.3]), 1e3)
        assert np.all(probs.argmax(axis=1) == 1)
        assert probs[:, 1].min() > 0.999

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(6)
        onehot = np.eye(4)[rng.integers(0, 4, size=10)]
        comp = rng.dirichlet(np.ones(4))
        probs = type_perturbation_probs(onehot, comp, 2.345)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_vocab_mismatch(self):
        with pytest.raises(ValueError):
            type_perturbation_probs(np.eye(3), np.ones(4) / 4, 1.0)

    def test_seeded_determinism(self):
        onehot = np.eye(2)[np.array([0, 1, 0, 1])]
        comp = np.array([0.5, 0.5])
        a = perturb_types(onehot, comp, 500, SCHED, np.random.default_rng(7))
        b = perturb_types(onehot, comp, 500, SCHED, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)
        assert a.dtype == np.int64 and a.shape == (4,)

    def test_sampling_frequencies(self):
        rng = np.random.default_rng(8)
        onehot = np.tile([[1.0, 0.0]], (20_000, 1))
        draws = perturb_types(onehot, np.array([0.5, 0.5]), 1, SCHED, rng)
        # sigma' ~ 0.01 at t=1: P(type 0) ~ e/(e+1)
        p0 = (draws == 0).mean()
        assert abs(p0 - np.exp(1) / (np.exp(1) + 1)) < 0.01


class TestSampleTrajectory:
    def teacher_forced_denoiser(self, target):
        def denoiser(z, lattice, frac, types, t):
            ab = SCHED.alpha_bar_at(t)
            eps = (frac - np.sqrt(ab) * target) / np.sqrt(1 - ab)
            logits = np.zeros((len(frac), 2))
            logits[:, 0] = 1.0
            return eps, logits
        return denoiser

    def test_oracle_recovers_target(self):
        rng = np.random.default_rng(9)
        target = rng.random((4, 3))
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        sched = make_sigmoid_schedule(50)

        def denoiser(z, lattice, frac, types, t):
            ab = sched.alpha_bar_at(t)
            eps = (frac - np.sqrt(ab) * target) / np.sqrt(1 - ab)
            return eps, np.tile([1.0, 0.0], (len(frac), 1))

        out = sample_trajectory(denoiser, np.zeros(4), lat, np.zeros(4, dtype=int),
                                4, sched, np.random.default_rng(10),
                                variant="periodic", elements=[6, 8],
                                langevin_noise=False)
        np.testing.assert_allclose(out.frac_coords, target, atol=1e-9)
        np.testing.assert_array_equal(out.atomic_numbers, [6, 6, 6, 6])

    def test_outputs_wrapped(self):
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        sched = make_sigmoid_schedule(20)

        def denoiser(z, lattice, frac, types, t):
            return np.zeros_like(frac), np.zeros((len(frac), 1))

        out = sample_trajectory(denoiser, np.zeros(2), lat, np.zeros(3, dtype=int),
                                3, sched, np.random.default_rng(11),
                                variant="standard", elements=[6])
        assert np.all(out.frac_coords >= 0) and np.all(out.frac_coords < 1)

    def test_seeded_reproducibility(self):
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        sched = make_sigmoid_schedule(20)

        def denoiser(z, lattice, frac, types, t):
            return 0.1 * frac, np.zeros((len(frac), 1))

        runs = [sample_trajectory(denoiser, np.zeros(2), lat,
                                  np.zeros(3, dtype=int), 3, sched,
                                  np.random.default_rng(12), variant="periodic",
                                  elements=[6])
                for _ in range(2)]
        np.testing.assert_array_equal(runs[0].frac_coords, runs[1].frac_coords)

    def test_divergence_reports_step(self):
        lat = lattice_from_params(3, 3, 3, 90, 90, 90)
        sched = make_sigmoid_schedule(20)

        def denoiser(z, lattice, frac, types, t):
            if t == 17:
                return np.full_like(frac, np.nan), np.zeros((len(frac), 1))
            return np.zeros_like(frac), np.zeros((len(frac), 1))

        with pytest.raises(DivergenceError) as err:
            sample_trajectory(denoiser, np.zeros(2), lat, np.zeros(2, dtype=int),
                              2, sched, np.random.default_rng(13),
                              variant="periodic", elements=[6])
        assert err.value.step == 17

    def test_uniform_terminal_marginal(self):
        # KS test of the wrapped forward marginal against U[0,1) at small
        # retention; 1% critical value for n=10^4 is ~1.628/sqrt(n).
        rng = np.random.default_rng(14)
        n = 10_000
        r0 = np.full((n, 1), 0.37)
        ab = SCHED.alpha_bar_at(1000)
        assert ab <= 1e-4
        r_t = np.sqrt(ab) * r0 + np.sqrt(1 - ab) * rng.standard_normal((n, 1))
        wrapped = np.sort(wrap_pi(r_t).ravel())
        grid = np.arange(1, n + 1) / n
        ks = np.max(np.maximum(np.abs(grid - wrapped),
                               np.abs(wrapped - (grid - 1.0 / n))))
        assert ks < 1.6276 / np.sqrt(n)
