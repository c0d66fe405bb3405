import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fbsde_bml as fb
from fbsde_bml import autodiff as ad
from fbsde_bml.errors import DivergenceError
from conftest import tiny_net


def frozen_problem(b_scale=0.0):
    """Degenerate dynamics for rollout edge cases: sigma = 0, f = 0."""

    def b(t, x, y, z):
        return x * b_scale

    def zeros_sigma(t, x, y, z):
        return ad.as_tensor(np.zeros((x.shape[0], 1, 1)))

    def zeros_f(t, x, y, z):
        return ad.as_tensor(np.zeros((x.shape[0], 1)))

    return fb.FBSDEProblem(
        name="frozen",
        n=1,
        m=1,
        d=1,
        x0=np.array([1.0]),
        T=1.0,
        b=b,
        sigma=zeros_sigma,
        f=zeros_f,
        g=lambda x: ad.as_tensor(x),
    )


class TestRollout:
    def test_degenerate_dynamics_freeze_the_state(self):
        problem = frozen_problem()
        grid = fb.make_grid(1.0, 8)
        bm = fb.sample_brownian(grid, 16, 1, seed=1)
        with fb.no_grad():
            batch = fb.rollout(problem, tiny_net(problem), bm, grid)
        assert np.all(batch.x_tilde == 1.0)

    def test_fixture_state_is_shifted_brownian_path(self):
        problem = fb.builtin_problem("linear_fixture")
        grid = fb.make_grid(1.0, 20)
        bm = fb.sample_brownian(grid, 32, 1, seed=3)
        with fb.no_grad():
            batch = fb.rollout(problem, tiny_net(problem), bm, grid)
        # additive unit diffusion makes the Euler recursion exact, bit for bit
        np.testing.assert_array_equal(batch.x_tilde, bm.values)

    def test_initial_state_and_trial_values(self):
        problem = fb.builtin_problem("fusincos")
        params = tiny_net(problem)
        grid = fb.make_grid(1.0, 5)
        bm = fb.sample_brownian(grid, 8, 1, seed=4)
        with fb.no_grad():
            batch = fb.rollout(problem, params, bm, grid)
        np.testing.assert_array_equal(batch.x_tilde[:, 0, :], np.ones((8, 1)))
        for i in (0, 2, 5):
            t = float(grid.nodes[i])
            x = batch.x_tilde[:, i, :]
            with fb.no_grad():
                np.testing.assert_array_equal(
                    batch.y_tilde[:, i, :], fb.forward_v(params, t, x).value
                )
                np.testing.assert_array_equal(
                    batch.z_tilde[:, i, :, :], fb.forward_u(params, t, x).value
                )

    def test_shapes(self):
        problem = fb.builtin_problem("lq5")
        grid = fb.make_grid(problem.T, 6)
        bm = fb.sample_brownian(grid, 7, 1, seed=0)
        with fb.no_grad():
            batch = fb.rollout(problem, tiny_net(problem), bm, grid)
        assert batch.x_tilde.shape == (7, 7, 5)
        assert batch.y_tilde.shape == (7, 7, 5)
        assert batch.z_tilde.shape == (7, 7, 5, 1)
        assert batch.f_vals.shape == (7, 6, 5)
        assert batch.g_vals.shape == (7, 5)

    def test_divergence_names_the_step(self):
        problem = frozen_problem(b_scale=1e160)
        grid = fb.make_grid(1.0, 4)
        bm = fb.sample_brownian(grid, 4, 1, seed=0)
        with pytest.raises(DivergenceError, match="step 2") as err:
            with fb.no_grad():
                fb.rollout(problem, tiny_net(problem), bm, grid)
        assert err.value.step == 2

    def test_mismatched_grid_and_network_rejected(self):
        problem = fb.builtin_problem("fusincos")
        grid = fb.make_grid(1.0, 4)
        bm = fb.sample_brownian(fb.make_grid(1.0, 5), 4, 1, seed=0)
        with pytest.raises(ValueError):
            fb.rollout(problem, tiny_net(problem), bm, grid)
        other = fb.builtin_problem("lq5")
        bm_ok = fb.sample_brownian(grid, 4, 1, seed=0)
        with pytest.raises(ValueError):
            fb.rollout(problem, tiny_net(other), bm_ok, grid)


class TestMeasureWeights:
    @given(
        st.sampled_from(["delta", "lebesgue", "exp_decay"]),
        st.integers(min_value=1, max_value=200),
        st.floats(min_value=1e-6, max_value=60.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_weights_are_a_probability_vector(self, kind, N, gamma):
        w = fb.measure_weights(fb.LossSpec(kind, gamma=gamma), N)
        assert w.shape == (N,)
        assert np.all(w >= 0.0)
        assert np.sum(w) == pytest.approx(1.0, abs=1e-12)

    def test_point_mass_and_uniform(self):
        w = fb.measure_weights(fb.LossSpec("delta"), 5)
        np.testing.assert_array_equal(w, [1, 0, 0, 0, 0])
        w = fb.measure_weights(fb.LossSpec("lebesgue"), 4)
        np.testing.assert_allclose(w, 0.25)

    def test_decay_is_monotone(self):
        w = fb.measure_weights(fb.LossSpec("exp_decay", gamma=0.05), 50)
        assert np.all(np.diff(w) < 0)
        np.testing.assert_allclose(w[1] / w[0], np.exp(-0.05))

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            fb.LossSpec("other")
        with pytest.raises(ValueError):
            fb.LossSpec("exp_decay", gamma=0.0)


def numpy_loss(batch, weights, dt):
    """Independent per-path recomputation of the loss from batch arrays."""
    y = batch.y_tilde
    z = batch.z_tilde
    f = batch.f_vals
    g = batch.g_vals
    dw = batch.increments
    M, n_nodes = y.shape[0], y.shape[1]
    N = n_nodes - 1
    z_dw = np.einsum("rimd,rid->rim", z[:, :N], dw)
    per_path = np.zeros(M)
    for j in range(N):
        resid = y[:, j] - g - dt * f[:, j:].sum(axis=1) + z_dw[:, j:].sum(axis=1)
        per_path += weights[j] * (resid**2).sum(axis=1)
    return per_path


class TestLossEstimators:
    def test_exact_solution_zeroes_every_residual_on_the_fixture(self):
        problem = fb.builtin_problem("linear_fixture")
        grid = fb.make_grid(1.0, 50)
        bm = fb.sample_brownian(grid, 1000, 1, seed=9)
        with fb.no_grad():
            batch = fb.rollout(problem, fb.AnalyticTrial(problem), bm, grid)
            for kind in ("delta", "lebesgue", "exp_decay"):
                val = fb.bml(batch, problem, fb.LossSpec(kind)).item()
                assert 0.0 <= val <= 1e-20

    def test_matches_independent_per_path_computation(self):
        problem = fb.builtin_problem("fusincos")
        grid = fb.make_grid(1.0, 12)
        bm = fb.sample_brownian(grid, 64, 1, seed=2)
        with fb.no_grad():
            batch = fb.rollout(problem, tiny_net(problem, seed=21), bm, grid)
            for kind in ("delta", "lebesgue", "exp_decay"):
                spec = fb.LossSpec(kind)
                expected = numpy_loss(
                    batch, fb.measure_weights(spec, grid.N), grid.spacing
                ).mean()
                assert fb.bml(batch, problem, spec).item() == pytest.approx(
                    expected, rel=1e-12
                )

    def test_non_negative(self):
        problem = fb.builtin_problem("lq5")
        grid = fb.make_grid(problem.T, 10)
        bm = fb.sample_brownian(grid, 32, 1, seed=5)
        with fb.no_grad():
            batch = fb.rollout(problem, tiny_net(problem, seed=1), bm, grid)
            for kind in ("delta", "lebesgue", "exp_decay"):
                assert fb.bml(batch, problem, fb.LossSpec(kind)).item() >= 0.0

    def test_decay_measure_interpolates_the_other_two(self):
        problem = fb.builtin_problem("fusincos")
        grid = fb.make_grid(1.0, 25)
        bm = fb.sample_brownian(grid, 256, 1, seed=6)
        with fb.no_grad():
            batch = fb.rollout(problem, tiny_net(problem, seed=2), bm, grid)
            delta = fb.bml(batch, problem, fb.LossSpec("delta")).item()
            lebesgue = fb.bml(batch, problem, fb.LossSpec("lebesgue")).item()
            sharp = fb.bml(batch, problem, fb.LossSpec("exp_decay", gamma=50.0)).item()
            flat = fb.bml(batch, problem, fb.LossSpec("exp_decay", gamma=1e-6)).item()
        assert abs(sharp - delta) / delta <= 1e-10
        assert abs(flat - lebesgue) / lebesgue <= 1e-4

    def test_mismatched_problem_rejected(self):
        problem = fb.builtin_problem("fusincos")
        grid = fb.make_grid(1.0, 6)
        bm = fb.sample_brownian(grid, 8, 1, seed=0)
        with fb.no_grad():
            batch = fb.rollout(problem, tiny_net(problem), bm, grid)
        with pytest.raises(ValueError):
            fb.bml(batch, fb.builtin_problem("lq5"), fb.LossSpec("delta"))

    def test_gradient_reaches_both_networks(self):
        problem = fb.builtin_problem("fusincos")
        params = tiny_net(problem, seed=12)
        grid = fb.make_grid(1.0, 6)
        bm = fb.sample_brownian(grid, 16, 1, seed=13)
        batch = fb.rollout(problem, params, bm, grid)
        loss = fb.bml(batch, problem, fb.LossSpec("lebesgue"))
        grads = fb.grad(loss, params)
        n_v = 2 * len(params.v_layers)
        assert any(np.any(g != 0.0) for g in grads[:n_v])
        assert any(np.any(g != 0.0) for g in grads[n_v:])

    def test_analytic_trial_loss_shrinks_with_finer_grids(self):
        problem = fb.builtin_problem("fusincos")
        trial = fb.AnalyticTrial(problem)
        losses = []
        for N in (10, 40):
            grid = fb.make_grid(1.0, N)
            bm = fb.sample_brownian(grid, 20000, 1, seed=8)
            with fb.no_grad():
                batch = fb.rollout(problem, trial, bm, grid)
                losses.append(fb.bml(batch, problem, fb.LossSpec("lebesgue")).item())
        assert losses[1] < 0.5 * losses[0]


class TestDistMu:
    def make_sampling(self, rng, M=40, N=8, m=2, d=3):
        y = rng.normal(size=(M, N + 1, m))
        z = rng.normal(size=(M, N + 1, m, d))
        return y, z

    def test_identity_gives_zero(self, rng):
        y, z = self.make_sampling(rng)
        grid = fb.make_grid(1.0, 8)
        for kind in ("delta", "lebesgue", "exp_decay"):
            assert fb.dist_mu((y, z), (y, z), grid, fb.LossSpec(kind)) == 0.0

    def test_constant_offset_under_point_mass(self, rng):
        y, z = self.make_sampling(rng)
        grid = fb.make_grid(1.0, 8)
        offset = np.array([0.3, -0.4])
        val = fb.dist_mu((y + offset, z), (y, z), grid, fb.LossSpec("delta"))
        assert val == pytest.approx(float((offset**2).sum()), rel=1e-12)

    def test_z_only_offset_scales_with_remaining_time(self, rng):
        y, z = self.make_sampling(rng, m=1, d=1)
        grid = fb.make_grid(1.0, 8)
        val = fb.dist_mu((y, z + 2.0), (y, z), grid, fb.LossSpec("delta"))
        # 4 per interval, 8 intervals of length 1/8 remaining after t=0
        assert val == pytest.approx(4.0, rel=1e-12)

    def test_shape_mismatch(self, rng):
        y, z = self.make_sampling(rng)
        grid = fb.make_grid(1.0, 8)
        with pytest.raises(ValueError):
            fb.dist_mu((y, z), (y[:, :, :1], z), grid, fb.LossSpec("delta"))
        with pytest.raises(ValueError):
            fb.dist_mu((y[:, :5], z[:, :5]), (y[:, :5], z[:, :5]), grid, fb.LossSpec("delta"))


class TestEquivalenceOnFixture:
    def test_loss_equals_distance_within_monte_carlo_error(self):
        problem = fb.builtin_problem("linear_fixture")
        grid = fb.make_grid(1.0, 50)
        M = 20000
        bm = fb.sample_brownian(grid, M, 1, seed=31)
        params = tiny_net(problem, seed=32)
        with fb.no_grad():
            batch = fb.rollout(problem, params, bm, grid)
        ref_y = bm.values.copy()  # Y_t = W_t on the fixture
        ref_z = np.ones((M, grid.N + 1, 1, 1))
        dt = grid.spacing
        for kind in ("delta", "lebesgue", "exp_decay"):
            spec = fb.LossSpec(kind)
            with fb.no_grad():
                loss = fb.bml(batch, problem, spec).item()
            dist = fb.dist_mu(
                (batch.y_tilde, batch.z_tilde), (ref_y, ref_z), grid, spec
            )
            w = fb.measure_weights(spec, grid.N)
            per_path_loss = numpy_loss(batch, w, dt)
            dz2 = ((batch.z_tilde - ref_z) ** 2)[:, : grid.N, 0, 0]
            suffix = np.cumsum(dz2[:, ::-1], axis=1)[:, ::-1]
            dy2 = ((batch.y_tilde - ref_y) ** 2)[:, : grid.N, 0]
            per_path_dist = (w * (dy2 + dt * suffix)).sum(axis=1)
            se = np.std(per_path_loss - per_path_dist, ddof=1) / np.sqrt(M)
            assert abs(loss - dist) <= 3.0 * se
