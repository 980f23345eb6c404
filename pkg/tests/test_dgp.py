import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_neighbors, naive_dgp
from upliftbench.data import synthesize_covariates
from upliftbench.dgp import (
    CoefficientSet,
    DGPConfig,
    NeighborIndex,
    apply_measurement_error,
    assign_treatment,
    build_neighbor_index,
    compute_baselines,
    draw_coefficients,
    generate,
    generate_outcomes,
    mask_confounders,
    read_dataset_table,
)


def unit_coeffs(d, lin0=0, quad0=0, lin1=0, quad1=0, cub1=0):
    return CoefficientSet(
        beta_T=np.zeros(d),
        beta0_lin=np.asarray(lin0, dtype=float) * np.ones(d),
        beta0_quad=np.asarray(quad0, dtype=float) * np.ones((d, d)),
        beta1_lin=np.asarray(lin1, dtype=float) * np.ones(d),
        beta1_quad=np.asarray(quad1, dtype=float) * np.ones((d, d)),
        beta1_cubic=np.asarray(cub1, dtype=float) * np.ones((d, d, d)),
    )


def isolated_index(n):
    return NeighborIndex(np.arange(n + 1), np.arange(n))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"radius": 0}, {"omega": -1}, {"m": 1.0}, {"outcome_noise_var": -0.1}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            DGPConfig(**kw)


class TestCoefficients:
    def test_deterministic(self):
        a, b = draw_coefficients(8, 3), draw_coefficients(8, 3)
        assert a.checksums() == b.checksums()

    def test_shapes_and_binary(self):
        c = draw_coefficients(8, 0)
        assert c.beta1_cubic.size == 512
        assert c.beta0_quad.shape == (8, 8)
        for arr in (c.beta0_lin, c.beta0_quad, c.beta1_lin, c.beta1_quad, c.beta1_cubic):
            assert set(np.unique(arr)) <= {0.0, 1.0}

    def test_bernoulli_rates(self):
        cubic = np.mean([draw_coefficients(8, s).beta1_cubic.mean() for s in range(10000)])
        assert abs(cubic - 0.6) <= 0.02

    def test_beta_t_moments(self):
        bt = np.concatenate([draw_coefficients(8, s).beta_T for s in range(2000)])
        assert abs(bt.mean() + 0.2) < 0.005
        assert abs(bt.var() - 0.01) < 0.001


class TestNeighbors:
    def test_identical_rows(self):
        nbr = build_neighbor_index(np.array([[0.5, 0.5], [0.5, 0.5]]), 0.1)
        assert nbr.sizes.tolist() == [2, 2]

    def test_isolated_point(self):
        nbr = build_neighbor_index(np.array([[0.0, 0.0], [1.0, 1.0], [0.05, 0.0]]), 0.1)
        assert nbr.neighbors(1).tolist() == [1]
        assert nbr.neighbors(0).tolist() == [0, 2]

    def test_boundary_distance_included(self):
        nbr = build_neighbor_index(np.array([[0.0], [0.5]]), 0.5)
        assert nbr.sizes.tolist() == [2, 2]

    @pytest.mark.parametrize("n,seed", [(200, 0), (300, 1), (300, 2)])
    def test_matches_brute_force(self, n, seed):
        x = synthesize_covariates(n, 4, 2, seed=seed, levels=3)
        nbr = build_neighbor_index(x, 0.3)
        want = brute_force_neighbors(x.values, 0.3)
        assert [nbr.neighbors(i).tolist() for i in range(n)] == want

    def test_brute_force_random_uniform(self):
        x = np.random.default_rng(9).random((200, 2))
        nbr = build_neighbor_index(x, 0.1)
        assert [nbr.neighbors(i).tolist() for i in range(200)] == brute_force_neighbors(x, 0.1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 60), st.integers(0, 10**6), st.floats(0.01, 1.0))
    def test_symmetry_and_self(self, n, seed, radius):
        x = synthesize_covariates(n, 3, 2, seed=seed)
        nbr = build_neighbor_index(x, radius)
        pairs = {(i, int(j)) for i in range(n) for j in nbr.neighbors(i)}
        assert all((j, i) in pairs for i, j in pairs)
        assert all((i, i) in pairs for i in range(n))


class TestBaselines:
    def test_one_dimensional(self):
        c = unit_coeffs(1, lin0=1, quad0=1)
        _, g0, _ = compute_baselines(np.array([[0.5], [0.0]]), c)
        assert g0[0] == 0.75

    def test_zero_row(self):
        c = draw_coefficients(4, 0)
        z, g0, g1 = compute_baselines(np.zeros((2, 4)), c)
        assert z.tolist() == g0.tolist() == g1.tolist() == [0.0, 0.0]

    def test_ordered_tuples(self):
        c = unit_coeffs(2, quad1=1, cub1=1)
        c = CoefficientSet(c.beta_T, c.beta0_lin, c.beta0_quad, np.array([1.0, 0.0]), c.beta1_quad, c.beta1_cubic)
        _, _, g1 = compute_baselines(np.array([[1.0, 1.0], [0.0, 0.0]]), c)
        assert g1[0] == 13.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            compute_baselines(np.zeros((2, 3)), draw_coefficients(4, 0))


class TestTreatment:
    def test_rct(self):
        zeta = np.random.default_rng(0).normal(size=100)
        _, p = assign_treatment(zeta, isolated_index(100), 0.0, 1)
        assert np.all(p == 0.5)

    def test_isolated_unit(self):
        _, p = assign_treatment(np.array([-0.3]), isolated_index(1), 2.4, 0)
        assert p[0] == pytest.approx(1 / (1 + math.exp(0.144)), abs=1e-15)
        assert p[0] == pytest.approx(0.46406, abs=1e-5)

    def test_treated_fraction_at_scale(self):
        x = synthesize_covariates(64000, 8, 7, seed=0)
        ds = generate(x, DGPConfig(xi=0.0))
        assert np.all(ds.propensity == 0.5)
        assert 0.49 <= ds.t.mean() <= 0.51


class TestOutcomes:
    def test_zero_spillover(self):
        g0, g1 = np.array([1.0, 2.0]), np.array([3.0, 5.0])
        y0, y1, _, tau = generate_outcomes(g0, g1, isolated_index(2), 0.0, 0.0, np.array([0, 1]), 0.1, 0)
        assert np.array_equal(y0, g0) and np.array_equal(y1, g1)
        assert np.array_equal(tau, g1 - g0)

    def test_isolated_spillover(self):
        g = np.array([2.0, -1.5])
        _, y1, _, _ = generate_outcomes(g, g, isolated_index(2), 0.4, 0.8, np.array([1, 0]), 0.1, 0)
        assert np.array_equal(y1, 1.8 * g)

    def test_noiseless_consistency(self):
        g0, g1 = np.array([1.0, 2.0]), np.array([3.0, 5.0])
        y0, y1, y, _ = generate_outcomes(g0, g1, isolated_index(2), 0.4, 0.8, np.array([1, 0]), 0.0, 0)
        assert y[0] == y1[0] and y[1] == y0[1]

    def test_noise_moments(self):
        x = synthesize_covariates(64000, 8, 7, seed=2)
        ds = generate(x, DGPConfig())
        eps = ds.y - np.where(ds.t == 1, ds.y1, ds.y0)
        assert np.array_equal(eps, ds.noise)
        assert abs(eps.mean()) <= 3 * math.sqrt(0.1 / 64000)
        assert abs(eps.var() / 0.1 - 1) <= 0.05

    def test_spillover_monotone_in_theta1(self):
        x = synthesize_covariates(500, 4, 2, seed=5)
        lo = generate(x, DGPConfig(theta1=0.8, coeff_seed=1))
        hi = generate(x, DGPConfig(theta1=1.1, coeff_seed=1))
        pos = lo.gamma1_nbr > 0
        neg = lo.gamma1_nbr < 0
        assert np.all(hi.y1[pos] >= lo.y1[pos])
        assert np.all(hi.y1[neg] <= lo.y1[neg])


class TestObservationNoise:
    def test_omega_zero(self):
        x = synthesize_covariates(20, 4, 2, seed=0)
        assert np.array_equal(apply_measurement_error(x, 0.0, 8, 3), x.values)

    def test_variance(self):
        noisy = apply_measurement_error(np.zeros((125000, 8)), 1.2, 8, 11)
        assert abs(noisy.var() - 0.15) <= 0.003

    def test_deterministic_and_true_untouched(self):
        x = synthesize_covariates(30, 4, 2, seed=0)
        before = x.values.copy()
        a = apply_measurement_error(x, 1.2, 8, 5)
        b = apply_measurement_error(x, 1.2, 8, 5)
        assert np.array_equal(a, b)
        assert np.array_equal(x.values, before)

    @pytest.mark.parametrize("m,d_obs", [(0.1, 8), (0.3, 6), (0.5, 4)])
    def test_masking_counts(self, m, d_obs):
        x = synthesize_covariates(10, 8, 7, seed=0)
        obs, kept = mask_confounders(x, m, 0)
        assert obs.shape[1] == d_obs == len(kept)
        assert np.array_equal(obs, x.values[:, kept])

    def test_masking_m01_keeps_everything(self):
        x = synthesize_covariates(10, 8, 7, seed=0)
        obs, _ = mask_confounders(x, 0.1, 0)
        assert np.array_equal(obs, x.values)


class TestGenerate:
    def test_all_knobs_off(self):
        x = synthesize_covariates(300, 8, 7, seed=0)
        ds = generate(x, DGPConfig(xi=0, theta0=0, theta1=0, omega=0, m=0))
        assert np.array_equal(ds.x_obs, x.values)
        assert np.array_equal(ds.tau, ds.y1 - ds.y0)
        assert np.array_equal(ds.y0, ds.gamma0) and np.array_equal(ds.y1, ds.gamma1)
        assert np.all(ds.propensity == 0.5)

    def test_setting_a_knob_record(self):
        x = synthesize_covariates(100, 8, 7, seed=0)
        ds = generate(x, DGPConfig(xi=0.8))
        assert (ds.config.xi, ds.config.theta0, ds.config.theta1, ds.config.omega, ds.config.m) == (0.8, 0.4, 0.8, 1.2, 0.1)
        assert np.all((ds.propensity > 0) & (ds.propensity < 1))

    def test_deterministic(self):
        x = synthesize_covariates(300, 8, 7, seed=0)
        a, b = generate(x, DGPConfig(xi=1.6, m=0.3)), generate(x, DGPConfig(xi=1.6, m=0.3))
        for f in ("x_obs", "t", "y", "y0", "y1", "tau", "propensity"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    @pytest.mark.parametrize("cfg", [
        DGPConfig(xi=2.4, coeff_seed=1, treat_seed=2, noise_seed=3),
        DGPConfig(xi=0.8, theta0=0.6, theta1=1.1, omega=3.6, m=0.5, radius=0.3, coeff_seed=7),
    ])
    def test_matches_naive_reference_bitwise(self, cfg):
        x = synthesize_covariates(250, 8, 7, seed=4)
        ds = generate(x, cfg)
        ref = naive_dgp(x.values, cfg.xi, cfg.theta0, cfg.theta1, cfg.omega, cfg.m, cfg.radius,
                        cfg.outcome_noise_var, cfg.coeff_seed, cfg.treat_seed, cfg.noise_seed)
        assert [ds.neighbors.neighbors(i).tolist() for i in range(ds.n)] == ref["neighbors"]
        for name in ("zeta", "gamma0", "gamma1", "sigma", "propensity", "t", "y0", "y1", "y", "tau"):
            assert getattr(ds, name).tolist() == ref[name], name
        assert np.array_equal(ds.x_obs, ref["x_obs"])

    def test_save_roundtrip(self, tmp_path):
        x = synthesize_covariates(40, 8, 7, seed=0)
        ds = generate(x, DGPConfig(xi=0.8, m=0.3))
        path = tmp_path / "ds.csv"
        meta_path = ds.save(path)
        header = path.read_text().splitlines()[0].split(",")
        assert header[0] == "id" and header[-6:] == ["t", "propensity", "y", "y0", "y1", "tau"]
        table = read_dataset_table(path)
        assert np.array_equal(table["x_obs"], ds.x_obs)
        assert np.array_equal(table["tau"], ds.tau)
        assert np.array_equal(table["t"], ds.t)
        meta = json.loads(meta_path.read_text())
        assert meta["config"]["xi"] == 0.8 and meta["d_obs"] == 6
        assert meta["coefficient_sha256"] == ds.coefficients.checksums()
