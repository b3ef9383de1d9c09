import hashlib

import numpy as np
import pytest

from csgmm import (
    CsgmmModel,
    Dataset,
    TrainConfig,
    build_dictionary,
    component_observation_covariance,
    e_step,
    grid_circulant,
    grid_custom,
    grid_equidistant_sin,
    grid_toeplitz,
    implied_channel_covariance,
    load_model,
    log_likelihood,
    m_step,
    train,
)

from _oracles import dense_log_likelihood, scalar_em_recursion


def identity_dictionary(n):
    class _Identity:
        matrix = np.eye(n, dtype=complex)
        grid = grid_custom(np.linspace(-0.9, 0.9, n))

    return _Identity()


def make_dataset(rng, n_samples, n_antennas, noise_variance=0.1):
    obs = (
        rng.standard_normal((n_samples, n_antennas))
        + 1j * rng.standard_normal((n_samples, n_antennas))
    ) / np.sqrt(2)
    return Dataset(observations=obs, noise_variance=noise_variance, seed=0)


def draw_from_mixture(rng, gammas, weights, D, noise_variance, n_samples):
    K, S = gammas.shape
    labels = rng.choice(K, size=n_samples, p=weights)
    coeff = (
        rng.standard_normal((n_samples, S)) + 1j * rng.standard_normal((n_samples, S))
    ) * np.sqrt(gammas[labels] / 2)
    noise = (
        rng.standard_normal((n_samples, D.shape[0]))
        + 1j * rng.standard_normal((n_samples, D.shape[0]))
    ) * np.sqrt(noise_variance / 2)
    return coeff @ D.T + noise, labels


class TestObservationCovariance:
    def test_floored_gammas_identity(self):
        n = 4
        model = CsgmmModel(
            gammas=np.full((1, n), 1e-9),
            weights=np.ones(1),
            noise_variance=0.2,
            grid=grid_custom(np.linspace(-0.5, 0.5, n)),
        )
        cov = component_observation_covariance(model, 0, None, identity_dictionary(n), 0.2)
        np.testing.assert_allclose(cov, (0.2 + 1e-9) * np.eye(n), atol=1e-15)

    def test_dft_columns_give_scaled_identity(self):
        n = 8
        grid = grid_circulant(n)
        D = build_dictionary(grid, n)
        model = CsgmmModel(
            gammas=np.ones((1, n)), weights=np.ones(1), noise_variance=0.1, grid=grid
        )
        cov = component_observation_covariance(model, 0, None, D, 0.1)
        # direct multiply oracle
        ref = D.matrix @ np.diag(np.ones(n)) @ D.matrix.conj().T + 0.1 * np.eye(n)
        np.testing.assert_allclose(cov, ref, atol=1e-12)
        np.testing.assert_allclose(cov, (n + 0.1) * np.eye(n), atol=1e-10)

    def test_hermitian_exact(self, rng):
        grid = grid_equidistant_sin(12)
        D = build_dictionary(grid, 6)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (2, 12)),
            weights=np.array([0.3, 0.7]),
            noise_variance=0.1,
            grid=grid,
        )
        cov = component_observation_covariance(model, 1, None, D, 0.1)
        assert np.array_equal(cov, cov.conj().T)

    def test_dimension_mismatch_rejected(self, rng):
        grid = grid_equidistant_sin(12)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (1, 12)),
            weights=np.ones(1),
            noise_variance=0.1,
            grid=grid,
        )
        wrong = build_dictionary(grid_equidistant_sin(10), 6)
        with pytest.raises(ValueError):
            component_observation_covariance(model, 0, None, wrong, 0.1)


class TestEStep:
    def test_single_component_responsibilities(self, rng):
        n = 4
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (1, n)),
            weights=np.ones(1),
            noise_variance=0.1,
            grid=grid_custom(np.linspace(-0.5, 0.5, n)),
        )
        ds = make_dataset(rng, 20, n)
        resp, _, _ = e_step(model, ds, None, identity_dictionary(n))
        assert np.array_equal(resp, np.ones((20, 1)))

    def test_scalar_wiener_filter_means(self, rng):
        n, g, sigma2 = 5, 0.7, 0.2
        model = CsgmmModel(
            gammas=np.full((1, n), g),
            weights=np.ones(1),
            noise_variance=sigma2,
            grid=grid_custom(np.linspace(-0.5, 0.5, n)),
        )
        ds = make_dataset(rng, 10, n, sigma2)
        resp, means, covs = e_step(model, ds, None, identity_dictionary(n))
        np.testing.assert_allclose(
            means[:, 0, :], g / (g + sigma2) * ds.observations, atol=1e-12
        )
        np.testing.assert_allclose(
            np.diag(covs[0]).real, g * sigma2 / (g + sigma2), atol=1e-12
        )

    def test_rows_sum_to_one(self, rng):
        grid = grid_equidistant_sin(16)
        D = build_dictionary(grid, 8)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (3, 16)),
            weights=np.array([0.5, 0.3, 0.2]),
            noise_variance=0.1,
            grid=grid,
        )
        ds = make_dataset(rng, 50, 8)
        resp, _, _ = e_step(model, ds, None, D)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)

    def test_separated_components_identified(self, rng):
        # two well-separated one-hot components; sample from component 0 at 20 dB
        n = 16
        grid = grid_equidistant_sin(32)
        D = build_dictionary(grid, n)
        gammas = np.full((2, 32), 1e-8)
        gammas[0, 4] = 1.0
        gammas[1, 27] = 1.0
        model = CsgmmModel(
            gammas=gammas,
            weights=np.array([0.5, 0.5]),
            noise_variance=0.01,
            grid=grid,
        )
        s = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
        y = s * D.matrix[:, 4] + 0.1 * (
            rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ) / np.sqrt(2)
        ds = Dataset(observations=y[None, :], noise_variance=0.01, seed=0)
        resp, _, _ = e_step(model, ds, None, D)
        assert resp[0, 0] > 0.99

    def test_finite_for_extreme_inputs(self, rng):
        grid = grid_equidistant_sin(8)
        D = build_dictionary(grid, 4)
        model = CsgmmModel(
            gammas=np.full((2, 8), 1e-12),
            weights=np.array([0.5, 0.5]),
            noise_variance=1e-6,
            grid=grid,
        )
        ds = make_dataset(rng, 10, 4, 1e-6)
        resp, means, covs = e_step(model, ds, None, D)
        assert np.all(np.isfinite(resp))
        assert np.all(np.isfinite(means))
        assert np.all(np.isfinite(covs))


class TestMStep:
    def test_zero_covariance_equal_means(self):
        mu = np.array([0.3 + 0.4j, -1.0 + 0.0j, 0.0 + 2.0j])
        means = np.tile(mu, (6, 1, 1))  # (n, K=1, S=3)
        resp = np.ones((6, 1))
        covs = np.zeros((1, 3, 3), dtype=complex)
        gammas, weights = m_step(resp, means, covs)
        np.testing.assert_allclose(gammas[0], np.abs(mu) ** 2, atol=1e-14)
        np.testing.assert_allclose(weights, [1.0])

    def test_symmetric_components_get_identical_updates(self, rng):
        means = rng.standard_normal((10, 1, 4)) + 1j * rng.standard_normal((10, 1, 4))
        means = np.repeat(means, 2, axis=1)
        covs = np.repeat(np.eye(4, dtype=complex)[None] * 0.1, 2, axis=0)
        resp = np.full((10, 2), 0.5)
        gammas, weights = m_step(resp, means, covs)
        np.testing.assert_allclose(gammas[0], gammas[1], atol=1e-14)
        np.testing.assert_allclose(weights, [0.5, 0.5], atol=1e-14)

    def test_starved_component_keeps_previous(self, rng):
        means = rng.standard_normal((4, 2, 3)) + 0j
        covs = np.zeros((2, 3, 3), dtype=complex)
        resp = np.zeros((4, 2))
        resp[:, 0] = 1.0
        prev = np.array([[9.0, 9.0, 9.0], [5.0, 6.0, 7.0]])
        gammas, _ = m_step(resp, means, covs, prev_gammas=prev)
        np.testing.assert_array_equal(gammas[1], prev[1])


class TestLogLikelihood:
    def test_floored_single_component_closed_form(self, rng):
        n, sigma2, eps = 4, 0.3, 1e-9
        model = CsgmmModel(
            gammas=np.full((1, n), eps),
            weights=np.ones(1),
            noise_variance=sigma2,
            grid=grid_custom(np.linspace(-0.5, 0.5, n)),
        )
        ds = make_dataset(rng, 25, n, sigma2)
        ll = log_likelihood(model, ds, None, identity_dictionary(n))
        var = sigma2 + eps
        expected = float(
            np.sum(-n * np.log(np.pi) - n * np.log(var)
                   - np.sum(np.abs(ds.observations) ** 2, axis=1) / var)
        )
        assert abs(ll - expected) < 1e-10 * abs(expected)

    def test_component_permutation_invariance(self, rng):
        grid = grid_equidistant_sin(12)
        D = build_dictionary(grid, 6)
        gammas = rng.lognormal(0, 1, (3, 12))
        weights = np.array([0.2, 0.5, 0.3])
        ds = make_dataset(rng, 30, 6)
        perm = [2, 0, 1]
        a = log_likelihood(
            CsgmmModel(gammas=gammas, weights=weights, noise_variance=0.1, grid=grid),
            ds, None, D,
        )
        b = log_likelihood(
            CsgmmModel(gammas=gammas[perm], weights=weights[perm],
                       noise_variance=0.1, grid=grid),
            ds, None, D,
        )
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_small_instance_dense_oracle(self, rng):
        grid = grid_custom([-0.6, -0.1, 0.4])
        D = build_dictionary(grid, 2)
        gammas = rng.lognormal(0, 1, (2, 3))
        weights = np.array([0.4, 0.6])
        ds = make_dataset(rng, 3, 2, 0.2)
        model = CsgmmModel(gammas=gammas, weights=weights, noise_variance=0.2, grid=grid)
        ll = log_likelihood(model, ds, None, D)
        oracle = dense_log_likelihood(ds.observations, gammas, weights, D.matrix, 0.2)
        assert abs(ll - oracle) < 1e-10 * abs(oracle)


class TestTrain:
    def test_one_step_matches_scalar_oracle(self, rng):
        n, sigma2 = 6, 0.3
        power = rng.lognormal(0, 1, n)
        Y = (
            rng.standard_normal((300, n)) + 1j * rng.standard_normal((300, n))
        ) * np.sqrt((power + sigma2) / 2)
        ds = Dataset(observations=Y, noise_variance=sigma2, seed=0)
        init = np.ones((1, n))
        n_iter = 20
        model = train(
            ds,
            identity_dictionary(n),
            TrainConfig(
                n_components=1, max_iter=n_iter, rel_tol=1e-300,
                init="given", init_gammas=init, gamma_floor=1e-300,
            ),
        )
        oracle_g, oracle_ll = scalar_em_recursion(Y, init[0], sigma2, n_iter)
        np.testing.assert_allclose(model.gammas[0], oracle_g, rtol=1e-10)
        np.testing.assert_allclose(model.ll_history[:n_iter], oracle_ll, rtol=1e-12)
        assert model.monotone

    def test_sparse_support_recovery(self, rng):
        n, S = 16, 32
        grid = grid_equidistant_sin(S)
        D = build_dictionary(grid, n)
        true_g = np.full(S, 1e-6)
        true_g[[5, 14, 27]] = [2.0, 1.5, 1.0]
        sigma2 = 0.01
        Y, _ = draw_from_mixture(rng, true_g[None], np.ones(1), D.matrix, sigma2, 5000)
        ds = Dataset(observations=Y, noise_variance=sigma2, seed=0)
        model = train(ds, D, TrainConfig(n_components=1, max_iter=200, seed=0))
        top = np.sort(np.argsort(-model.gammas[0])[:3])
        np.testing.assert_array_equal(top, [5, 14, 27])
        assert model.monotone

    def test_two_component_weights_recovered(self, rng):
        n, S = 16, 32
        grid = grid_equidistant_sin(S)
        D = build_dictionary(grid, n)
        gammas = np.full((2, S), 1e-6)
        gammas[0, 6] = 2.0
        gammas[1, 26] = 2.0
        true_w = np.array([0.35, 0.65])
        sigma2 = 0.01
        Y, _ = draw_from_mixture(rng, gammas, true_w, D.matrix, sigma2, 4000)
        ds = Dataset(observations=Y, noise_variance=sigma2, seed=0)
        model = train(ds, D, TrainConfig(n_components=2, max_iter=150, seed=0))
        learned = np.sort(model.weights)
        np.testing.assert_allclose(learned, np.sort(true_w), atol=0.05)
        assert model.monotone

    def test_zero_iterations_returns_initialization(self, rng):
        n = 8
        grid = grid_equidistant_sin(16)
        D = build_dictionary(grid, n)
        ds = make_dataset(rng, 100, n)
        init = np.abs(rng.standard_normal((2, 16))) + 0.5
        model = train(
            ds, D,
            TrainConfig(n_components=2, max_iter=0, init="given",
                        init_gammas=init, gamma_floor=1e-12, seed=0),
        )
        np.testing.assert_array_equal(model.gammas, init)
        np.testing.assert_allclose(model.weights, [0.5, 0.5])
        assert model.n_iter == 0

    def test_rejects_empty_dataset(self):
        ds = Dataset(observations=np.zeros((0, 4), dtype=complex),
                     noise_variance=0.1, seed=0)
        with pytest.raises(ValueError):
            train(ds, identity_dictionary(4), TrainConfig(n_components=1))

    def test_rejects_unknown_noise_variance(self, rng):
        ds = make_dataset(rng, 10, 4, noise_variance=0.0)
        with pytest.raises(ValueError):
            train(ds, identity_dictionary(4), TrainConfig(n_components=1))

    def test_deterministic_under_seed(self, rng):
        grid = grid_equidistant_sin(16)
        D = build_dictionary(grid, 8)
        ds = make_dataset(rng, 200, 8)
        a = train(ds, D, TrainConfig(n_components=3, max_iter=20, seed=11))
        b = train(ds, D, TrainConfig(n_components=3, max_iter=20, seed=11))
        assert np.array_equal(a.gammas, b.gammas)
        assert np.array_equal(a.weights, b.weights)

    def test_chunk_size_reassociation_within_tolerance(self, rng):
        grid = grid_equidistant_sin(16)
        D = build_dictionary(grid, 8)
        ds = make_dataset(rng, 500, 8)
        a = train(ds, D, TrainConfig(n_components=2, max_iter=15, seed=0, chunk_size=97))
        b = train(ds, D, TrainConfig(n_components=2, max_iter=15, seed=0, chunk_size=10**6))
        np.testing.assert_allclose(a.gammas, b.gammas, atol=1e-9)

    def test_responsibility_weight_scaling_invariance(self, rng):
        # scaling all prior weights by a common constant before normalization
        # leaves responsibilities unchanged
        from csgmm.mixture import _component_log_densities, _effective_dictionary
        from scipy.special import logsumexp as lse

        grid = grid_equidistant_sin(12)
        D = build_dictionary(grid, 6)
        gammas = rng.lognormal(0, 1, (3, 12))
        weights = np.array([0.2, 0.5, 0.3])
        Y = make_dataset(rng, 40, 6).observations
        logp, _ = _component_log_densities(Y, _effective_dictionary(None, D), gammas, 0.1)

        def resp_for(w):
            lw = logp + np.log(w)[None, :]
            return np.exp(lw - lse(lw, axis=1, keepdims=True))

        np.testing.assert_allclose(
            resp_for(weights), resp_for(weights * 17.0), atol=1e-12
        )


class TestImpliedChannelCovariance:
    def test_circulant_grid_gives_circulant(self, rng):
        n = 8
        grid = grid_circulant(n)
        D = build_dictionary(grid, n)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (1, n)), weights=np.ones(1),
            noise_variance=0.1, grid=grid,
        )
        cov = implied_channel_covariance(model, 0, D)
        for i in range(1, n):
            np.testing.assert_allclose(cov[i], np.roll(cov[0], i), atol=1e-10)

    def test_toeplitz_grid_gives_toeplitz(self, rng):
        n = 8
        grid = grid_toeplitz(n)
        D = build_dictionary(grid, n)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (1, 2 * n)), weights=np.ones(1),
            noise_variance=0.1, grid=grid,
        )
        cov = implied_channel_covariance(model, 0, D)
        for off in range(n):
            diag = np.diagonal(cov, off)
            np.testing.assert_allclose(diag, diag[0], atol=1e-10)

    def test_one_hot_gamma_rank_one(self):
        grid = grid_equidistant_sin(8)
        D = build_dictionary(grid, 4)
        gammas = np.full((1, 8), 1e-15)
        gammas[0, 0] = 1.0
        model = CsgmmModel(
            gammas=gammas, weights=np.ones(1), noise_variance=0.1, grid=grid
        )
        cov = implied_channel_covariance(model, 0, D)
        a = D.matrix[:, 0]
        np.testing.assert_allclose(cov, np.outer(a, a.conj()), atol=1e-12)

    def test_matches_structured_mixture_density(self, rng):
        # trained model on the DFT grid: implied channel mixture == the
        # DFT-parameterized structured mixture, checked by density equality
        n = 8
        grid = grid_circulant(n)
        D = build_dictionary(grid, n)
        ds = make_dataset(rng, 300, n)
        model = train(ds, D, TrainConfig(n_components=2, max_iter=30, seed=0))
        m, c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        Q = np.exp(-2j * np.pi * m * c / n)

        def mixture_logpdf(h, covs):
            from scipy.special import logsumexp as lse

            terms = []
            for k, cov in enumerate(covs):
                cov_inv = np.linalg.inv(cov)
                _, logdet = np.linalg.slogdet(cov)
                terms.append(
                    np.log(model.weights[k]) - n * np.log(np.pi) - logdet
                    - np.real(h.conj() @ cov_inv @ h)
                )
            return lse(np.array(terms))

        implied = [implied_channel_covariance(model, k, D) for k in range(2)]
        structured = [(Q * model.gammas[k]) @ Q.conj().T for k in range(2)]
        for _ in range(5):
            h = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * 2
            a, b = mixture_logpdf(h, implied), mixture_logpdf(h, structured)
            assert abs(a - b) < 1e-8


class TestModelFormat:
    def test_roundtrip(self, tmp_path, rng):
        grid = grid_toeplitz(4)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (3, 8)),
            weights=np.array([0.2, 0.3, 0.5]),
            noise_variance=0.05,
            grid=grid,
            seed=123,
            n_iter=44,
        )
        path = tmp_path / "model.csgm1"
        model.save(path)
        back = load_model(path)
        np.testing.assert_array_equal(back.gammas, model.gammas)
        np.testing.assert_allclose(back.weights, model.weights, atol=1e-15)
        np.testing.assert_array_equal(back.grid.sines, grid.sines)
        assert back.grid.kind == "toeplitz"
        assert back.noise_variance == 0.05
        assert back.seed == 123 and back.n_iter == 44

    def test_deterministic_bytes(self, tmp_path, rng):
        grid = grid_equidistant_sin(8)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (2, 8)), weights=np.array([0.5, 0.5]),
            noise_variance=0.1, grid=grid,
        )
        model.save(tmp_path / "a.csgm1")
        model.save(tmp_path / "b.csgm1")
        ha = hashlib.sha256((tmp_path / "a.csgm1").read_bytes()).hexdigest()
        hb = hashlib.sha256((tmp_path / "b.csgm1").read_bytes()).hexdigest()
        assert ha == hb

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.csgm1"
        path.write_bytes(b"WRONG" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_model(path)

    def test_json_export(self, tmp_path, rng):
        import json

        grid = grid_equidistant_sin(8)
        model = CsgmmModel(
            gammas=rng.lognormal(0, 1, (2, 8)), weights=np.array([0.5, 0.5]),
            noise_variance=0.1, grid=grid, n_iter=7,
        )
        model.save(tmp_path / "m.csgm1")
        doc = json.loads((tmp_path / "m.csgm1.json").read_text())
        assert doc["n_components"] == 2 and doc["grid_size"] == 8
        assert doc["n_iter"] == 7 and doc["grid_kind"] == "equidistant_sin"
