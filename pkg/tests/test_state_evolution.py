import math

import numpy as np
import pytest

from oamp_lab.block_matrix import BlockMatrix
from oamp_lab.spectrum import (
    RECTANGULAR,
    SYMMETRIC,
    CumulantModel,
    free_cumulants_from_moments,
    kappa_series_tables_direct,
)
from oamp_lab.state_evolution import (
    MaskViolationError,
    MomentLedger,
    SEState,
    check_early_stop,
    decompose_delta,
    se_matrix_csv_rows,
    se_mu_block,
    se_omega_rect_checked,
    se_sigma_omega_rect,
    se_sigma_rect,
    se_sigma_sym,
    se_sigma_sym_independent,
    se_sigma_omega_rect_independent,
    write_se_csv,
)


def symmetric_table(rng, nb, k):
    a = rng.standard_normal((nb * k, nb * k))
    return BlockMatrix(a @ a.T / (nb * k), k)


def strictly_lower(rng, nb, k, scale=0.4):
    out = np.zeros((nb * k, nb * k))
    for r in range(nb):
        for c in range(r):
            out[r * k:(r + 1) * k, c * k:(c + 1) * k] = scale * rng.standard_normal((k, k))
    return BlockMatrix(out, k)


def lower(rng, nb, k, scale=0.4):
    out = strictly_lower(rng, nb, k, scale).data.copy()
    for r in range(nb):
        out[r * k:(r + 1) * k, r * k:(r + 1) * k] = scale * rng.standard_normal((k, k))
    return BlockMatrix(out, k)


def uniform_model(order=14):
    m = [3 ** (j / 2) / (j + 1) if j % 2 == 0 else 0.0 for j in range(1, order + 1)]
    return CumulantModel(
        free_cumulants_from_moments(m),
        kind=SYMMETRIC,
        support_max=math.sqrt(3),
        support_min=-math.sqrt(3),
    )


class TestDecomposition:
    def test_single_block(self):
        delta = BlockMatrix(np.array([[2.0]]), 1)
        bar, tilde, tilde_t, hat = decompose_delta(delta)
        assert bar.data[0, 0] == 0 and tilde.data[0, 0] == 0
        assert hat.data[0, 0] == 2.0

    def test_zero_border(self):
        rng = np.random.default_rng(0)
        inner = symmetric_table(rng, 2, 2)
        data = np.zeros((6, 6))
        data[2:, 2:] = inner.data
        delta = BlockMatrix(data, 2)
        bar, tilde, tilde_t, hat = decompose_delta(delta)
        np.testing.assert_array_equal(bar.data, data)
        assert not tilde.data.any() and not tilde_t.data.any() and not hat.data.any()

    def test_partition_identity_bit_exact(self):
        rng = np.random.default_rng(1)
        delta = symmetric_table(rng, 4, 2)
        parts = decompose_delta(delta)
        total = sum(p.data for p in parts)
        assert np.array_equal(total, delta.data)


class TestSigmaSym:
    def test_initial_block_identity(self):
        # kappa_hat_2-scaled corner reduces to Id - mu mu^T through the
        # estimator identity 1 - mu^2 = R'(1/theta)/theta^2.
        theta = np.array([2.0, 1.6])
        model = uniform_model()
        tables = kappa_series_tables_direct(model, theta, order=6)
        rp = np.array([model.r_prime_series(1 / t) for t in theta])
        mu_sq = 1.0 - rp / theta ** 2
        phi = BlockMatrix(np.zeros((2, 2)), 2)
        delta = BlockMatrix(np.diag(1.0 / theta ** 2), 2)
        sigma = se_sigma_sym(phi, delta, model, tables)
        np.testing.assert_allclose(sigma.data, np.diag(1.0 - mu_sq), atol=1e-12)

    def test_zero_cumulants_give_zero(self):
        rng = np.random.default_rng(2)
        model = CumulantModel(np.zeros(6), kind=SYMMETRIC, support_max=0.0)
        tables = kappa_series_tables_direct(model, [2.0], order=10)
        phi = strictly_lower(rng, 3, 1)
        delta = symmetric_table(rng, 3, 1)
        sigma = se_sigma_sym(phi, delta, model, tables)
        np.testing.assert_array_equal(sigma.data, np.zeros((3, 3)))

    def test_semicircle_reduces_to_delta(self):
        rng = np.random.default_rng(3)
        model = CumulantModel.semicircle(order=10)
        tables = kappa_series_tables_direct(model, [2.0, 1.5], order=12)
        phi = strictly_lower(rng, 3, 2)
        delta = symmetric_table(rng, 3, 2)
        sigma = se_sigma_sym(phi, delta, model, tables)
        np.testing.assert_allclose(sigma.data, delta.data, atol=1e-12)

    def test_matches_naive_weighted_expansion(self):
        rng = np.random.default_rng(4)
        model = uniform_model()
        theta = np.array([2.0])
        tables = kappa_series_tables_direct(model, theta, order=10)
        nb, k = 3, 1
        phi = strictly_lower(rng, nb, k)
        delta = symmetric_table(rng, nb, k)
        sigma = se_sigma_sym(phi, delta, model, tables)

        bar, tilde, tilde_t, hat = decompose_delta(delta)
        naive = np.zeros((nb, nb))
        for j in range(2 * nb + 1):
            kt = tables.tilde[j + 2][0] if j + 2 in tables.tilde else 0.0
            kh = tables.hat[j + 2][0] if j + 2 in tables.hat else 0.0
            mid = (
                model.kappa_at(j + 2) * bar.data
                + kt * tilde.data
                + kt * tilde_t.data
                + kh * hat.data
            )
            for i in range(j + 1):
                naive += (
                    np.linalg.matrix_power(phi.data, i)
                    @ mid
                    @ np.linalg.matrix_power(phi.data.T, j - i)
                )
        np.testing.assert_allclose(sigma.data, naive, atol=1e-10)


class TestRectOperators:
    def _inputs(self, rng, nb, k):
        phi = strictly_lower(rng, nb, k)
        psi = lower(rng, nb, k)
        delta = symmetric_table(rng, nb, k)
        gam = symmetric_table(rng, nb, k)
        kappa = CumulantModel(
            np.array([1.0, -0.25, 0.1, 0.0]), kind=RECTANGULAR, support_max=2.0, gamma=0.75
        )
        tables = kappa_series_tables_direct(kappa, 2.0 * np.ones(k), order=2 * nb + 4)
        return phi, psi, delta, gam, kappa, tables

    def test_sigma_rect_vs_brute_force(self):
        rng = np.random.default_rng(5)
        nb, k = 3, 1
        phi, psi, delta, gam, kappa, tables = self._inputs(rng, nb, k)
        sigma = se_sigma_rect(phi, psi, delta, gam, kappa, tables)

        def weighted(mat, j):
            bar, tilde, tilde_t, hat = decompose_delta(mat)
            kt = tables.tilde[j + 1][0]
            kh = tables.hat[j + 1][0]
            return kappa.kappa_at(j + 1) * bar.data + kt * (tilde.data + tilde_t.data) + kh * hat.data

        naive = np.zeros((nb, nb))
        pq = psi.data @ phi.data
        for j in range(2 * nb + 2):
            mg = weighted(gam, j)
            md = weighted(delta, j)
            for i in range(j + 1):
                naive += (
                    np.linalg.matrix_power(pq, i)
                    @ mg
                    @ np.linalg.matrix_power(pq.T, j - i)
                )
            for i in range(j):
                naive += (
                    np.linalg.matrix_power(pq, i)
                    @ psi.data
                    @ md
                    @ psi.data.T
                    @ np.linalg.matrix_power(pq.T, j - 1 - i)
                )
        naive = 0.5 * (naive + naive.T)
        np.testing.assert_allclose(sigma.data, naive, atol=1e-10)

    def test_omega_rect_vs_brute_force(self):
        rng = np.random.default_rng(6)
        nb, k = 3, 1
        phi, psi, delta, gam, kappa, tables = self._inputs(rng, nb, k)
        gamma = 0.75
        omega = se_omega_rect_checked(
            phi,
            lambda fill: psi,
            delta,
            lambda fill: gam,
            kappa,
            tables,
            gamma,
        )

        def weighted(mat, j):
            bar, tilde, tilde_t, hat = decompose_delta(mat)
            kt = tables.tilde[j + 1][0]
            kh = tables.hat[j + 1][0]
            return kappa.kappa_at(j + 1) * bar.data + kt * (tilde.data + tilde_t.data) + kh * hat.data

        naive = np.zeros((nb, nb))
        pq = phi.data @ psi.data
        for j in range(2 * nb + 2):
            md = weighted(delta, j)
            mg = weighted(gam, j)
            for i in range(j + 1):
                naive += (
                    np.linalg.matrix_power(pq, i) @ md @ np.linalg.matrix_power(pq.T, j - i)
                )
            for i in range(j):
                naive += (
                    np.linalg.matrix_power(pq, i)
                    @ phi.data
                    @ mg
                    @ phi.data.T
                    @ np.linalg.matrix_power(pq.T, j - 1 - i)
                )
        naive = gamma * 0.5 * (naive + naive.T)
        np.testing.assert_allclose(omega.data, naive, atol=1e-10)

    def test_mask_violation_detected(self):
        rng = np.random.default_rng(7)
        nb, k = 3, 1
        _, psi, delta, gam, kappa, tables = self._inputs(rng, nb, k)
        bad_phi = lower(rng, nb, k)  # nonzero last column block
        with pytest.raises(MaskViolationError):
            se_omega_rect_checked(
                bad_phi, lambda fill: psi, delta, lambda fill: gam, kappa, tables, 0.75
            )

    def test_undefined_blocks_never_leak(self):
        rng = np.random.default_rng(8)
        nb, k = 3, 2
        phi, psi, delta, gam, kappa, tables = self._inputs(rng, nb, k)

        def psi_fill(fill):
            data = psi.data.copy()
            data[(nb - 1) * k:, k:] = fill
            return BlockMatrix(data, k)

        def gamma_fill(fill):
            data = gam.data.copy()
            data[(nb - 1) * k:, :] = fill
            data[:, (nb - 1) * k:] = fill
            return BlockMatrix(data, k)

        out = se_omega_rect_checked(phi, psi_fill, delta, gamma_fill, kappa, tables, 0.75)
        assert np.all(np.isfinite(out.data))

    def test_combined_wrapper(self):
        rng = np.random.default_rng(9)
        nb, k = 3, 1
        phi, psi, delta, gam, kappa, tables = self._inputs(rng, nb, k)
        sigma, omega = se_sigma_omega_rect(
            phi, lambda fill: psi, delta, lambda fill: gam, kappa, tables, 0.75
        )
        sub = slice(0, (nb - 1) * k)
        expect_sigma = se_sigma_rect(
            BlockMatrix(phi.data[sub, sub], k),
            BlockMatrix(psi.data[sub, sub], k),
            BlockMatrix(delta.data[sub, sub], k),
            BlockMatrix(gam.data[sub, sub], k),
            kappa,
            tables,
        )
        np.testing.assert_array_equal(sigma.data, expect_sigma.data)
        assert omega.data.shape == (nb * k, nb * k)


class TestIndependentHelpers:
    def test_sigma_sym_independent_brute_force(self):
        rng = np.random.default_rng(10)
        model = uniform_model()
        nb = 3
        phi = strictly_lower(rng, nb, 1)
        delta = symmetric_table(rng, nb, 1)
        sigma = se_sigma_sym_independent(phi, delta, model)
        naive = np.zeros((nb, nb))
        for j in range(2 * nb + 1):
            c = model.kappa_at(j + 2)
            for i in range(j + 1):
                naive += c * (
                    np.linalg.matrix_power(phi.data, i)
                    @ delta.data
                    @ np.linalg.matrix_power(phi.data.T, j - i)
                )
        np.testing.assert_allclose(sigma.data, 0.5 * (naive + naive.T), atol=1e-11)

    def test_rect_independent_one_term(self):
        rng = np.random.default_rng(11)
        nb = 2
        phi = strictly_lower(rng, nb, 1)
        psi = lower(rng, nb, 1)
        delta = symmetric_table(rng, nb, 1)
        gam = symmetric_table(rng, nb, 1)
        gamma = 0.6
        model = CumulantModel.marcenko_pastur(gamma)
        sigma, omega = se_sigma_omega_rect_independent(phi, psi, delta, gam, model, gamma)
        # kappa_2 = 1 only, higher rectangular cumulants vanish: every j >= 1
        # propagation order is weighted by zero, so Sigma = Gamma and
        # Omega = gamma * Delta exactly.
        np.testing.assert_allclose(sigma.data, gam.data, atol=1e-13)
        np.testing.assert_allclose(omega.data, gamma * delta.data, atol=1e-13)


class TestMuAndStopping:
    def test_mu_modes(self):
        block = np.array([[0.5, 0.1], [0.1, 0.4]])
        theta = np.array([2.0, 1.5])
        np.testing.assert_allclose(se_mu_block(block, theta, "sym"), block * theta[None, :])
        np.testing.assert_allclose(
            se_mu_block(block, theta, "rect_mu", 0.25), block * theta[None, :] / 0.5
        )
        np.testing.assert_allclose(
            se_mu_block(block, theta, "rect_nu", 0.25), block * theta[None, :] * 0.5
        )

    def test_early_stop_identity(self):
        assert not check_early_stop(np.eye(4), 1e-9)

    def test_early_stop_singular(self):
        sigma = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert check_early_stop(sigma, 1e-9)

    def test_early_stop_schur_variant(self):
        sigma = np.array([[1.0, 0.999], [0.999, 1.0]])
        assert not check_early_stop(sigma, 1e-6, block_dim=1, use_schur=False)
        assert check_early_stop(sigma, 5e-3, block_dim=1, use_schur=True)


class TestSEState:
    def test_validate_and_prefix(self):
        st0 = SEState(0, 1, np.array([[0.8]]), np.array([[0.5]]))
        st1 = SEState(
            1, 1, np.array([[0.8], [0.9]]), np.array([[0.5, 0.2], [0.2, 0.6]])
        )
        st0.validate()
        st1.validate()
        assert st1.prefix_matches(st0)
        st_bad = SEState(1, 1, np.array([[0.7], [0.9]]), np.array([[0.5, 0.2], [0.2, 0.6]]))
        assert not st_bad.prefix_matches(st0)

    def test_validate_rejects_asymmetric(self):
        st = SEState(0, 1, np.array([[0.8]]), np.array([[0.5]]))
        bad = SEState(1, 1, np.zeros((2, 1)), np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            bad.validate()

    def test_csv_export(self, tmp_path):
        states = [
            SEState(0, 2, np.eye(2), np.eye(2)),
            SEState(1, 2, np.vstack([np.eye(2), 0.5 * np.eye(2)]), np.eye(4)),
        ]
        rows = list(se_matrix_csv_rows(states, "sigma"))
        assert len(rows) == 4 + 16
        path = tmp_path / "sigma.csv"
        write_se_csv(states, path, "sigma")
        text = path.read_text()
        assert text.splitlines()[0] == "iter,row_block,col_block,i,j,value"
        assert "\r" not in text
        rows = list(se_matrix_csv_rows(states, "mu"))
        assert len(rows) == 4 + 8


class TestMomentLedger:
    def test_symmetric_storage(self):
        led = MomentLedger(2)
        block = np.array([[1.0, 2.0], [3.0, 4.0]])
        led.set(0, 1, block)
        np.testing.assert_array_equal(led.get(1, 0), block.T)

    def test_undefined_fill(self):
        led = MomentLedger(1)
        led.set(0, 0, np.array([[1.0]]))
        with pytest.raises(KeyError):
            led.table(2)
        filled = led.table(2, undefined_fill=9.0)
        assert filled.data[1, 1] == 9.0
