import numpy as np
import pytest

from oamp_lab.block_matrix import DiagScaler
from oamp_lab.onsager import (
    RECT_INDEPENDENT_PHI,
    RECT_INDEPENDENT_PSI,
    RECT_SPECTRAL_PHI,
    RECT_SPECTRAL_PSI,
    SYM_INDEPENDENT,
    SYM_SPECTRAL,
    DerivativeLedger,
    assemble_phi,
    assemble_psi,
    debias_rect_independent,
    debias_rect_spectral,
    debias_sym_independent,
    debias_sym_spectral,
)
from oamp_lab.spectrum import (
    RECTANGULAR,
    SYMMETRIC,
    CumulantModel,
    kappa_series_tables_direct,
)


def fill_ledger(rng, k, rows, lower=False, start_row=1, start_col_offset=0):
    led = DerivativeLedger(k)
    for r in range(start_row, rows):
        limit = r + 1 if lower else r
        for s in range(start_col_offset, limit):
            led.set(r, s, rng.standard_normal((k, k)))
    return led


class TestAssembly:
    def test_independent_t1_is_zero(self):
        led = DerivativeLedger(2)
        phi = assemble_phi(led, 1, SYM_INDEPENDENT)
        np.testing.assert_array_equal(phi.data, np.zeros((2, 2)))

    def test_spectral_sym_t0_is_zero(self):
        led = DerivativeLedger(1)
        phi = assemble_phi(led, 0, SYM_SPECTRAL)
        np.testing.assert_array_equal(phi.data, np.zeros((1, 1)))

    def test_rect_spectral_convention_blocks(self):
        led_phi = DerivativeLedger(2)
        led_psi = DerivativeLedger(2)
        led_psi.set(1, 1, np.full((2, 2), 0.5))
        s_u_inv = DiagScaler([0.5, 0.25])
        s_v_inv = DiagScaler([0.4, 0.2])
        phi = assemble_phi(led_phi, 1, RECT_SPECTRAL_PHI, s_u_inv)
        psi = assemble_psi(led_psi, 1, RECT_SPECTRAL_PSI, s_v_inv)
        np.testing.assert_array_equal(phi.block(1, 0), np.diag([0.5, 0.25]))
        np.testing.assert_array_equal(phi.block(0, 0), np.zeros((2, 2)))
        np.testing.assert_array_equal(psi.block(0, 0), np.diag([0.4, 0.2]))
        np.testing.assert_array_equal(psi.block(1, 0), np.zeros((2, 2)))
        np.testing.assert_array_equal(psi.block(1, 1), np.full((2, 2), 0.5))

    def test_missing_block_raises(self):
        led = DerivativeLedger(1)
        with pytest.raises(KeyError):
            assemble_phi(led, 2, SYM_SPECTRAL)


class TestSymIndependent:
    def test_semicircle_reduces_to_phi(self):
        rng = np.random.default_rng(0)
        led = fill_ledger(rng, 2, 4)
        phi = assemble_phi(led, 4, SYM_INDEPENDENT)
        table = debias_sym_independent(phi, CumulantModel.semicircle())
        np.testing.assert_allclose(table.table.data, phi.data, atol=1e-13)

    def test_mean_shift_only(self):
        rng = np.random.default_rng(1)
        led = fill_ledger(rng, 1, 3)
        phi = assemble_phi(led, 3, SYM_INDEPENDENT)
        c = 0.6
        model = CumulantModel(np.array([c]), kind=SYMMETRIC, support_max=c)
        table = debias_sym_independent(phi, model)
        np.testing.assert_allclose(table.table.data, c * np.eye(3), atol=1e-14)
        np.testing.assert_allclose(table.coeff(2, 2), [[c]])

    def test_against_naive_horner(self):
        rng = np.random.default_rng(2)
        led = fill_ledger(rng, 2, 4)
        phi = assemble_phi(led, 4, SYM_INDEPENDENT)
        kappa = rng.standard_normal(5)
        model = CumulantModel(kappa, kind=SYMMETRIC, support_max=1.0)
        table = debias_sym_independent(phi, model)
        naive = sum(
            kappa[j] * np.linalg.matrix_power(phi.data, j) for j in range(5)
        )
        np.testing.assert_allclose(table.table.data, naive, atol=1e-12)


class TestSymSpectral:
    def test_hand_expansion_t1(self):
        led = DerivativeLedger(1)
        led.set(1, 0, np.array([[0.37]]))
        phi = assemble_phi(led, 1, SYM_SPECTRAL)
        kappa = CumulantModel.semicircle()
        tables = kappa_series_tables_direct(kappa, [2.0], order=4)
        table = debias_sym_spectral(phi, kappa, tables)
        # column 0: Id kt_1 + phi kt_2 with kt_1 = 1/2, kt_2 = 1
        assert table.coeff(1, 0)[0, 0] == pytest.approx(0.37)
        assert table.coeff(0, 0)[0, 0] == pytest.approx(0.5)
        # column 1 from the plain series: kappa_1 = 0
        assert table.coeff(1, 1)[0, 0] == pytest.approx(0.0)

    def test_mean_only_model_hits_column_zero_once(self):
        rng = np.random.default_rng(3)
        led = fill_ledger(rng, 1, 3)
        phi = assemble_phi(led, 2, SYM_SPECTRAL)
        c = 0.8
        model = CumulantModel(np.array([c, 0.0]), kind=SYMMETRIC, support_max=c)
        tables = kappa_series_tables_direct(model, [2.0], order=5)
        table = debias_sym_spectral(phi, model, tables)
        assert table.coeff(0, 0)[0, 0] == pytest.approx(c)
        assert table.coeff(1, 0)[0, 0] == pytest.approx(0.0, abs=1e-14)
        assert table.coeff(2, 0)[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_nonzero_columns_match_independent_series(self):
        rng = np.random.default_rng(4)
        led = fill_ledger(rng, 2, 4)
        phi = assemble_phi(led, 3, SYM_SPECTRAL)
        m = [3 ** (k / 2) / (k + 1) if k % 2 == 0 else 0.0 for k in range(1, 13)]
        from oamp_lab.spectrum import free_cumulants_from_moments

        model = CumulantModel(
            free_cumulants_from_moments(m), kind=SYMMETRIC, support_max=3 ** 0.5
        )
        tables = kappa_series_tables_direct(model, [2.0, 1.7], order=8)
        spectral = debias_sym_spectral(phi, model, tables)
        independent = debias_sym_independent(phi, model)
        for t in range(4):
            for s in range(1, t + 1):
                np.testing.assert_allclose(
                    spectral.coeff(t, s), independent.coeff(t, s), atol=1e-13
                )


class TestRectIndependent:
    def test_mp_one_term_series(self):
        rng = np.random.default_rng(5)
        k = 1
        phi_led = fill_ledger(rng, k, 3)
        psi_led = fill_ledger(rng, k, 3, lower=True, start_row=0)
        phi = assemble_phi(phi_led, 3, RECT_INDEPENDENT_PHI)
        psi = assemble_psi(psi_led, 3, RECT_INDEPENDENT_PSI)
        gamma = 0.75
        model = CumulantModel.marcenko_pastur(gamma)
        a, b = debias_rect_independent(phi, psi, model, gamma)
        np.testing.assert_allclose(a.table.data, psi.data, atol=1e-13)
        np.testing.assert_allclose(b.table.data, gamma * phi.data, atol=1e-13)

    def test_against_naive_expansion(self):
        rng = np.random.default_rng(6)
        k = 2
        phi_led = fill_ledger(rng, k, 3)
        psi_led = fill_ledger(rng, k, 3, lower=True, start_row=0)
        phi = assemble_phi(phi_led, 3, RECT_INDEPENDENT_PHI)
        psi = assemble_psi(psi_led, 3, RECT_INDEPENDENT_PSI)
        gamma = 1.0
        kappa = np.array([0.9, -0.3, 0.2])
        model = CumulantModel(kappa, kind=RECTANGULAR, support_max=2.0, gamma=gamma)
        a, b = debias_rect_independent(phi, psi, model, gamma)
        pp = phi.data @ psi.data
        naive_a = sum(
            kappa[j] * psi.data @ np.linalg.matrix_power(pp, j) for j in range(3)
        )
        pp2 = psi.data @ phi.data
        naive_b = gamma * sum(
            kappa[j] * phi.data @ np.linalg.matrix_power(pp2, j) for j in range(3)
        )
        np.testing.assert_allclose(a.table.data, naive_a, atol=1e-12)
        np.testing.assert_allclose(b.table.data, naive_b, atol=1e-12)
        # b table has zero diagonal blocks
        for t in range(3):
            np.testing.assert_allclose(b.coeff(t, t), np.zeros((k, k)), atol=1e-13)

    def test_series_truncates_exactly(self):
        rng = np.random.default_rng(7)
        k = 1
        phi_led = fill_ledger(rng, k, 4)
        psi_led = fill_ledger(rng, k, 4, lower=True, start_row=0)
        phi = assemble_phi(phi_led, 4, RECT_INDEPENDENT_PHI)
        psi = assemble_psi(psi_led, 4, RECT_INDEPENDENT_PSI)
        extra = np.linalg.matrix_power(phi.data @ psi.data, 4)
        assert np.max(np.abs(extra)) == 0.0


class TestRectSpectral:
    def _grids(self, rng, k, t):
        phi_led = DerivativeLedger(k)
        psi_led = DerivativeLedger(k)
        for r in range(2, t + 1):
            for s in range(r):
                phi_led.set(r, s, rng.standard_normal((k, k)) / 3)
        for r in range(1, t + 1):
            for s in range(1, r + 1):
                psi_led.set(r, s, rng.standard_normal((k, k)) / 3)
        s_u_inv = DiagScaler(1.0 / np.array([2.0, 1.5][:k]))
        s_v_inv = DiagScaler(1.0 / np.array([1.8, 1.3][:k]))
        phi = assemble_phi(phi_led, t, RECT_SPECTRAL_PHI, s_u_inv)
        psi = assemble_psi(psi_led, t, RECT_SPECTRAL_PSI, s_v_inv)
        return phi, psi

    def test_zero_noise_gives_zero_tables(self):
        rng = np.random.default_rng(8)
        phi, psi = self._grids(rng, 1, 2)
        model = CumulantModel(np.zeros(4), kind=RECTANGULAR, support_max=0.0, gamma=0.75)
        tables = kappa_series_tables_direct(model, [2.0], order=6)
        a, b = debias_rect_spectral(phi, psi, model, tables, 0.75)
        np.testing.assert_array_equal(a.table.data, np.zeros_like(a.table.data))
        np.testing.assert_array_equal(b.table.data, np.zeros_like(b.table.data))

    def test_mp_weighted_column_equals_plain(self):
        # For the MP law kappa_tilde_2 = Id, so column 0 of the weighted series
        # coincides with the plain series column 0.
        rng = np.random.default_rng(9)
        phi, psi = self._grids(rng, 2, 3)
        gamma = 0.75
        model = CumulantModel.marcenko_pastur(gamma)
        tables = kappa_series_tables_direct(model, [2.0, 1.5], order=8)
        np.testing.assert_allclose(tables.tilde[1], np.ones(2))
        a, b = debias_rect_spectral(phi, psi, model, tables, gamma)
        pp = phi.data @ psi.data
        naive_a = psi.data  # kappa_2 = 1 only, j = 0 term
        np.testing.assert_allclose(a.table.data[:, :2], naive_a[:, :2], atol=1e-13)
        np.testing.assert_allclose(b.table.data[:, :2], gamma * phi.data[:, :2], atol=1e-13)

    def test_hand_expansion_t1(self):
        rng = np.random.default_rng(10)
        k = 1
        phi, psi = self._grids(rng, k, 1)
        gamma = 0.6
        kappa = np.array([1.0, -0.2])
        model = CumulantModel(kappa, kind=RECTANGULAR, support_max=2.0, gamma=gamma)
        theta = np.array([2.0])
        tables = kappa_series_tables_direct(model, theta, order=6)
        a, b = debias_rect_spectral(phi, psi, model, tables, gamma)
        kt = tables.tilde
        pp = phi.data @ psi.data
        pq = psi.data @ phi.data
        a_fac0, a_fac1 = psi.data, psi.data @ pp
        b_fac0, b_fac1 = phi.data, phi.data @ pq
        a_expect_col0 = a_fac0[:, :1] * kt[1][0] + a_fac1[:, :1] * kt[2][0]
        b_expect_col0 = gamma * (b_fac0[:, :1] * kt[1][0] + b_fac1[:, :1] * kt[2][0])
        np.testing.assert_allclose(a.table.data[:, :1], a_expect_col0, atol=1e-13)
        np.testing.assert_allclose(b.table.data[:, :1], b_expect_col0, atol=1e-13)
        a_expect_col1 = kappa[0] * a_fac0[:, 1:] + kappa[1] * a_fac1[:, 1:]
        np.testing.assert_allclose(a.table.data[:, 1:], a_expect_col1, atol=1e-13)

    def test_padding_invariance(self):
        # Adding future (unused) ledger rows leaves earlier coefficients alone.
        rng = np.random.default_rng(11)
        k = 1
        phi_led = DerivativeLedger(k)
        psi_led = DerivativeLedger(k)
        for r in range(2, 4):
            for s in range(r):
                phi_led.set(r, s, rng.standard_normal((k, k)) / 3)
        for r in range(1, 4):
            for s in range(1, r + 1):
                psi_led.set(r, s, rng.standard_normal((k, k)) / 3)
        s_u_inv = DiagScaler([0.5])
        s_v_inv = DiagScaler([0.55])
        phi_small = assemble_phi(phi_led, 2, RECT_SPECTRAL_PHI, s_u_inv)
        psi_small = assemble_psi(psi_led, 2, RECT_SPECTRAL_PSI, s_v_inv)
        phi_big = assemble_phi(phi_led, 3, RECT_SPECTRAL_PHI, s_u_inv)
        psi_big = assemble_psi(psi_led, 3, RECT_SPECTRAL_PSI, s_v_inv)
        model = CumulantModel.marcenko_pastur(0.75)
        tables = kappa_series_tables_direct(model, [2.0], order=8)
        a_s, b_s = debias_rect_spectral(phi_small, psi_small, model, tables, 0.75)
        a_b, b_b = debias_rect_spectral(phi_big, psi_big, model, tables, 0.75)
        for t in range(3):
            for s in range(t + 1):
                np.testing.assert_allclose(a_s.coeff(t, s), a_b.coeff(t, s), atol=1e-13)
                np.testing.assert_allclose(b_s.coeff(t, s), b_b.coeff(t, s), atol=1e-13)
