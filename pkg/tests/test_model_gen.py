import math

import numpy as np
import pytest

from oamp_lab.denoisers import DiscretePrior
from oamp_lab.model_gen import (
    NoiseSpec,
    build_spiked,
    export_instance,
    generate_instance,
    haar_orthogonal,
    load_matrix_csv,
    sample_noise,
    sample_signals,
    save_matrix_csv,
)


class TestHaar:
    def test_n_one_is_sign(self):
        rng = np.random.default_rng(0)
        vals = {float(haar_orthogonal(1, rng)[0, 0]) for _ in range(50)}
        assert vals <= {-1.0, 1.0} and len(vals) == 2

    def test_orthogonality(self):
        rng = np.random.default_rng(1)
        q = haar_orthogonal(500, rng)
        err = np.linalg.norm(q.T @ q - np.eye(500))
        assert err <= 1e-10

    def test_trace_moments(self):
        # Haar trace has mean 0 and variance 1.
        rng = np.random.default_rng(2)
        traces = np.array([np.trace(haar_orthogonal(100, rng)) for _ in range(1000)])
        se_mean = 1.0 / math.sqrt(1000)
        assert abs(traces.mean()) <= 3 * se_mean
        var = traces.var()
        se_var = math.sqrt(2.0 / (1000 - 1))
        assert abs(var - 1.0) <= 3 * se_var


class TestNoise:
    def test_uniform_law_normalization(self):
        rng = np.random.default_rng(3)
        law = {"name": "uniform", "lo": -math.sqrt(3), "hi": math.sqrt(3)}
        _, spec = sample_noise(NoiseSpec("haar_diag", (4000,), law=law), rng)
        vals = spec.values
        assert abs(vals.mean()) <= 0.05
        assert abs(vals.var() - 1.0) <= 0.05

    def test_centered_beta_support(self):
        rng = np.random.default_rng(4)
        scale = math.sqrt(80 / 3)
        law = {"name": "centered_beta", "a": 3.0, "b": 1.0, "scale": scale, "shift": -0.75}
        _, spec = sample_noise(NoiseSpec("haar_diag", (2000,), law=law), rng)
        assert spec.values.min() >= scale * (0 - 0.75) - 1e-12
        assert spec.values.max() <= scale * (1 - 0.75) + 1e-12

    def test_goe_edge(self):
        rng = np.random.default_rng(5)
        w, spec = sample_noise(NoiseSpec("goe", (2000,)), rng, with_spectrum=True)
        assert abs(spec.support_max - 2.0) <= 0.1
        assert abs(spec.support_min + 2.0) <= 0.1
        np.testing.assert_allclose(w, w.T, atol=1e-15)

    def test_haar_conjugation_preserves_spectrum(self):
        rng = np.random.default_rng(6)
        law = {"name": "uniform", "lo": -1.0, "hi": 1.0}
        w, spec = sample_noise(NoiseSpec("haar_diag", (300,), law=law), rng)
        evals = np.sort(np.linalg.eigvalsh(w))
        np.testing.assert_allclose(evals, spec.values, atol=1e-10)

    def test_rect_haar_diag_spectrum(self):
        rng = np.random.default_rng(7)
        law = {"name": "uniform", "lo": 0.5, "hi": 1.5}
        w, spec = sample_noise(NoiseSpec("haar_diag", (100, 150), law=law), rng)
        svals = np.sort(np.linalg.svd(w, compute_uv=False))
        np.testing.assert_allclose(svals, spec.values, atol=1e-10)

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            NoiseSpec("nope", (10,))
        with pytest.raises(ValueError):
            NoiseSpec("haar_diag", (10,))
        with pytest.raises(ValueError):
            NoiseSpec("goe", (10, 20))


class TestSignals:
    def test_rademacher_normalization(self):
        rng = np.random.default_rng(8)
        n = 500
        u = sample_signals(DiscretePrior.rademacher(), n, 1, rng)
        assert u[:, 0] @ u[:, 0] == pytest.approx(n)
        assert np.max(np.abs(np.abs(u) - 1.0)) < 0.2

    def test_three_point_second_moment(self):
        rng = np.random.default_rng(9)
        n = 4000
        u = sample_signals(DiscretePrior.three_point(), n, 2, rng)
        second = u.T @ u / n
        np.testing.assert_allclose(second, np.eye(2), atol=0.05)

    def test_columns_orthogonal(self):
        rng = np.random.default_rng(10)
        n = 1000
        u = sample_signals(DiscretePrior.three_point(), n, 2, rng)
        assert abs(u[:, 0] @ u[:, 1]) <= 1e-10 * n
        assert u[:, 0] @ u[:, 0] == pytest.approx(n)
        assert u[:, 1] @ u[:, 1] == pytest.approx(n)

    def test_degenerate_prior_rejected(self):
        prior = DiscretePrior(np.array([[1.0, 1.0], [-1.0, -1.0]]), np.array([0.5, 0.5]))
        rng = np.random.default_rng(11)
        with pytest.raises(ValueError):
            sample_signals(prior, 100, 2, rng)


class TestBuild:
    def test_zero_theta_is_noise(self):
        rng = np.random.default_rng(12)
        w, _ = sample_noise(NoiseSpec("goe", (50,)), rng)
        u = sample_signals(DiscretePrior.rademacher(), 50, 1, rng)
        inst = build_spiked(u, [0.0], w)
        np.testing.assert_array_equal(inst.x, w)

    def test_zero_noise_eigenpair(self):
        rng = np.random.default_rng(13)
        n = 64
        u = sample_signals(DiscretePrior.rademacher(), n, 1, rng)
        inst = build_spiked(u, [2.5], np.zeros((n, n)))
        evals, evecs = np.linalg.eigh(inst.x)
        assert evals[-1] == pytest.approx(2.5)
        direction = evecs[:, -1] * math.sqrt(n)
        overlap = abs(direction @ u[:, 0]) / n
        assert overlap == pytest.approx(1.0, abs=1e-10)

    def test_rect_scaling(self):
        rng = np.random.default_rng(14)
        m, n = 40, 60
        u = sample_signals(DiscretePrior.rademacher(), m, 1, rng)
        v = sample_signals(DiscretePrior.rademacher(), n, 1, rng)
        inst = build_spiked(u, [2.0], np.zeros((m, n)), v_signals=v)
        s = np.linalg.svd(inst.x, compute_uv=False)
        assert s[0] == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            build_spiked(np.ones((10, 1)), [1.0], np.zeros((8, 8)))


class TestDeterminism:
    def test_same_seed_same_instance(self):
        spec = NoiseSpec("haar_diag", (80,), law={"name": "uniform", "lo": -1, "hi": 1})
        prior = DiscretePrior.rademacher()
        a = generate_instance("sym", spec, prior, [2.0], np.random.default_rng(42))
        b = generate_instance("sym", spec, prior, [2.0], np.random.default_rng(42))
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.u_star, b.u_star)


class TestCsv:
    def test_matrix_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        m = rng.standard_normal((7, 5))
        path = tmp_path / "m.csv"
        save_matrix_csv(path, m)
        np.testing.assert_array_equal(load_matrix_csv(path), m)

    def test_export_instance(self, tmp_path):
        rng = np.random.default_rng(16)
        spec = NoiseSpec("iid_gaussian_rect", (6, 9))
        prior = DiscretePrior.rademacher()
        inst = generate_instance("rect", spec, prior, [2.0], rng)
        paths = export_instance(inst, str(tmp_path / "inst"))
        assert len(paths) == 3
        np.testing.assert_array_equal(load_matrix_csv(paths[0]), inst.x)
