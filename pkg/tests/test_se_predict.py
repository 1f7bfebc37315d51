import math

import numpy as np
import pytest

from oamp_lab.denoisers import DiscretePrior
from oamp_lab.se_predict import (
    exact_cumulants_for_noise,
    law_exact_moments,
    predict_rect,
    predict_sym,
)
from oamp_lab.spectrum import CumulantModel, free_cumulants_from_moments


class TestLawMoments:
    def test_uniform_closed_form(self):
        m = law_exact_moments({"name": "uniform", "lo": -math.sqrt(3), "hi": math.sqrt(3)}, 6)
        np.testing.assert_allclose(m, [0, 1, 0, 9 / 5, 0, 27 / 7], atol=1e-12)

    def test_centered_beta_normalization(self):
        law = {
            "name": "centered_beta",
            "a": 3.0,
            "b": 1.0,
            "scale": math.sqrt(80 / 3),
            "shift": -0.75,
        }
        m = law_exact_moments(law, 2)
        assert m[0] == pytest.approx(0.0, abs=1e-12)
        assert m[1] == pytest.approx(1.0, abs=1e-12)

    def test_rect_squared_moments(self):
        law = {"name": "uniform", "lo": 1.0, "hi": 2.0}
        m = law_exact_moments(law, 2, squared=True)
        # E[X^2] = 7/3, E[X^4] = 31/5 for Uniform[1,2]
        np.testing.assert_allclose(m, [7 / 3, 31 / 5], atol=1e-12)

    def test_custom_values(self):
        m = law_exact_moments({"name": "custom", "values": [1.0, 3.0]}, 2)
        np.testing.assert_allclose(m, [2.0, 5.0])


class TestExactCumulants:
    def test_goe_is_semicircle(self):
        model = exact_cumulants_for_noise({"family": "goe"}, 6, "sym", None)
        np.testing.assert_allclose(model.kappa[:4], [0, 1, 0, 0], atol=1e-12)

    def test_gaussian_rect_is_mp(self):
        model = exact_cumulants_for_noise({"family": "iid_gaussian_rect"}, 6, "rect", 0.75)
        np.testing.assert_allclose(model.kappa[:3], [1, 0, 0], atol=1e-12)

    def test_haar_diag_uniform(self):
        noise = {
            "family": "haar_diag",
            "law": {"name": "uniform", "lo": -math.sqrt(3), "hi": math.sqrt(3)},
        }
        model = exact_cumulants_for_noise(noise, 6, "sym", None)
        assert model.kappa[1] == pytest.approx(1.0, abs=1e-12)
        assert model.kappa[3] == pytest.approx(-0.2, abs=1e-12)


class TestPredictSym:
    def test_semicircle_initialization_and_monotone_mse(self):
        kappa = CumulantModel.semicircle(order=20)
        pred = predict_sym(
            DiscretePrior.rademacher(), [2.0], kappa, max_iters=3, samples=60_000, seed=0
        )
        assert pred.states[0].sigma[0, 0] == pytest.approx(0.25, abs=1e-12)
        assert pred.states[0].mu[0, 0] == pytest.approx(math.sqrt(0.75), abs=1e-12)
        assert pred.mse_u[1] <= pred.mse_u[0] + 0.01
        assert pred.mse_u[-1] <= pred.mse_u[1] + 0.01
        for prev, cur in zip(pred.states, pred.states[1:]):
            assert cur.prefix_matches(prev)

    def test_matches_engine_at_scale(self):
        # the SE-predicted risk should track the simulated risk within a few
        # percent at n = 3000 for uniform-spectrum noise
        m = [3 ** (j / 2) / (j + 1) if j % 2 == 0 else 0.0 for j in range(1, 25)]
        kappa = CumulantModel(
            free_cumulants_from_moments(m),
            kind="symmetric",
            support_max=math.sqrt(3),
            support_min=-math.sqrt(3),
        )
        pred = predict_sym(
            DiscretePrior.rademacher(), [2.0], kappa, max_iters=2, samples=120_000, seed=1
        )
        from oamp_lab.amp_engine import AmpConfig, ExactModel, run_sym_spectral
        from oamp_lab.model_gen import NoiseSpec, build_spiked, sample_noise, sample_signals

        mses = []
        for trial in range(3):
            rng = np.random.default_rng((31, trial))
            n = 3000
            w, _ = sample_noise(
                NoiseSpec("haar_diag", (n,), law={"name": "uniform", "lo": -math.sqrt(3), "hi": math.sqrt(3)}),
                rng,
            )
            prior = DiscretePrior.rademacher()
            u = sample_signals(prior, n, 1, rng)
            inst = build_spiked(u, [2.0], w)
            cfg = AmpConfig(algorithm="bayes_oamp", max_iters=2, K=1, cumulant_source="exact")
            traj = run_sym_spectral(
                inst.x, prior, cfg, truth=inst.u_star,
                exact=ExactModel(kappa, np.array([2.0])),
            )
            mses.append([m_["mse_u"] for m_ in traj.metrics])
        sim = np.median(np.array(mses), axis=0)
        assert abs(sim[1] - pred.mse_u[1]) <= 0.05
        assert abs(sim[2] - pred.mse_u[2]) <= 0.05


class TestPredictRect:
    def test_mp_prediction_sane(self):
        kappa = CumulantModel.marcenko_pastur(0.75, order=20)
        pred = predict_rect(
            DiscretePrior.rademacher(),
            DiscretePrior.rademacher(),
            [2.0],
            kappa,
            0.75,
            max_iters=2,
            samples=60_000,
            seed=2,
        )
        assert pred.states[0].omega[0, 0] == pytest.approx(
            pred.states[0].omega[1, 1], abs=1e-12
        )
        assert 0 < pred.mse_u[0] < 0.2
        assert pred.mse_u[-1] <= pred.mse_u[0] + 0.01
        for prev, cur in zip(pred.states, pred.states[1:]):
            assert cur.prefix_matches(prev)
