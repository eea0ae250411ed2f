import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from icdfs.errors import DimensionMismatch
from icdfs.neural import (
    AefsConfig,
    AefsModel,
    CaeConfig,
    ConcreteAutoencoder,
    aefs_train,
    cae_train,
    gumbel_noise,
    gumbel_softmax_sample,
    identical_columns,
    softmax_rows,
    temperature_schedule,
    write_training_curve,
)
from icdfs.nn_core import check_gradients


def binary(rng, n, d, p=0.3):
    return (rng.random((n, d)) < p).astype(float)


def duplicated_instance(seed, n=3000):
    """Six columns where columns 3..5 repeat columns 0..2."""
    rng = np.random.default_rng(seed)
    base = binary(rng, n, 3, 0.5)
    return np.column_stack([base, base])


class TestGumbelSoftmax:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 40), st.floats(0.01, 50), st.integers(0, 10_000))
    def test_rows_sum_to_one(self, width, T, seed):
        logits = np.random.default_rng(seed).normal(scale=5, size=(3, width))
        m = gumbel_softmax_sample(logits, T, rng=seed)
        assert np.all(m >= 0)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-9)

    def test_sharp_limit(self):
        logits = np.zeros(8)
        logits[3] = 20.0
        m = gumbel_softmax_sample(logits, 0.01, noise=np.zeros(8))
        assert m.max() > 1 - 1e-9 and m.argmax() == 3

    def test_uniform_argmax_chi_square(self):
        rng = np.random.default_rng(0)
        k = 10
        picks = gumbel_softmax_sample(np.zeros((10_000, k)), 20.0, rng=rng).argmax(axis=1)
        counts = np.bincount(picks, minlength=k)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_noise_is_gumbel(self):
        g = gumbel_noise(np.random.default_rng(1), 50_000)
        assert stats.kstest(g, "gumbel_r").pvalue > 0.01
        g32 = gumbel_noise(np.random.default_rng(1), 1000, np.float32)
        assert g32.dtype == np.float32 and np.all(np.isfinite(g32))

    def test_rejects_non_positive_temperature(self):
        with pytest.raises(ValueError):
            gumbel_softmax_sample(np.zeros(3), 0.0)

    def test_softmax_shift_invariant(self):
        z = np.random.default_rng(2).normal(size=(4, 6))
        np.testing.assert_allclose(softmax_rows(z.copy()), softmax_rows(z + 100.0), atol=1e-12)


class TestTemperature:
    @pytest.mark.parametrize("epochs", [2, 3, 50, 500])
    def test_endpoints_and_monotone(self, epochs):
        T = temperature_schedule(epochs)
        assert T[0] == 20.0 and T[-1] == 0.01
        assert np.all(np.diff(T) < 0)

    def test_exponential_form(self):
        T = temperature_schedule(11, 8.0, 1.0)
        np.testing.assert_allclose(T, 8.0 * 0.125 ** (np.arange(11) / 10), rtol=1e-12)

    def test_recorded_by_training(self):
        X = binary(np.random.default_rng(0), 40, 5)
        _, diag = cae_train(X, cfg=CaeConfig(n_best=2, epochs=7, batch_size=16))
        assert diag["temperature"] == list(temperature_schedule(7))


def cae_fixture(seed, T):
    rng = np.random.default_rng(seed)
    d = 7
    model = ConcreteAutoencoder.init(d, CaeConfig(n_best=3, hidden=(5, 4)), rng)
    model.selector.logits[:] = rng.normal(size=model.selector.logits.shape)
    model.selector.temperature = T
    for layer in model.decoder.layers:
        layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)  # off the leaky-ReLU kink
    return model, binary(rng, 9, d, 0.4), gumbel_noise(rng, (3, d))


class TestCaeGradients:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("T", [20.0, 1.0, 0.3])
    def test_matches_finite_differences(self, seed, T):
        model, x, noise = cae_fixture(seed, T)
        w = np.random.default_rng(seed).uniform(0.2, 1.0, x.shape[1])
        for weights in (None, w):
            _, grads = model.loss_and_grad(x, noise, weights)
            err = check_gradients(lambda: model.loss_and_grad(x, noise, weights)[0],
                                  model.params(), grads, n_probes=40, rng=seed)
            assert err < 1e-4

    def test_logit_gradient_rows_sum_to_zero(self):
        # softmax is shift invariant per row
        model, x, noise = cae_fixture(9, 2.0)
        _, grads = model.loss_and_grad(x, noise)
        np.testing.assert_allclose(grads[0].sum(axis=1), 0.0, atol=1e-12)


class TestCaeTraining:
    def test_unit_weights_equal_unweighted(self):
        X = binary(np.random.default_rng(3), 60, 8)
        cfg = CaeConfig(n_best=3, epochs=6, batch_size=16, seed=4)
        _, a = cae_train(X, None, cfg)
        r, b = cae_train(X, np.ones(8), cfg)
        np.testing.assert_allclose(a["loss"], b["loss"], atol=1e-10, rtol=0)
        assert r.method == "cae-weighted" and r.params["weight_normalization"] == "none"

    def test_weight_length_checked(self):
        with pytest.raises(DimensionMismatch):
            cae_train(np.zeros((4, 3)), np.ones(2), CaeConfig(n_best=1, epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CaeConfig(t_end=30.0)
        with pytest.raises(ValueError):
            CaeConfig(feature_weights=[1.0, 0.0])

    def test_untrained_selection_unique_and_in_range(self):
        X = binary(np.random.default_rng(4), 30, 12)
        res, diag = cae_train(X, cfg=CaeConfig(n_best=12, epochs=2, batch_size=8))
        sel = list(res.selected)
        assert len(sel) == len(set(sel)) <= 12
        assert all(0 <= j < 12 for j in sel)
        assert diag["duplicates_merged"] == 12 - len(sel)

    def test_mean_max_probability_rises(self):
        X = binary(np.random.default_rng(5), 300, 10, 0.4)
        _, diag = cae_train(X, cfg=CaeConfig(n_best=4, epochs=60, batch_size=32))
        mmp = diag["mean_max_probability"]
        assert mmp[-1] > mmp[0]

    def test_duplicate_groups_recovered(self):
        hits = 0
        for seed in range(10):
            res, diag = cae_train(duplicated_instance(seed), cfg=CaeConfig(n_best=3, seed=seed))
            hits += len(res.selected) == 3 and len({j % 3 for j in res.selected}) == 3
        assert hits >= 9

    def test_identical_columns_reported(self):
        X = duplicated_instance(0, n=50)
        assert identical_columns(X, [4, 0, 1, 2]) == [[4, 1]]
        assert identical_columns(sp.csr_matrix(X), [0, 3]) == [[0, 3]]
        assert identical_columns(X, [0, 1, 2]) == []

    def test_deterministic(self, tmp_path):
        X = binary(np.random.default_rng(6), 50, 9)
        cfg = CaeConfig(n_best=3, epochs=5, batch_size=16, seed=2)
        a, da = cae_train(X, cfg=cfg, curve_path=tmp_path / "a.csv")
        b, db = cae_train(X, cfg=cfg, curve_path=tmp_path / "b.csv")
        assert a.to_json() == b.to_json()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_curve_csv(self, tmp_path):
        hist = {"epoch": [0, 1], "loss": [1.5, 1.0], "temperature": [20.0, 0.01],
                "mean_max_probability": [0.1, 0.9]}
        write_training_curve(tmp_path / "c.csv", hist)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,temperature,mean_max_probability"
        assert lines[2] == "1,1.0,0.01,0.9"


def aefs_fixture(seed):
    rng = np.random.default_rng(seed)
    model = AefsModel.init(6, 4, rng)
    model.W1 += rng.normal(scale=0.5, size=model.W1.shape)  # rows away from zero
    return model, binary(rng, 10, 6, 0.4)


class TestAefs:
    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        model, x = aefs_fixture(seed)
        _, grads = model.loss_and_grad(x, 0.3, 0.1)
        err = check_gradients(lambda: model.loss_and_grad(x, 0.3, 0.1)[0], model.params(), grads,
                              n_probes=40, rng=seed)
        assert err < 1e-4

    def test_loss_definition(self):
        model, x = aefs_fixture(7)
        a, b = 0.2, 0.05
        xhat = model.reconstruct(x)
        ref = (0.5 * np.sum((xhat - x) ** 2) / len(x)
               + a * np.linalg.norm(model.W1, axis=1).sum()
               + 0.5 * b * (np.sum(model.W1 ** 2) + np.sum(model.W2 ** 2)))
        assert model.loss_and_grad(x, a, b)[0] == pytest.approx(ref, rel=1e-12)

    def test_zero_row_subgradient(self):
        model, x = aefs_fixture(8)
        model.W1[2] = 0.0
        _, grads = model.loss_and_grad(x, 1.0, 0.1)
        assert np.all(np.isfinite(grads[0]))

    def test_huge_alpha_kills_rows(self):
        X = binary(np.random.default_rng(0), 200, 8, 0.4)
        res = aefs_train(X, AefsConfig(n_best=3, alpha=1e6, epochs=50, batch_size=32))
        assert np.all(res.scores < 1e-3)

    def test_prox_step_zeroes_small_rows(self):
        model, _ = aefs_fixture(9)
        model.W1[1] = [0.01, 0.0, 0.0, 0.0]
        before = model.row_norms()
        model.prox_group(0.05)
        after = model.row_norms()
        assert after[1] == 0.0
        big = before > 0.05
        np.testing.assert_allclose(after[big], before[big] - 0.05, rtol=1e-12)

    def test_all_zero_feature_ranked_last(self):
        wins = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            # eight noisy copies of two latent factors, one column blanked
            latent = binary(rng, 300, 2, 0.4)
            X = np.abs(latent[:, np.arange(8) % 2] - binary(rng, 300, 8, 0.1))
            X[:, 5] = 0.0
            res = aefs_train(X, AefsConfig(n_best=8, epochs=400, batch_size=32, seed=seed))
            wins += res.selected[-1] == 5
        assert wins >= 9

    def test_selection_shape_and_determinism(self):
        X = binary(np.random.default_rng(1), 100, 10)
        cfg = AefsConfig(n_best=4, epochs=5, batch_size=32, seed=3)
        a, b = aefs_train(X, cfg), aefs_train(X, cfg)
        assert len(a.selected) == 4 and a.to_json() == b.to_json()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AefsConfig(alpha=0)
