import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import (
    binary_states,
    central_difference,
    rbm_loglik_grad,
    rbm_partition,
    rbm_visible_marginals,
)
from emonoise.dbn import (
    BERNOULLI,
    GAUSSIAN,
    CdVelocity,
    Dbn,
    ModelFormatError,
    Rbm,
    TrainConfig,
    _loss_and_grads,
    cd_update,
    fine_tune,
    forward,
    free_energy,
    hidden_probs,
    load_model,
    predict,
    pretrain_dbn,
    save_model,
    sigmoid,
    visible_recon,
)


def random_rbm(n_vis, n_hid, kind=BERNOULLI, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return Rbm(
        weights=scale * rng.standard_normal((n_vis, n_hid)),
        visible_bias=scale * rng.standard_normal(n_vis),
        hidden_bias=scale * rng.standard_normal(n_hid),
        visible_kind=kind,
    )


def zero_rbm(n_vis, n_hid, kind=BERNOULLI):
    return Rbm(np.zeros((n_vis, n_hid)), np.zeros(n_vis), np.zeros(n_hid), visible_kind=kind)


class TestHiddenProbs:
    def test_zero_parameters_give_half(self):
        np.testing.assert_array_equal(hidden_probs(zero_rbm(3, 4), np.ones(3)), np.full(4, 0.5))

    def test_one_by_one(self):
        rbm = Rbm(np.array([[1.0]]), np.zeros(1), np.zeros(1))
        assert hidden_probs(rbm, np.array([1.0]))[0] == pytest.approx(0.7310585786300049, rel=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            hidden_probs(zero_rbm(3, 4), np.ones(5))

    @given(st.floats(-30.0, 30.0))
    @settings(max_examples=100, deadline=None)
    def test_sigmoid_symmetry(self, x):
        assert sigmoid(-x) == pytest.approx(1.0 - float(sigmoid(x)), abs=1e-12)

    def test_batch_shape(self):
        out = hidden_probs(zero_rbm(3, 4), np.zeros((5, 3)))
        assert out.shape == (5, 4)


class TestVisibleRecon:
    def test_zero_parameters_bernoulli(self):
        np.testing.assert_array_equal(visible_recon(zero_rbm(3, 4), np.ones(4)), np.full(3, 0.5))

    def test_zero_parameters_gaussian(self):
        np.testing.assert_array_equal(
            visible_recon(zero_rbm(3, 4, GAUSSIAN), np.ones(4)), np.zeros(3)
        )

    def test_gaussian_linear_map(self):
        rbm = Rbm(np.array([[1.0], [2.0]]), np.zeros(2), np.zeros(1), visible_kind=GAUSSIAN)
        np.testing.assert_array_equal(visible_recon(rbm, np.array([1.0])), [1.0, 2.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            visible_recon(zero_rbm(3, 4), np.ones(3))


class TestFreeEnergy:
    def test_zero_bernoulli_is_minus_n_log2(self):
        rbm = zero_rbm(3, 5)
        assert free_energy(rbm, np.array([1.0, 0.0, 1.0])) == pytest.approx(-5 * np.log(2))

    def test_gaussian_at_bias_is_minus_n_log2(self):
        rbm = Rbm(np.zeros((3, 4)), np.array([0.3, -0.2, 1.0]), np.zeros(4), visible_kind=GAUSSIAN)
        assert free_energy(rbm, rbm.visible_bias) == pytest.approx(-4 * np.log(2))

    def test_partition_function_matches_enumeration(self):
        rbm = random_rbm(2, 2, seed=3)
        v_states = binary_states(2)
        z_free = np.exp(-free_energy(rbm, v_states)).sum()
        z_brute = rbm_partition(rbm.weights, rbm.visible_bias, rbm.hidden_bias)
        assert z_free == pytest.approx(z_brute, rel=1e-9)

    @pytest.mark.parametrize("seed", range(8))
    def test_marginals_match_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n_vis = int(rng.integers(2, 5))
        n_hid = int(rng.integers(2, 5))
        rbm = random_rbm(n_vis, n_hid, seed=seed + 100, scale=0.8)
        v_states = binary_states(n_vis)
        unnormalized = np.exp(-free_energy(rbm, v_states))
        probs = unnormalized / unnormalized.sum()
        brute = rbm_visible_marginals(rbm.weights, rbm.visible_bias, rbm.hidden_bias)
        np.testing.assert_allclose(probs, brute, rtol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            free_energy(zero_rbm(3, 4), np.ones(4))


class TestCdUpdate:
    def test_zero_learning_rate_changes_nothing(self):
        rbm = random_rbm(4, 3, seed=1)
        cfg = TrainConfig(learning_rate_pretrain=0.0, learning_rate_pretrain_gaussian=0.0,
                          weight_decay=0.0)
        velocity = CdVelocity.zeros_like(rbm)
        updated, _ = cd_update(rbm, binary_states(4)[:5], cfg, np.random.default_rng(0), velocity)
        np.testing.assert_array_equal(updated.weights, rbm.weights)
        np.testing.assert_array_equal(updated.visible_bias, rbm.visible_bias)
        np.testing.assert_array_equal(updated.hidden_bias, rbm.hidden_bias)
        assert not velocity.weights.any() and not velocity.hidden_bias.any()

    def test_repeated_call_is_bit_identical(self):
        rbm = random_rbm(4, 3, seed=2)
        batch = binary_states(4)[3:9]
        cfg = TrainConfig(seed=7)
        a, ea = cd_update(rbm, batch, cfg, np.random.default_rng(7))
        b, eb = cd_update(rbm, batch, cfg, np.random.default_rng(7))
        assert ea == eb
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.visible_bias, b.visible_bias)
        np.testing.assert_array_equal(a.hidden_bias, b.hidden_bias)

    def test_reconstruction_error_decreases_on_repeated_pattern(self):
        rbm = random_rbm(3, 2, seed=11, scale=0.1)
        pattern = np.tile([1.0, 0.0, 1.0], (8, 1))
        cfg = TrainConfig(learning_rate_pretrain=0.2, momentum=0.5, weight_decay=0.0)
        rng = np.random.default_rng(13)
        velocity = CdVelocity.zeros_like(rbm)
        errors = []
        for _ in range(50):
            rbm, err = cd_update(rbm, pattern, cfg, rng, velocity)
            errors.append(err)
        assert np.mean(errors[-10:]) < np.mean(errors[:10])

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            cd_update(zero_rbm(3, 2), np.empty((0, 3)), TrainConfig(), np.random.default_rng(0))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cd_update(zero_rbm(3, 2), np.zeros((4, 5)), TrainConfig(), np.random.default_rng(0))

    def test_cd1_direction_correlates_with_exact_gradient(self):
        # expected CD-1 step (lr 1, no momentum/decay) vs the enumerated
        # log-likelihood gradient on a fixed small instance
        rbm = random_rbm(3, 3, seed=21, scale=0.7)
        data = np.array([[1, 0, 1], [1, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=np.float64)
        cfg = TrainConfig(learning_rate_pretrain=1.0, momentum=0.0, weight_decay=0.0)
        acc_w = np.zeros_like(rbm.weights)
        acc_b = np.zeros_like(rbm.visible_bias)
        acc_c = np.zeros_like(rbm.hidden_bias)
        n_chains = 10_000
        for i in range(n_chains):
            updated, _ = cd_update(rbm, data, cfg, np.random.default_rng(1000 + i))
            acc_w += updated.weights - rbm.weights
            acc_b += updated.visible_bias - rbm.visible_bias
            acc_c += updated.hidden_bias - rbm.hidden_bias
        grad_w, grad_b, grad_c = rbm_loglik_grad(
            rbm.weights, rbm.visible_bias, rbm.hidden_bias, data
        )
        assert np.all(np.isfinite(grad_w))
        inner = (
            np.vdot(acc_w / n_chains, grad_w)
            + np.vdot(acc_b / n_chains, grad_b)
            + np.vdot(acc_c / n_chains, grad_c)
        )
        assert inner > 0.0


def small_dbn(seed=5, n_in=4, hidden=(3, 3, 3), n_labels=7, scale=0.6):
    rng = np.random.default_rng(seed)
    sizes = [n_in, *hidden]
    rbms = []
    for i, (nv, nh) in enumerate(zip(sizes[:-1], sizes[1:])):
        rbms.append(
            Rbm(
                weights=scale * rng.standard_normal((nv, nh)),
                visible_bias=scale * rng.standard_normal(nv),
                hidden_bias=scale * rng.standard_normal(nh),
                visible_kind=GAUSSIAN if i == 0 else BERNOULLI,
            )
        )
    return Dbn(
        rbms=rbms,
        softmax_weights=scale * rng.standard_normal((sizes[-1], n_labels)),
        softmax_bias=scale * rng.standard_normal(n_labels),
        input_mean=0.1 * rng.standard_normal(n_in),
        input_std=np.full(n_in, 1.3),
    )


class TestPretrain:
    def test_paper_topology_shapes(self):
        data = np.random.default_rng(0).standard_normal((20, 13))
        cfg = TrainConfig(epochs_pretrain=0, seed=1)
        model = pretrain_dbn(data, [13, 1000, 1000, 2000], cfg)
        shapes = [(r.n_visible, r.n_hidden) for r in model.rbms]
        assert shapes == [(13, 1000), (1000, 1000), (1000, 2000)]
        assert [r.visible_kind for r in model.rbms] == [GAUSSIAN, BERNOULLI, BERNOULLI]
        assert model.softmax_weights.shape == (2000, 7)

    def test_zero_epochs_retains_seeded_initialization(self):
        data = np.random.default_rng(0).standard_normal((10, 13))
        cfg = TrainConfig(epochs_pretrain=0, seed=99)
        model = pretrain_dbn(data, [13, 8, 8, 16], cfg)
        replay = np.random.default_rng(99)
        for rbm, (nv, nh) in zip(model.rbms, [(13, 8), (8, 8), (8, 16)]):
            np.testing.assert_array_equal(rbm.weights, 0.01 * replay.standard_normal((nv, nh)))
            assert not rbm.visible_bias.any() and not rbm.hidden_bias.any()
        np.testing.assert_array_equal(
            model.softmax_weights, 0.01 * replay.standard_normal((16, 7))
        )

    def test_same_seed_same_parameters(self):
        data = np.random.default_rng(4).standard_normal((30, 5))
        cfg = TrainConfig(epochs_pretrain=3, batch_size=8, seed=12)
        a = pretrain_dbn(data, [5, 6, 6, 8], cfg)
        b = pretrain_dbn(data, [5, 6, 6, 8], cfg)
        for ra, rb in zip(a.rbms, b.rbms):
            np.testing.assert_array_equal(ra.weights, rb.weights)
            np.testing.assert_array_equal(ra.visible_bias, rb.visible_bias)
            np.testing.assert_array_equal(ra.hidden_bias, rb.hidden_bias)
        np.testing.assert_array_equal(a.softmax_weights, b.softmax_weights)

    def test_mismatched_input_size_rejected(self):
        data = np.zeros((5, 4))
        with pytest.raises(ValueError):
            pretrain_dbn(data, [13, 8], TrainConfig(epochs_pretrain=0))

    def test_empty_data_rejected(self):
        with pytest.raises(ValueError):
            pretrain_dbn(np.empty((0, 13)), [13, 8], TrainConfig(epochs_pretrain=0))


class TestForward:
    def test_zero_head_is_uniform(self):
        model = small_dbn()
        model.softmax_weights = np.zeros_like(model.softmax_weights)
        model.softmax_bias = np.zeros_like(model.softmax_bias)
        np.testing.assert_allclose(forward(model, np.zeros(4)), np.full(7, 1 / 7), atol=1e-15)

    def test_probabilities_sum_to_one(self):
        model = small_dbn(seed=8)
        x = np.random.default_rng(1).standard_normal((20, 4))
        probs = forward(model, x)
        assert probs.shape == (20, 7)
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_logit_shift_invariance(self):
        model = small_dbn(seed=9)
        x = np.random.default_rng(2).standard_normal(4)
        base = forward(model, x)
        model.softmax_bias = model.softmax_bias + 37.5
        np.testing.assert_allclose(forward(model, x), base, atol=1e-12)

    def test_unset_standardization_rejected(self):
        model = small_dbn()
        model.input_mean = None
        with pytest.raises(ValueError, match="standardization"):
            forward(model, np.zeros(4))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            forward(small_dbn(), np.zeros(5))


class TestFineTune:
    def test_zero_epochs_is_identity(self):
        model = small_dbn(seed=14)
        x = np.random.default_rng(3).standard_normal((10, 4))
        y = np.arange(10) % 7
        tuned = fine_tune(model, x, y, TrainConfig(epochs_finetune=0))
        for before, after in zip(model.rbms, tuned.rbms):
            np.testing.assert_array_equal(before.weights, after.weights)
        np.testing.assert_array_equal(model.softmax_weights, tuned.softmax_weights)
        np.testing.assert_array_equal(model.softmax_bias, tuned.softmax_bias)

    def test_gradients_match_finite_differences(self):
        model = small_dbn(seed=15)
        rng = np.random.default_rng(16)
        x = rng.standard_normal((12, 4))
        y = rng.integers(0, 7, size=12)

        def loss():
            probs = forward(model, x)
            return -float(np.mean(np.log(probs[np.arange(12), y])))

        _, d_layers, d_head = _loss_and_grads(model, x, y)
        checks = []
        for i, rbm in enumerate(model.rbms):
            checks.append((rbm.weights, d_layers[i][0]))
            checks.append((rbm.hidden_bias, d_layers[i][1]))
        checks.append((model.softmax_weights, d_head[0]))
        checks.append((model.softmax_bias, d_head[1]))
        for array, analytic in checks:
            numeric = central_difference(loss, array, epsilon=1e-5)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
            assert np.max(np.abs(analytic - numeric) / denom) < 1e-4

    def test_training_reduces_cross_entropy(self):
        rng = np.random.default_rng(17)
        centers = 4.0 * rng.standard_normal((7, 4))
        x = np.vstack([centers[k] + 0.3 * rng.standard_normal((12, 4)) for k in range(7)])
        y = np.repeat(np.arange(7), 12)
        model = small_dbn(seed=18, scale=0.1)
        model.input_mean = x.mean(axis=0)
        model.input_std = x.std(axis=0)

        def mean_ce(m):
            probs = forward(m, x)
            return -float(np.mean(np.log(probs[np.arange(len(y)), y])))

        after_one = fine_tune(model, x, y, TrainConfig(epochs_finetune=1, batch_size=16, seed=3))
        after_fifty = fine_tune(model, x, y, TrainConfig(epochs_finetune=50, batch_size=16, seed=3))
        assert mean_ce(after_fifty) < mean_ce(after_one)

    def test_label_out_of_range_rejected(self):
        model = small_dbn()
        with pytest.raises(ValueError, match="labels"):
            fine_tune(model, np.zeros((3, 4)), [0, 7, 1], TrainConfig(epochs_finetune=1))

    def test_empty_data_rejected(self):
        with pytest.raises(ValueError):
            fine_tune(small_dbn(), np.empty((0, 4)), [], TrainConfig())

    def test_head_only_freezes_stack(self):
        model = small_dbn(seed=19)
        x = np.random.default_rng(20).standard_normal((20, 4))
        y = np.arange(20) % 7
        cfg = TrainConfig(epochs_finetune=3, batch_size=8, seed=4, finetune_head_only=True)
        tuned = fine_tune(model, x, y, cfg)
        for before, after in zip(model.rbms, tuned.rbms):
            np.testing.assert_array_equal(before.weights, after.weights)
            np.testing.assert_array_equal(before.hidden_bias, after.hidden_bias)
        assert not np.array_equal(model.softmax_weights, tuned.softmax_weights)

    def test_same_seed_same_result(self):
        model = small_dbn(seed=22)
        x = np.random.default_rng(23).standard_normal((30, 4))
        y = np.arange(30) % 7
        cfg = TrainConfig(epochs_finetune=5, batch_size=8, seed=6)
        a = fine_tune(model, x, y, cfg)
        b = fine_tune(model, x, y, cfg)
        np.testing.assert_array_equal(a.softmax_weights, b.softmax_weights)
        for ra, rb in zip(a.rbms, b.rbms):
            np.testing.assert_array_equal(ra.weights, rb.weights)


class TestPredict:
    def prob_model(self, bias):
        model = small_dbn(seed=30, n_in=2, hidden=(3,))
        model.softmax_weights = np.zeros_like(model.softmax_weights)
        model.softmax_bias = np.asarray(bias, dtype=np.float64)
        return model

    def test_picks_most_probable(self):
        probs = np.array([0.1, 0.4, 0.1, 0.1, 0.1, 0.1, 0.1])
        model = self.prob_model(np.log(probs))
        x = np.array([0.3, -0.2])
        np.testing.assert_allclose(forward(model, x), probs, atol=1e-12)
        assert predict(model, x) == 1

    def test_tie_breaks_to_lowest_index(self):
        model = self.prob_model([0.0, 0.0, 5.0, 0.0, 0.0, 5.0, 0.0])
        assert predict(model, np.array([0.3, -0.2])) == 2

    def test_all_uniform_gives_label_zero(self):
        model = self.prob_model(np.zeros(7))
        assert predict(model, np.array([0.3, -0.2])) == 0

    @given(st.lists(st.integers(-8, 8), min_size=2, max_size=7))
    @settings(max_examples=100, deadline=None)
    def test_argmax_invariant_under_monotone_transforms(self, logits):
        z = np.array(logits, dtype=np.float64)
        base = np.argmax(z)
        shifted = z - z.max()
        probs = np.exp(shifted) / np.exp(shifted).sum()
        assert np.argmax(probs) == base
        for transform in (lambda v: 2.0 * v, lambda v: v + 3.0, lambda v: v**3):
            assert np.argmax(transform(z)) == base


class TestPersistence:
    def test_round_trip_is_bit_exact(self, tmp_path):
        model = small_dbn(seed=40)
        path = tmp_path / "model.dbn"
        save_model(model, path)
        loaded = load_model(path)
        assert len(loaded.rbms) == len(model.rbms)
        for a, b in zip(model.rbms, loaded.rbms):
            assert a.visible_kind == b.visible_kind
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.visible_bias, b.visible_bias)
            np.testing.assert_array_equal(a.hidden_bias, b.hidden_bias)
        np.testing.assert_array_equal(model.softmax_weights, loaded.softmax_weights)
        np.testing.assert_array_equal(model.softmax_bias, loaded.softmax_bias)
        np.testing.assert_array_equal(model.input_mean, loaded.input_mean)
        np.testing.assert_array_equal(model.input_std, loaded.input_std)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.dbn"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(ModelFormatError, match="magic"):
            load_model(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "v2.dbn"
        import struct

        path.write_bytes(b"DBN1" + struct.pack("<II", 2, 1) + b"\x00" * 64)
        with pytest.raises(ModelFormatError, match="version"):
            load_model(path)

    def test_truncated_file_rejected(self, tmp_path):
        model = small_dbn(seed=41)
        path = tmp_path / "t.dbn"
        save_model(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ModelFormatError, match="truncated"):
            load_model(path)

    def test_unset_standardization_rejected(self, tmp_path):
        model = small_dbn(seed=42)
        model.input_mean = None
        model.input_std = None
        with pytest.raises(ValueError, match="standardization"):
            save_model(model, tmp_path / "x.dbn")


class TestConfigValidation:
    def test_momentum_bounds(self):
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate_finetune=-0.1)

    def test_cd_steps_positive(self):
        with pytest.raises(ValueError):
            TrainConfig(cd_steps=0)

    def test_dbn_rejects_wrong_first_kind(self):
        rbm = zero_rbm(4, 3, BERNOULLI)
        with pytest.raises(ValueError):
            Dbn([rbm], np.zeros((3, 7)), np.zeros(7))

    def test_dbn_rejects_unchained_sizes(self):
        first = zero_rbm(4, 3, GAUSSIAN)
        second = zero_rbm(5, 2, BERNOULLI)
        with pytest.raises(ValueError):
            Dbn([first, second], np.zeros((2, 7)), np.zeros(7))
