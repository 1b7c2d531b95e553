import math

import numpy as np
import pytest

from sge.data import DatasetConfig, SyntheticDataset, class_templates, make_datasets
from sge.errors import DivergedLoss, ShapeIncompatible
from sge.gradcheck import numeric_gradient, relative_error
from sge.nn import (LayerSpec, build_model, conv, dense, global_avg_pool, maxpool, relu, sge, softmax_xent,
                    toy_specs)
from sge.op import sigmoid
from sge.train import TrainConfig, evaluate, substream_seed, train

SMALL = [conv(1, 8, 3), relu(), sge(4), global_avg_pool(), dense(8, 4), softmax_xent()]


def tiny_data(n=64, seed=0, size=8):
    rng = np.random.default_rng(seed)
    images = rng.standard_normal((n, 1, size, size)).astype(np.float32)
    labels = rng.integers(0, 4, size=n)
    return SyntheticDataset(images, labels, DatasetConfig(image_size=size))


class TestBuildModel:
    def test_small_model_sge_params(self):
        m = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        assert m.num_params("sge") == 8
        sge_layer = m.layers[2]
        assert np.all(sge_layer.params["gamma"] == 0) and np.all(sge_layer.params["beta"] == 1)

    def test_indivisible_groups(self):
        specs = [conv(1, 8, 3), relu(), sge(3), global_avg_pool(), dense(8, 4), softmax_xent()]
        with pytest.raises(ShapeIncompatible, match="layer 2"):
            build_model(specs, seed=0, input_shape=(1, 8, 8))

    @pytest.mark.parametrize("specs", [
        [conv(2, 8, 3), relu(), global_avg_pool(), dense(8, 4), softmax_xent()],
        [conv(1, 8, 3), global_avg_pool(), dense(6, 4), softmax_xent()],
        [conv(1, 8, 3), maxpool(3), global_avg_pool(), dense(8, 4), softmax_xent()],
        [conv(1, 8, 3), global_avg_pool(), dense(8, 4)],
        [conv(1, 8, 3), softmax_xent()],
    ])
    def test_incompatible_shapes(self, specs):
        with pytest.raises(ShapeIncompatible):
            build_model(specs, seed=0, input_shape=(1, 8, 8))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            LayerSpec("batchnorm")

    def test_deterministic_init(self):
        a = build_model(SMALL, seed=3, input_shape=(1, 8, 8))
        b = build_model(SMALL, seed=3, input_shape=(1, 8, 8))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and pa.tobytes() == pb.tobytes()
        c = build_model(SMALL, seed=4, input_shape=(1, 8, 8))
        assert a.layers[0].params["weight"].tobytes() != c.layers[0].params["weight"].tobytes()

    def test_spec_dict_round_trip(self):
        for s in SMALL:
            assert LayerSpec.from_dict(s.to_dict()) == s


def _perturb_params(model, rng):
    for _, p in model.named_parameters():
        p[...] = rng.standard_normal(p.shape) * 0.5


class TestEndToEndGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_all_parameters_match_finite_differences(self, seed):
        specs = [conv(1, 4, 3), relu(), maxpool(2), conv(4, 4, 3, stride=1), relu(),
                 sge(2, gamma_init=0.5), global_avg_pool(), dense(4, 3), softmax_xent()]
        model = build_model(specs, seed=seed, input_shape=(1, 6, 6), dtype=np.float64)
        rng = np.random.default_rng(100 + seed)
        _perturb_params(model, rng)
        x = rng.standard_normal((3, 1, 6, 6))
        y = rng.integers(0, 3, size=3)
        model.loss(x, y)
        dx = model.backward()
        analytic = {name: g.copy() for name, g in model.named_grads()}

        def loss():
            return model.loss(x, y)

        worst = 0.0
        for name, p in model.named_parameters():
            num = numeric_gradient(loss, p, step=1e-6)
            worst = max(worst, relative_error(analytic[name], num, floor=1e-7).max())
        num_x = numeric_gradient(loss, x, step=1e-6)
        worst = max(worst, relative_error(dx, num_x, floor=1e-7).max())
        assert worst < 1e-3

    def test_strided_conv_gradients(self):
        specs = [conv(2, 3, 3, stride=2, pad=1), relu(), global_avg_pool(), dense(3, 2), softmax_xent()]
        model = build_model(specs, seed=0, input_shape=(2, 7, 7), dtype=np.float64)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 2, 7, 7))
        y = np.array([0, 1])
        model.loss(x, y)
        model.backward()
        w = model.layers[0].params["weight"]
        num = numeric_gradient(lambda: model.loss(x, y), w, step=1e-6)
        assert relative_error(model.layers[0].grads["weight"], num).max() < 1e-4


class TestZeroGammaEquivalence:
    def test_sge_site_is_constant_scaling(self):
        with_sge = build_model(toy_specs("sge", groups=8, beta_init=1.0), seed=0)
        baseline = build_model(toy_specs("none"), seed=0)
        x = np.random.default_rng(0).standard_normal((4, 1, 16, 16)).astype(np.float32)
        idx = with_sge.sge_layers()[0]
        pre, post = with_sge.site_activations(x, idx)
        base_features = baseline.site_activations(x, idx)[0]
        # same weight stream up to the site, so the pre-SGE maps agree exactly
        assert pre.tobytes() == base_features.tobytes()
        np.testing.assert_allclose(post, pre * np.float32(sigmoid(1.0)), rtol=1e-6)


class TestEvaluate:
    def test_uniform_logits(self):
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        dense_layer = model.layers[4]
        dense_layer.params["weight"][...] = 0
        dense_layer.params["bias"][...] = 0
        data = tiny_data(200)
        acc, loss = evaluate(model, data)
        assert loss == pytest.approx(math.log(4), abs=1e-5)
        # argmax of a tie is class 0, so accuracy is the share of label 0
        assert acc == pytest.approx(np.mean(data.labels == 0))
        assert abs(acc - 0.25) < 3 * math.sqrt(0.25 * 0.75 / 200)

    def test_deterministic_and_pure(self):
        model = build_model(SMALL, seed=1, input_shape=(1, 8, 8))
        data = tiny_data()
        before = [p.copy() for _, p in model.named_parameters()]
        assert evaluate(model, data) == evaluate(model, data)
        for b, (_, p) in zip(before, model.named_parameters()):
            assert b.tobytes() == p.tobytes()

    def test_hand_computed_cross_entropy(self):
        specs = [global_avg_pool(), dense(2, 2), softmax_xent()]
        model = build_model(specs, seed=0, input_shape=(2, 1, 1), dtype=np.float64)
        model.layers[1].params["weight"][...] = np.eye(2)
        model.layers[1].params["bias"][...] = 0
        images = np.array([[1.0, 0.0], [0.5, 2.0]]).reshape(2, 2, 1, 1)
        labels = np.array([0, 0])
        data = SyntheticDataset(images, labels, DatasetConfig())
        acc, loss = evaluate(model, data)
        l1 = -math.log(math.e / (math.e + 1))
        l2 = -math.log(math.exp(0.5) / (math.exp(0.5) + math.exp(2.0)))
        assert loss == pytest.approx((l1 + l2) / 2, abs=1e-6)
        assert acc == 0.5

    def test_shape_mismatch(self):
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        with pytest.raises(ShapeIncompatible):
            evaluate(model, tiny_data(size=6))


class TestTrain:
    def test_zero_epochs(self):
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        report = train(model, tiny_data(), TrainConfig(epochs=0), tiny_data(seed=1))
        assert [r[:2] for r in report.rows] == [(0, "train"), (0, "test")]

    def test_single_batch_overfit(self):
        rng = np.random.default_rng(0)
        templates = class_templates(4)
        images = np.zeros((8, 1, 8, 8), dtype=np.float32)
        labels = np.arange(8) % 4
        for i, lab in enumerate(labels):
            r, c = rng.integers(0, 4, size=2)
            images[i, 0, r:r + 5, c:c + 5] = templates[lab]
        images += 0.1 * rng.standard_normal(images.shape).astype(np.float32)
        data = SyntheticDataset(images, labels, DatasetConfig(image_size=8))
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        cfg = TrainConfig(learning_rate=0.05, epochs=200, batch_size=8, weight_decay=0.0, decay_epochs=(1000,))
        train(model, data, cfg)
        acc, _ = evaluate(model, data)
        assert acc == 1.0

    def test_bitwise_reproducible(self):
        def once():
            model = build_model(SMALL, seed=2, input_shape=(1, 8, 8))
            return train(model, tiny_data(), TrainConfig(epochs=2, seed=5), tiny_data(seed=1))

        a, b = once(), once()
        assert a.rows == b.rows
        assert a.to_csv() == b.to_csv()

    def test_diverged_loss(self):
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        data = tiny_data()
        data.images[3] = np.float32(1e30)
        with pytest.raises(DivergedLoss) as info:
            train(model, data, TrainConfig(epochs=1, batch_size=64, learning_rate=1.0))
        # step 0 is finite but huge; the update it triggers blows up step 1
        assert info.value.step == 1

    def test_frozen_parameters(self):
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        train(model, tiny_data(), TrainConfig(epochs=1), frozen={"2.gamma"})
        assert np.all(model.layers[2].params["gamma"] == 0)
        assert np.any(model.layers[2].params["beta"] != 1)

    def test_sge_params_excluded_from_decay_by_default(self):
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        cfg = TrainConfig(epochs=1, learning_rate=1e-3, weight_decay=10.0)
        from sge.train import SGD
        opt = SGD(model, cfg)
        assert opt.no_decay == {"2.gamma", "2.beta"}
        assert SGD(model, TrainConfig(decay_sge=True)).no_decay == set()

    def test_csv_format(self):
        model = build_model(SMALL, seed=0, input_shape=(1, 8, 8))
        report = train(model, tiny_data(), TrainConfig(epochs=1, seed=9), tiny_data(seed=1))
        lines = report.to_csv().splitlines()
        assert "# seed=9" in lines
        header = [l for l in lines if not l.startswith("#")][0]
        assert header == "epoch,split,loss,accuracy"
        assert len([l for l in lines if not l.startswith("#")]) == 1 + 4

    def test_lr_schedule(self):
        cfg = TrainConfig(learning_rate=0.05, epochs=12)
        assert cfg.milestones == (8,)
        assert cfg.lr_at(7) == 0.05
        assert cfg.lr_at(8) == pytest.approx(0.005)

    def test_schedule_follows_epochs_after_replace(self):
        from dataclasses import replace
        assert replace(TrainConfig(epochs=12), epochs=3).milestones == (2,)
        assert TrainConfig(epochs=1).milestones == ()
        assert TrainConfig(epochs=9, decay_epochs=[4, 7]).milestones == (4, 7)


class TestData:
    def test_deterministic(self):
        cfg = DatasetConfig(train_size=20, test_size=10, seed=4)
        (a, b), (c, d) = make_datasets(cfg), make_datasets(cfg)
        assert a.images.tobytes() == c.images.tobytes() and b.labels.tobytes() == d.labels.tobytes()

    def test_seed_changes_data(self):
        a, _ = make_datasets(DatasetConfig(train_size=20, test_size=10, seed=1))
        b, _ = make_datasets(DatasetConfig(train_size=20, test_size=10, seed=2))
        assert a.images.tobytes() != b.images.tobytes()

    def test_one_class_glyph_without_noise(self):
        cfg = DatasetConfig(train_size=30, test_size=1, noise=0.0, clutter=0)
        train_set, _ = make_datasets(cfg)
        templates = class_templates(4)
        for img, lab in zip(train_set.images[:, 0], train_set.labels):
            hits = [(r, c) for r in range(12) for c in range(12)
                    if np.array_equal(img[r:r + 5, c:c + 5], templates[lab])]
            assert hits
            assert img.sum() == templates[lab].sum()

    def test_substreams_differ(self):
        assert len({substream_seed(0, s) for s in ("weights", "data", "shuffle")}) == 3
        assert substream_seed(1, "data") == substream_seed(1, "data")
