import numpy as np
from django.test import SimpleTestCase
from scipy.special import softmax

from simulator.exceptions import ConfigError, SpecError
from simulator.flcore import (
    Dataset,
    GradientTensor,
    ModelParams,
    ModelSpec,
    aggregate,
    backprop_cnn,
    backprop_fc,
    evaluate,
    finite_gradient,
    forward_backward,
    global_update,
    init_params,
    max_pool,
    max_pool_backward,
    one_hot,
    partition_iid,
    partition_noniid,
    predict,
    select_batch,
)


def numeric_gradient(params, batch, backprop, eps=1e-6):
    flat = params.flatten()
    numeric = np.zeros_like(flat)
    for index in range(flat.size):
        step = np.zeros_like(flat)
        step[index] = eps
        plus = ModelParams.from_flat(params.spec, flat + step, dtype=np.float64)
        minus = ModelParams.from_flat(params.spec, flat - step, dtype=np.float64)
        numeric[index] = (backprop(plus, batch).loss - backprop(minus, batch).loss) / (2 * eps)
    return numeric


def analytic_gradient(params, batch, backprop):
    grads = backprop(params, batch).grads
    return np.concatenate([grads[name].ravel() for name, _ in params.spec.layer_shapes()])


def labelled_dataset(n_classes=10, per_class=20, shape=(1, 4, 4), seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(n_classes), per_class)
    x = rng.random((y.size,) + shape)
    return Dataset(x=x, y=y, n_classes=n_classes)


class FiniteDifferenceTests(SimpleTestCase):
    def assert_matches_finite_differences(self, spec, backprop, batch_size=3):
        params = init_params(spec, seed=4, dtype=np.float64)
        rng = np.random.default_rng(11)
        x = rng.random((batch_size,) + spec.input_shape)
        y = one_hot(rng.integers(0, spec.n_classes, size=batch_size), spec.n_classes, dtype=np.float64)

        np.testing.assert_allclose(
            analytic_gradient(params, (x, y), backprop),
            numeric_gradient(params, (x, y), backprop),
            rtol=1e-4,
            atol=1e-7,
        )

    def test_mlp_sigmoid(self):
        spec = ModelSpec(input_shape=(1, 4, 4), n_classes=3, hidden=(5, 4), activation="sigmoid")
        self.assert_matches_finite_differences(spec, backprop_fc)

    def test_mlp_relu(self):
        spec = ModelSpec(input_shape=(1, 4, 4), n_classes=3, hidden=(6,), activation="relu")
        self.assert_matches_finite_differences(spec, backprop_fc)

    def test_cnn_same_padding_two_conv_layers(self):
        spec = ModelSpec(
            architecture="cnn",
            input_shape=(1, 8, 8),
            n_classes=3,
            hidden=(),
            activation="sigmoid",
            conv_channels=(2, 3),
            padding="same",
        )
        self.assert_matches_finite_differences(spec, backprop_cnn, batch_size=2)

    def test_cnn_valid_padding_with_hidden_layer(self):
        spec = ModelSpec(
            architecture="cnn",
            input_shape=(1, 6, 6),
            n_classes=3,
            hidden=(4,),
            activation="sigmoid",
            conv_channels=(2,),
            padding="valid",
        )
        self.assert_matches_finite_differences(spec, backprop_cnn, batch_size=2)


class SeededGradientCheckTests(SimpleTestCase):
    seeds = range(20)

    def assert_mostly_matches(self, spec, backprop, batch_size):
        for seed in self.seeds:
            with self.subTest(seed=seed):
                params = init_params(spec, seed=seed, dtype=np.float64)
                rng = np.random.default_rng(1000 + seed)
                x = rng.random((batch_size,) + spec.input_shape)
                y = one_hot(rng.integers(0, spec.n_classes, size=batch_size), spec.n_classes, dtype=np.float64)

                close = np.isclose(
                    analytic_gradient(params, (x, y), backprop),
                    numeric_gradient(params, (x, y), backprop),
                    rtol=1e-3,
                    atol=1e-7,
                )

                self.assertGreaterEqual(close.mean(), 0.95)

    def test_two_layer_ten_unit_mlp(self):
        spec = ModelSpec(input_shape=(1, 8, 8), n_classes=10, hidden=(10,), activation="sigmoid")
        self.assert_mostly_matches(spec, backprop_fc, batch_size=4)

    def test_cnn_on_8x8_inputs(self):
        spec = ModelSpec(
            architecture="cnn",
            input_shape=(1, 8, 8),
            n_classes=4,
            hidden=(),
            activation="relu",
            conv_channels=(2, 3),
            padding="same",
        )
        self.assert_mostly_matches(spec, backprop_cnn, batch_size=2)


class BackpropTests(SimpleTestCase):
    def setUp(self):
        self.spec = ModelSpec(input_shape=(1, 4, 4), n_classes=4, hidden=(8,), activation="sigmoid")
        self.params = init_params(self.spec, seed=1, dtype=np.float64)
        rng = np.random.default_rng(2)
        self.x = rng.random((5, 1, 4, 4))
        self.y = np.array([0, 1, 2, 3, 0])

    def test_output_error_is_softmax_minus_target(self):
        result = backprop_fc(self.params, (self.x, self.y))

        expected = softmax(predict(self.params, self.x), axis=1) - one_hot(self.y, 4, dtype=np.float64)
        np.testing.assert_allclose(result.output_delta, expected, atol=1e-12)
        self.assertTrue(np.all(np.abs(result.output_delta) < 1.0))

    def test_integer_and_one_hot_labels_agree(self):
        first = backprop_fc(self.params, (self.x, self.y))
        second = backprop_fc(self.params, (self.x, one_hot(self.y, 4, dtype=np.float64)))

        self.assertEqual(first.loss, second.loss)

    def test_zero_weights_give_uniform_prediction(self):
        zeros = ModelParams.from_flat(self.spec, np.zeros(self.spec.n_params), dtype=np.float64)

        result = backprop_fc(zeros, (self.x, self.y))

        self.assertAlmostEqual(result.loss, np.log(4))
        np.testing.assert_array_equal(result.grads["fc1.w"], np.zeros((8, 16)))

    def test_gradient_keeps_params_dtype(self):
        params = init_params(self.spec, seed=1)

        _loss, gradient = forward_backward(params, (self.x, self.y))

        self.assertEqual(gradient.values.dtype, np.float32)
        self.assertEqual(len(gradient), self.spec.n_params)

    def test_batch_shape_mismatch(self):
        with self.assertRaises(SpecError):
            backprop_fc(self.params, (np.zeros((2, 10)), np.array([0, 1])))
        with self.assertRaises(SpecError):
            backprop_fc(self.params, (np.zeros((0, 1, 4, 4)), np.array([], dtype=int)))

    def test_wrong_architecture(self):
        with self.assertRaises(SpecError):
            backprop_cnn(self.params, (self.x, self.y))


class ConvolutionTests(SimpleTestCase):
    def test_pool_error_goes_to_one_cell_per_window(self):
        a = np.random.default_rng(0).random((2, 3, 4, 6))

        pooled, argmax = max_pool(a)
        routed = max_pool_backward(np.ones_like(pooled), argmax, a.shape)

        self.assertEqual(pooled.shape, (2, 3, 2, 3))
        windows = routed.reshape(2, 3, 2, 2, 3, 2).sum(axis=(3, 5))
        np.testing.assert_array_equal(windows, np.ones((2, 3, 2, 3)))
        np.testing.assert_array_equal(np.sort(a[routed == 1]), np.sort(pooled.ravel()))

    def test_zero_input_gives_zero_kernel_gradient(self):
        spec = ModelSpec(
            architecture="cnn", input_shape=(1, 8, 8), n_classes=3, hidden=(), conv_channels=(2,)
        )
        params = init_params(spec, seed=0, dtype=np.float64)

        result = backprop_cnn(params, (np.zeros((2, 1, 8, 8)), np.array([0, 1])))

        np.testing.assert_array_equal(result.grads["conv1.w"], np.zeros((2, 1, 3, 3)))

    def test_odd_feature_map_is_rejected(self):
        with self.assertRaises(SpecError):
            ModelSpec(architecture="cnn", input_shape=(1, 7, 7), conv_channels=(2,), padding="same")

    def test_layer_shapes(self):
        spec = ModelSpec(architecture="cnn", input_shape=(1, 8, 8), hidden=(32,), conv_channels=(8, 16))

        shapes = dict(spec.layer_shapes())

        self.assertEqual(shapes["conv2.w"], (16, 8, 3, 3))
        self.assertEqual(shapes["fc1.w"], (32, 16 * 2 * 2))
        self.assertEqual(shapes["fc2.w"], (10, 32))


class AggregationTests(SimpleTestCase):
    def test_weighted_mean(self):
        result = aggregate(
            [GradientTensor(np.array([1.0, 2.0])), GradientTensor(np.array([3.0, 4.0]))],
            [0.25, 0.75],
            round=3,
        )

        np.testing.assert_allclose(result.values, [2.5, 3.5])
        self.assertEqual(result.round, 3)
        self.assertEqual(result.values.dtype, np.float64)

    def test_float32_gradients_stay_float32(self):
        gradients = [GradientTensor(np.array([1.0, 2.0], dtype=np.float32))] * 2

        self.assertEqual(aggregate(gradients, [0.5, 0.5]).values.dtype, np.float32)

    def test_non_finite_values_count_as_zero(self):
        result = aggregate(
            [GradientTensor(np.array([np.nan, 1.0, np.inf])), GradientTensor(np.array([1.0, 1.0, 1.0]))],
            [0.5, 0.5],
        )

        np.testing.assert_allclose(result.values, [0.5, 1.0, 0.5])

    def test_large_values_stay_finite(self):
        big = np.finfo(np.float32).max
        result = aggregate([GradientTensor(np.array([big], dtype=np.float32))] * 2, [0.5, 0.5])

        self.assertTrue(np.all(np.isfinite(result.values)))

    def test_invalid_inputs(self):
        one = GradientTensor(np.ones(3))
        with self.assertRaises(ConfigError):
            aggregate([], [])
        with self.assertRaises(ConfigError):
            aggregate([one, one], [0.5, 0.4])
        with self.assertRaises(ConfigError):
            aggregate([one], [0.5, 0.5])
        with self.assertRaises(SpecError):
            aggregate([one, GradientTensor(np.ones(4))], [0.5, 0.5])

    def test_finite_gradient(self):
        gradient = GradientTensor(np.array([np.nan, np.inf, -np.inf, 1.5], dtype=np.float32))

        cleaned, replaced = finite_gradient(gradient)

        big = np.finfo(np.float32).max
        np.testing.assert_array_equal(cleaned.values, np.array([0.0, big, -big, 1.5], dtype=np.float32))
        self.assertEqual(replaced, 3)

    def test_fedsgd_matches_centralised_gradient(self):
        spec = ModelSpec(input_shape=(1, 4, 4), n_classes=4, hidden=(6,), activation="sigmoid")
        params = init_params(spec, seed=5, dtype=np.float64)
        dataset = labelled_dataset(n_classes=4, per_class=10)
        clients = partition_noniid(dataset, 4, 2, seed=0)

        gradients = [forward_backward(params, (client.x, client.y))[1] for client in clients]
        combined = aggregate(gradients, [client.weight for client in clients])
        _loss, central = forward_backward(params, (dataset.x, dataset.y))

        np.testing.assert_allclose(combined.values, central.values, rtol=1e-5, atol=1e-8)
        self.assertEqual(combined.values.dtype, np.float64)

        federated = global_update(params, combined, lr=0.1)
        centralised = global_update(params, central, lr=0.1)

        np.testing.assert_allclose(federated.flatten(), centralised.flatten(), rtol=1e-6, atol=1e-12)


class UpdateTests(SimpleTestCase):
    def setUp(self):
        self.spec = ModelSpec(input_shape=(1, 2, 2), n_classes=2, hidden=(3,))

    def test_single_sgd_step(self):
        params = ModelParams.from_flat(self.spec, np.zeros(self.spec.n_params))

        updated = global_update(params, GradientTensor(np.ones(self.spec.n_params)), lr=0.1)

        np.testing.assert_allclose(updated.flatten(), np.full(self.spec.n_params, -0.1), rtol=1e-6)
        self.assertEqual(updated.dtype, np.float32)

    def test_steps_add_up(self):
        params = init_params(self.spec, seed=0, dtype=np.float64)
        rng = np.random.default_rng(1)
        g1 = GradientTensor(rng.normal(size=self.spec.n_params))
        g2 = GradientTensor(rng.normal(size=self.spec.n_params))

        stepped = global_update(global_update(params, g1, lr=0.5), g2, lr=0.5)
        combined = global_update(params, GradientTensor(g1.values + g2.values), lr=0.5)

        np.testing.assert_allclose(stepped.flatten(), combined.flatten(), atol=1e-12)

    def test_update_is_clipped_to_dtype_range(self):
        params = ModelParams.from_flat(self.spec, np.zeros(self.spec.n_params))
        big = np.full(self.spec.n_params, np.finfo(np.float32).max, dtype=np.float32)

        updated = global_update(params, GradientTensor(big), lr=10.0)

        self.assertTrue(np.all(np.isfinite(updated.flatten())))

    def test_wrong_length(self):
        params = init_params(self.spec, seed=0)
        with self.assertRaises(SpecError):
            global_update(params, GradientTensor(np.ones(3)))


class EvaluationTests(SimpleTestCase):
    def test_perfect_classifier(self):
        spec = ModelSpec(input_shape=(1, 1, 3), n_classes=3, hidden=())
        params = ModelParams(spec=spec, arrays={"fc1.w": 10 * np.eye(3), "fc1.b": np.zeros(3)})

        self.assertEqual(evaluate(params, np.eye(3).reshape(3, 1, 1, 3), [0, 1, 2]), 1.0)
        self.assertEqual(evaluate(params, np.eye(3).reshape(3, 1, 1, 3), [1, 2, 0]), 0.0)

    def test_order_does_not_matter(self):
        spec = ModelSpec(input_shape=(1, 4, 4), n_classes=10, hidden=(8,))
        params = init_params(spec, seed=2)
        dataset = labelled_dataset()
        order = np.random.default_rng(0).permutation(len(dataset))

        self.assertEqual(
            evaluate(params, dataset.x, dataset.y),
            evaluate(params, dataset.x[order], dataset.y[order]),
        )


class ParamsTests(SimpleTestCase):
    def setUp(self):
        self.spec = ModelSpec(input_shape=(1, 4, 4), n_classes=3, hidden=(5,))

    def test_init_is_seeded(self):
        first, second, other = init_params(self.spec, 3), init_params(self.spec, 3), init_params(self.spec, 4)

        np.testing.assert_array_equal(first.flatten(), second.flatten())
        self.assertFalse(np.array_equal(first.flatten(), other.flatten()))
        np.testing.assert_array_equal(first["fc1.b"], np.zeros(5, dtype=np.float32))

    def test_uniform_init_respects_bound(self):
        params = init_params(self.spec, 0, dtype=np.float64, weight_bound=0.5)

        self.assertLess(np.abs(params.flatten()).max(), 0.5)

    def test_flat_vector_restores_layers(self):
        params = init_params(self.spec, 0)

        restored = ModelParams.from_flat(self.spec, params.flatten())

        for name, _shape in self.spec.layer_shapes():
            np.testing.assert_array_equal(restored[name], params[name])
        with self.assertRaises(SpecError):
            ModelParams.from_flat(self.spec, np.zeros(3))

    def test_bad_spec(self):
        for kwargs in ({"architecture": "rnn"}, {"activation": "tanh"}, {"n_classes": 1}, {"hidden": (0,)}):
            with self.assertRaises(SpecError):
                ModelSpec(**kwargs)


class PartitionTests(SimpleTestCase):
    def test_each_client_gets_its_classes(self):
        dataset = labelled_dataset()

        clients = partition_noniid(dataset, 10, 2, seed=7)

        self.assertEqual(sum(len(client) for client in clients), len(dataset))
        self.assertAlmostEqual(sum(client.weight for client in clients), 1.0)
        for client in clients:
            self.assertEqual(len(client.classes), 2)
            self.assertEqual(tuple(np.unique(client.y)), client.classes)
        holders = [sum(label in client.classes for client in clients) for label in range(10)]
        self.assertEqual(holders, [2] * 10)

    def test_many_clients(self):
        dataset = labelled_dataset(per_class=30)

        clients = partition_noniid(dataset, 100, 2, seed=1)

        self.assertEqual(len(clients), 100)
        self.assertEqual(sum(len(client) for client in clients), len(dataset))
        self.assertTrue(all(np.unique(client.y).size == 2 for client in clients))

    def test_partition_is_seeded(self):
        dataset = labelled_dataset()

        first = partition_noniid(dataset, 5, 2, seed=3)
        second = partition_noniid(dataset, 5, 2, seed=3)

        self.assertEqual([c.classes for c in first], [c.classes for c in second])
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.y, b.y)

    def test_single_client_gets_everything(self):
        dataset = labelled_dataset()

        (client,) = partition_noniid(dataset, 1, 2, seed=0)

        self.assertEqual(len(client), len(dataset))
        self.assertEqual(client.weight, 1.0)

    def test_impossible_splits(self):
        dataset = labelled_dataset()
        with self.assertRaises(ConfigError):
            partition_noniid(dataset, 3, 2, seed=0)
        with self.assertRaises(ConfigError):
            partition_noniid(dataset, 20, 11, seed=0)
        with self.assertRaises(ConfigError):
            partition_noniid(dataset, 0, 2, seed=0)

    def test_iid_split(self):
        dataset = labelled_dataset(per_class=7)

        clients = partition_iid(dataset, 6, seed=0)

        sizes = [len(client) for client in clients]
        self.assertLessEqual(max(sizes) - min(sizes), 1)
        self.assertEqual(sum(sizes), len(dataset))
        with self.assertRaises(ConfigError):
            partition_iid(dataset, len(dataset) + 1, seed=0)

    def test_batch_selection(self):
        (client,) = partition_iid(labelled_dataset(per_class=5), 1, seed=0)

        full_x, _full_y = select_batch(client, 0, seed=0, round=1)
        first = select_batch(client, 5, seed=0, round=1)
        again = select_batch(client, 5, seed=0, round=1)
        later = select_batch(client, 5, seed=0, round=2)

        self.assertEqual(len(full_x), len(client))
        self.assertEqual(len(first[1]), 5)
        np.testing.assert_array_equal(first[0], again[0])
        self.assertFalse(np.array_equal(first[0], later[0]))
