import numpy as np
import numpy.testing as npt
import pytest

from safemax_lab import denoiser as dn
from safemax_lab import diffusion as df
from safemax_lab import gradcore as gc
from safemax_lab.errors import DimensionError, DomainError
from safemax_lab.harness import generate_toy_dataset


def small_model(seed=0, d=2, K=4, width=16, depth=2, embed=8, T=20):
    return dn.init_model(d, K, width, depth, embed, T, np.random.default_rng(seed))


@pytest.fixture(scope="module")
def schedule():
    return df.build_schedule(20, 1e-3, 0.2)


@pytest.fixture(scope="module")
def dataset():
    return generate_toy_dataset(4, 200, "ring", 0.35, seed=0)


class TestInitModel:
    def test_same_seed_bit_identical(self):
        a, b = small_model(7), small_model(7)
        assert a.params.names() == b.params.names()
        for name, value in a.params.items():
            npt.assert_array_equal(value, b.params[name])

    def test_output_head_shape(self):
        model = small_model(d=2, K=4)
        assert model.params["head_w"].shape[1] == 2
        assert model.params["head_b"].shape == (2,)

    def test_parameter_count_closed_form(self):
        d, K, width, depth, embed = 3, 5, 16, 3, 8
        model = dn.init_model(d, K, width, depth, embed, 10, np.random.default_rng(0))
        concat = d + 2 * embed
        expected = (K * embed                      # class table
                    + embed * embed + embed        # time projection
                    + concat * width + width       # first hidden layer
                    + (depth - 1) * (width * width + width)
                    + width * d + d)               # output head
        assert model.params.total_size() == expected

    def test_rejects_single_class(self):
        with pytest.raises(DomainError):
            small_model(K=1)

    def test_rejects_odd_embed(self):
        with pytest.raises(DomainError):
            small_model(embed=7)


class TestTimestepEmbedding:
    def test_bounded_by_one(self):
        for t in (1, 7, 100, 9999):
            emb = dn.timestep_embedding(t, 12)
            assert np.all(np.abs(emb) <= 1.0)

    def test_zero_step_alternates(self):
        emb = dn.timestep_embedding(0, 8)
        npt.assert_array_equal(emb, [0, 1, 0, 1, 0, 1, 0, 1])

    def test_adjacent_steps_differ(self):
        a = dn.timestep_embedding(1, 16)
        b = dn.timestep_embedding(2, 16)
        assert np.linalg.norm(a - b) > 0

    def test_all_steps_distinct(self):
        rows = np.stack([dn.timestep_embedding(t, 16) for t in range(1, 101)])
        # pairwise distinct up to T=100
        dists = np.linalg.norm(rows[:, None] - rows[None, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        assert dists.min() > 1e-6

    def test_odd_dimension_rejected(self):
        with pytest.raises(DomainError):
            dn.timestep_embedding(1, 5)


class TestPredictEps:
    def test_deterministic(self, schedule):
        model = small_model(3)
        x = np.random.default_rng(0).standard_normal((4, 2))
        labels = np.array([0, 1, 2, 3])
        t = np.array([1, 5, 10, 20])
        a = dn.predict_eps(model, x, labels, t)
        b = dn.predict_eps(model, x, labels, t)
        npt.assert_array_equal(a, b)

    def test_class_conditioning_changes_output(self):
        model = small_model(4)
        x = np.zeros((1, 2))
        t = np.array([3])
        out0 = dn.predict_eps(model, x, np.array([0]), t)
        out1 = dn.predict_eps(model, x, np.array([1]), t)
        assert np.linalg.norm(out0 - out1) > 0

    def test_rows_are_independent(self):
        model = small_model(5)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 2))
        labels = np.array([1, 2])
        t = np.array([4, 9])
        full = dn.predict_eps(model, x, labels, t)
        first = dn.predict_eps(model, x[:1], labels[:1], t[:1])
        # same row through different batch shapes: equal up to BLAS summation order
        npt.assert_allclose(full[0], first[0], rtol=1e-12, atol=1e-14)

    def test_label_out_of_range(self):
        model = small_model(0)
        with pytest.raises(DomainError):
            dn.predict_eps(model, np.zeros((1, 2)), np.array([4]), np.array([1]))

    def test_step_out_of_range(self):
        model = small_model(0)
        with pytest.raises(DomainError):
            dn.predict_eps(model, np.zeros((1, 2)), np.array([0]), np.array([21]))

    def test_wrong_feature_count(self):
        model = small_model(0)
        with pytest.raises(DimensionError):
            dn.predict_eps(model, np.zeros((1, 3)), np.array([0]), np.array([1]))


class TestTrainStep:
    def test_loss_non_negative(self, dataset, schedule):
        model = small_model(1)
        batch = df.sample_latent_batch(dataset, schedule, 16, np.random.default_rng(0))
        assert dn.train_step(model, batch, 0.01) >= 0.0

    def test_gradient_matches_finite_differences(self, dataset, schedule):
        model = small_model(2)
        batch = df.sample_latent_batch(dataset, schedule, 8, np.random.default_rng(3))

        def loss_fn(tape, params):
            pnodes = tape.params(params)
            pred = dn.denoiser_forward(tape, pnodes, model.arch,
                                       batch.x_t, batch.labels, batch.t)
            return gc.mse_loss(pred, batch.eps)

        err = gc.grad_check(loss_fn, model.params, epsilon=1e-5, probes=40,
                            rng=np.random.default_rng(0))
        assert err < 1e-4

    def test_overfits_single_batch(self, dataset, schedule):
        # repeated steps on one fixed batch drive the loss below 1e-3
        model = small_model(6, width=32, depth=2)
        batch = df.sample_latent_batch(dataset, schedule, 16, np.random.default_rng(4))
        opt = gc.SGD(0.02, momentum=0.9)
        loss = np.inf
        for _ in range(2000):
            loss = dn.train_step(model, batch, 0.02, optimizer=opt)
            if loss < 1e-3:
                break
        assert loss < 1e-3, f"stuck at {loss}"


class TestTrain:
    def test_zero_steps_is_identity(self, dataset, schedule):
        model = small_model(8)
        before = {name: value.copy() for name, value in model.params.items()}
        _, trace = dn.train(model, dataset, schedule,
                            dn.TrainConfig(steps=0, batch_size=8, learning_rate=0.01, seed=0))
        assert trace == []
        for name, value in model.params.items():
            npt.assert_array_equal(value, before[name])

    def test_same_seed_identical_trace(self, dataset, schedule):
        cfg = dn.TrainConfig(steps=30, batch_size=16, learning_rate=0.01, seed=11)
        _, trace_a = dn.train(small_model(9), dataset, schedule, cfg)
        _, trace_b = dn.train(small_model(9), dataset, schedule, cfg)
        assert trace_a == trace_b

    def test_loss_decreases(self, dataset, schedule):
        cfg = dn.TrainConfig(steps=800, batch_size=32, learning_rate=0.02, seed=1)
        _, trace = dn.train(small_model(10, width=32), dataset, schedule, cfg)
        head = np.mean(trace[:80])
        tail = np.mean(trace[-80:])
        assert tail < head

    def test_class_count_mismatch_rejected(self, schedule):
        ds = generate_toy_dataset(3, 50, "ring", 0.3, seed=1)
        with pytest.raises(DomainError):
            dn.train(small_model(0, K=4), ds, schedule,
                     dn.TrainConfig(steps=1, batch_size=4, learning_rate=0.01, seed=0))


@pytest.fixture(scope="module")
def trained_two_class():
    ds = generate_toy_dataset(2, 600, "ring", 0.3, seed=5)
    sched = df.build_schedule(30, 1e-3, 0.3)
    model = dn.init_model(2, 2, 32, 2, 8, 30, np.random.default_rng(0))
    dn.train(model, ds, sched,
             dn.TrainConfig(steps=4000, batch_size=64, learning_rate=0.02, seed=0))
    return model, ds, sched


class TestTrainedGeneration:
    def test_sample_mean_tracks_data_mean(self, trained_two_class):
        model, ds, sched = trained_two_class
        n = 2000
        for c in range(2):
            samples = df.ancestral_sample(model, c, sched, n, np.random.default_rng(9))
            data_mean = ds.points[ds.class_indices(c)].mean(axis=0)
            assert np.all(np.abs(samples.mean(axis=0) - data_mean) < 0.1)

    def test_class_conditioning_is_live(self, trained_two_class):
        # conditioned sample means separate far beyond Monte Carlo noise
        model, ds, sched = trained_two_class
        n = 2000
        means, ses = [], []
        for c in range(2):
            samples = df.ancestral_sample(model, c, sched, n, np.random.default_rng(9))
            means.append(samples.mean(axis=0))
            ses.append(np.linalg.norm(samples.std(axis=0, ddof=1)) / np.sqrt(n))
        distance = np.linalg.norm(means[0] - means[1])
        assert distance > 10 * max(ses), (distance, ses)
