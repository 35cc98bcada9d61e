import numpy as np
import pytest

from latspot.acoustic import (
    CorruptModel,
    DimMismatch,
    EmptyTrainingSet,
    FrameClassifier,
    PhoneSet,
    PosteriorMatrix,
    TrainConfig,
    ZeroPrior,
    load_model,
    posteriors,
    read_labels,
    read_phones,
    save_model,
    scaled_loglikes,
    train,
    write_labels,
    write_phones,
)
from latspot.features import FeatureMatrix


def test_phone_set_validation():
    PhoneSet(("SIL", "a", "b"))
    with pytest.raises(ValueError):
        PhoneSet(("a", "SIL"))
    with pytest.raises(ValueError):
        PhoneSet(("SIL",))
    with pytest.raises(ValueError):
        PhoneSet(("SIL", "a", "a"))


def two_gaussian_set(n_per=200, seed=0):
    rng = np.random.default_rng(seed)
    means = np.array([[2.0, 0.0], [-2.0, 0.0]])
    x = np.concatenate(
        [means[0] + 0.3 * rng.standard_normal((n_per, 2)),
         means[1] + 0.3 * rng.standard_normal((n_per, 2))]
    )
    y = np.concatenate([np.zeros(n_per, np.int64), np.ones(n_per, np.int64)])
    return x, y


def as_corpus(x, y):
    feats = [FeatureMatrix(x, 0.01, "train0")]
    labels = {"train0": y}
    return feats, labels


def test_nearest_mean_oracle_then_training():
    x, y = two_gaussian_set()
    # Oracle first: class means separate the data almost perfectly.
    means = np.stack([x[y == 0].mean(axis=0), x[y == 1].mean(axis=0)])
    d = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    oracle_acc = np.mean(np.argmin(d, axis=1) == y)
    assert oracle_acc >= 0.99

    feats, labels = as_corpus(x, y)
    model = train(feats, labels, PhoneSet(("SIL", "a")), TrainConfig(epochs=50))
    post = posteriors(model, feats[0])
    acc = np.mean(np.argmax(post.data, axis=1) == y)
    assert acc >= 0.99
    assert model.loss_history[-1] < model.loss_history[0]


def test_zero_epochs_near_uniform():
    x, y = two_gaussian_set(seed=1)
    feats, labels = as_corpus(x, y)
    model = train(feats, labels, PhoneSet(("SIL", "a")), TrainConfig(epochs=0))
    assert abs(model.loss_history[0] - np.log(2.0)) <= 0.1
    post = posteriors(model, feats[0])
    assert np.max(np.abs(post.data - 0.5)) < 0.45


def test_priors_are_label_frequencies():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((100, 3))
    y = np.array([0] * 25 + [1] * 75, dtype=np.int64)
    feats = [FeatureMatrix(x, 0.01, "u")]
    model = train(feats, {"u": y}, PhoneSet(("SIL", "a")), TrainConfig(epochs=1))
    assert np.allclose(model.priors, [0.25, 0.75])


def test_label_errors():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((10, 2))
    feats = [FeatureMatrix(x, 0.01, "u")]
    phones = PhoneSet(("SIL", "a"))
    with pytest.raises(DimMismatch):
        train(feats, {"u": np.array([0, 1, 5] + [0] * 7)}, phones)
    with pytest.raises(DimMismatch):
        train(feats, {"u": np.zeros(9, np.int64)}, phones)
    with pytest.raises(DimMismatch):
        train(feats, {"other": np.zeros(10, np.int64)}, phones)
    with pytest.raises(EmptyTrainingSet):
        train([], {}, phones)


def test_posterior_rows_sum_to_one():
    rng = np.random.default_rng(4)
    model = FrameClassifier.initialize(5, (16,), 4, seed=0)
    feats = FeatureMatrix(100.0 * rng.standard_normal((30, 5)), 0.01, "u")
    post = posteriors(model, feats)
    assert np.max(np.abs(post.data.sum(axis=1) - 1.0)) < 1e-6
    assert np.all(np.isfinite(post.data))


def test_zero_weight_model_uniform():
    model = FrameClassifier.initialize(3, (8,), 5, seed=0)
    for layer in range(len(model.weights)):
        model.weights[layer][:] = 0.0
        model.biases[layer][:] = 0.0
    feats = FeatureMatrix(np.random.default_rng(5).standard_normal((7, 3)), 0.01)
    post = posteriors(model, feats)
    assert np.allclose(post.data, 0.2, atol=1e-15)


def test_posteriors_dim_mismatch():
    model = FrameClassifier.initialize(4, (8,), 3, seed=0)
    feats = FeatureMatrix(np.zeros((5, 7)), 0.01)
    with pytest.raises(DimMismatch):
        posteriors(model, feats)


def test_scaled_loglikes_uniform_cancels():
    post = PosteriorMatrix(np.full((6, 4), 0.25), 0.01)
    out = scaled_loglikes(post, np.full(4, 0.25))
    assert np.max(np.abs(out)) < 1e-6


def test_scaled_loglikes_floor():
    post = PosteriorMatrix(np.array([[1.0, 0.0]]), 0.01)
    out = scaled_loglikes(post, np.array([0.5, 0.5]))
    assert out[0, 1] == pytest.approx(np.log(1e-10) - np.log(0.5))


def test_scaled_loglikes_hand_case():
    post = PosteriorMatrix(np.array([[0.9, 0.1]]), 0.01)
    out = scaled_loglikes(post, np.array([0.5, 0.5]))
    assert out[0, 0] == pytest.approx(np.log(1.8), abs=1e-9)
    assert out[0, 1] == pytest.approx(np.log(0.2), abs=1e-8)


def test_scaled_loglikes_zero_prior():
    post = PosteriorMatrix(np.full((2, 2), 0.5), 0.01)
    with pytest.raises(ZeroPrior):
        scaled_loglikes(post, np.array([1.0, 0.0]))


def test_gradient_check():
    rng = np.random.default_rng(6)
    model = FrameClassifier.initialize(4, (6,), 3, seed=7)
    # Healthy-scale parameters keep every gradient entry well above the
    # central-difference noise floor.
    for arr in (*model.weights, *model.biases):
        arr[...] = 0.5 * rng.standard_normal(arr.shape)
    x = rng.standard_normal((5, 4))
    y = rng.integers(0, 3, 5)
    _, gw, gb = model.loss_and_grads(x, y)
    eps = 1e-6
    for params, grads in ((model.weights, gw), (model.biases, gb)):
        for layer in range(len(params)):
            arr = params[layer]
            g = grads[layer]
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                up, _, _ = model.loss_and_grads(x, y)
                arr[idx] = orig - eps
                dn, _, _ = model.loss_and_grads(x, y)
                arr[idx] = orig
                numeric = (up - dn) / (2 * eps)
                denom = max(abs(numeric), abs(g[idx]), 1e-8)
                assert abs(numeric - g[idx]) / denom < 1e-4


def test_training_deterministic():
    x, y = two_gaussian_set(seed=8)
    feats, labels = as_corpus(x, y)
    phones = PhoneSet(("SIL", "a"))
    m1 = train(feats, labels, phones, TrainConfig(epochs=3, seed=5))
    m2 = train(feats, labels, phones, TrainConfig(epochs=3, seed=5))
    for a, b in zip(m1.weights, m2.weights):
        assert np.array_equal(a, b)
    for a, b in zip(m1.biases, m2.biases):
        assert np.array_equal(a, b)


def test_model_round_trip(tmp_path):
    x, y = two_gaussian_set(seed=9)
    feats, labels = as_corpus(x, y)
    model = train(feats, labels, PhoneSet(("SIL", "a")), TrainConfig(epochs=2))
    path = tmp_path / "m.fcm"
    save_model(model, path)
    back = load_model(path)
    assert back.input_dim == model.input_dim
    assert back.output_dim == model.output_dim
    for a, b in zip(model.weights, back.weights):
        assert np.allclose(a, b, atol=1e-6)
    assert np.allclose(model.priors, back.priors, atol=1e-6)
    p1 = posteriors(model, feats[0]).data
    p2 = posteriors(back, feats[0]).data
    assert np.allclose(p1, p2, atol=1e-5)


def test_model_corrupt(tmp_path):
    path = tmp_path / "bad.fcm"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(CorruptModel):
        load_model(path)
    model = FrameClassifier.initialize(2, (4,), 2, seed=0)
    save_model(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(CorruptModel):
        load_model(path)


def test_label_file_round_trip(tmp_path):
    labels = {
        "utt1": np.array([0, 1, 2, 1], dtype=np.int64),
        "utt2": np.array([3], dtype=np.int64),
    }
    path = tmp_path / "labels.txt"
    write_labels(labels, path)
    back = read_labels(path)
    assert set(back) == {"utt1", "utt2"}
    assert np.array_equal(back["utt1"], labels["utt1"])
    assert np.array_equal(back["utt2"], labels["utt2"])


def test_label_file_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("utt1 0 zebra 2\n")
    with pytest.raises(ValueError):
        read_labels(path)
    path.write_text("loneutt\n")
    with pytest.raises(ValueError):
        read_labels(path)


def test_phone_file_round_trip(tmp_path):
    phones = PhoneSet(("SIL", "aa", "bb", "cc"))
    path = tmp_path / "phones.txt"
    write_phones(phones, path)
    assert read_phones(path).phones == phones.phones


def test_phone_file_malformed(tmp_path):
    path = tmp_path / "phones.txt"
    path.write_text("SIL\naa bb\n")
    with pytest.raises(ValueError, match="phones.txt:2"):
        read_phones(path)
    path.write_text("aa\nSIL\n")
    with pytest.raises(ValueError, match="must start with SIL"):
        read_phones(path)
    path.write_text("SIL\naa\naa\n")
    with pytest.raises(ValueError, match="unique"):
        read_phones(path)
