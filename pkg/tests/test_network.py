"""Classifier: shapes, gradients vs finite differences, Adam, serialization."""

import numpy as np
import pytest

from cardiofusion import network
from cardiofusion.errors import FormatError, ParamError, SpecError, TrainError, VersionError
from cardiofusion.network import LayerSpec, NetworkSpec, TrainConfig

LN4 = 1.3862943611198906
LN2 = 0.6931471805599453


def small_spec(seed=0):
    return NetworkSpec(
        input_len=20,
        layers=[
            LayerSpec("conv1d", out_channels=3, kernel=3),
            LayerSpec("relu"),
            LayerSpec("maxpool"),
            LayerSpec("flatten"),
            LayerSpec("dense", out_dim=8),
            LayerSpec("relu"),
            LayerSpec("dense", out_dim=4),
            LayerSpec("softmax"),
        ],
        seed=seed,
    )


def numeric_grads(weights, spec, x, y, h=1e-5):
    def loss_now():
        probs = network.forward_batch(weights, spec, x)
        val, _ = network.batch_loss(probs, y)
        return val

    out = []
    for p in weights:
        if p is None:
            out.append(None)
            continue
        gw = np.zeros_like(p.w)
        gb = np.zeros_like(p.b)
        for arr, g in ((p.w, gw), (p.b, gb)):
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = loss_now()
                flat[i] = orig - h
                lm = loss_now()
                flat[i] = orig
                gflat[i] = (lp - lm) / (2 * h)
        out.append(network.LayerParams(w=gw, b=gb))
    return out


def max_rel_err(analytic, numeric):
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        if ga is None:
            continue
        for attr in ("w", "b"):
            a, n = getattr(ga, attr).ravel(), getattr(gn, attr).ravel()
            denom = np.maximum(1e-6, np.maximum(np.abs(a), np.abs(n)))
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# ---------------------------------------------------------------------------
# Spec validation and init
# ---------------------------------------------------------------------------

def test_validate_default_spec_shapes():
    shapes = network.validate_spec(network.default_spec())
    assert shapes[-2] == 4  # final dense
    assert shapes[6] == 49 * 16  # flatten output of the default layout


def test_validate_rejects_bad_specs():
    with pytest.raises(SpecError):
        network.validate_spec(NetworkSpec(10, [LayerSpec("dense", out_dim=4)]))  # no softmax
    with pytest.raises(SpecError):
        network.validate_spec(NetworkSpec(10, [
            LayerSpec("softmax"), LayerSpec("flatten"), LayerSpec("dense", out_dim=4),
            LayerSpec("softmax")]))
    with pytest.raises(SpecError):
        network.validate_spec(NetworkSpec(10, [
            LayerSpec("flatten"), LayerSpec("dense", out_dim=5), LayerSpec("softmax")]))


def test_init_deterministic_and_seed_sensitive():
    spec = small_spec(seed=9)
    w1, w2 = network.init_network(spec), network.init_network(spec)
    assert all(p is None or (np.array_equal(p.w, q.w) and np.array_equal(p.b, q.b))
               for p, q in zip(w1, w2))
    w3 = network.init_network(small_spec(seed=10))
    assert not np.array_equal(w1[0].w, w3[0].w)


def test_init_he_std_within_bounds():
    # dense fan_in 100: target std sqrt(0.02) ~ 0.141, empirical within [0.10, 0.18]
    spec = NetworkSpec(100, [LayerSpec("flatten"), LayerSpec("dense", out_dim=120),
                             LayerSpec("dense", out_dim=4), LayerSpec("softmax")], seed=5)
    w = network.init_network(spec)
    draws = w[1].w.ravel()
    assert draws.size == 12000
    assert 0.10 <= draws.std() <= 0.18
    assert np.all(w[1].b == 0)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def test_forward_outputs_are_distributions():
    spec = small_spec()
    w = network.init_network(spec)
    rng = np.random.default_rng(0)
    probs = network.forward_batch(w, spec, rng.normal(size=(50, 20)))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs > 0) and np.all(probs < 1)


def test_forward_zero_weights_uniform():
    spec = small_spec()
    w = network.init_network(spec)
    for p in w:
        if p is not None:
            p.w[:] = 0
            p.b[:] = 0
    probs = network.forward(w, spec, np.random.default_rng(1).normal(size=20))
    assert np.allclose(probs, 0.25, atol=1e-12)


def test_forward_identity_dense_argmax():
    spec = NetworkSpec(4, [LayerSpec("flatten"), LayerSpec("dense", out_dim=4),
                           LayerSpec("softmax")], seed=0)
    w = network.init_network(spec)
    w[1].w[:] = np.eye(4) * 5.0
    for i in range(4):
        x = np.zeros(4)
        x[i] = 1.0
        cls, probs = network.predict(w, spec, x)
        assert cls == i
        assert probs.argmax() == i


def test_relu_positive_homogeneity_with_zero_biases():
    # init biases are zero, so scaling the input scales pre-softmax logits;
    # log p(cx) - c*log p(x) must then be constant across the four classes.
    spec = small_spec(seed=2)
    w = network.init_network(spec)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 20))
    c = 2.75
    lp1 = np.log(network.forward_batch(w, spec, x))
    lpc = np.log(network.forward_batch(w, spec, c * x))
    diff = lpc - c * lp1
    assert np.max(diff.std(axis=1)) < 1e-9


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def test_loss_fixtures():
    assert network.loss(np.array([1.0, 0, 0, 0]), 0) == pytest.approx(0.0, abs=1e-12)
    assert network.loss(np.full(4, 0.25), 2) == pytest.approx(LN4, abs=1e-12)
    assert network.loss(np.array([0.5, 0.5, 0, 0]), 0) == pytest.approx(LN2, abs=1e-12)


def test_loss_clamps_zero_probability():
    val = network.loss(np.array([0.0, 1.0, 0, 0]), 0)
    assert val == pytest.approx(-np.log(1e-12))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def test_gradients_match_finite_differences_everywhere():
    spec = small_spec(seed=4)
    w = network.init_network(spec)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 20))
    y = np.array([0, 1, 3])
    analytic = network.backward(w, spec, (x, y))
    numeric = numeric_grads(w, spec, x, y)
    assert max_rel_err(analytic, numeric) < 1e-4


def test_duplicated_batch_equals_single_gradient():
    spec = small_spec(seed=6)
    w = network.init_network(spec)
    x = np.random.default_rng(7).normal(size=(1, 20))
    y = np.array([2])
    single = network.backward(w, spec, (x, y))
    dup = network.backward(w, spec, (np.repeat(x, 4, axis=0), np.repeat(y, 4)))
    for a, b in zip(single, dup):
        if a is not None:
            assert np.allclose(a.w, b.w, atol=1e-12)
            assert np.allclose(a.b, b.b, atol=1e-12)


def test_perfectly_classified_batch_has_tiny_gradient():
    spec = NetworkSpec(4, [LayerSpec("flatten"), LayerSpec("dense", out_dim=4),
                           LayerSpec("softmax")], seed=0)
    w = network.init_network(spec)
    w[1].w[:] = np.eye(4) * 60.0  # saturated logits, p_correct ~ 1
    x = np.eye(4)
    y = np.arange(4)
    grads = network.backward(w, spec, (x, y))
    norm = np.sqrt(sum(float(np.sum(g.w**2) + np.sum(g.b**2))
                       for g in grads if g is not None))
    assert norm < 1e-6


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def _scalar_setup():
    spec = NetworkSpec(4, [LayerSpec("flatten"), LayerSpec("dense", out_dim=4),
                           LayerSpec("softmax")], seed=0)
    w = network.init_network(spec)
    return spec, w


def test_adam_first_step_unit_gradient():
    _, w = _scalar_setup()
    state = network.init_adam(w)
    grads = [None, network.LayerParams(w=np.ones_like(w[1].w), b=np.zeros_like(w[1].b)), None]
    before = w[1].w.copy()
    network.adam_step(state, w, grads, TrainConfig())
    delta = w[1].w - before
    assert np.allclose(delta, -0.001 / (1 + 1e-8), atol=1e-12)


def test_adam_zero_gradient_no_change():
    _, w = _scalar_setup()
    state = network.init_adam(w)
    grads = [None, network.LayerParams(w=np.zeros_like(w[1].w), b=np.zeros_like(w[1].b)), None]
    before = w[1].w.copy()
    network.adam_step(state, w, grads, TrainConfig())
    assert np.array_equal(w[1].w, before)


def test_adam_scale_invariance_at_first_step():
    _, w = _scalar_setup()
    state = network.init_adam(w)
    gw = np.zeros_like(w[1].w)
    gw[0, 0] = 1.0
    gw[1, 1] = 10.0
    grads = [None, network.LayerParams(w=gw, b=np.zeros_like(w[1].b)), None]
    before = w[1].w.copy()
    network.adam_step(state, w, grads, TrainConfig())
    delta = w[1].w - before
    # equality is exact only at eps=0; the eps term perturbs at ~1e-8 relative
    assert abs(delta[0, 0]) == pytest.approx(abs(delta[1, 1]), rel=1e-7)


def test_adam_rejects_non_finite_gradients():
    _, w = _scalar_setup()
    state = network.init_adam(w)
    gw = np.full_like(w[1].w, np.nan)
    grads = [None, network.LayerParams(w=gw, b=np.zeros_like(w[1].b)), None]
    with pytest.raises(TrainError):
        network.adam_step(state, w, grads, TrainConfig())


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def separable_fixture(n_per_class=20):
    rng = np.random.default_rng(8)
    xs, ys = [], []
    for c in range(4):
        center = np.zeros(2)
        center[0] = (-1.0) ** (c // 2) * 3.0
        center[1] = (-1.0) ** (c % 2) * 3.0
        xs.append(center + 0.3 * rng.normal(size=(n_per_class, 2)))
        ys.append(np.full(n_per_class, c))
    return np.concatenate(xs), np.concatenate(ys)


def mlp_spec(seed=0):
    return NetworkSpec(2, [LayerSpec("flatten"), LayerSpec("dense", out_dim=16),
                           LayerSpec("relu"), LayerSpec("dense", out_dim=4),
                           LayerSpec("softmax")], seed=seed)


def test_train_zero_epochs_returns_init():
    x, y = separable_fixture(4)
    spec = mlp_spec()
    w, hist = network.train(x, y, spec, TrainConfig(epochs=0, seed=1))
    ref = network.init_network(spec)
    assert hist == []
    assert np.array_equal(w[1].w, ref[1].w)


def test_train_separable_fixture_reaches_full_accuracy():
    x, y = separable_fixture()
    w, hist = network.train(x, y, mlp_spec(3), TrainConfig(epochs=200, seed=3))
    assert hist[-1]["train_acc"] == 1.0
    assert hist[-1]["loss"] <= hist[0]["loss"]


def test_train_bitwise_deterministic():
    x, y = separable_fixture(8)
    cfg = TrainConfig(epochs=5, seed=11)
    w1, h1 = network.train(x, y, mlp_spec(11), cfg)
    w2, h2 = network.train(x, y, mlp_spec(11), cfg)
    assert h1 == h2
    for a, b in zip(w1, w2):
        if a is not None:
            assert np.array_equal(a.w, b.w) and np.array_equal(a.b, b.b)


def test_predict_tie_break_lowest_index():
    spec, w = _scalar_setup()
    for p in w:
        if p is not None:
            p.w[:] = 0
            p.b[:] = 0
    cls, probs = network.predict(w, spec, np.ones(4))
    assert cls == 0 and np.allclose(probs, 0.25)


# ---------------------------------------------------------------------------
# assemble_input
# ---------------------------------------------------------------------------

def test_assemble_fft_emd_layout():
    e = np.zeros(128)
    e[9] = 1.0
    f = np.zeros(64)
    f[3] = 1.0
    v = network.assemble_input("fft-emd", ecg_spec=e, fundus_spec=f, emd4=np.zeros(4))
    assert v.shape == (196,)
    assert np.count_nonzero(v) == 2
    assert v[9] == 1.0 and v[128 + 3] == 1.0


def test_assemble_wt_padded():
    w = np.zeros(6)
    w[2] = 1.0
    v = network.assemble_input("wt", wt=w)
    assert v.shape == (196,)
    assert v.sum() == pytest.approx(1.0)


def test_assemble_hog_pooling():
    h = np.zeros(576)
    v = network.assemble_input("hog", hog=h)
    assert v.shape == (196,)
    assert np.allclose(v, 0.0)
    h2 = np.arange(576, dtype=float)
    v2 = network.assemble_input("hog", hog=h2)
    assert v2[0] == pytest.approx(1.0)  # mean of 0,1,2
    assert np.allclose(v2[192:], 0.0)


def test_assemble_missing_component_rejected():
    with pytest.raises(ParamError):
        network.assemble_input("fft-emd", ecg_spec=np.zeros(128))
    with pytest.raises(ParamError):
        network.assemble_input("nope")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def test_model_round_trip_preserves_predictions(tmp_path):
    spec = small_spec(seed=12)
    w = network.init_network(spec)
    path = tmp_path / "m.json"
    network.save_model(path, spec, w, pipeline="fft-emd", train_seed=12)
    spec2, w2, templates, pipe = network.load_model(path)
    assert pipe == "fft-emd" and templates is None
    rng = np.random.default_rng(13)
    xs = rng.normal(size=(100, 20))
    p1 = network.forward_batch(w, spec, xs)
    p2 = network.forward_batch(w2, spec2, xs)
    assert np.max(np.abs(p1 - p2)) < 1e-12


def test_model_truncated_file_rejected(tmp_path):
    spec = small_spec()
    w = network.init_network(spec)
    path = tmp_path / "m.json"
    network.save_model(path, spec, w, pipeline="wt")
    path.write_text(path.read_text()[: len(path.read_text()) // 2])
    with pytest.raises(FormatError):
        network.load_model(path)


def test_model_unknown_version_rejected(tmp_path):
    path = tmp_path / "m.json"
    path.write_text('{"version": "99"}')
    with pytest.raises(VersionError):
        network.load_model(path)
