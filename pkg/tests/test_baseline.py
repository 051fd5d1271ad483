import numpy as np
import pytest

from ddsp_amp import autodiff as ad
from ddsp_amp.baseline import ConcatGruModel, concat_gru_forward
from ddsp_amp.evaluator import count_params


def sigmoid(v):
    return 1 / (1 + np.exp(-v))


@pytest.mark.parametrize("h,expected", [(8, 369), (48, 7969)])
def test_param_counts(h, expected):
    assert count_params(ConcatGruModel(h)) == expected
    assert 3 * h * (1 + 5 + h) + 3 * h + h + 1 == expected


def test_presets():
    assert ConcatGruModel.preset("A").hidden == 8
    assert ConcatGruModel.preset("b").arch == "concat-gru-48"


def test_zero_weights_output_bias():
    m = ConcatGruModel(8)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k])
    m.params["head.b"][0] = 0.37
    y, _ = m.process([0.1, 0.2, 0.3, 0.4, 0.5], np.random.default_rng(0).normal(size=100))
    assert np.all(y == 0.37)


def test_matches_numpy_reference_recurrence():
    rng = np.random.default_rng(1)
    m = ConcatGruModel(4, seed=2)
    knobs = np.array([0.2, 0.9, 0.5, 0.0, 1.0])
    x = rng.normal(size=40)
    y, _ = m.process(knobs, x)
    p = m.params
    h = np.zeros(4)
    ref = []
    for xn in x:
        u = np.concatenate([[xn], 2 * knobs - 1])
        gx = p["gru.wx"] @ u + p["gru.b"]
        gh = p["gru.wh"] @ h
        r = sigmoid(gx[:4] + gh[:4])
        z = sigmoid(gx[4:8] + gh[4:8])
        c = np.tanh(gx[8:] + r * gh[8:])
        h = (1 - z) * c + z * h
        ref.append(p["head.w"] @ h + p["head.b"][0])
    np.testing.assert_allclose(y, ref, atol=1e-13)


def test_block_split_invariance():
    m = ConcatGruModel(8, seed=3)
    x = np.random.default_rng(4).normal(size=1000)
    knobs = [0.5] * 5
    whole, hw = m.process(knobs, x)
    a, h = concat_gru_forward(m, knobs, x[:333])
    b, h = concat_gru_forward(m, knobs, x[333:], h)
    assert np.array_equal(np.concatenate([a, b]), whole)
    assert np.array_equal(h, hw)


def test_gradients_on_64_samples():
    m = ConcatGruModel(8, seed=5)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 64)) * 0.5
    knobs = rng.uniform(0, 1, (2, 5))
    w = rng.normal(size=(2, 64))
    rep = ad.grad_check(lambda p, _: ad.sum(m.forward_train(p, knobs, x) * w), m.params, None)
    assert rep.passed, rep.worst()


def test_training_path_equals_streaming_path():
    m = ConcatGruModel(8, seed=7)
    x = np.random.default_rng(8).normal(size=(1, 256))
    knobs = np.array([[0.3, 0.3, 0.3, 0.3, 0.3]])
    y_train = m.forward_train(m.params, knobs, x)[0]
    y_stream, _ = m.process(knobs[0], x[0])
    np.testing.assert_allclose(y_train, y_stream, atol=1e-13)
