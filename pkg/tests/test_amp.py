import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddsp_amp import amp, dsp
from ddsp_amp.amp import AmpModel, MlpController, ParamRange, StreamState, TdRunner, WhBlock
from ddsp_amp.dsp import BiquadCoeffs, BiquadState, FilterKind

IDENT = (1.0, 0.0, 0.0, 0.0, 0.0)


def zero_grus(model):
    for k in model.params:
        if k.endswith(".gru"):
            model.params[k] = np.zeros(9)
    return model


def test_param_range_mapping():
    r = ParamRange(20.0, 2000.0)
    assert r.map(0.5) == pytest.approx(200.0)
    assert r.map(1 - 1e-12) < 2000.0 and r.map(1 - 1e-12) == pytest.approx(2000.0)
    lin = ParamRange(-24.0, 24.0, "linear")
    assert lin.map(0.5) == 0.0
    assert r.unmap(r.map(0.3)) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        ParamRange(0.0, 1.0)


def test_zero_weight_controller_gives_midpoints():
    outs = [("f", ParamRange(20.0, 2000.0)), ("g", ParamRange(-24.0, 24.0, "linear"))]
    c = MlpController("c", (0, 1), outs)
    params = {k: np.zeros(s) for k, s in c.shapes().items()}
    o = amp.controller_eval(c, params, [[0.3, -0.9]])
    assert float(o["f"][0, 0]) == pytest.approx(math.sqrt(20 * 2000))
    assert float(o["g"][0, 0]) == 0.0


def test_controller_shape_is_three_layers_of_32():
    c = MlpController("c", (1, 2, 3), [("x", ParamRange(1, 2))] * 4)
    assert c.shapes() == {"c.l0.w": (3, 32), "c.l0.b": (32,), "c.l1.w": (32, 32), "c.l1.b": (32,),
                          "c.l2.w": (32, 4), "c.l2.b": (4,)}


def test_mapped_parameters_stay_in_range_and_filters_stable():
    rng = np.random.default_rng(0)
    model = AmpModel("F", seed=1)
    for k, v in model.params.items():  # much larger weights than the init
        model.params[k] = v + rng.normal(size=v.shape) * 2.0
    knobs = rng.uniform(0, 1, (10_000, 5))
    kn = amp.normalize_knobs(knobs)
    for st_ in model.stages:
        o = st_.controller(model.params, kn)
        for key, r in st_.controller.outputs:
            vals = np.asarray(o[key])
            assert np.all(vals >= r.lo) and np.all(vals <= r.hi), key
        sp = st_.dsp_params(model.params, kn)
        for c in st_.linear_filters(sp) if not isinstance(st_, amp.WhStack) else []:
            a1, a2 = np.asarray(c[3]), np.asarray(c[4])
            assert np.all(np.abs(a2) < 1) and np.all(np.abs(a1) < 1 + a2)


def test_normalize_knobs():
    assert amp.normalize_knobs([0, 0.5, 1, 0.25, 0.75]).tolist() == [[-1.0, 0.0, 1.0, -0.5, 0.5]]
    with pytest.raises(ValueError):
        amp.normalize_knobs([0, 0, 0, 0, 1.5])
    with pytest.raises(ValueError):
        amp.normalize_knobs([0, 0, 0, 0])


# --- WH block ------------------------------------------------------------------------


def random_block(rng):
    def lph():
        specs = [dsp.FilterSpec(FilterKind.LOW_SHELF, rng.uniform(50, 400), rng.uniform(-12, 12), 0.7),
                 dsp.FilterSpec(FilterKind.PEAK, rng.uniform(300, 3000), rng.uniform(-12, 12), 1.2),
                 dsp.FilterSpec(FilterKind.HIGH_SHELF, rng.uniform(2000, 9000), rng.uniform(-12, 12), 0.7)]
        return [dsp.design_biquad(s, amp.FS).as_tuple() for s in specs]

    return WhBlock(rng.uniform(0.5, 3), rng.uniform(0.5, 2), lph(), rng.uniform(-1, 1, 9), lph())


def test_wh_identity_filters_zero_gru_gives_zero():
    block = WhBlock(2.0, 1.0, [IDENT] * 3, np.zeros(9), [IDENT] * 3)
    y, _ = amp.wh_forward(block, np.random.default_rng(0).normal(size=200))
    assert np.all(y == 0)


def test_wh_tanh_variant_plumbing():
    x = np.linspace(-1, 1, 101)
    block = WhBlock(2.0, 1.0, [IDENT] * 3, np.zeros(9), [IDENT] * 3)
    y, _ = amp.wh_forward(block, x, nonlinearity="tanh")
    np.testing.assert_allclose(y, np.tanh(2 * x), atol=1e-15)


def test_wh_matches_straight_line_composition():
    rng = np.random.default_rng(1)
    block = random_block(rng)
    x = np.zeros(300)
    x[0] = 1.0
    y, _ = amp.wh_forward(block, x)
    ref = dsp.apply_gain(x, block.pregain)
    for c in block.h1:
        ref, _ = dsp.biquad_process_td(BiquadCoeffs(*c), BiquadState(), ref)
    ref, _ = dsp.gru1_process(dsp.Gru1Params.from_array(block.gru), ref)
    ref = dsp.apply_gain(ref, block.postgain)
    for c in block.h2:
        ref, _ = dsp.biquad_process_td(BiquadCoeffs(*c), BiquadState(), ref)
    assert np.array_equal(y, ref)


def test_fs_and_td_runners_agree():
    rng = np.random.default_rng(2)
    block = random_block(rng)
    x = rng.normal(size=512) * 0.3
    y_td, _ = amp.wh_forward(block, x)
    y_fs = amp.wh_render(amp.FsRunner(), block, x[None, :], "wh")[0]
    np.testing.assert_allclose(y_fs, y_td, atol=1e-6)


# --- stages ------------------------------------------------------------------------


def test_zero_grus_give_zero_output_for_every_config():
    x = np.random.default_rng(3).normal(size=1000) * 0.5
    for cfg in "CDEF":
        model = zero_grus(AmpModel(cfg, seed=0))
        y, _ = model.process([0.3, 0.6, 0.5, 0.1, 0.9], x)
        assert np.all(y == 0), cfg
        assert len(y) == len(x)


def test_preamp_zero_input_zero_grus_exact_zero():
    model = zero_grus(AmpModel("F"))
    y, _ = amp.preamp_forward(model, 0.8, np.zeros(100))
    assert np.all(y == 0)


def test_transformer_zero_gru_and_dc_rejection():
    model = zero_grus(AmpModel("F"))
    y, _ = amp.transformer_forward(model, np.ones(500))
    assert np.all(y == 0)
    model = AmpModel("F", seed=0)
    model.params["transformer.gru"] = np.array([0, 0, 1.0, 0, 0, 0, 0, -30.0, 0])  # z ~ 0: memoryless tanh
    y, _ = amp.transformer_forward(model, np.full(5 * 44100, 0.5))
    assert abs(y[-1]) < 1e-3 * 0.5


def test_tonestack_forced_flat_is_identity():
    model = AmpModel("F", seed=0)
    ts = model.stage("tonestack")
    for k in model.params:
        if k.startswith("tonestack.ctrl"):
            model.params[k] = np.zeros_like(model.params[k])  # gains sit at 0 dB (midpoint)
    x = np.random.default_rng(4).normal(size=2048)
    y, _ = amp.tonestack_forward(model, 0.2, 0.9, 0.4, x)
    np.testing.assert_allclose(y, x, atol=1e-9)
    assert ts.controller.knob_idx == (1, 2, 3)


def test_tonestack_response_matches_analytic_product():
    model = AmpModel("F", seed=5)
    sp = model.stage("tonestack").dsp_params(model.params, amp.normalize_knobs([0.5, 0.1, 0.7, 0.9, 0.5]))
    imp = np.zeros(1 << 16)
    imp[0] = 1
    y, _ = amp.tonestack_forward(model, 0.1, 0.7, 0.9, imp)
    bins = np.unique(np.round(np.geomspace(20, 20000, 64) / amp.FS * len(imp)).astype(int))
    h = np.ones(len(bins), complex)
    for c in sp:
        h *= BiquadCoeffs(*(float(np.squeeze(v)) for v in c)).response(bins * amp.FS / len(imp), amp.FS)
    np.testing.assert_allclose(np.fft.rfft(y)[bins], h, atol=1e-6)


def test_controller_locality():
    model = AmpModel("F", seed=0)
    base = np.array([0.5] * 5)
    for st_, own in (("preamp", {0}), ("tonestack", {1, 2, 3}), ("poweramp", {4}), ("transformer", set())):
        stage = model.stage(st_)
        ref = stage.controller.unit_outputs(model.params, amp.normalize_knobs(base))
        for i in range(5):
            k = base.copy()
            k[i] = 0.95
            out = stage.controller.unit_outputs(model.params, amp.normalize_knobs(k))
            changed = not np.array_equal(out, ref)
            assert changed == (i in own), (st_, i)


def test_poweramp_push_pull_cancels_even_harmonics():
    pa = amp.PowerAmp()
    odd_gru = np.array([0, 0, 1.3, 0, 0, 0.6, 0.0, -1.0, 0.0])  # constant gates, no candidate bias: odd map
    block = WhBlock(1.5, 1.0, [IDENT] * 3, odd_gru, [IDENT] * 3)
    sp = amp.PowerAmpParams(1.0, [IDENT], 1.0, 2.0, 0.7, 0.7, block, block)
    n = 44100
    x = np.sin(2 * np.pi * 441 * np.arange(2 * n) / amp.FS)
    y = pa.render(TdRunner(StreamState()), sp, x)[n:]
    spec = np.abs(np.fft.rfft(y))
    f0 = 441  # exactly on a bin with 1 s windows
    assert 20 * np.log10(spec[2 * f0] / spec[f0]) < -60
    assert 20 * np.log10(spec[3 * f0] / spec[f0]) > -40  # odd harmonics survive


def test_master_minimum_is_below_minus_60_dbfs():
    model = AmpModel("F", seed=0)
    model.params["poweramp.ctrl.l2.b"][0] = -60.0  # saturate the master output at its lower bound
    sp = model.stage("poweramp").dsp_params(model.params, amp.normalize_knobs([0.5] * 4 + [0.0]))
    master = float(np.squeeze(sp.master))
    assert master == pytest.approx(1e-3, rel=1e-6)
    x = np.sin(2 * np.pi * 1000 * np.arange(44100) / amp.FS)
    rms = np.sqrt(np.mean((x * master) ** 2))
    assert 20 * np.log10(rms) < -60


def test_stream_state_order_is_fixed():
    model = AmpModel("F", seed=0)
    _, s = model.process([0.5] * 5, np.zeros(10))
    assert s.tags[:3] == ["preamp.block0.h1.0", "preamp.block0.h1.1", "preamp.block0.h1.2"]
    assert s.tags[-1] == "transformer.filters.1"
    assert len(s.tags) == len(set(s.tags))


@settings(max_examples=10, deadline=None)
@given(st.sampled_from("CDEF"), st.integers(1, 4095))
def test_amp_block_split_invariance(cfg, split):
    model = AmpModel(cfg, seed=3)
    x = np.random.default_rng(split).normal(size=4096) * 0.4
    knobs = [0.2, 0.4, 0.6, 0.8, 0.5]
    whole, _ = model.process(knobs, x)
    a, s = model.process(knobs, x[:split])
    b, _ = model.process(knobs, x[split:], s)
    assert np.array_equal(np.concatenate([a, b]), whole)


def test_preamp_four_block_split():
    model = AmpModel("F", seed=2)
    x = np.random.default_rng(0).normal(size=8192) * 0.3
    whole, _ = amp.preamp_forward(model, 0.7, x)
    out, s = [], None
    for i in range(4):
        y, s = amp.preamp_forward(model, 0.7, x[i * 2048 : (i + 1) * 2048], s)
        out.append(y)
    assert np.array_equal(np.concatenate(out), whole)


def test_process_is_pure():
    model = AmpModel("F", seed=0)
    x = np.random.default_rng(0).normal(size=300)
    _, s = model.process([0.5] * 5, x)
    snapshot = s.copy()
    y1, _ = model.process([0.5] * 5, x, s)
    y2, _ = model.process([0.5] * 5, x, s)
    assert np.array_equal(y1, y2)
    assert all(np.array_equal(a, b) for a, b in zip(s.values, snapshot.values))


def test_training_path_matches_streaming_path():
    model = AmpModel("F", seed=4)
    x = np.random.default_rng(5).normal(size=(2, 2048)) * 0.3
    knobs = np.array([[0.1, 0.2, 0.3, 0.4, 0.5], [0.9, 0.8, 0.7, 0.6, 0.5]])
    y_fs = model.forward_train(model.params, knobs, x)
    for i in range(2):
        y_td, _ = model.process(knobs[i], x[i])
        # the ~35 Hz transformer high-pass rings longer than the zero padding, so the
        # frequency-sampled path carries a small circular-convolution error
        np.testing.assert_allclose(y_fs[i], y_td, atol=1e-3 * np.max(np.abs(y_td)))


def test_unknown_config_and_param_mismatch():
    with pytest.raises(ValueError):
        AmpModel("G")
    with pytest.raises(ValueError):
        AmpModel("F", params={"x": np.zeros(1)})
    with pytest.raises(KeyError):
        AmpModel("C").stage("tonestack")
