import json

import numpy as np
import pytest

from ddsp_amp import audio_io, trainer
from ddsp_amp.amp import AmpModel
from ddsp_amp.baseline import ConcatGruModel
from ddsp_amp.synth import reference_amp, synthetic_dataset
from ddsp_amp.trainer import Dataset, Pair, PlateauSchedule, TrainConfig


def tiny_dataset(seconds=2.0, seed=0):
    return synthetic_dataset(seconds, seed=seed, unseen_seconds=1.0)


# --- schedule ------------------------------------------------------------------------


def run_schedule(vals, lr0=1.0):
    s = PlateauSchedule(lr0, 2, 4)
    lrs, stopped = [], None
    for i, v in enumerate(vals):
        lrs.append(s.lr)  # LR used during epoch i
        if s.update(v):
            stopped = i
            break
    return lrs, s.lr, stopped


def test_lr_halves_after_two_non_improvements():
    lrs, lr_after, _ = run_schedule([5, 4, 4.1, 4.2])
    assert lrs == [1.0, 1.0, 1.0, 1.0]
    assert lr_after == 0.5  # applies from epoch 4 on


def test_early_stop_after_four_non_improvements():
    _, _, stopped = run_schedule([5, 4, 4.1, 4.2, 4.3, 4.4, 1.0])
    assert stopped == 5


def test_improvement_resets_counter():
    _, lr, stopped = run_schedule([5, 6, 4, 6, 3, 7, 2])
    assert stopped is None and lr == 1.0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_halve_patience=5, early_stop_patience=4)
    with pytest.raises(ValueError):
        TrainConfig(segment_length=1024).loss_start()
    assert TrainConfig().loss_start() == 1024
    assert TrainConfig(segment_length=2048).loss_start() == 0


# --- data ------------------------------------------------------------------------------


def test_split_ratio_and_unseen_handling():
    x = np.zeros(1000)
    ds = Dataset([Pair("a", x, x, np.full(5, 0.5)), Pair("u", x, x, np.full(5, 0.5), unseen=True)])
    p, u = ds.pairs
    assert ds.region(p, "train") == (0, 600)
    assert ds.region(p, "val") == (600, 700)
    assert ds.region(p, "test-seen") == (700, 1000)
    assert ds.region(p, "test-unseen") == (0, 0)
    assert ds.region(u, "test-unseen") == (0, 1000)
    assert ds.region(u, "train") == (0, 0)
    with pytest.raises(ValueError):
        ds.region(p, "bogus")


def test_pair_validation():
    with pytest.raises(ValueError):
        Pair("a", np.zeros(10), np.zeros(11), np.full(5, 0.5))
    with pytest.raises(ValueError):
        Pair("a", np.zeros(10), np.zeros(10), np.full(5, 1.5))


def test_segment_count_for_six_minute_file():
    n = 6 * 60 * 44100
    ds = Dataset([Pair("a", np.zeros(n), np.zeros(n), np.full(5, 0.5))])
    assert len(trainer.segment_index(ds, "all", 8192)) == n // 8192


def test_segment_iterator_seeding():
    ds = tiny_dataset(4.0)
    get = lambda seed: [tuple(b.x[:, 0]) for b in trainer.segment_iterator(ds, "train", 2048, seed, 4)]
    a, b, c = get(1), get(1), get(2)
    assert a == b
    assert a != c
    flat = lambda batches: sorted(v for batch in batches for v in batch)
    assert flat(a) == flat(c)
    batches = list(trainer.segment_iterator(ds, "train", 2048, 1, 4))
    assert all(b.x.shape[1] == 2048 and b.knobs.shape == (b.x.shape[0], 5) for b in batches)


def test_knob_sidecar_round_trip(tmp_path):
    path = tmp_path / "a.knobs"
    trainer.write_knobs(path, [0.1, 0.2, 0.3, 0.4, 0.5])
    assert trainer.read_knobs(path).tolist() == [0.1, 0.2, 0.3, 0.4, 0.5]
    path.write_text("gain=0.5\nbass=0.5\nmid=0.5\ntreble=0.5\nmaster=1.2\n")
    with pytest.raises(ValueError, match="outside"):
        trainer.read_knobs(path)
    path.write_text("gain=0.5\n")
    with pytest.raises(ValueError, match="missing"):
        trainer.read_knobs(path)


def test_dataset_round_trip(tmp_path):
    ds = tiny_dataset(1.0)
    trainer.save_dataset(ds, tmp_path)
    back = trainer.load_dataset(tmp_path)
    assert [p.name for p in back.pairs] == [p.name for p in ds.pairs]
    for a, b in zip(ds.pairs, back.pairs):
        np.testing.assert_array_equal(b.x, a.x.astype(np.float32))
        assert a.unseen == b.unseen
    with pytest.raises(FileNotFoundError):
        trainer.load_dataset(tmp_path / "nothing")


def test_reference_amp_is_knob_dependent_and_bounded():
    x = np.random.default_rng(0).normal(size=44100) * 0.2
    a = reference_amp(x, [0.2, 0.5, 0.5, 0.5, 0.8])
    b = reference_amp(x, [0.9, 0.5, 0.5, 0.5, 0.8])
    assert np.max(np.abs(a)) < 1 and not np.allclose(a, b)


# --- optimisation ---------------------------------------------------------------------


def test_single_step_descends():
    ds = tiny_dataset(2.0)
    model = AmpModel("F", seed=0)
    cfg = TrainConfig(batch_size=2)
    batch = next(trainer.segment_iterator(ds, "train", 8192, 0, 2))
    from ddsp_amp import autodiff as ad
    tape = ad.Tape()
    mae, mr = trainer.batch_loss(model, tape.watch(model.params), batch, cfg.loss_start())
    loss = mae + mr
    grads = tape.backward(loss)
    before = float(loss.value)
    opt = trainer.Adam(model.params)
    opt.step(model.params, grads, 1e-5)
    m2, r2 = trainer.batch_loss(model, model.params, batch, cfg.loss_start())
    assert float(m2) + float(r2) < before


def test_train_writes_log_and_keeps_best(tmp_path):
    ds = tiny_dataset(3.0)
    model = ConcatGruModel(4, seed=0)
    cfg = TrainConfig(segment_length=2048, max_epochs=3, batch_size=8)
    res = trainer.train(model, ds, cfg, log_path=tmp_path / "log.jsonl")
    lines = [json.loads(s) for s in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert len(lines) == len(res.history) == 3
    assert {"epoch", "train_loss", "val_loss", "lr"} <= set(lines[0])
    best = min(range(3), key=lambda i: lines[i]["val_loss"])
    assert res.best_epoch == best
    mae, mr = trainer.validate(model, ds, cfg)
    assert mae + mr == pytest.approx(lines[best]["val_loss"], rel=1e-12)


def test_training_is_deterministic():
    ds = tiny_dataset(2.0)
    cfg = TrainConfig(segment_length=2048, max_epochs=2, batch_size=8, seed=3)
    runs = []
    for _ in range(2):
        m = ConcatGruModel(4, seed=1)
        trainer.train(m, ds, cfg)
        runs.append(m.params)
    assert all(np.array_equal(runs[0][k], runs[1][k]) for k in runs[0])


def test_rejects_dataset_without_segments():
    ds = tiny_dataset(1.0)
    with pytest.raises(ValueError, match="segments"):
        trainer.train(AmpModel("C"), ds, TrainConfig(segment_length=8192))


def test_non_finite_loss_reports_batch():
    ds = tiny_dataset(2.0)
    model = ConcatGruModel(4, seed=0)
    model.params["head.b"][0] = np.inf
    with pytest.raises(trainer.TrainingError, match="batch 0"):
        trainer.train(model, ds, TrainConfig(segment_length=2048, max_epochs=1))


def test_wav_rate_is_enforced(tmp_path):
    from scipy.io import wavfile
    wavfile.write(tmp_path / "a.wav", 48000, np.zeros(10, np.float32))
    with pytest.raises(audio_io.AudioFormatError, match="44100"):
        audio_io.read_wav(tmp_path / "a.wav")
