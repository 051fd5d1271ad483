"""Datasets, segmentation, Adam, plateau scheduling and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import audio_io
from . import autodiff as ad
from .amp import KNOBS
from .losses import mae_loss, mrstft_loss

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test-seen", "test-unseen")
SPLIT_RATIO = (6, 1, 3)
WARMUP = 1024


@dataclass
class Pair:
    name: str
    x: np.ndarray
    y: np.ndarray
    knobs: np.ndarray
    unseen: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.knobs = np.asarray(self.knobs, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError(f"{self.name}: input/target lengths differ ({self.x.shape} vs {self.y.shape})")
        if self.knobs.shape != (len(KNOBS),) or np.any(self.knobs < 0) or np.any(self.knobs > 1):
            raise ValueError(f"{self.name}: knobs must be {len(KNOBS)} values in [0, 1]")


@dataclass
class Dataset:
    pairs: list[Pair]
    sample_rate: int = audio_io.SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != audio_io.SAMPLE_RATE:
            raise ValueError("datasets must be sampled at 44.1 kHz")

    def region(self, pair: Pair, split: str) -> tuple[int, int]:
        """Sample range of a pair that belongs to a split (empty if none)."""
        n = len(pair.x)
        if split == "all":
            return 0, n
        if split == "test-unseen":
            return (0, n) if pair.unseen else (0, 0)
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        if pair.unseen:
            return 0, 0
        total = sum(SPLIT_RATIO)
        edges = [0, n * 6 // total, n * 7 // total, n]
        i = ("train", "val", "test-seen").index(split)
        return edges[i], edges[i + 1]

    def views(self, split: str) -> list[tuple[Pair, np.ndarray, np.ndarray]]:
        out = []
        for p in self.pairs:
            a, b = self.region(p, split)
            if b > a:
                out.append((p, p.x[a:b], p.y[a:b]))
        return out


def read_knobs(path) -> np.ndarray:
    """Parse a `knob=value` sidecar into the 5-element knob vector."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or key not in KNOBS:
            raise ValueError(f"{path}:{lineno}: expected one of {KNOBS} as `knob=value`")
        v = float(val)
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{path}:{lineno}: {key}={v} outside [0, 1]")
        values[key] = v
    missing = [k for k in KNOBS if k not in values]
    if missing:
        raise ValueError(f"{path}: missing knobs {missing}")
    return np.array([values[k] for k in KNOBS])


def write_knobs(path, knobs) -> None:
    Path(path).write_text("".join(f"{k}={float(v):.6g}\n" for k, v in zip(KNOBS, knobs)))


def load_dataset(root) -> Dataset:
    """Load `seen/` and `unseen/` folders of NAME-input.wav, NAME-target.wav, NAME.knobs."""
    root = Path(root)
    pairs = []
    for cond in ("seen", "unseen"):
        folder = root / cond
        if not folder.is_dir():
            continue
        for knob_file in sorted(folder.glob("*.knobs")):
            name = knob_file.stem
            x = audio_io.read_wav(folder / f"{name}-input.wav")
            y = audio_io.read_wav(folder / f"{name}-target.wav")
            pairs.append(Pair(name, x, y, read_knobs(knob_file), unseen=cond == "unseen"))
    if not pairs:
        raise FileNotFoundError(f"{root}: no seen/ or unseen/ pairs found")
    return Dataset(pairs)


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    for p in ds.pairs:
        folder = root / ("unseen" if p.unseen else "seen")
        folder.mkdir(parents=True, exist_ok=True)
        audio_io.write_wav(folder / f"{p.name}-input.wav", p.x)
        audio_io.write_wav(folder / f"{p.name}-target.wav", p.y)
        write_knobs(folder / f"{p.name}.knobs", p.knobs)


# --- segmentation -------------------------------------------------------------------


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    knobs: np.ndarray


def segment_index(dataset: Dataset, split: str, length: int) -> list[tuple[int, int]]:
    """Non-overlapping (pair index, start sample) segments of a split, in file order."""
    out = []
    for i, p in enumerate(dataset.pairs):
        a, b = dataset.region(p, split)
        out += [(i, a + k * length) for k in range((b - a) // length)]
    return out


def segment_iterator(dataset: Dataset, split: str, length: int, seed: int | None = 0,
                     batch_size: int = 32) -> Iterator[Batch]:
    """Shuffled (seeded) batches of independent segments; seed=None keeps file order."""
    index = segment_index(dataset, split, length)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(index))
        index = [index[i] for i in order]
    for s in range(0, len(index), batch_size):
        chunk = index[s : s + batch_size]
        yield Batch(
            np.stack([dataset.pairs[i].x[a : a + length] for i, a in chunk]),
            np.stack([dataset.pairs[i].y[a : a + length] for i, a in chunk]),
            np.stack([dataset.pairs[i].knobs for i, _ in chunk]),
        )


# --- optimization -----------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class PlateauSchedule:
    """Halve the LR every `halve_patience` non-improving epochs; stop after `stop_patience`."""

    def __init__(self, lr0: float, halve_patience: int = 2, stop_patience: int = 4):
        self.lr = lr0
        self.halve_patience = halve_patience
        self.stop_patience = stop_patience
        self.best = math.inf
        self.bad = 0

    def update(self, val_loss: float) -> bool:
        """Record one validation result; return True when training should stop."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.stop_patience:
            return True
        if self.bad % self.halve_patience == 0:
            self.lr *= 0.5
        return False


@dataclass
class TrainConfig:
    segment_length: int = 8192
    lr0: float = 2e-3
    max_epochs: int = 100
    lr_halve_patience: int = 2
    early_stop_patience: int = 4
    batch_size: int = 32
    seed: int = 0
    warmup: int = WARMUP

    def __post_init__(self):
        for k in ("segment_length", "max_epochs", "lr_halve_patience", "early_stop_patience", "batch_size"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.early_stop_patience < self.lr_halve_patience:
            raise ValueError("early_stop_patience must be >= lr_halve_patience")

    def loss_start(self, max_fft: int = 2048) -> int:
        """Warm-up samples dropped from the loss, leaving room for the largest STFT window."""
        start = min(self.warmup, self.segment_length - max_fft)
        if start < 0:
            raise ValueError(f"segment_length {self.segment_length} is shorter than the {max_fft}-sample STFT")
        return start


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_mae: float
    val_mrstft: float
    lr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


class TrainingError(RuntimeError):
    pass


def batch_loss(model, params, batch: Batch, start: int):
    y_hat = model.forward_train(params, batch.knobs, batch.x)
    y_hat = ad.getitem(y_hat, (slice(None), slice(start, None)))
    y = batch.y[:, start:]
    return mae_loss(y, y_hat), mrstft_loss(y, y_hat)


def validate(model, dataset: Dataset, config: TrainConfig, split: str = "val") -> tuple[float, float]:
    """Segment-averaged (MAE, MR-STFT) on a split without recording gradients."""
    start = config.loss_start()
    n, mae, mr = 0, 0.0, 0.0
    for batch in segment_iterator(dataset, split, config.segment_length, None, config.batch_size):
        m, s = batch_loss(model, model.params, batch, start)
        k = len(batch.x)
        mae += float(m) * k
        mr += float(s) * k
        n += k
    if n == 0:
        raise ValueError(f"split {split!r} holds no full {config.segment_length}-sample segments")
    return mae / n, mr / n


def train(model, dataset: Dataset, config: TrainConfig, log_path=None) -> TrainResult:
    """Fit model.params in place and leave the best-validation parameters on the model."""
    start = config.loss_start()
    for split in ("train", "val"):
        if not segment_index(dataset, split, config.segment_length):
            raise ValueError(f"split {split!r} holds no full {config.segment_length}-sample segments")
    opt = Adam(model.params)
    sched = PlateauSchedule(config.lr0, config.lr_halve_patience, config.early_stop_patience)
    result = TrainResult({k: v.copy() for k, v in model.params.items()})
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.max_epochs):
            lr = sched.lr
            total, count = 0.0, 0
            batches = segment_iterator(dataset, "train", config.segment_length, config.seed * 100003 + epoch,
                                       config.batch_size)
            for bi, batch in enumerate(batches):
                tape = ad.Tape()
                try:
                    mae, mr = batch_loss(model, tape.watch(model.params), batch, start)
                    loss = mae + mr
                    grads = tape.backward(loss)
                except ad.NonFiniteError as exc:
                    raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from exc
                opt.step(model.params, grads, lr)
                total += float(loss.value) * len(batch.x)
                count += len(batch.x)
            val_mae, val_mr = validate(model, dataset, config)
            val = val_mae + val_mr
            if not math.isfinite(val):
                raise TrainingError(f"epoch {epoch}: non-finite validation loss")
            rec = EpochRecord(epoch, total / count, val, val_mae, val_mr, lr)
            result.history.append(rec)
            log.info("epoch %d train %.4f val %.4f (mae %.4f mrstft %.4f) lr %.2e",
                     epoch, rec.train_loss, val, val_mae, val_mr, lr)
            if log_file:
                log_file.write(rec.to_json() + "\n")
                log_file.flush()
            improved = val < sched.best
            stop = sched.update(val)
            if improved:
                result.params = {k: v.copy() for k, v in model.params.items()}
                result.best_epoch = epoch
            if stop:
                result.stopped_early = True
                break
    finally:
        if log_file:
            log_file.close()
    model.params = {k: v.copy() for k, v in result.params.items()}
    return result
