"""Metrics, parameter and per-sample operation accounting, and diagnostic probes.

Operation convention: every scalar add/subtract, multiply and divide is one
op; each sigmoid or tanh call is 30 ops; memory traffic is free. Controller
MLPs run once per knob change, so they cost nothing per sample.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import amp as amp_mod
from . import dsp
from .amp import FS, AmpModel, PowerAmp, ToneStack, Transformer, WhStack
from .baseline import ConcatGruModel
from .losses import mae_loss, mrstft_loss
from .trainer import WARMUP, Dataset

NONLINEARITY_COST = 30


@dataclass(frozen=True)
class OpsBudget:
    adds: int = 0
    muls: int = 0
    divs: int = 0
    nonlinearity_calls: int = 0

    @property
    def total(self) -> int:
        return self.adds + self.muls + self.divs + NONLINEARITY_COST * self.nonlinearity_calls

    def __add__(self, other: OpsBudget) -> OpsBudget:
        return OpsBudget(self.adds + other.adds, self.muls + other.muls, self.divs + other.divs,
                         self.nonlinearity_calls + other.nonlinearity_calls)

    def __mul__(self, k: int) -> OpsBudget:
        return OpsBudget(self.adds * k, self.muls * k, self.divs * k, self.nonlinearity_calls * k)

    __rmul__ = __mul__


BIQUAD_OPS = OpsBudget(adds=4, muls=5)
GAIN_OPS = OpsBudget(muls=1)
# r, z gates: 2 muls + 2 adds each; candidate: 3 muls + 2 adds; update: 2 muls + 2 adds
GRU1_OPS = OpsBudget(adds=8, muls=9, nonlinearity_calls=3)
SOFT_CLIP_OPS = OpsBudget(muls=1, nonlinearity_calls=1)
WH_OPS = 2 * GAIN_OPS + 6 * BIQUAD_OPS + GRU1_OPS


def gru_ops(n_in: int, hidden: int, head: bool = True) -> OpsBudget:
    """Vector GRU step; each gate row sums I+H products and adds its bias."""
    mac = 3 * hidden * (n_in + hidden)
    ops = OpsBudget(adds=mac + 3 * hidden, muls=mac + 3 * hidden, nonlinearity_calls=3 * hidden)
    if head:
        ops = ops + OpsBudget(adds=hidden, muls=hidden)
    return ops


def _stage_ops(st) -> OpsBudget:
    if isinstance(st, WhStack):
        return st.n_blocks * WH_OPS
    if isinstance(st, ToneStack):
        return 3 * BIQUAD_OPS
    if isinstance(st, PowerAmp):
        # master, feedback filter, drive gain, phase inversion, two clippers, two WH paths, mix
        return (3 * GAIN_OPS + BIQUAD_OPS + GAIN_OPS + 2 * SOFT_CLIP_OPS + 2 * WH_OPS
                + OpsBudget(adds=1, muls=2))
    if isinstance(st, Transformer):
        return 2 * GAIN_OPS + GRU1_OPS + 2 * BIQUAD_OPS
    raise TypeError(f"no op count for stage {type(st).__name__}")


def count_ops(model) -> OpsBudget:
    if isinstance(model, ConcatGruModel):
        return gru_ops(model.n_inputs, model.hidden)
    if isinstance(model, dsp.Gru1Params):
        return GRU1_OPS
    if isinstance(model, dsp.BiquadCoeffs):
        return BIQUAD_OPS
    total = OpsBudget()
    for st in model.stages:
        total = total + _stage_ops(st)
    return total


def count_params(model) -> int:
    if isinstance(model, dsp.Gru1Params):
        return len(dsp.GRU1_FIELDS)
    return int(sum(np.size(v) for v in model.params.values()))


# --- evaluation ------------------------------------------------------------------


def stream(model, knobs, x, block_size: int = 8192) -> np.ndarray:
    """Run a model over a long signal in blocks with carried state."""
    state = None
    out = []
    for s in range(0, len(x), block_size):
        y, state = model.process(knobs, x[s : s + block_size], state)
        out.append(y)
    return np.concatenate(out) if out else np.zeros(0)


@dataclass
class ConditionResult:
    name: str
    knobs: tuple
    mae: float
    mrstft: float
    samples: int


@dataclass
class EvalReport:
    split: str
    arch: str
    conditions: list[ConditionResult] = field(default_factory=list)
    ops_per_sample: int = 0
    params: int = 0

    @property
    def mae(self) -> float:
        n = sum(c.samples for c in self.conditions)
        return sum(c.mae * c.samples for c in self.conditions) / n

    @property
    def mrstft(self) -> float:
        n = sum(c.samples for c in self.conditions)
        return sum(c.mrstft * c.samples for c in self.conditions) / n

    def to_text(self) -> str:
        lines = [f"arch = {self.arch}", f"split = {self.split}", f"mae = {self.mae:.6f}",
                 f"mrstft = {self.mrstft:.6f}", f"ops_per_sample = {self.ops_per_sample}",
                 f"params = {self.params}"]
        for c in self.conditions:
            lines.append(f"{c.name}.mae = {c.mae:.6f}")
            lines.append(f"{c.name}.mrstft = {c.mrstft:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", *amp_mod.KNOBS, "mae", "mrstft", "samples"])
        for c in self.conditions:
            w.writerow([c.name, *(f"{k:.6g}" for k in c.knobs), f"{c.mae:.6f}", f"{c.mrstft:.6f}", c.samples])
        w.writerow(["all", *[""] * len(amp_mod.KNOBS), f"{self.mae:.6f}", f"{self.mrstft:.6f}",
                    sum(c.samples for c in self.conditions)])
        return buf.getvalue()


def evaluate(model, dataset: Dataset, split: str = "test-seen", block_size: int = 8192,
             warmup: int = WARMUP) -> EvalReport:
    """Stream each file's split region through the model; the first `warmup` samples are not scored."""
    report = EvalReport(split, model.arch, ops_per_sample=count_ops(model).total, params=count_params(model))
    for pair, x, y in dataset.views(split):
        y_hat = stream(model, pair.knobs, x, block_size)
        y_ref, y_hat = y[warmup:], y_hat[warmup:]
        report.conditions.append(ConditionResult(
            pair.name, tuple(float(k) for k in pair.knobs), float(mae_loss(y_ref, y_hat)),
            float(mrstft_loss(y_ref, y_hat)), len(y_ref)))
    if not report.conditions:
        raise ValueError(f"split {split!r} is empty")
    return report


# --- probes --------------------------------------------------------------------


def loop_area(x, y) -> float:
    """Area enclosed by the closed polygon (x[i], y[i]) (shoelace formula)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


@dataclass
class DistortionCurve:
    stage: str
    freq: float
    amplitude: float
    x: np.ndarray
    y: np.ndarray

    @property
    def area(self) -> float:
        return loop_area(self.x, self.y)

    def to_csv(self) -> str:
        return "x,y\n" + "".join(f"{a:.9g},{b:.9g}\n" for a, b in zip(self.x, self.y))


DEFAULT_KNOBS = (0.5, 0.5, 0.5, 0.5, 0.5)
PROBE_STAGES = ("preamp", "tonestack", "poweramp", "transformer", "softclip", "amp")


def _stage_runner(model, stage: str, knobs):
    if stage == "amp":
        return lambda seg, st: model.process(knobs, seg, st)
    if stage == "softclip":
        sp = model.stage("poweramp").dsp_params(model.params, amp_mod.normalize_knobs(knobs))
        drive = float(np.squeeze(sp.clip_drive))
        return lambda seg, st: (dsp.soft_clip(np.asarray(seg), drive), st)
    if not isinstance(model, AmpModel):
        raise ValueError(f"stage {stage!r} needs a DDSP model")
    model.stage(stage)  # raises for configs without the stage
    return lambda seg, st: amp_mod._stage_forward(model, stage, knobs, seg, st)


def probe_distortion_curve(model, stage: str, freq: float = 100.0, amplitude: float = 0.5,
                           knobs=DEFAULT_KNOBS, settle: float = 1.0) -> DistortionCurve:
    """Drive one stage with a steady sine and keep one period after settling.

    The period is rounded to an even number of samples so the rising and
    falling halves of the sine hit identical input values; the frequency
    actually used is reported on the result.
    """
    if stage not in PROBE_STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {PROBE_STAGES}")
    period = max(2, 2 * int(round(FS / freq / 2)))
    run = _stage_runner(model, stage, knobs)
    n_settle = int(np.ceil(settle * FS / period)) * period
    cycle = amplitude * np.sin(2 * np.pi * np.arange(period) / period)
    x = np.tile(cycle, n_settle // period + 1)
    y, _ = run(x, None)
    y = np.asarray(y).reshape(-1)
    return DistortionCurve(stage, FS / period, amplitude, x[n_settle:], y[n_settle:])


def response_db(coeffs, freqs, fs: float = FS) -> np.ndarray:
    """Magnitude (dB) of a biquad cascade from the analytic transfer function."""
    h = np.ones(len(freqs), dtype=complex)
    for c in coeffs:
        vals = [float(np.squeeze(v)) for v in c]
        h *= dsp.BiquadCoeffs(*vals).response(freqs, fs)
    return 20.0 * np.log10(np.maximum(np.abs(h), 1e-300))


@dataclass
class FrequencyResponse:
    stage: str
    freqs: np.ndarray
    db: np.ndarray

    def to_csv(self) -> str:
        return "frequency_hz,magnitude_db\n" + "".join(f"{f:.6f},{d:.6f}\n" for f, d in zip(self.freqs, self.db))


def probe_frequency_response(model: AmpModel, stage: str, knobs=DEFAULT_KNOBS, n: int = 512,
                             f_lo: float = 20.0, f_hi: float = 20000.0) -> FrequencyResponse:
    """Linear-filter magnitude response of one stage at n log-spaced frequencies."""
    st = model.stage(stage)
    sp = st.dsp_params(model.params, amp_mod.normalize_knobs(knobs))
    freqs = np.geomspace(f_lo, f_hi, n)
    return FrequencyResponse(stage, freqs, response_db(st.linear_filters(sp), freqs))
