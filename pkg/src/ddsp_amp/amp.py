"""The four-stage DDSP amp and its knob controllers.

A model is an ordered list of stages. Each stage owns an MLP knob controller
(or a static parameter vector), maps controller outputs to DSP parameters, and
renders audio through a *runner*: :class:`FsRunner` (batched, frequency
sampling, differentiable) for training and :class:`TdRunner` (recursive
biquads with carried :class:`StreamState`) for inference. Both runners walk
the same chain code, so the stream-state order is the traversal order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dsp
from .dsp import FilterKind

FS = 44100.0
KNOBS = ("gain", "bass", "mid", "treble", "master")
HIDDEN = 32
_LPH = (("ls", FilterKind.LOW_SHELF), ("pk", FilterKind.PEAK), ("hs", FilterKind.HIGH_SHELF))


@dataclass(frozen=True)
class ParamRange:
    lo: float
    hi: float
    scale: str = "log"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty range [{self.lo}, {self.hi}]")
        if self.scale not in ("log", "linear"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.scale == "log" and self.lo <= 0:
            raise ValueError("logarithmic range needs lo > 0")

    def map(self, u):
        """Map u in (0, 1) onto the range.

        The clamp only matters when a saturated sigmoid returns exactly 0 or 1
        and rounding pushes the result one ulp outside [lo, hi].
        """
        if self.scale == "linear":
            v = self.lo + u * (self.hi - self.lo)
        else:
            v = self.lo * ad.exp(u * math.log(self.hi / self.lo))
        return ad.clip(v, self.lo, self.hi)

    def unmap(self, v: float) -> float:
        if self.scale == "linear":
            return (v - self.lo) / (self.hi - self.lo)
        return math.log(v / self.lo) / math.log(self.hi / self.lo)


RANGES = {
    "ls.fc": ParamRange(30.0, 450.0),
    "pk.fc": ParamRange(200.0, 4000.0),
    "hs.fc": ParamRange(1500.0, 12000.0),
    "gain": ParamRange(-24.0, 24.0, "linear"),
    "q": ParamRange(0.3, 3.0),
    "pregain": ParamRange(0.1, 20.0),
    "postgain": ParamRange(0.1, 10.0),
    "master": ParamRange(1e-3, 1.0),
    "drive": ParamRange(0.5, 10.0),
    "hp.fc": ParamRange(10.0, 120.0),
    "lp.fc": ParamRange(4000.0, 20000.0),
}


def normalize_knobs(knobs) -> np.ndarray:
    """[0, 1] user scale -> [-1, 1] controller scale, shape (B, 5)."""
    k = np.atleast_2d(np.asarray(knobs, dtype=float))
    if k.shape[-1] != len(KNOBS):
        raise ValueError(f"expected {len(KNOBS)} knob values, got {k.shape[-1]}")
    if np.any(k < 0) or np.any(k > 1) or not np.all(np.isfinite(k)):
        raise ValueError("knob values must lie in [0, 1]")
    return 2.0 * k - 1.0


class MlpController:
    """in -> 32 -> 32 -> out with LeakyReLU(0.1), sigmoid outputs mapped to ranges.

    With no knob inputs the controller degenerates to a learnable logit per
    output (static parameters).
    """

    def __init__(self, name: str, knob_idx: tuple[int, ...], outputs: list[tuple[str, ParamRange]],
                 hidden: int = HIDDEN):
        self.name = name
        self.knob_idx = tuple(knob_idx)
        self.outputs = list(outputs)
        self.hidden = hidden

    @property
    def n_out(self) -> int:
        return len(self.outputs)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        if not self.knob_idx:
            return {f"{self.name}.logits": (self.n_out,)}
        dims = (len(self.knob_idx), self.hidden, self.hidden, self.n_out)
        out = {}
        for i in range(3):
            out[f"{self.name}.l{i}.w"] = (dims[i], dims[i + 1])
            out[f"{self.name}.l{i}.b"] = (dims[i + 1],)
        return out

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for key, shape in self.shapes().items():
            if key.endswith(".logits") or key.endswith(".b"):
                params[key] = np.zeros(shape)
            else:
                bound = math.sqrt(6.0 / ((1.0 + ad.LEAKY_SLOPE**2) * shape[0]))
                if key.endswith(".l2.w"):
                    bound *= 0.1
                params[key] = rng.uniform(-bound, bound, shape)
        return params

    def unit_outputs(self, params, knobs_norm):
        """Sigmoid outputs in (0, 1), shape (B, n_out) (or (n_out,) when static)."""
        if not self.knob_idx:
            return ad.sigmoid(params[f"{self.name}.logits"])
        h = knobs_norm[:, list(self.knob_idx)]
        for i in range(3):
            h = h @ params[f"{self.name}.l{i}.w"] + params[f"{self.name}.l{i}.b"]
            if i < 2:
                h = ad.leaky_relu(h)
        return ad.sigmoid(h)

    def __call__(self, params, knobs_norm) -> dict:
        """Mapped DSP parameters keyed by output name; each (B, 1) or scalar."""
        u = self.unit_outputs(params, knobs_norm)
        out = {}
        for j, (key, rng_) in enumerate(self.outputs):
            col = u[j] if not self.knob_idx else u[:, j : j + 1]
            out[key] = rng_.map(col)
        return out


def controller_eval(c: MlpController, params, knobs_subset) -> dict:
    """Evaluate a controller on already-normalized knob values of its own inputs."""
    ks = np.atleast_2d(np.asarray(knobs_subset, dtype=float))
    full = np.zeros((ks.shape[0], len(KNOBS)))
    full[:, list(c.knob_idx)] = ks
    return c(params, full)


# --- runners ----------------------------------------------------------------


@dataclass
class StreamState:
    """Filter and GRU states in traversal order; empty means a fresh stream."""

    tags: list[str] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> StreamState:
        return StreamState(list(self.tags), [v.copy() for v in self.values])


class FsRunner:
    """Batched, differentiable rendering; every segment starts from zero state."""

    def filters(self, coeffs, x, tag):
        return dsp.biquad_cascade_fs(coeffs, x)

    def gru(self, p, x, tag):
        return ad.gru1_sequence(p, x)


class TdRunner:
    """Recursive single-stream rendering that reads and advances a StreamState."""

    def __init__(self, state: StreamState):
        self.state = state
        self.pos = 0

    def _slot(self, tag: str, size: int) -> np.ndarray:
        if self.pos == len(self.state.values):
            self.state.tags.append(tag)
            self.state.values.append(np.zeros(size))
        elif self.state.tags[self.pos] != tag:
            raise ValueError(f"stream state mismatch at {tag!r}")
        slot = self.state.values[self.pos]
        self.pos += 1
        return slot

    def filters(self, coeffs, x, tag):
        y = np.asarray(x, dtype=float).reshape(-1)
        for i, c in enumerate(coeffs):
            s = self._slot(f"{tag}.{i}", 2)
            y, s[0], s[1] = dsp._kernels.biquad_td(*(float(np.squeeze(v)) for v in c), y, s[0], s[1])
        return y

    def gru(self, p, x, tag):
        s = self._slot(tag, 1)
        x2 = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(1, -1))
        hs = dsp._kernels.gru1_forward(np.asarray(p, dtype=float), x2, s)[0][0]
        if hs.size:
            s[0] = hs[-1]
        return hs


# --- stages -------------------------------------------------------------------


def _wh_outputs(prefix: str) -> list[tuple[str, ParamRange]]:
    outs = [(prefix + "pregain", RANGES["pregain"]), (prefix + "postgain", RANGES["postgain"])]
    for side in ("h1", "h2"):
        for short, _ in _LPH:
            outs += [
                (f"{prefix}{side}.{short}.fc", RANGES[f"{short}.fc"]),
                (f"{prefix}{side}.{short}.gain", RANGES["gain"]),
                (f"{prefix}{side}.{short}.q", RANGES["q"]),
            ]
    return outs


def _lph(o: dict, prefix: str) -> list:
    return [
        dsp.cookbook(kind, o[f"{prefix}{short}.fc"], o[f"{prefix}{short}.gain"], o[f"{prefix}{short}.q"], FS)
        for short, kind in _LPH
    ]


@dataclass
class WhBlock:
    """One Wiener-Hammerstein block's DSP parameters (values, arrays or Vars)."""

    pregain: object
    postgain: object
    h1: list
    gru: object
    h2: list


def _wh_block(o: dict, prefix: str, gru) -> WhBlock:
    return WhBlock(o[prefix + "pregain"], o[prefix + "postgain"], _lph(o, prefix + "h1."), gru,
                   _lph(o, prefix + "h2."))


def wh_render(run, block: WhBlock, x, tag: str, nonlinearity: str = "gru"):
    """pregain -> H1 -> f -> postgain -> H2."""
    x = x * block.pregain
    x = run.filters(block.h1, x, tag + ".h1")
    if nonlinearity == "gru":
        x = run.gru(block.gru, x, tag + ".gru")
    elif nonlinearity == "tanh":  # debug variant used to validate plumbing
        x = ad.tanh(x)
    else:
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}")
    x = x * block.postgain
    return run.filters(block.h2, x, tag + ".h2")


def wh_forward(block: WhBlock, segment, state: StreamState | None = None, nonlinearity: str = "gru"):
    state = StreamState() if state is None else state.copy()
    y = wh_render(TdRunner(state), block, segment, "wh", nonlinearity)
    return y, state


class Stage:
    name: str
    controller: MlpController

    def gru_names(self) -> list[str]:
        return []

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = dict(self.controller.shapes())
        for g in self.gru_names():
            shapes[g] = (9,)
        return shapes

    def init(self, rng) -> dict[str, np.ndarray]:
        params = self.controller.init(rng)
        for g in self.gru_names():
            params[g] = rng.uniform(-0.5, 0.5, 9)
        return params

    def dsp_params(self, params, knobs_norm):
        raise NotImplementedError

    def render(self, run, sp, x):
        raise NotImplementedError

    def linear_filters(self, sp) -> list:
        raise NotImplementedError


class WhStack(Stage):
    """N cascaded WH blocks, conditioned by the given knobs (the preamp)."""

    kind = "wh"

    def __init__(self, name: str, n_blocks: int, knob_idx: tuple[int, ...]):
        self.name = name
        self.n_blocks = n_blocks
        outs = []
        for j in range(n_blocks):
            outs += _wh_outputs(f"block{j}.")
        self.controller = MlpController(f"{name}.ctrl", knob_idx, outs)

    def gru_names(self):
        return [f"{self.name}.block{j}.gru" for j in range(self.n_blocks)]

    def dsp_params(self, params, knobs_norm):
        o = self.controller(params, knobs_norm)
        return [_wh_block(o, f"block{j}.", params[g]) for j, g in enumerate(self.gru_names())]

    def render(self, run, sp, x):
        for j, block in enumerate(sp):
            x = wh_render(run, block, x, f"{self.name}.block{j}")
        return x

    def linear_filters(self, sp):
        return [c for block in sp for c in block.h1 + block.h2]


class ToneStack(Stage):
    """Low-shelf, peak, high-shelf in series; one MLP sees bass, mid and treble jointly."""

    kind = "tonestack"

    def __init__(self, name: str = "tonestack", knob_idx=(1, 2, 3)):
        self.name = name
        outs = []
        for short, _ in _LPH:
            outs += [(f"{short}.fc", RANGES[f"{short}.fc"]), (f"{short}.gain", RANGES["gain"]),
                     (f"{short}.q", RANGES["q"])]
        self.controller = MlpController(f"{name}.ctrl", knob_idx, outs)

    def dsp_params(self, params, knobs_norm):
        return _lph(self.controller(params, knobs_norm), "")

    def render(self, run, sp, x):
        return run.filters(sp, x, self.name)

    def linear_filters(self, sp):
        return list(sp)


@dataclass
class PowerAmpParams:
    master: object
    feedback: list
    drive_gain: object
    clip_drive: object
    mix_a: object
    mix_b: object
    path_a: WhBlock
    path_b: WhBlock


class PowerAmp(Stage):
    """Master -> feedback filter -> gain -> phase splitter -> push/pull WH paths."""

    kind = "poweramp"

    def __init__(self, name: str = "poweramp", knob_idx=(4,)):
        self.name = name
        outs = [
            ("master", RANGES["master"]),
            ("fb.fc", RANGES["hs.fc"]), ("fb.gain", RANGES["gain"]), ("fb.q", RANGES["q"]),
            ("drive_gain", RANGES["pregain"]),
            ("clip_drive", RANGES["drive"]),
            ("mix_a", RANGES["postgain"]), ("mix_b", RANGES["postgain"]),
        ]
        outs += _wh_outputs("a.") + _wh_outputs("b.")
        self.controller = MlpController(f"{name}.ctrl", knob_idx, outs)

    def gru_names(self):
        return [f"{self.name}.a.gru", f"{self.name}.b.gru"]

    def dsp_params(self, params, knobs_norm):
        o = self.controller(params, knobs_norm)
        fb = dsp.cookbook(FilterKind.HIGH_SHELF, o["fb.fc"], o["fb.gain"], o["fb.q"], FS)
        ga, gb = self.gru_names()
        return PowerAmpParams(o["master"], [fb], o["drive_gain"], o["clip_drive"], o["mix_a"], o["mix_b"],
                              _wh_block(o, "a.", params[ga]), _wh_block(o, "b.", params[gb]))

    def render(self, run, sp: PowerAmpParams, x):
        x = x * sp.master
        x = run.filters(sp.feedback, x, self.name + ".fb")
        u = x * sp.drive_gain
        path_a = ad.tanh(sp.clip_drive * u)
        path_b = ad.tanh(sp.clip_drive * -u)
        ya = wh_render(run, sp.path_a, path_a, self.name + ".a")
        yb = wh_render(run, sp.path_b, path_b, self.name + ".b")
        return sp.mix_a * ya - sp.mix_b * yb

    def linear_filters(self, sp):
        return list(sp.feedback)


@dataclass
class TransformerParams:
    in_gain: object
    gru: object
    filters: list
    out_gain: object


class Transformer(Stage):
    """Input gain -> GRU-1 -> high-pass -> low-pass -> output gain; no knob inputs."""

    kind = "transformer"

    def __init__(self, name: str = "transformer"):
        self.name = name
        outs = [("in_gain", RANGES["pregain"]), ("hp.fc", RANGES["hp.fc"]), ("lp.fc", RANGES["lp.fc"]),
                ("out_gain", RANGES["postgain"])]
        self.controller = MlpController(f"{name}.ctrl", (), outs)

    def gru_names(self):
        return [f"{self.name}.gru"]

    def dsp_params(self, params, knobs_norm):
        o = self.controller(params, knobs_norm)
        q = dsp.BUTTERWORTH_Q
        filters = [dsp.cookbook(FilterKind.HIGH_PASS, o["hp.fc"], 0.0, q, FS),
                   dsp.cookbook(FilterKind.LOW_PASS, o["lp.fc"], 0.0, q, FS)]
        return TransformerParams(o["in_gain"], params[self.gru_names()[0]], filters, o["out_gain"])

    def render(self, run, sp: TransformerParams, x):
        x = x * sp.in_gain
        x = run.gru(sp.gru, x, self.name + ".gru")
        x = run.filters(sp.filters, x, self.name + ".filters")
        return x * sp.out_gain

    def linear_filters(self, sp):
        return list(sp.filters)


def build_stages(config: str) -> list[Stage]:
    """Stage lists for the ablation presets: C (WH only) up to F (WH+LPH+POW+TRANS)."""
    config = config.upper()
    if config == "C":
        return [WhStack("wh", 4, (0, 1, 2, 3, 4))]
    stages: list[Stage] = [WhStack("preamp", 4, (0,)), ToneStack()]
    if config == "D":
        return stages + [WhStack("post", 2, (4,))]
    stages.append(PowerAmp())
    if config == "E":
        return stages
    if config == "F":
        return stages + [Transformer()]
    raise ValueError(f"unknown DDSP config {config!r} (expected C, D, E or F)")


class AmpModel:
    """Cascade of stages plus the flat dictionary of trainable arrays."""

    family = "ddsp"
    segment_length = 8192

    def __init__(self, config: str = "F", params: dict | None = None, seed: int = 0):
        self.config = config.upper()
        self.stages = build_stages(self.config)
        shapes = self.shapes()
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for st in self.stages:
                params.update(st.init(rng))
        missing = set(shapes) ^ set(params)
        if missing:
            raise ValueError(f"parameter set mismatch: {sorted(missing)}")
        self.params = {k: np.asarray(params[k], dtype=float).reshape(shapes[k]) for k in shapes}

    @property
    def arch(self) -> str:
        return f"ddsp-{self.config}"

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for st in self.stages:
            for k, v in st.shapes().items():
                if k in shapes:
                    raise ValueError(f"duplicate parameter {k}")
                shapes[k] = v
        return shapes

    def stage(self, name: str) -> Stage:
        for st in self.stages:
            if st.name == name or st.kind == name:
                return st
        raise KeyError(f"model {self.arch} has no stage {name!r}")

    def dsp_params(self, knobs, params=None) -> list:
        params = self.params if params is None else params
        kn = normalize_knobs(knobs)
        return [st.dsp_params(params, kn) for st in self.stages]

    def render(self, run, sps, x):
        for st, sp in zip(self.stages, sps):
            x = st.render(run, sp, x)
        return x

    def forward_train(self, params, knobs, x):
        """Differentiable batch forward: knobs (B, 5) in [0, 1], x (B, L)."""
        return self.render(FsRunner(), self.dsp_params(knobs, params), x)

    def init_state(self) -> StreamState:
        return StreamState()

    def process(self, knobs, segment, state: StreamState | None = None):
        return amp_forward(self, knobs, segment, state)


def amp_forward(model: AmpModel, knobs, segment, state: StreamState | None = None):
    """Streaming inference: controllers once per call, recursive filters, carried state."""
    state = StreamState() if state is None else state.copy()
    sps = model.dsp_params(knobs)
    y = model.render(TdRunner(state), sps, np.asarray(segment, dtype=float).reshape(-1))
    return np.asarray(y, dtype=float).reshape(-1), state


def _stage_forward(model: AmpModel, name: str, knobs, segment, state):
    st = model.stage(name)
    state = StreamState() if state is None else state.copy()
    sp = st.dsp_params(model.params, normalize_knobs(knobs))
    y = st.render(TdRunner(state), sp, np.asarray(segment, dtype=float).reshape(-1))
    return np.asarray(y).reshape(-1), state


def preamp_forward(model: AmpModel, gain: float, segment, state=None):
    return _stage_forward(model, "preamp", [gain, 0.5, 0.5, 0.5, 0.5], segment, state)


def tonestack_forward(model: AmpModel, bass: float, mid: float, treble: float, segment, state=None):
    return _stage_forward(model, "tonestack", [0.5, bass, mid, treble, 0.5], segment, state)


def poweramp_forward(model: AmpModel, master: float, segment, state=None):
    return _stage_forward(model, "poweramp", [0.5, 0.5, 0.5, 0.5, master], segment, state)


def transformer_forward(model: AmpModel, segment, state=None):
    return _stage_forward(model, "transformer", [0.5] * 5, segment, state)
