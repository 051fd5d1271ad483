"""Black-box Concat-GRU baselines (knob values concatenated to every input sample)."""

from __future__ import annotations

import numpy as np

from . import _kernels
from . import autodiff as ad
from .amp import KNOBS, normalize_knobs

PRESETS = {"A": 8, "B": 48}


class ConcatGruModel:
    """Single-layer GRU (one bias per gate) with a linear output head."""

    family = "gru"
    segment_length = 2048

    def __init__(self, hidden: int = 8, params: dict | None = None, seed: int = 0, n_knobs: int = len(KNOBS)):
        self.hidden = hidden
        self.n_knobs = n_knobs
        shapes = self.shapes()
        if params is None:
            rng = np.random.default_rng(seed)
            bound = 1.0 / np.sqrt(hidden)
            params = {k: rng.uniform(-bound, bound, s) for k, s in shapes.items()}
        missing = set(shapes) ^ set(params)
        if missing:
            raise ValueError(f"parameter set mismatch: {sorted(missing)}")
        self.params = {k: np.asarray(params[k], dtype=float).reshape(shapes[k]) for k in shapes}

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> ConcatGruModel:
        return cls(PRESETS[name.upper()], seed=seed)

    @property
    def arch(self) -> str:
        return f"concat-gru-{self.hidden}"

    @property
    def n_inputs(self) -> int:
        return 1 + self.n_knobs

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.hidden
        return {
            "gru.wx": (3 * h, self.n_inputs),
            "gru.wh": (3 * h, h),
            "gru.b": (3 * h,),
            "head.w": (h,),
            "head.b": (1,),
        }

    def _inputs(self, knobs, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        kn = normalize_knobs(knobs)
        kn = np.broadcast_to(kn[:, None, :], (x.shape[0], x.shape[1], kn.shape[1]))
        return np.concatenate([x[..., None], kn], axis=-1)

    def forward_train(self, params, knobs, x):
        hs = ad.gru_sequence(params["gru.wx"], params["gru.wh"], params["gru.b"], self._inputs(knobs, x))
        return hs @ params["head.w"] + params["head.b"]

    def init_state(self) -> np.ndarray:
        return np.zeros(self.hidden)

    def process(self, knobs, segment, state=None):
        return concat_gru_forward(self, knobs, segment, state)


def concat_gru_forward(m: ConcatGruModel, knobs, segment, h0=None):
    """Streaming inference; returns (output, final hidden state)."""
    h0 = m.init_state() if h0 is None else np.asarray(h0, dtype=float)
    u = np.ascontiguousarray(m._inputs(knobs, np.asarray(segment, dtype=float).reshape(1, -1)))
    p = m.params
    hs, _ = _kernels.gru_forward(p["gru.wx"], p["gru.wh"], p["gru.b"], u, np.ascontiguousarray(h0[None, :]))
    # fixed-order accumulation: a BLAS product may round differently per block length
    y = np.full(hs.shape[1], p["head.b"][0])
    for j in range(m.hidden):
        y += hs[0, :, j] * p["head.w"][j]
    h_n = hs[0, -1].copy() if hs.shape[1] else h0.copy()
    return y, h_n
