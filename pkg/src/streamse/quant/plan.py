"""Per-layer precision assignment and the mixed-precision layer executor.

Every layer of the network is reduced to a matrix product on gathered columns (dense
layers) or to a recurrence (GRU, LSTM). The executor prepares each layer once for its
planned precision and is then shared, read-only, by offline and streaming inference.

Activation sites are named ``<layer>.in`` and ``<layer>.out`` for dense layers and
``<layer>.in`` / ``<layer>.h`` for recurrent layers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import recurrent
from ..config import ModelConfig
from ..weights import channel_dims, layer_defs
from .core import QuantSpec, bf16_round, quantize, weight_spec
from .kernels import bias_to_int32

PRECISIONS = ("f32", "bf16", "int8")
BOUNDARY_LAYERS = ("encoder.conv", "decoder.deconv")
BATCHED_GRU_MIN = 16  # float GRU batches at least this large use the vectorised path


@dataclass
class PrecisionPlan:
    layers: dict[str, str] = field(default_factory=dict)

    @classmethod
    def for_mode(cls, cfg: ModelConfig, mode: str = "mixed", overrides: dict | None = None) -> "PrecisionPlan":
        names = [l.name for l in layer_defs(cfg)]
        if mode == "mixed":
            layers = {n: ("bf16" if n in BOUNDARY_LAYERS else "int8") for n in names}
        elif mode in PRECISIONS:
            layers = dict.fromkeys(names, mode)
        else:
            raise ValueError(f"unknown precision mode {mode!r}")
        for n, p in (overrides or {}).items():
            if n not in layers:
                raise ValueError(f"plan override for unknown layer {n!r}")
            layers[n] = p
        plan = cls(layers)
        plan.validate(cfg)
        return plan

    def validate(self, cfg: ModelConfig) -> None:
        names = {l.name for l in layer_defs(cfg)}
        if set(self.layers) != names:
            raise ValueError(f"plan does not cover exactly the model layers: {sorted(names ^ set(self.layers))}")
        bad = {n: p for n, p in self.layers.items() if p not in PRECISIONS}
        if bad:
            raise ValueError(f"invalid precisions {bad}")

    def int8_layers(self) -> list[str]:
        return [n for n, p in self.layers.items() if p == "int8"]

    def activation_sites(self, cfg: ModelConfig) -> list[str]:
        kinds = {l.name: l.kind for l in layer_defs(cfg)}
        sites = []
        for n in self.int8_layers():
            sites += [f"{n}.in", f"{n}.out" if kinds[n] == "dense" else f"{n}.h"]
        return sites


def _dense_view(name: str, w: np.ndarray) -> np.ndarray:
    """Matrix form (rows = outputs, cols = gathered inputs) of a dense layer weight."""
    if name.endswith("spectral.down"):
        return w.transpose(0, 2, 1).reshape(w.shape[0], -1)
    if name.endswith("spectral.up"):
        return w.transpose(2, 0, 1).reshape(-1, w.shape[1])
    if name == "decoder.deconv":
        return np.flip(w, axis=(2, 3)).reshape(w.shape[0], -1)
    return w.reshape(w.shape[0], -1)


def _dense_bias(name: str, b: np.ndarray, rows: int) -> np.ndarray:
    return np.tile(b, rows // b.shape[0])


class MissingSpecError(KeyError):
    pass


@dataclass
class _Layer:
    name: str
    kind: str
    precision: str
    w: np.ndarray = None  # dense weight matrix, or GRU/LSTM input matrix
    b: np.ndarray = None
    whh: np.ndarray = None
    bhh: np.ndarray = None
    row_scale: np.ndarray = None
    hh_scale: np.ndarray = None
    bias_int: np.ndarray = None
    in_spec: QuantSpec = None
    out_spec: QuantSpec = None
    wt: np.ndarray = None  # contiguous transposes for the hot path
    whh_t: np.ndarray = None
    multiplier: np.ndarray = None


class Executor:
    """Runs layers at their planned precision.

    Args:
        weights: float weight store.
        cfg: model geometry.
        plan: precision per layer; defaults to float everywhere.
        act_specs: activation specs keyed by site; required for every int8 layer.
        weight_specs: optional per-channel weight specs keyed by tensor name; computed
            from the weights when absent.
        tap: optional ``tap(site, array)`` callback used by calibration.
    """

    def __init__(self, weights, cfg: ModelConfig, plan: PrecisionPlan | None = None,
                 act_specs: dict | None = None, weight_specs: dict | None = None,
                 tap: Callable | None = None):
        self.cfg = cfg
        self.plan = plan or PrecisionPlan.for_mode(cfg, "f32")
        self.plan.validate(cfg)
        self.act_specs = dict(act_specs or {})
        self.weight_specs = dict(weight_specs or {})
        self.tap = tap
        self.trace = Counter()
        self.layers = {l.name: self._prepare(l, weights) for l in layer_defs(cfg)}

    def precision(self, name: str) -> str:
        return self.layers[name].precision

    def _site(self, site: str) -> QuantSpec:
        try:
            return self.act_specs[site]
        except KeyError:
            raise MissingSpecError(f"no activation spec for int8 site {site!r}; calibrate first") from None

    def _wspec(self, tensor: str, w: np.ndarray) -> QuantSpec:
        spec = self.weight_specs.get(tensor)
        if spec is None:
            spec = weight_spec(w, channel_dims(tensor))
            self.weight_specs[tensor] = spec
        return spec

    def _int_matrix(self, tensor, w, view):
        spec = self._wspec(tensor, w)
        q = quantize(w, spec).q.astype(np.float64)
        full_scale = np.broadcast_to(spec.scale_for(w.ndim), w.shape)
        return view(q), view(np.ascontiguousarray(full_scale))[..., 0]

    def _prepare(self, ldef, weights) -> _Layer:
        name, prec = ldef.name, self.plan.layers[ldef.name]
        L = _Layer(name, ldef.kind, prec)
        get = lambda p: np.asarray(weights[f"{name}.{p}"], dtype=np.float64)
        if ldef.kind == "dense":
            w, b = get("weight"), get("bias")
            view = lambda a: _dense_view(name, a)
            L.w = view(w)
            L.b = _dense_bias(name, b, L.w.shape[0])
            if prec == "int8":
                L.in_spec, L.out_spec = self._site(f"{name}.in"), self._site(f"{name}.out")
                L.w, L.row_scale = self._int_matrix(f"{name}.weight", w, view)
                L.bias_int = bias_to_int32(L.b, L.in_spec.scale, L.row_scale)
                L.multiplier = L.in_spec.scale * L.row_scale / L.out_spec.scale
        else:
            w_ih, w_hh, b_ih, b_hh = get("w_ih"), get("w_hh"), get("b_ih"), get("b_hh")
            flat = lambda a: a.reshape(-1, a.shape[-1])
            L.w, L.b = flat(w_ih), b_ih.reshape(-1)
            L.whh, L.bhh = w_hh, b_hh
            if prec == "int8":
                L.in_spec, L.out_spec = self._site(f"{name}.in"), self._site(f"{name}.h")
                L.w, L.row_scale = self._int_matrix(f"{name}.w_ih", w_ih, flat)
                L.whh, L.hh_scale = self._int_matrix(f"{name}.w_hh", w_hh, lambda a: a)
        if prec == "bf16":
            L.w, L.b = _bf(L.w), _bf(L.b)
            if L.whh is not None:
                L.whh, L.bhh = _bf(L.whh), _bf(L.bhh)
        L.wt = np.ascontiguousarray(L.w.T)
        if ldef.kind == "lstm":
            L.whh_t = np.ascontiguousarray(L.whh.T)
        elif ldef.kind == "gru":
            L.whh = np.ascontiguousarray(L.whh)
            L.hh_scale = L.out_spec.scale * L.hh_scale if prec == "int8" else np.ones(L.whh.shape[:2])
        return L

    def _observe(self, site, x):
        if self.tap is not None:
            self.tap(site, x)

    def _quant_centered(self, x, spec: QuantSpec):
        """``quantize(x, spec).centered()`` without materialising the int8 payload."""
        z = spec.zero_point
        q = np.rint(x / spec.scale)
        return np.clip(q, spec.qmin - z, spec.qmax - z, out=q)

    # dense layers

    def dense_acc(self, name: str, cols, idx=None) -> np.ndarray:
        """Accumulate ``cols @ W[:, idx].T`` in the layer's arithmetic (no bias, no rounding)."""
        L = self.layers[name]
        wt = L.wt if idx is None else L.wt[idx]
        self._observe(f"{name}.in", cols)
        if L.precision == "int8":
            return self._quant_centered(cols, L.in_spec) @ wt
        if L.precision == "bf16":
            return _bf(cols) @ wt
        return cols @ wt

    def dense_finish(self, name: str, acc) -> np.ndarray:
        L = self.layers[name]
        self.trace[name] += 1
        if L.precision == "int8":
            # same arithmetic as kernels.requantize, kept in centred form
            o = L.out_spec
            q = np.rint((acc + L.bias_int) * L.multiplier)
            out = o.scale * np.clip(q, o.qmin - o.zero_point, o.qmax - o.zero_point, out=q)
        elif L.precision == "bf16":
            out = _bf(acc + L.b)
        else:
            out = acc + L.b
        self._observe(f"{name}.out", out)
        return out

    def dense(self, name: str, cols) -> np.ndarray:
        return self.dense_finish(name, self.dense_acc(name, cols))

    # recurrent layers

    def _input_projection(self, L: _Layer, x) -> np.ndarray:
        self._observe(f"{L.name}.in", x)
        if L.precision == "int8":
            return (self._quant_centered(x, L.in_spec) @ L.wt) * (L.in_spec.scale * L.row_scale) + L.b
        if L.precision == "bf16":
            return _bf(_bf(x) @ L.wt + L.b)
        return x @ L.wt + L.b

    def _hidden_mode(self, L: _Layer):
        if L.precision == "int8":
            s = L.out_spec
            return recurrent.INT8, s.scale, s.zero_point, s.qmin, s.qmax
        return (recurrent.BF16 if L.precision == "bf16" else recurrent.FLOAT), 1.0, 0, -128, 127

    def gru(self, name: str, x) -> np.ndarray:
        """Bidirectional GRU along axis 1 of ``x`` (B, L, D); returns (B, L, 2H)."""
        L = self.layers[name]
        self.trace[name] += 1
        b, n = x.shape[:2]
        gi = self._input_projection(L, x.reshape(b * n, -1)).reshape(b, n, 2, -1)
        mode, hs, hz, qmin, qmax = self._hidden_mode(L)
        if mode == recurrent.FLOAT and b >= BATCHED_GRU_MIN:
            out = recurrent.gru_bidir_float(gi, L.whh, L.bhh)
            self._observe(f"{name}.h", out)
            return out
        out = recurrent.gru_bidir(np.ascontiguousarray(gi), L.whh, L.hh_scale, L.bhh, mode, hs, hz, qmin, qmax)
        self._observe(f"{name}.h", out)
        return out

    def lstm(self, name: str, x, h, c):
        """LSTM along axis 0 of ``x`` (T, B, D) from carry ``(h, c)`` of shape (B, H)."""
        L = self.layers[name]
        self.trace[name] += 1
        t, b = x.shape[:2]
        gx = self._input_projection(L, x.reshape(t * b, -1)).reshape(t, b, -1)
        if L.precision == "int8":
            s = L.out_spec
            gscale = s.scale * L.hh_scale
            hidden = lambda hh: (self._quant_centered(hh, s) @ L.whh_t) * gscale + L.bhh
            store = lambda hh: s.scale * self._quant_centered(hh, s)
        elif L.precision == "bf16":
            hidden = lambda hh: _bf(_bf(hh) @ L.whh_t + L.bhh)
            store = _bf
        else:
            hidden = lambda hh: hh @ L.whh_t + L.bhh
            store = lambda hh: hh
        out, h, c = recurrent.lstm_steps(gx, h, c, hidden, store)
        self._observe(f"{name}.h", out)
        return out, h, c


def _bf(x):
    return bf16_round(x).astype(np.float64)
