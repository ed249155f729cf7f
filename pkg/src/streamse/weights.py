"""Parameter layout of the dual-path network and seeded random initialisation.

All weight tensors put output channels first. Recurrent weights stack the two GRU
directions along a leading axis and use the gate order (r, z, n) for the GRU and
(i, f, g, o) for the LSTM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig

WeightStore = dict  # canonical path -> float32 ndarray


@dataclass(frozen=True)
class LayerDef:
    name: str
    kind: str  # "dense" | "gru" | "lstm"
    params: tuple[str, ...]
    fan_in: int


def layer_defs(cfg: ModelConfig) -> list[LayerDef]:
    d, h, q = cfg.channels, cfg.hidden, cfg.freq_compress
    ekt, ekf = cfg.enc_kernel
    dkt, dkf = cfg.dec_kernel
    layers = [LayerDef("encoder.conv", "dense", ("weight", "bias"), 2 * ekt * ekf)]
    for b in range(cfg.n_blocks):
        p = f"block.{b}"
        layers += [
            LayerDef(f"{p}.spectral.down", "dense", ("weight", "bias"), d * q),
            LayerDef(f"{p}.spectral.gru", "gru", ("w_ih", "w_hh", "b_ih", "b_hh"), h),
            LayerDef(f"{p}.spectral.up", "dense", ("weight", "bias"), 2 * h * q),
            LayerDef(f"{p}.temporal.lstm", "lstm", ("w_ih", "w_hh", "b_ih", "b_hh"), h),
            LayerDef(f"{p}.temporal.proj", "dense", ("weight", "bias"), h),
        ]
    layers.append(LayerDef("decoder.deconv", "dense", ("weight", "bias"), d * dkt * dkf))
    return layers


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h, q = cfg.channels, cfg.hidden, cfg.freq_compress
    shapes = {
        "encoder.conv.weight": (d, 2) + cfg.enc_kernel,
        "encoder.conv.bias": (d,),
    }
    for b in range(cfg.n_blocks):
        p = f"block.{b}"
        shapes.update({
            f"{p}.spectral.down.weight": (d, d, q),
            f"{p}.spectral.down.bias": (d,),
            f"{p}.spectral.gru.w_ih": (2, 3 * h, d),
            f"{p}.spectral.gru.w_hh": (2, 3 * h, h),
            f"{p}.spectral.gru.b_ih": (2, 3 * h),
            f"{p}.spectral.gru.b_hh": (2, 3 * h),
            f"{p}.spectral.up.weight": (d, 2 * h, q),
            f"{p}.spectral.up.bias": (d,),
            f"{p}.temporal.lstm.w_ih": (4 * h, d),
            f"{p}.temporal.lstm.w_hh": (4 * h, h),
            f"{p}.temporal.lstm.b_ih": (4 * h,),
            f"{p}.temporal.lstm.b_hh": (4 * h,),
            f"{p}.temporal.proj.weight": (d, h),
            f"{p}.temporal.proj.bias": (d,),
        })
    shapes["decoder.deconv.weight"] = (2, d) + cfg.dec_kernel
    shapes["decoder.deconv.bias"] = (2,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def weight_tensor_names(cfg: ModelConfig) -> list[str]:
    """Matrix-like tensors that take per-channel int8 quantization (biases excluded)."""
    return [n for n in param_shapes(cfg) if n.endswith((".weight", ".w_ih", ".w_hh"))]


def channel_dims(name: str) -> int:
    """Leading axes that index output channels (GRU weights also index the direction)."""
    return 2 if ".gru." in name else 1


def layer_of(name: str) -> str:
    return name.rsplit(".", 1)[0]


def random_init(cfg: ModelConfig, seed: int = 0, bias: bool = True) -> WeightStore:
    """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` drawn in canonical order."""
    rng = np.random.default_rng(seed)
    fan = {l.name: l.fan_in for l in layer_defs(cfg)}
    store = {}
    for name, shape in param_shapes(cfg).items():
        k = 1.0 / np.sqrt(fan[layer_of(name)])
        w = rng.uniform(-k, k, size=shape).astype(np.float32)
        if not bias and ".b" in name[len(layer_of(name)):]:
            w[...] = 0
        store[name] = w
    return store


def zero_init(cfg: ModelConfig) -> WeightStore:
    return {n: np.zeros(s, np.float32) for n, s in param_shapes(cfg).items()}


def check_shapes(weights: WeightStore, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    missing = set(expected) - set(weights)
    extra = set(weights) - set(expected)
    if missing or extra:
        raise ValueError(f"weight store mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for n, s in expected.items():
        if tuple(weights[n].shape) != s:
            raise ValueError(f"{n}: shape {weights[n].shape} != expected {s}")
