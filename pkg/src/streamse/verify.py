"""Self-contained invariant checks, each returning a pass/fail result with a detail line.

These back the ``verify`` command. The perfect-reconstruction check accepts an
injectable synthesis window so a deliberately broken window can serve as a negative
control.
"""

from __future__ import annotations

import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np

from . import container, dsp, metrics
from .config import EngineConfig, FramingConfig
from .model import build_model, forward_offline
from .quant import kernels
from .quant.calibrate import calibrate
from .quant.plan import PrecisionPlan
from .quant.core import (QuantSpec, asym_spec, dequantize, fake_quant, quantize, quantizer_grads,
                         weight_spec)
from .stream import StreamEngine
from .weights import param_count, random_init

BUDGET_BYTES = 1.5e6
REFERENCE_BYTES = 298.8e3  # published size of the deployed model, for context only


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_framing(rng) -> FramingConfig:
    """A random valid geometry with ``l_c > l_f``."""
    l_c = int(rng.integers(8, 160))
    l_f = int(rng.integers(0, l_c))
    l_b = int(rng.integers(0, 200))
    return FramingConfig(l_b=l_b, l_c=l_c, l_f=l_f)


def check_perfect_reconstruction(cfg: FramingConfig | None = None, seconds: float = 10.0,
                                 window=None, seed: int = 0, tol: float = 1e-5) -> CheckResult:
    cfg = cfg or FramingConfig()
    x = np.random.default_rng(seed).uniform(-1, 1, int(seconds * cfg.sample_rate))
    y = dsp.identity_pipeline(x, cfg, window)
    d = cfg.latency
    err = float(np.max(np.abs(y[d:] - x[:y.size - d])))
    return CheckResult("perfect reconstruction", err <= tol, f"max err {err:.2e} at delay {d} (tol {tol:g})")


def cola_error(cfg: FramingConfig, window=None) -> float:
    """Max deviation from 1 of the brute-force sum of hop-shifted windows."""
    w = dsp.build_synthesis_window(cfg) if window is None else np.asarray(window)
    n, hop = w.size, cfg.l_c
    reps = n // hop + 2
    acc = np.zeros((2 * reps + 1) * hop + n)
    for k in range(2 * reps + 1):
        acc[k * hop:k * hop + n] += w
    steady = acc[reps * hop:reps * hop + hop]  # one hop deep inside the sum
    return float(np.max(np.abs(steady - 1.0)))


def check_cola(n_random: int = 20, seed: int = 0, tol: float = 1e-7) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfgs = [FramingConfig()] + [random_framing(rng) for _ in range(n_random)]
    worst = max(cola_error(c) for c in cfgs)
    return CheckResult("COLA", worst <= tol, f"worst |sum - 1| {worst:.2e} over {len(cfgs)} geometries")


def stream_offline_error(seed: int, seconds: float, engine: EngineConfig | None = None,
                         act_specs=None, weight_specs=None) -> float:
    engine = engine or EngineConfig()
    rng = np.random.default_rng(seed)
    w = random_init(engine.model, seed)
    x = rng.standard_normal(int(seconds * engine.framing.sample_rate)) * 0.1
    model = build_model(w, engine, act_specs, weight_specs)
    off = forward_offline(x, engine=engine, model=model)
    eng = StreamEngine(cfg=engine, model=model)
    st = eng.init_state()
    lc = engine.framing.l_c
    out = np.concatenate([eng.process_chunk(st, x[i * lc:(i + 1) * lc]) for i in range(x.size // lc)])
    return float(np.max(np.abs(out - off)))


def check_stream_offline(seeds=range(10), seconds: float = 2.0, tol: float = 1e-5) -> CheckResult:
    errs = [stream_offline_error(s, seconds) for s in seeds]
    return CheckResult("streaming == offline", max(errs) <= tol,
                       f"max err {max(errs):.2e} over {len(errs)} seeds x {seconds:g} s")


def check_quant_bounds(n_specs: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_specs):
        a, b = sorted(rng.normal(0, 2, 2))
        spec = asym_spec(a, b)
        lo, hi = spec.scale * (spec.qmin - spec.zero_point), spec.scale * (spec.qmax - spec.zero_point)
        grid = np.linspace(lo, hi, 20001)
        worst = max(worst, float(np.max(np.abs(fake_quant(grid, spec) - grid)) / spec.scale))
    w = rng.normal(size=(16, 8, 3))
    zp_ok = weight_spec(w).zero_point == 0
    ok = worst <= 0.5 + 1e-9 and zp_ok
    return CheckResult("quantization bounds", ok, f"max |fq(r) - r| / S = {worst:.6f}; weight Z = 0: {zp_ok}")


def ste_surrogate(r, scale, spec: QuantSpec, resid):
    """``S * (clamp(r/S + resid + Z) - Z)``: fake quantization with the rounding residual frozen.

    At the base point it equals ``fake_quant``; its exact derivatives are the STE and
    step-size gradients, so finite differences of it are the right oracle for them.
    """
    z = spec.zero_point
    return scale * (np.clip(r / scale + resid + z, spec.qmin, spec.qmax) - z)


def gradient_check_points(n: int, rng, spec: QuantSpec, margin: float = 0.01):
    """Random points at least ``margin * S`` from rounding boundaries.

    Points that round exactly onto ``qmin``/``qmax`` or onto the first level past them are
    skipped: there the surrogate sits on its clamp kink and has no two-sided derivative.
    """
    s, z = spec.scale, spec.zero_point
    pts = []
    while len(pts) < n:
        u = rng.uniform(spec.qmin - z - 8, spec.qmax - z + 8)
        frac = u - np.floor(u)
        if abs(frac - 0.5) < margin:
            continue
        v = np.rint(u) + z
        if v in (spec.qmin - 1, spec.qmin, spec.qmax, spec.qmax + 1):
            continue
        pts.append(u * s)
    return np.array(pts)


def gradient_errors(n: int = 1000, seed: int = 0):
    rng = np.random.default_rng(seed)
    spec = QuantSpec(0.05, 3)
    r = gradient_check_points(n, rng, spec)
    s = spec.scale
    d_r, d_s = quantizer_grads(r, spec=spec)
    d_s = d_s * np.sqrt(r.size * spec.qmax)  # undo the step-size normaliser
    resid = np.rint(r / s) - r / s
    h_r, h_s = 1e-6 * s, 1e-6 * s
    fd_r = (ste_surrogate(r + h_r, s, spec, resid) - ste_surrogate(r - h_r, s, spec, resid)) / (2 * h_r)
    fd_s = (ste_surrogate(r, s + h_s, spec, resid) - ste_surrogate(r, s - h_s, spec, resid)) / (2 * h_s)
    rel = lambda a, b: np.abs(a - b) / np.maximum(np.abs(b), 1e-3)
    return float(np.max(rel(d_r, fd_r))), float(np.max(rel(d_s, fd_s)))


def check_gradients(n: int = 1000, seed: int = 0, tol: float = 1e-3) -> CheckResult:
    er, es = gradient_errors(n, seed)
    return CheckResult("quantizer gradients", max(er, es) <= tol,
                       f"max rel err d/dr {er:.1e}, d/dS {es:.1e} over {n} points")


def _int_layer_case(rng, kind: str):
    """Random small quantized layer; returns (max error in output steps)."""
    c_in, c_out = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    if kind == "matmul":
        x = rng.normal(size=(int(rng.integers(1, 9)), c_in))
        w = rng.normal(size=(c_out, c_in))
    else:
        nd = int(rng.integers(1, 3))
        k = tuple(int(v) for v in rng.integers(1, 4, nd))
        x = rng.normal(size=(c_in,) + tuple(int(v) for v in rng.integers(max(k), 9, nd)))
        w = rng.normal(size=(c_out, c_in) + k)
    b = rng.normal(size=c_out) * 0.1
    xs = asym_spec(float(x.min()), float(x.max()))
    ws = weight_spec(w)
    xq, wq = quantize(x, xs), quantize(w, ws)
    bias = kernels.bias_to_int32(b, xs.scale, ws.scale)
    bhat = bias * xs.scale * ws.scale
    xd, wd = dequantize(xq), dequantize(wq)
    if kind == "matmul":
        ref = xd @ wd.T + bhat
    elif kind == "conv":
        ref = _naive_conv(xd, wd) + bhat.reshape((-1,) + (1,) * (x.ndim - 1))
    else:
        ref = _naive_deconv(xd, wd) + bhat.reshape((-1,) + (1,) * (x.ndim - 1))
    ys = asym_spec(float(ref.min()), float(ref.max()))
    op = {"matmul": kernels.q_matmul, "conv": kernels.q_conv, "deconv": kernels.q_deconv}[kind]
    out = dequantize(op(xq, wq, bias, ys))
    return float(np.max(np.abs(out - ref)) / ys.scale)


def _naive_conv(x, w):
    """Valid correlation by explicit loops over output positions."""
    k = w.shape[2:]
    out_shape = tuple(n - kk + 1 for n, kk in zip(x.shape[1:], k))
    out = np.zeros((w.shape[0],) + out_shape)
    for pos in np.ndindex(*out_shape):
        sl = (slice(None),) + tuple(slice(p, p + kk) for p, kk in zip(pos, k))
        out[(slice(None),) + pos] = np.tensordot(w, x[sl], axes=w.ndim - 1)
    return out


def _naive_deconv(x, w):
    """Transposed convolution by scattering each input sample's kernel footprint."""
    k = w.shape[2:]
    out = np.zeros((w.shape[0],) + tuple(n + kk - 1 for n, kk in zip(x.shape[1:], k)))
    for pos in np.ndindex(*x.shape[1:]):
        sl = (slice(None),) + tuple(slice(p, p + kk) for p, kk in zip(pos, k))
        out[sl] += np.tensordot(w, x[(slice(None),) + pos], axes=([1], [0]))
    return out


def check_kernels(n: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    kinds = ["matmul", "conv", "deconv"]
    worst = max(_int_layer_case(rng, kinds[i % 3]) for i in range(n))
    return CheckResult("integer kernels", worst <= 1.0, f"max error {worst:.3f} output steps over {n} layers")


def check_metrics(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal(4000)
    est = ref + 0.3 * rng.standard_normal(4000)
    inv = abs(metrics.sisdr(3.7 * est, ref) - metrics.sisdr(est, ref))
    n = rng.standard_normal(4000)
    n -= (n @ ref) / (ref @ ref) * ref
    n *= np.sqrt((ref @ ref) / (10 * (n @ n)))
    ten = abs(metrics.sisdr(ref + n, ref) - 10.0)
    zero = metrics.sisdri(est, est, ref)
    ok = inv <= 1e-6 and ten <= 1e-4 and zero == 0.0
    return CheckResult("metric properties", ok, f"scale drift {inv:.1e} dB, 10 dB case off by {ten:.1e}, sisdri(mix,mix) {zero}")


def _calibrated(w, cfg: EngineConfig, clips):
    plan = PrecisionPlan.for_mode(cfg.model, cfg.mode, cfg.plan_overrides)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return plan, calibrate(w, plan, clips, cfg)


def model_sizes(seed: int = 0) -> dict:
    """Parameter count and serialized bytes of the reference model under each storage plan."""
    cfg = EngineConfig()
    w = random_init(cfg.model, seed)
    clips = [np.random.default_rng(seed).standard_normal(8000) * 0.1]
    out = {"params": param_count(cfg.model)}
    with tempfile.TemporaryDirectory() as d:
        out["f32_bytes"] = container.save(os.path.join(d, "f32.naw"), w, cfg)
        for mode in ("int8", "mixed"):
            plan, cal = _calibrated(w, EngineConfig(mode=mode), clips)
            out[f"{mode}_bytes"] = container.save(os.path.join(d, f"{mode}.naw"), w, cfg, plan,
                                                  cal.act_specs, cal.weight_specs)
    out["budget_bytes"] = BUDGET_BYTES
    out["reference_bytes"] = REFERENCE_BYTES
    return out


def precision_divergence(seed: int, seconds: float = 2.0, modes=("int8", "mixed")) -> dict:
    """Relative RMS deviation and SNR of each quantized mode against the f32 output.

    Random weights and noise input; calibration uses a separate noise clip.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(int(seconds * 16000)) * 0.1
    clips = [rng.standard_normal(16000) * 0.1]
    base = EngineConfig()
    w = random_init(base.model, seed)
    ref = forward_offline(x, w, base)
    row = {"seed": seed}
    for mode in modes:
        cfg = EngineConfig(mode=mode)
        _, cal = _calibrated(w, cfg, clips)
        y = forward_offline(x, engine=cfg, model=build_model(w, cfg, cal.act_specs, cal.weight_specs))
        row[f"{mode}_rel_rms"] = float(np.sqrt(np.mean((y - ref) ** 2) / np.mean(ref ** 2)))
        row[f"{mode}_snr_db"] = metrics.snr_db(y, ref)
    return row


def run_all(seeds=range(10), seconds: float = 2.0, window=None) -> list[CheckResult]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [
            check_perfect_reconstruction(window=window),
            check_cola(),
            check_stream_offline(seeds, seconds),
            check_quant_bounds(),
            check_gradients(),
            check_kernels(),
            check_metrics(),
        ]
