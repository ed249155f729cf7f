"""Post-training calibration of activation ranges.

Each clip runs once through the float network. Every int8 activation site records the
min and max it saw over the whole clip, and that per-clip range is folded into the
site's moving-average observer. Weight specs need no data: they come straight from the
weights as per-channel symmetric specs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import EngineConfig
from ..model import Model, forward_offline
from ..weights import channel_dims, layer_of, weight_tensor_names
from .core import ObserverState, QuantSpec, asym_spec, observe_range, weight_spec
from .plan import Executor, PrecisionPlan


class CalibrationError(ValueError):
    pass


@dataclass
class Calibration:
    act_specs: dict[str, QuantSpec]
    weight_specs: dict[str, QuantSpec]
    observers: dict[str, ObserverState] = field(default_factory=dict)

    def report(self) -> list[dict]:
        """JSON-ready rows ``{site, alpha, beta, scale|scales, zero_point, scheme}``."""
        rows = []
        for site, spec in self.act_specs.items():
            rows.append({"site": site, "alpha": spec.alpha, "beta": spec.beta, "scale": spec.scale,
                         "zero_point": spec.zero_point, "scheme": spec.scheme})
        for name, spec in self.weight_specs.items():
            s = np.asarray(spec.scale)
            rows.append({"site": name, "alpha": float(-s.max() * spec.qmax), "beta": float(s.max() * spec.qmax),
                         "scales": s.ravel().tolist(), "zero_point": 0, "scheme": spec.scheme})
        return rows


def int8_weight_specs(weights, plan: PrecisionPlan, cfg) -> dict[str, QuantSpec]:
    layers = set(plan.int8_layers())
    return {n: weight_spec(weights[n], channel_dims(n))
            for n in weight_tensor_names(cfg) if layer_of(n) in layers}


def calibrate(weights, plan: PrecisionPlan, clips, cfg: EngineConfig | None = None) -> Calibration:
    """Observe every int8 activation site of ``plan`` over ``clips`` (iterable of arrays)."""
    cfg = cfg or EngineConfig()
    clips = [np.asarray(c, dtype=np.float64) for c in clips]
    if not clips:
        raise CalibrationError("calibration needs at least one clip")
    sites = set(plan.activation_sites(cfg.model))
    clip_range: dict[str, tuple[float, float]] = {}

    def tap(site, x):
        if site not in sites:
            return
        lo, hi = float(np.min(x)), float(np.max(x))
        if site in clip_range:
            a, b = clip_range[site]
            lo, hi = min(lo, a), max(hi, b)
        clip_range[site] = (lo, hi)

    model = Model(weights, cfg.model, Executor(weights, cfg.model, tap=tap), cfg.model.activation)
    observers = {s: ObserverState(cfg.observer_momentum) for s in sorted(sites)}
    for clip in clips:
        clip_range.clear()
        forward_offline(clip, engine=cfg, model=model)
        for site, (lo, hi) in clip_range.items():
            observers[site] = observe_range(observers[site], lo, hi)
    act = {s: asym_spec(o.alpha, o.beta) for s, o in observers.items() if o.initialized}
    return Calibration(act, int8_weight_specs(weights, plan, cfg.model), observers)
