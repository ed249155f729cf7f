import json

import numpy as np
import pytest

from streamse.config import EngineConfig
from streamse.model import build_model, forward_offline
from streamse.quant.calibrate import CalibrationError, calibrate
from streamse.quant.core import PER_CHANNEL_SYM
from streamse.quant.plan import MissingSpecError, PrecisionPlan
from streamse.stream import StreamEngine
from streamse.weights import layer_defs, random_init


def test_default_plan():
    cfg = EngineConfig().model
    plan = PrecisionPlan.for_mode(cfg)
    assert plan.layers["encoder.conv"] == "bf16" and plan.layers["decoder.deconv"] == "bf16"
    assert all(p == "int8" for n, p in plan.layers.items() if n not in ("encoder.conv", "decoder.deconv"))
    assert set(plan.layers) == {l.name for l in layer_defs(cfg)}


def test_plan_rejects():
    cfg = EngineConfig().model
    with pytest.raises(ValueError):
        PrecisionPlan.for_mode(cfg, "int4")
    with pytest.raises(ValueError):
        PrecisionPlan.for_mode(cfg, "mixed", {"nope": "f32"})
    with pytest.raises(ValueError):
        PrecisionPlan({"encoder.conv": "f32"}).validate(cfg)


def test_overrides():
    cfg = EngineConfig().model
    plan = PrecisionPlan.for_mode(cfg, "mixed", {"block.0.spectral.gru": "f32"})
    assert plan.layers["block.0.spectral.gru"] == "f32"
    assert "block.0.spectral.gru.in" not in plan.activation_sites(cfg)


@pytest.fixture(scope="module")
def calibrated(small_engine):
    import warnings
    cfg = EngineConfig(model=small_engine.model, mode="mixed", pre_emphasis=False)
    w = random_init(cfg.model, 0)
    plan = PrecisionPlan.for_mode(cfg.model, "mixed")
    clips = [np.random.default_rng(i).standard_normal(400) for i in range(2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cal = calibrate(w, plan, clips, cfg)
    return cfg, w, plan, clips, cal


def test_every_layer_once_at_planned_precision(calibrated):
    cfg, w, plan, clips, cal = calibrated
    model = build_model(w, cfg, cal.act_specs, cal.weight_specs)
    forward_offline(clips[0], engine=cfg, model=model)
    assert dict(model.ex.trace) == dict.fromkeys(plan.layers, 1)
    assert {n: model.ex.precision(n) for n in plan.layers} == plan.layers


def test_stream_matches_offline_mixed(calibrated):
    cfg, w, plan, clips, cal = calibrated
    model = build_model(w, cfg, cal.act_specs, cal.weight_specs)
    eng = StreamEngine(cfg=cfg, model=model)
    s = eng.init_state()
    x = clips[1]
    out = np.concatenate([eng.process_chunk(s, x[i:i + 8]) for i in range(0, x.size - 7, 8)])
    assert np.max(np.abs(out - forward_offline(x, engine=cfg, model=model))) <= 1e-5


def test_missing_spec_raises(small_engine):
    cfg = EngineConfig(model=small_engine.model, mode="int8")
    with pytest.raises(MissingSpecError):
        build_model(random_init(cfg.model, 0), cfg)


def test_calibration_matches_moving_average(calibrated):
    cfg, w, plan, clips, cal = calibrated
    per_clip = []
    for clip in clips:
        seen = {}

        def tap(site, x):
            lo, hi = seen.get(site, (np.inf, -np.inf))
            seen[site] = (min(lo, x.min()), max(hi, x.max()))

        model = build_model(w, EngineConfig(model=cfg.model, pre_emphasis=False), tap=tap)
        forward_offline(clip, engine=cfg, model=model)
        per_clip.append(seen)
    m = cfg.observer_momentum
    for site in plan.activation_sites(cfg.model):
        (a1, b1), (a2, b2) = per_clip[0][site], per_clip[1][site]
        spec = cal.act_specs[site]
        assert spec.alpha == pytest.approx(a1 + m * (a2 - a1))
        assert spec.beta == pytest.approx(b1 + m * (b2 - b1))
        assert spec.qmin <= spec.zero_point <= spec.qmax


def test_weight_specs_symmetric(calibrated):
    cfg, w, plan, clips, cal = calibrated
    assert cal.weight_specs
    assert all(s.zero_point == 0 and s.scheme == PER_CHANNEL_SYM for s in cal.weight_specs.values())
    assert not any(n.startswith(("encoder.", "decoder.")) for n in cal.weight_specs)


def test_report_rows_are_json(calibrated):
    rows = calibrated[4].report()
    text = json.dumps(rows)
    assert {"site", "alpha", "beta", "zero_point", "scheme"} <= set(json.loads(text)[0])
    assert any("scales" in r for r in rows) and any("scale" in r for r in rows)


def test_calibrate_empty_and_zero_clip(small_engine):
    cfg = EngineConfig(model=small_engine.model, mode="mixed")
    w = random_init(cfg.model, 0)
    plan = PrecisionPlan.for_mode(cfg.model, "mixed")
    with pytest.raises(CalibrationError):
        calibrate(w, plan, [], cfg)
    with pytest.warns(UserWarning, match="degenerate"):
        cal = calibrate(random_init(cfg.model, 0, bias=False), plan, [np.zeros(400)], cfg)
    assert all(s.scale > 0 for s in cal.act_specs.values())
