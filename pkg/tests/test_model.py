import numpy as np
import pytest
from hypothesis import given, strategies as st

from streamse import model as M
from streamse.config import EngineConfig, ModelConfig
from streamse.weights import check_shapes, param_count, param_shapes, random_init, zero_init


def sig(v):
    return 1.0 / (1.0 + np.exp(-v))


# scalar reference implementations -------------------------------------------------

def naive_causal_conv(x, w, b):
    """x: (C, T, F); w: (D, C, kt, kf). Left time padding, symmetric frequency padding."""
    c_in, t_len, f_len = x.shape
    d, _, kt, kf = w.shape
    p = (kf - 1) // 2
    out = np.zeros((d, t_len, f_len))
    for o in range(d):
        for t in range(t_len):
            for f in range(f_len):
                acc = b[o]
                for c in range(c_in):
                    for a in range(kt):
                        for k in range(kf):
                            tt, ff = t - (kt - 1) + a, f - p + k
                            if 0 <= tt and 0 <= ff < f_len:
                                acc += w[o, c, a, k] * x[c, tt, ff]
                out[o, t, f] = acc
    return out


def naive_causal_deconv(y, w, b):
    """Scatter form. y: (D, T, F); w: (2, D, kt, kf). Keeps output frames [0, T)."""
    d, t_len, f_len = y.shape
    n_out, _, kt, kf = w.shape
    p = (kf - 1) // 2
    out = np.zeros((n_out, t_len, f_len)) + b[:, None, None]
    for s in range(t_len):
        for g in range(f_len):
            for a in range(kt):
                for k in range(kf):
                    t, f = s + a, g + k - p
                    if t < t_len and 0 <= f < f_len:
                        out[:, t, f] += w[:, :, a, k] @ y[:, s, g]
    return out


def gru_seq(x, w_ih, w_hh, b_ih, b_hh, reverse=False):
    n_h = w_hh.shape[1]
    h = np.zeros(n_h)
    out = np.zeros((x.shape[0], n_h))
    order = range(x.shape[0] - 1, -1, -1) if reverse else range(x.shape[0])
    for t in order:
        gi, gh = w_ih @ x[t] + b_ih, w_hh @ h + b_hh
        r = sig(gi[:n_h] + gh[:n_h])
        z = sig(gi[n_h:2 * n_h] + gh[n_h:2 * n_h])
        n = np.tanh(gi[2 * n_h:] + r * gh[2 * n_h:])
        h = (1 - z) * n + z * h
        out[t] = h
    return out


def lstm_seq(x, w_ih, w_hh, b_ih, b_hh, h, c):
    n_h = w_hh.shape[1]
    out = np.zeros((x.shape[0], n_h))
    for t in range(x.shape[0]):
        g = w_ih @ x[t] + b_ih + w_hh @ h + b_hh
        i, f, gg, o = sig(g[:n_h]), sig(g[n_h:2 * n_h]), np.tanh(g[2 * n_h:3 * n_h]), sig(g[3 * n_h:])
        c = f * c + i * gg
        h = o * np.tanh(c)
        out[t] = h
    return out, h, c


def spectral_oracle(x, w, cfg, b):
    """Per frame: strided conv -> bidirectional GRU -> transposed conv -> crop -> residual."""
    p = f"block.{b}.spectral"
    wf = lambda n: w[f"{p}.{n}"].astype(np.float64)
    t_len, f_len, d = x.shape
    q, fp = cfg.freq_compress, cfg.padded_bins
    out = np.empty_like(x)
    for t in range(t_len):
        xp = np.zeros((fp, d))
        xp[:f_len] = x[t]
        z = np.stack([wf("down.weight").transpose(0, 2, 1).reshape(d, -1) @ xp[j * q:(j + 1) * q].ravel()
                      for j in range(fp // q)]) + wf("down.bias")
        g = np.concatenate([
            gru_seq(z, wf("gru.w_ih")[k], wf("gru.w_hh")[k], wf("gru.b_ih")[k], wf("gru.b_hh")[k], reverse=k == 1)
            for k in range(2)], axis=1)
        u = np.zeros((fp, d))
        wu = wf("up.weight")
        for j in range(fp // q):
            for k in range(q):
                u[j * q + k] = wu[:, :, k] @ g[j] + wf("up.bias")
        out[t] = x[t] + u[:f_len]
    return out


# tests ----------------------------------------------------------------------------

def test_reference_geometry():
    cfg = ModelConfig()
    assert (cfg.padded_bins, cfg.compressed_bins) == (132, 33)
    n = param_count(cfg)
    assert 2e5 <= n <= 3e5
    shapes = param_shapes(cfg)
    assert shapes["block.3.temporal.lstm.w_ih"] == (128, 32)
    assert shapes["block.3.temporal.lstm.w_hh"] == (128, 32)


def test_random_init_deterministic_and_scaled():
    cfg = ModelConfig()
    a, b = random_init(cfg, 7), random_init(cfg, 7)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    check_shapes(a, cfg)
    assert np.abs(a["encoder.conv.weight"]).max() <= 1 / np.sqrt(18)
    assert not np.array_equal(a["encoder.conv.weight"], random_init(cfg, 8)["encoder.conv.weight"])


def test_check_shapes_rejects():
    cfg = ModelConfig()
    w = random_init(cfg, 0)
    w["encoder.conv.bias"] = np.zeros(3, np.float32)
    with pytest.raises(ValueError):
        check_shapes(w, cfg)


def test_encode_matches_naive_conv(small_model_cfg, rng):
    cfg = small_model_cfg
    w = random_init(cfg, 1)
    spec = rng.standard_normal((6, cfg.n_bins)) + 1j * rng.standard_normal((6, cfg.n_bins))
    got = M.encode(spec, w, cfg)
    x = np.stack([spec.real, spec.imag])
    ref = naive_causal_conv(x, w["encoder.conv.weight"].astype(float), w["encoder.conv.bias"].astype(float))
    assert got.shape == (cfg.channels, 6, cfg.n_bins)
    assert np.max(np.abs(got - ref)) <= 1e-5


def test_encode_zero_and_impulse(small_model_cfg):
    cfg = small_model_cfg
    w = random_init(cfg, 2)
    out = M.encode(np.zeros((5, cfg.n_bins), complex), w, cfg)
    np.testing.assert_allclose(out, np.broadcast_to(w["encoder.conv.bias"][:, None, None], out.shape), atol=1e-7)
    w["encoder.conv.bias"][:] = 0
    spec = np.zeros((8, cfg.n_bins), complex)
    spec[3, 4] = 1 + 1j
    out = M.encode(spec, w, cfg)
    nz = np.flatnonzero(np.abs(out).sum(axis=(0, 2)))
    assert set(nz) <= set(range(3, 3 + cfg.enc_kernel[0]))


def test_decode_matches_naive_deconv(small_model_cfg, rng):
    cfg = small_model_cfg
    w = random_init(cfg, 3)
    y = rng.standard_normal((cfg.channels, 7, cfg.n_bins))
    got = M.decode(y, w, cfg)
    ref = naive_causal_deconv(y, w["decoder.deconv.weight"].astype(float), w["decoder.deconv.bias"].astype(float))
    assert np.max(np.abs(got.real - ref[0])) <= 1e-5
    assert np.max(np.abs(got.imag - ref[1])) <= 1e-5


def test_decode_zero_and_impulse(small_model_cfg):
    cfg = small_model_cfg
    w = random_init(cfg, 4)
    out = M.decode(np.zeros((cfg.channels, 4, cfg.n_bins)), w, cfg)
    b = w["decoder.deconv.bias"].astype(float)
    np.testing.assert_allclose(out, b[0] + 1j * b[1])
    w["decoder.deconv.bias"][:] = 0
    y = np.zeros((cfg.channels, 9, cfg.n_bins))
    y[:, 2, 5] = 1.0
    nz = np.flatnonzero(np.abs(M.decode(y, w, cfg)).sum(axis=1))
    assert set(nz) <= set(range(2, 2 + cfg.dec_kernel[0]))


def test_spectral_stage_matches_scalar_gru(small_model_cfg, rng):
    cfg = small_model_cfg
    w = random_init(cfg, 5)
    m = M.Model(w, cfg)
    x = rng.standard_normal((3, cfg.n_bins, cfg.channels))
    for b in range(cfg.n_blocks):
        assert np.max(np.abs(m.spectral_stage(b, x) - spectral_oracle(x, w, cfg, b))) <= 1e-5


def test_reference_compression_lengths():
    cfg = ModelConfig()
    w = random_init(cfg, 0)
    m = M.Model(w, cfg)
    x = np.random.default_rng(0).standard_normal((1, 129, 32))
    assert m.spectral_stage(0, x).shape == (1, 129, 32)


def test_temporal_stage_matches_scalar_lstm(small_model_cfg, rng):
    cfg = small_model_cfg
    w = random_init(cfg, 6)
    m = M.Model(w, cfg)
    x = rng.standard_normal((9, cfg.n_bins, cfg.channels))
    h0 = rng.standard_normal((cfg.n_bins, cfg.hidden)) * 0.1
    c0 = rng.standard_normal((cfg.n_bins, cfg.hidden)) * 0.1
    out, h, c = m.temporal_stage(1, x, h0, c0)
    p = "block.1.temporal"
    wf = lambda n: w[f"{p}.{n}"].astype(np.float64)
    for f in range(cfg.n_bins):
        hs, hf, cf = lstm_seq(x[:, f], wf("lstm.w_ih"), wf("lstm.w_hh"), wf("lstm.b_ih"), wf("lstm.b_hh"), h0[f], c0[f])
        ref = x[:, f] + hs @ wf("proj.weight").T + wf("proj.bias")
        assert np.max(np.abs(out[:, f] - ref)) <= 1e-5
        assert np.max(np.abs(h[f] - hf)) <= 1e-5 and np.max(np.abs(c[f] - cf)) <= 1e-5


def test_temporal_split_carry():
    cfg = ModelConfig(n_blocks=1, channels=8, hidden=8)
    w = random_init(cfg, 0)
    m = M.Model(w, cfg)
    x = np.random.default_rng(1).standard_normal((20, cfg.n_bins, 8))
    z = np.zeros((cfg.n_bins, 8))
    full, hf, cf = m.temporal_stage(0, x, z, z)
    a, h, c = m.temporal_stage(0, x[:4], z, z)
    b, h, c = m.temporal_stage(0, x[4:], h, c)
    assert np.max(np.abs(np.concatenate([a, b]) - full)) <= 1e-6
    assert np.max(np.abs(h - hf)) <= 1e-6


def test_temporal_zero_input_is_causal(small_model_cfg):
    cfg = small_model_cfg
    w = random_init(cfg, 1)
    m = M.Model(w, cfg)
    z = np.zeros((cfg.n_bins, cfg.hidden))
    long, _, _ = m.temporal_stage(0, np.zeros((10, cfg.n_bins, cfg.channels)), z, z)
    short, _, _ = m.temporal_stage(0, np.zeros((4, cfg.n_bins, cfg.channels)), z, z)
    np.testing.assert_array_equal(long[:4], short)
    assert np.abs(long).max() > 0  # bias-driven trajectory


def test_zero_block_weights_are_identity(small_model_cfg, rng):
    cfg = small_model_cfg
    w = random_init(cfg, 2)
    for k in w:
        if k.startswith("block."):
            w[k][...] = 0
    m = M.Model(w, cfg)
    x = rng.standard_normal((5, cfg.n_bins, cfg.channels))
    np.testing.assert_array_equal(m.blocks(x, m.zero_carries()), x)


def test_forward_zero_signal_zero_bias():
    eng = EngineConfig()
    w = random_init(eng.model, 0, bias=False)
    y = M.forward_offline(np.zeros(3200), w, eng)
    assert y.size == 3168 and not np.any(y)


def test_forward_bypass_is_delay(rng):
    x = rng.standard_normal(16000)
    y = M.forward_offline(x, engine=EngineConfig(pre_emphasis=False), bypass=True)
    assert np.max(np.abs(y[160:] - x[:y.size - 160])) <= 1e-5


def test_forward_length_and_finiteness(rng):
    eng = EngineConfig()
    w = random_init(eng.model, 3)
    x = rng.standard_normal(32000 + 50) * 0.3
    y = M.forward_offline(x, w, eng)
    assert y.size == (x.size // 96) * 96
    assert np.all(np.isfinite(y))
    with pytest.raises(ValueError):
        M.forward_offline(np.zeros(255), w, eng)


@given(st.integers(200, 900), st.integers(0, 1000))
def test_end_to_end_causality(small_engine, n, seed):
    w = random_init(small_engine.model, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(1000)
    y = M.forward_offline(x, w, small_engine)
    x2 = x.copy()
    x2[n:] = rng.standard_normal(x.size - n)
    y2 = M.forward_offline(x2, w, small_engine)
    lim = max(n - small_engine.framing.latency, 0)
    np.testing.assert_array_equal(y[:lim], y2[:lim])


def test_activation_switch(small_model_cfg, rng):
    cfg = ModelConfig(**{**small_model_cfg.__dict__, "activation": "tanh"})
    w = random_init(cfg, 0)
    spec = rng.standard_normal((4, cfg.n_bins)) * 5 + 0j
    out = M.Model(w, cfg, activation="tanh").encode(np.concatenate([np.zeros((2, cfg.n_bins)), spec]))
    assert np.abs(out).max() <= 1.0
