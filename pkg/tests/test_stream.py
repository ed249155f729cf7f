import copy

import numpy as np
import pytest
from hypothesis import given, strategies as st

from streamse.config import EngineConfig, ModelConfig
from streamse.model import build_model, forward_offline
from streamse.stream import StreamEngine, StreamIOError, init_state, run_stream, timing_summary
from streamse.weights import random_init


def stream_all(engine, x):
    st_ = engine.init_state()
    lc = engine.cfg.framing.l_c
    return np.concatenate([engine.process_chunk(st_, x[i * lc:(i + 1) * lc]) for i in range(x.size // lc)])


def test_init_state_shapes():
    s = init_state(EngineConfig())
    assert s.stft_cache.shape == (2, 129) and not s.stft_cache.any()
    assert s.h.shape == (6, 129, 32) and s.c.shape == (6, 129, 32)
    assert s.deconv_overlap.shape == (2, 129, 2) and s.block_out_cache.shape == (2, 129, 32)
    assert s.chunk_index == 0


def test_init_state_degenerate():
    cfg = EngineConfig(model=ModelConfig(n_blocks=1, enc_kernel=(1, 3), dec_kernel=(1, 3)))
    s = init_state(cfg)
    assert s.stft_cache.shape[0] == 0 and s.block_out_cache.shape[0] == 0 and s.deconv_overlap.shape[0] == 0


def test_degenerate_kernels_stream_equals_offline(rng):
    cfg = EngineConfig(model=ModelConfig(n_blocks=1, channels=8, hidden=8, enc_kernel=(1, 3), dec_kernel=(1, 1)))
    w = random_init(cfg.model, 0)
    eng = StreamEngine(w, cfg)
    x = rng.standard_normal(96 * 12)
    assert np.max(np.abs(stream_all(eng, x) - forward_offline(x, engine=cfg, model=eng.model))) <= 1e-10


def test_zero_in_zero_out():
    cfg = EngineConfig()
    eng = StreamEngine(random_init(cfg.model, 0, bias=False), cfg)
    assert not stream_all(eng, np.zeros(96 * 10)).any()


@pytest.mark.parametrize("pre", [True, False])
def test_stream_equals_offline_reference(pre, rng):
    cfg = EngineConfig(pre_emphasis=pre)
    eng = StreamEngine(random_init(cfg.model, 11), cfg)
    x = rng.standard_normal(32000) * 0.2
    off = forward_offline(x, engine=cfg, model=eng.model)
    assert np.max(np.abs(stream_all(eng, x) - off)) <= 1e-5


@given(st.integers(0, 10 ** 6))
def test_stream_equals_offline_small(small_engine, seed):
    eng = StreamEngine(random_init(small_engine.model, seed), small_engine)
    x = np.random.default_rng(seed).standard_normal(8 * 40)
    off = forward_offline(x, engine=small_engine, model=eng.model)
    assert np.max(np.abs(stream_all(eng, x) - off)) <= 1e-10


def test_bypass_is_delay(rng):
    eng = StreamEngine(cfg=EngineConfig(pre_emphasis=False), bypass=True)
    x = rng.standard_normal(9600)
    y = stream_all(eng, x)
    assert np.max(np.abs(y[160:] - x[:y.size - 160])) <= 1e-5
    np.testing.assert_allclose(eng.enhance(x), x, atol=1e-12)


def test_state_locality(rng):
    cfg = EngineConfig()
    eng = StreamEngine(random_init(cfg.model, 1), cfg)
    st_ = eng.init_state()
    for _ in range(5):
        eng.process_chunk(st_, rng.standard_normal(96))
    size = st_.nbytes()
    chunk = rng.standard_normal(96)
    twin = copy.deepcopy(st_)
    a = eng.process_chunk(st_, chunk)
    b = eng.process_chunk(twin, chunk)
    np.testing.assert_array_equal(a, b)
    for _ in range(20):
        eng.process_chunk(st_, rng.standard_normal(96))
    assert st_.nbytes() == size
    assert np.all(np.isfinite(st_.h)) and np.all(np.isfinite(st_.c))


def test_wrong_chunk_length():
    eng = StreamEngine(cfg=EngineConfig(), bypass=True)
    with pytest.raises(ValueError):
        eng.process_chunk(eng.init_state(), np.zeros(95))


def test_flush_semantics(rng):
    eng = StreamEngine(cfg=EngineConfig(pre_emphasis=False), bypass=True)
    s = eng.init_state()
    assert eng.flush(s).size == 0
    x = rng.standard_normal(96)
    head = eng.process_chunk(s, x)
    tail = eng.flush(s)
    assert tail.size == 160
    np.testing.assert_allclose(np.concatenate([head, tail])[160:], x, atol=1e-12)
    assert eng.flush(s).size == 0


def test_run_stream_lengths_and_records(rng):
    eng = StreamEngine(cfg=EngineConfig(), bypass=True)
    x = rng.standard_normal(160000)
    out, recs = [], []
    summary = run_stream(np.array_split(x, 37), out.append, eng, recs)
    assert sum(o.size for o in out) == x.size
    assert summary["chunks"] == len(recs) == 1667
    assert set(summary) == {"chunks", "p50_ms", "p95_ms", "max_ms", "rtf"}
    assert all(r.deadline == pytest.approx(0.006) for r in recs)


def test_run_stream_empty():
    eng = StreamEngine(cfg=EngineConfig(), bypass=True)
    out = []
    s = run_stream([], out.append, eng)
    assert out == [] and s["chunks"] == 0


def test_run_stream_io_errors_carry_chunk_index():
    eng = StreamEngine(cfg=EngineConfig(), bypass=True)

    def reader():
        yield np.zeros(960)
        raise OSError("disk gone")

    with pytest.raises(StreamIOError, match="chunk 10"):
        run_stream(reader(), lambda b: None, eng)

    def bad_writer(block):
        raise OSError("full")

    with pytest.raises(StreamIOError, match="writing"):
        run_stream([np.ones(960)], bad_writer, eng)


def test_timing_summary():
    s = timing_summary([0.001, 0.002, 0.003], 0.006)
    assert s["chunks"] == 3 and s["max_ms"] == pytest.approx(3.0) and s["rtf"] == pytest.approx(1 / 3)


def test_shared_weights_independent_streams(rng):
    cfg = EngineConfig()
    model = build_model(random_init(cfg.model, 2), cfg)
    eng = StreamEngine(cfg=cfg, model=model)
    x, other = rng.standard_normal((2, 8, 96))
    s1, s2 = eng.init_state(), eng.init_state()
    interleaved = []
    for a, b in zip(x, other):
        interleaved.append(eng.process_chunk(s1, a))
        eng.process_chunk(s2, b)
    alone = stream_all(StreamEngine(cfg=cfg, model=model), x.ravel())
    np.testing.assert_array_equal(np.concatenate(interleaved), alone)
