"""Chunk-by-chunk inference with a constant-size cache state.

The state carries four pieces of history between chunks: the last ``k_t - 1`` STFT
frames for the causal encoder, the last ``k_t - 1`` dual-path outputs, the pending
transposed-convolution contributions of the decoder, and the per-block LSTM carries.
Together with the overlap-add tail this makes chunk ``i``'s output a function of the
state after chunk ``i - 1`` and chunk ``i`` only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .config import EngineConfig
from .model import Model, build_model


class StreamIOError(IOError):
    pass


@dataclass
class StreamState:
    stft_cache: np.ndarray  # (k_enc - 1, F) complex
    block_out_cache: np.ndarray  # (k_dec - 1, F, D)
    deconv_overlap: np.ndarray  # (k_dec - 1, F, 2) accumulators for frames t .. t + k - 2
    h: np.ndarray  # (B, F, H)
    c: np.ndarray  # (B, F, H)
    ola: dsp.OlaState
    ring: np.ndarray  # last fft_size (pre-emphasised) input samples
    chunk_index: int = 0
    flushed: bool = False

    @property
    def recurrent_states(self):
        return self.h, self.c

    def nbytes(self) -> int:
        arrays = (self.stft_cache, self.block_out_cache, self.deconv_overlap, self.h, self.c,
                  self.ola.tail, self.ola.coverage, self.ring)
        return int(sum(a.nbytes for a in arrays))


@dataclass
class ChunkTiming:
    index: int
    seconds: float
    deadline: float

    @property
    def late(self) -> bool:
        return self.seconds > self.deadline


def init_state(cfg: EngineConfig) -> StreamState:
    m, fr = cfg.model, cfg.framing
    f = fr.n_bins
    kd = m.dec_kernel[0] - 1
    return StreamState(
        stft_cache=np.zeros((m.enc_kernel[0] - 1, f), complex),
        block_out_cache=np.zeros((kd, f, m.channels)),
        deconv_overlap=np.zeros((kd, f, 2)),
        h=np.zeros((m.n_blocks, f, m.hidden)),
        c=np.zeros((m.n_blocks, f, m.hidden)),
        ola=dsp.OlaState.initial(fr),
        ring=np.zeros(fr.fft_size),
    )


def _push(cache, item):
    if cache.shape[0] == 0:
        return cache
    return np.concatenate([cache[1:], item[None]])


class StreamEngine:
    """Streaming front end for one precision configuration.

    Weights are immutable and may be shared by several engines; each stream owns its
    own :class:`StreamState`.
    """

    def __init__(self, weights=None, cfg: EngineConfig | None = None, model: Model | None = None,
                 act_specs=None, weight_specs=None, bypass: bool = False):
        self.cfg = cfg or EngineConfig()
        self.bypass = bypass
        if model is None and not bypass:
            model = build_model(weights, self.cfg, act_specs, weight_specs)
        self.model = model
        self.window = dsp.build_synthesis_window(self.cfg.framing)

    def init_state(self) -> StreamState:
        return init_state(self.cfg)

    def _network(self, state: StreamState, spec) -> np.ndarray:
        m = self.model
        x = m.encode(np.concatenate([state.stft_cache, spec[None]]))
        state.stft_cache = _push(state.stft_cache, spec)
        carries = [(state.h[b], state.c[b]) for b in range(m.cfg.n_blocks)]
        y = m.blocks(x, carries)[0]
        for b, (h, c) in enumerate(carries):
            state.h[b], state.c[b] = h, c
        accs = m.decode_taps(y)
        pend = state.deconv_overlap
        k = pend.shape[0]
        if k:
            total = pend[0] + accs[0]
            nxt = np.empty_like(pend)
            nxt[:-1] = pend[1:] + accs[1:-1]
            nxt[-1] = accs[-1]
            state.deconv_overlap = nxt
        else:
            total = accs[0]
        state.block_out_cache = _push(state.block_out_cache, y)
        return m.decode_finish(total)

    def process_chunk(self, state: StreamState, chunk) -> np.ndarray:
        """Consume ``l_c`` samples and emit ``l_c`` samples, ``l_c + l_f`` behind the input."""
        fr = self.cfg.framing
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.shape != (fr.l_c,):
            raise ValueError(f"chunk must hold {fr.l_c} samples, got shape {chunk.shape}")
        if self.cfg.pre_emphasis:
            chunk, state.ola.emphasis_carry = dsp.pre_emphasis(
                chunk, state.ola.emphasis_carry, self.cfg.emphasis_coeff)
        spec = dsp.analysis_stft(state.ring, fr)
        state.ring = np.concatenate([state.ring[fr.l_c:], chunk])
        if not self.bypass:
            spec = self._network(state, spec)
        state.chunk_index += 1
        return dsp.synthesis_chunk(spec, state.ola, self.window, fr)

    def flush(self, state: StreamState) -> np.ndarray:
        """Drain the ``l_c + l_f`` samples still buffered, feeding zero chunks."""
        if state.chunk_index == 0 or state.flushed:
            return np.zeros(0)
        fr = self.cfg.framing
        n = -(-fr.latency // fr.l_c)
        out = [self.process_chunk(state, np.zeros(fr.l_c)) for _ in range(n)]
        state.flushed = True
        return np.concatenate(out)[:fr.latency]

    def enhance(self, x) -> np.ndarray:
        """Stream a whole signal and return the delay-compensated output (same length)."""
        out = []
        run_stream([np.asarray(x)], out.append, self)
        return np.concatenate(out) if out else np.zeros(0)


def _sink(timing_sink):
    if timing_sink is None:
        return lambda t: None
    if callable(timing_sink):
        return timing_sink
    return timing_sink.append


def timing_summary(seconds, deadline: float) -> dict:
    s = np.asarray(seconds, dtype=np.float64)
    if s.size == 0:
        return {"chunks": 0, "p50_ms": 0.0, "p95_ms": 0.0, "max_ms": 0.0, "rtf": 0.0}
    return {
        "chunks": int(s.size),
        "p50_ms": float(np.percentile(s, 50) * 1e3),
        "p95_ms": float(np.percentile(s, 95) * 1e3),
        "max_ms": float(s.max() * 1e3),
        "rtf": float(s.mean() / deadline),
    }


def run_stream(reader, writer, engine: StreamEngine, timing_sink=None) -> dict:
    """Drive ``engine`` over ``reader`` (an iterable of sample blocks of any size).

    ``writer`` receives delay-compensated output blocks; their total length equals the
    total input length. Each processed input chunk is timed. Returns the timing summary.
    """
    fr = engine.cfg.framing
    state = engine.init_state()
    sink = _sink(timing_sink)
    deadline = fr.chunk_seconds
    times = []
    pending = np.zeros(0)
    skip = fr.latency
    total_in = total_out = 0

    def emit(block):
        nonlocal skip, total_out
        if skip:
            cut = min(skip, block.size)
            block, skip = block[cut:], skip - cut
        block = block[:max(total_in - total_out, 0)]
        if block.size:
            try:
                writer(block)
            except Exception as e:
                raise StreamIOError(f"writing output at chunk {state.chunk_index}: {e}") from e
            total_out += block.size

    def step(chunk):
        t0 = time.perf_counter()
        out = engine.process_chunk(state, chunk)
        dt = time.perf_counter() - t0
        times.append(dt)
        sink(ChunkTiming(state.chunk_index - 1, dt, deadline))
        emit(out)

    it = iter(reader)
    while True:
        try:
            block = next(it)
        except StopIteration:
            break
        except Exception as e:
            raise StreamIOError(f"reading input at chunk {state.chunk_index}: {e}") from e
        block = np.asarray(block, dtype=np.float64).reshape(-1)
        total_in += block.size
        pending = np.concatenate([pending, block])
        while pending.size >= fr.l_c:
            step(pending[:fr.l_c])
            pending = pending[fr.l_c:]
    if pending.size:
        step(np.concatenate([pending, np.zeros(fr.l_c - pending.size)]))
    emit(engine.flush(state))
    return timing_summary(times, deadline)
