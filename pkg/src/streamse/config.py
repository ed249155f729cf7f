"""Configuration objects for framing, model geometry and the engine as a whole."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any

import jsonschema

SAMPLE_RATE = 16000


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration."""


@dataclass(frozen=True)
class FramingConfig:
    """Chunk geometry: lookback ``l_b``, chunk/hop ``l_c`` and lookahead ``l_f`` in samples."""

    l_b: int = 96
    l_c: int = 96
    l_f: int = 64
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigError(f"sample rate {self.sample_rate} Hz not supported, expected {SAMPLE_RATE} Hz")
        if self.l_b < 0 or self.l_f < 0 or self.l_c < 1:
            raise ConfigError(f"invalid framing ({self.l_b}, {self.l_c}, {self.l_f})")
        if self.l_c <= self.l_f:
            raise ConfigError(f"chunk size l_c={self.l_c} must exceed lookahead l_f={self.l_f}")

    @property
    def fft_size(self) -> int:
        return self.l_b + self.l_c + self.l_f

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def segment(self) -> int:
        """Samples kept after discarding the lookback (synthesis window length)."""
        return self.l_c + self.l_f

    @property
    def latency(self) -> int:
        return self.l_c + self.l_f

    @property
    def chunk_seconds(self) -> float:
        return self.l_c / self.sample_rate


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 6
    channels: int = 32
    hidden: int = 32
    freq_compress: int = 4
    enc_kernel: tuple[int, int] = (3, 3)
    dec_kernel: tuple[int, int] = (3, 3)
    activation: str = "none"
    framing: FramingConfig = field(default_factory=FramingConfig)

    def __post_init__(self):
        object.__setattr__(self, "enc_kernel", tuple(self.enc_kernel))
        object.__setattr__(self, "dec_kernel", tuple(self.dec_kernel))
        if self.n_blocks < 1 or self.freq_compress < 1 or self.channels < 1 or self.hidden < 1:
            raise ConfigError("n_blocks, channels, hidden and freq_compress must be >= 1")
        for name, (kt, kf) in (("enc_kernel", self.enc_kernel), ("dec_kernel", self.dec_kernel)):
            if kt < 1 or kf < 1 or kf % 2 == 0:
                raise ConfigError(f"{name}=({kt}, {kf}) needs k_t >= 1 and odd k_f")
        if self.activation not in ("none", "tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def n_bins(self) -> int:
        return self.framing.n_bins

    @property
    def padded_bins(self) -> int:
        q = self.freq_compress
        return -(-self.n_bins // q) * q

    @property
    def compressed_bins(self) -> int:
        return self.padded_bins // self.freq_compress

    @property
    def history(self) -> int:
        """Frames of causal context cached between chunks."""
        return max(self.enc_kernel[0], self.dec_kernel[0]) - 1


PRECISION_MODES = ("f32", "bf16", "int8", "mixed")


@dataclass(frozen=True)
class EngineConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    mode: str = "f32"
    plan_overrides: dict[str, str] = field(default_factory=dict)
    pre_emphasis: bool = True
    emphasis_coeff: float = 0.97
    observer_momentum: float = 0.9
    bench_seconds: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PRECISION_MODES:
            raise ConfigError(f"unknown precision mode {self.mode!r}")
        if not 0.0 <= self.emphasis_coeff < 1.0:
            raise ConfigError("emphasis_coeff must lie in [0, 1)")
        if not 0.0 < self.observer_momentum <= 1.0:
            raise ConfigError("observer_momentum must lie in (0, 1]")

    @property
    def framing(self) -> FramingConfig:
        return self.model.framing

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["model"]["enc_kernel"] = list(self.model.enc_kernel)
        d["model"]["dec_kernel"] = list(self.model.dec_kernel)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EngineConfig":
        validate(d)
        d = json.loads(json.dumps(d))
        model = d.pop("model", {})
        framing = FramingConfig(**model.pop("framing", {}))
        return cls(model=ModelConfig(framing=framing, **model), **d)

    @classmethod
    def from_json(cls, text: str) -> "EngineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(d)


def schema() -> dict:
    return json.loads(resources.files("streamse").joinpath("engine_config.schema.json").read_text())


def validate(d: dict) -> None:
    try:
        jsonschema.validate(d, schema())
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config rejected by schema: {e.message}") from e
