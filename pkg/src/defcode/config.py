"""Structural, training and channel configuration plus the flat config-file format.

Config files are plain text, one ``key = value`` per line, ``#`` starts a
comment. Keys are the field names of :class:`CodeConfig`,
:class:`TrainConfig` and :class:`ChannelParams`; tuple fields take
comma-separated values::

    L_info = 24
    deltas = 1,2,2
    encoder_cell = lstm
    feedback_snr_db = noiseless
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError, InputError
from .modulation import check_order

CELL_KINDS = ("rnn", "gru", "lstm")
NOISELESS = "noiseless"


@dataclass(frozen=True)
class CodeConfig:
    L_info: int = 49
    pad_bits: int = 1
    Q: int = 2
    P: int = 2
    H0: int = 50
    deltas: tuple[int, ...] = (1, 2, 2)
    gammas: tuple[int, ...] = (1, 1, 1)
    encoder_cell: str = "lstm"
    decoder_cell: str = "lstm"
    decoder_layers: int = 2
    # "stream": statistics pooled over batch and time per parity stream;
    # "time_stream": separate statistics per (k, l)
    norm_mode: str = "stream"

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(int(d) for d in self.deltas))
        object.__setattr__(self, "gammas", tuple(int(g) for g in self.gammas))
        object.__setattr__(self, "encoder_cell", self.encoder_cell.lower())
        object.__setattr__(self, "decoder_cell", self.decoder_cell.lower())
        self.validate()

    def validate(self):
        check_order(self.Q)
        if self.L_info < 1 or self.pad_bits < 0:
            raise ConfigurationError("L_info must be >= 1 and pad_bits >= 0")
        if (2 * self.L) % self.Q:
            raise ConfigurationError(f"K = 2L/Q is not integral for L={self.L}, Q={self.Q}")
        if self.P < 1:
            raise ConfigurationError("P must be >= 1")
        if self.H0 < 1 or self.decoder_layers < 1:
            raise ConfigurationError("H0 and decoder_layers must be positive")
        if len(self.deltas) != self.P + 1 or len(self.gammas) != self.P + 1:
            raise ConfigurationError("deltas and gammas need P+1 entries each")
        if self.deltas[0] < 0 or any(d < 1 for d in self.deltas[1:]):
            raise ConfigurationError("need delta_0 >= 0 and delta_l >= 1 for l >= 1")
        if any(g < 0 for g in self.gammas):
            raise ConfigurationError("gammas must be non-negative")
        for kind in (self.encoder_cell, self.decoder_cell):
            if kind not in CELL_KINDS:
                raise ConfigurationError(f"unknown cell kind {kind!r}")
        if self.norm_mode not in ("stream", "time_stream"):
            raise ConfigurationError(f"unknown norm_mode {self.norm_mode!r}")

    @property
    def L(self) -> int:
        return self.L_info + self.pad_bits

    @property
    def K(self) -> int:
        return 2 * self.L // self.Q

    @property
    def bits_per_position(self) -> int:
        return self.Q // 2

    @property
    def encoder_input_size(self) -> int:
        return 1 + (self.deltas[0] + 1) + sum(self.deltas[1:])

    @property
    def decoder_input_size(self) -> int:
        return sum(g + 1 for g in self.gammas)

    @property
    def rate(self) -> float:
        return self.L / (self.K * (1 + self.P))

    @property
    def spectral_efficiency(self) -> float:
        return self.Q / (1 + self.P)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batches_per_epoch: int = 10
    batch_size: int = 2000
    train_snr_db: float = 0.0
    lr_initial: float = 0.02
    lr_drop_factor: float = 10.0
    lr_drop_after_batches: int = 1000
    clip_norm: float = 1.0
    clip_mode: str = "global"
    rollback_factor: float = 10.0
    w_train_start_epoch: int = 100
    a_train_start_epoch: int = 200
    seeds: tuple[int, ...] = (1, 2, 3)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    calib_codewords: int = 1_000_000
    selection_codewords: int = 100_000
    length_multiplier: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for name in ("epochs", "batches_per_epoch", "batch_size", "lr_initial", "lr_drop_factor",
                     "clip_norm", "rollback_factor", "calib_codewords", "selection_codewords",
                     "length_multiplier"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.w_train_start_epoch < 0 or self.a_train_start_epoch < 0:
            raise ConfigurationError("power-level start epochs must be non-negative")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if self.clip_mode not in ("global", "element"):
            raise ConfigurationError(f"unknown clip_mode {self.clip_mode!r}")

    @property
    def total_batches(self) -> int:
        return self.epochs * self.batches_per_epoch


@dataclass(frozen=True)
class ChannelParams:
    forward_snr_db: float = 0.0
    feedback_snr_db: float | None = None  # None: noiseless feedback

    @property
    def noiseless_feedback(self) -> bool:
        return self.feedback_snr_db is None


@dataclass
class RunConfig:
    code: CodeConfig = field(default_factory=CodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)


_SECTIONS = {"code": CodeConfig, "train": TrainConfig, "channel": ChannelParams}


def _field_owner():
    owner = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            owner[f.name] = (section, f)
    return owner


def _convert(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = str(f.type)
    if f.name == "feedback_snr_db":
        return None if raw.lower() in (NOISELESS, "none", "") else float(raw)
    if kind.startswith("tuple"):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if kind == "int":
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    owner = _field_owner()
    updates: dict[str, dict] = {s: {} for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in owner:
            raise InputError(f"config line {lineno}: unknown key {key!r}")
        section, f = owner[key]
        try:
            updates[section][key] = _convert(f, value)
        except ValueError as exc:
            raise InputError(f"config line {lineno}: bad value for {key!r}: {value!r}") from exc
    try:
        return RunConfig(
            code=dataclasses.replace(base.code, **updates["code"]),
            train=dataclasses.replace(base.train, **updates["train"]),
            channel=dataclasses.replace(base.channel, **updates["channel"]),
        )
    except ConfigurationError as exc:
        raise InputError(str(exc)) from exc


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"# {section}")
        for f in fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif val is None:
                val = NOISELESS
            lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def to_dict(obj) -> dict:
    d = dataclasses.asdict(obj)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def code_config_from_dict(d: dict) -> CodeConfig:
    return CodeConfig(**d)


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**d)
