"""Joint encoder/decoder training.

Each batch draws random messages and a frozen noise realization, runs the
encoder with batch-statistics normalization, decodes, and backpropagates the
BCE loss through the decoder, the channel additions and the encoder PSG.
The update is clipped, applied with ADAM and followed by a projection of the
power levels onto their constraints.

Roll-back: the loss of each batch is measured with the weights produced by
the previous update. If it is non-finite or at least ``rollback_factor``
times the previous accepted batch loss, that previous update is undone
(weights and optimizer state restored) and the batch contributes no update.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import codec as codec_mod
from . import decoder as dec_mod
from . import encoder as enc_mod
from .channel import Channel
from .config import ChannelParams, CodeConfig, TrainConfig
from .errors import ConfigurationError, NonFiniteGradientError
from .numerics import (
    AdamState,
    adam_step,
    check_finite,
    clip_gradient_elementwise,
    clip_gradient_global,
    make_rng,
)

log = logging.getLogger(__name__)

BCE_EPS = 1e-12


def bce_loss(probs, bits, eps: float = BCE_EPS) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    b = np.asarray(bits, dtype=np.float64)
    if p.shape != b.shape:
        raise ConfigurationError(f"probs {p.shape} and bits {b.shape} differ in shape")
    return float(np.mean(-(b * np.log(p) + (1.0 - b) * np.log1p(-p))))


def lr_at(batch_index: int, cfg: TrainConfig) -> float:
    if batch_index < cfg.lr_drop_after_batches:
        return cfg.lr_initial
    return cfg.lr_initial / cfg.lr_drop_factor


def rollback_check(prev_loss: float, new_loss: float, factor: float = 10.0) -> str:
    """``"discard"`` iff ``new_loss >= factor * prev_loss`` (or is not finite)."""
    if not math.isfinite(new_loss):
        return "discard"
    return "discard" if new_loss >= factor * prev_loss else "keep"


# --------------------------------------------------------------------------
# loss and gradients of one batch
# --------------------------------------------------------------------------

def forward_backward(codec: codec_mod.DefCodec, bits, noise: enc_mod.EpisodeNoise, grad: bool = True):
    """BCE loss of a batch and (optionally) gradients w.r.t. every parameter.

    Noise is treated as a constant. Returns ``(loss, grads, probs)`` with
    gradient keys matching :meth:`DefCodec.parameters`.
    """
    cfg = codec.cfg
    x_bar, p_bar, ecache = enc_mod.encoder_forward_train(codec.encoder, cfg, bits, noise)
    probs, dcache = dec_mod.decode(codec.decoder, x_bar, p_bar, cfg.gammas, mode="train")
    loss = bce_loss(probs, bits)
    if not grad:
        return loss, None, probs
    d_logits = (probs - bits) / probs.size
    dgrads, d_x_bar, d_p_bar = dec_mod.decoder_backward(codec.decoder, dcache, grad_logits=d_logits)
    egrads = enc_mod.encoder_backward_train(codec.encoder, ecache, d_x_bar, d_p_bar)
    grads = {f"enc.{k}": v for k, v in egrads.items()}
    grads.update({f"dec.{k}": v for k, v in dgrads.items()})
    return loss, grads, probs


def sample_batch(cfg: CodeConfig, channel: Channel, batch_size: int, rng):
    bits = enc_mod.random_messages(cfg, batch_size, rng)
    noise = enc_mod.sample_episode_noise(channel, batch_size, cfg.K, cfg.P, rng)
    return bits, noise


# --------------------------------------------------------------------------
# trainer
# --------------------------------------------------------------------------

@dataclass
class TrainHistory:
    seed: int
    losses: list[float] = field(default_factory=list)       # every batch, measured before its update
    accepted: list[bool] = field(default_factory=list)
    rollbacks: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)        # non-finite gradients
    lr_changes: list[tuple[int, float]] = field(default_factory=list)
    best_loss: float = math.inf
    best_batch: int = -1

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.losses, dtype=np.float64).tobytes())
        h.update(json.dumps([self.rollbacks, self.skipped, self.lr_changes], sort_keys=True).encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["digest"] = self.digest()
        return d


class Trainer:
    """Single-seed training state machine; one call of :meth:`train_one_batch` per batch."""

    def __init__(self, codec: codec_mod.DefCodec, train_cfg: TrainConfig, channel: Channel, seed: int,
                 on_batch: Callable[[dict], None] | None = None):
        self.cfg = codec.cfg
        self.train_cfg = train_cfg
        self.channel = channel
        self.seed = seed
        self._template = codec
        self.params = {k: v.copy() for k, v in codec.parameters().items()}
        self.adam = AdamState.zeros_like(self.params, beta1=train_cfg.adam_beta1,
                                         beta2=train_cfg.adam_beta2, eps=train_cfg.adam_eps)
        self.batch_index = 0
        self.ref_loss: float | None = None
        self._prev: tuple[dict, AdamState] | None = None
        self.best_params = dict(self.params)
        self.history = TrainHistory(seed)
        self.on_batch = on_batch

    @property
    def codec(self) -> codec_mod.DefCodec:
        return self._template.with_parameters(self.params)

    def epoch(self, batch_index=None) -> int:
        b = self.batch_index if batch_index is None else batch_index
        return b // self.train_cfg.batches_per_epoch

    def train_one_batch(self) -> dict:
        b = self.batch_index
        rng = make_rng(self.seed, 1, b)
        bits, noise = sample_batch(self.cfg, self.channel, self.train_cfg.batch_size, rng)
        with np.errstate(all="ignore"):
            loss, grads, _ = forward_backward(self.codec, bits, noise)
        return self.process_batch(loss, grads)

    def process_batch(self, loss: float, grads: dict) -> dict:
        """Apply roll-back logic and the optimizer step for a measured batch."""
        b = self.batch_index
        tc = self.train_cfg
        lr = lr_at(b, tc)
        if not self.history.lr_changes or self.history.lr_changes[-1][1] != lr:
            self.history.lr_changes.append((b, lr))
        event = {"batch": b, "epoch": self.epoch(), "loss": loss, "lr": lr, "event": "step"}
        self.history.losses.append(loss)
        if not math.isfinite(loss) or (
            self.ref_loss is not None and rollback_check(self.ref_loss, loss, tc.rollback_factor) == "discard"
        ):
            restored = self._prev is not None
            if restored:
                self.params, self.adam = self._prev
                self._prev = None
            self.history.accepted.append(False)
            self.history.rollbacks.append({"batch": b, "loss": loss if math.isfinite(loss) else None,
                                           "reference": self.ref_loss, "restored": restored})
            event["event"] = "rollback"
            return self._finish(event)

        self.history.accepted.append(True)
        self.ref_loss = loss
        if loss < self.history.best_loss:
            self.history.best_loss = loss
            self.history.best_batch = b
            self.best_params = self.params

        epoch = self.epoch()
        grads = dict(grads)
        if epoch < tc.w_train_start_epoch:
            grads["enc.w"] = np.zeros_like(self.params["enc.w"])
        if epoch < tc.a_train_start_epoch:
            grads["enc.a"] = np.zeros_like(self.params["enc.a"])
        try:
            check_finite(grads)
            if tc.clip_mode == "global":
                grads = clip_gradient_global(grads, tc.clip_norm)
            else:
                grads = clip_gradient_elementwise(grads, tc.clip_norm)
            new_params, new_adam = adam_step(self.params, grads, self.adam, lr)
        except NonFiniteGradientError as exc:
            self.history.skipped.append({"batch": b, "block": exc.name})
            event["event"] = "skip"
            return self._finish(event)
        new_params["enc.w"], new_params["enc.a"] = enc_mod.project_power(new_params["enc.w"], new_params["enc.a"])
        self._prev = (self.params, self.adam)
        self.params, self.adam = new_params, new_adam
        return self._finish(event)

    def _finish(self, event):
        self.batch_index += 1
        if self.on_batch is not None:
            self.on_batch(event)
        return event

    def run(self, n_batches: int | None = None):
        n = self.train_cfg.total_batches - self.batch_index if n_batches is None else n_batches
        for _ in range(n):
            self.train_one_batch()
        return self


def train_one_batch(trainer: Trainer) -> tuple[float, codec_mod.DefCodec, dict]:
    event = trainer.train_one_batch()
    return event["loss"], trainer.codec, event


# --------------------------------------------------------------------------
# multi-seed training and snapshot selection
# --------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    history: TrainHistory
    final: dict
    best: dict


@dataclass
class Snapshot:
    seed: int
    kind: str          # "final" or "best"
    codec: codec_mod.DefCodec
    bler: float = math.nan
    ber: float = math.nan


@dataclass
class TrainOutcome:
    winner: Snapshot
    snapshots: list[Snapshot]
    histories: list[TrainHistory]


def training_code_config(code_cfg: CodeConfig, train_cfg: TrainConfig) -> CodeConfig:
    m = train_cfg.length_multiplier
    if m == 1:
        return code_cfg
    if train_cfg.a_train_start_epoch < train_cfg.epochs:
        raise ConfigurationError("length_multiplier > 1 requires symbol power levels to stay frozen")
    return dataclasses.replace(code_cfg, L_info=m * code_cfg.L - code_cfg.pad_bits)


def train_seed(code_cfg: CodeConfig, train_cfg: TrainConfig, channel_params: ChannelParams, seed: int,
               on_batch=None, log_path=None) -> SeedResult:
    """Full schedule for one seed; returns final and best-loss parameters.

    ``log_path`` receives one JSON object per batch.
    """
    tcfg = training_code_config(code_cfg, train_cfg)
    channel = Channel.awgn(train_cfg.train_snr_db, channel_params.feedback_snr_db)
    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None

    def hook(event):
        event = {"seed": seed, **event}
        if log_file is not None:
            log_file.write(json.dumps(event) + "\n")
        if on_batch is not None:
            on_batch(event)

    trainer = Trainer(codec_mod.init_codec(tcfg, seed), train_cfg, channel, seed, hook)
    try:
        trainer.run()
    finally:
        if log_file is not None:
            log_file.close()
    final, best = trainer.params, trainer.best_params
    if tcfg is not code_cfg:
        final = dict(final, **{"enc.a": np.ones(code_cfg.K)})
        best = dict(best, **{"enc.a": np.ones(code_cfg.K)})
    return SeedResult(seed, trainer.history, final, best)


def _train_seed_job(args):
    code_cfg, train_cfg, channel_params, seed, log_path = args
    return train_seed(code_cfg, train_cfg, channel_params, seed, log_path=log_path)


def select_snapshots(code_cfg: CodeConfig, train_cfg: TrainConfig, channel_params: ChannelParams,
                     results: list[SeedResult], workers: int = 1) -> list[Snapshot]:
    """Calibrate every snapshot and measure its BLER at the training SNR."""
    from .evaluation import run_lls

    template = codec_mod.init_codec(code_cfg, 0)
    channel = Channel.awgn(train_cfg.train_snr_db, channel_params.feedback_snr_db)
    snaps = []
    for res in results:
        for kind, params in (("final", res.final), ("best", res.best)):
            c = template.with_parameters(params)
            codec_mod.calibrate(c, channel, train_cfg.calib_codewords, seed=res.seed * 1000 + 7)
            report = run_lls(c, [train_cfg.train_snr_db], train_cfg.selection_codewords,
                             seed=res.seed * 1000 + 11, workers=workers,
                             feedback_snr_db=channel_params.feedback_snr_db)
            pt = report.points[0]
            snaps.append(Snapshot(res.seed, kind, c, pt.bler, pt.ber))
    return snaps


def pick_winner(snaps: list[Snapshot]) -> Snapshot:
    """Lowest BLER; ties broken by BER, then by order."""
    return min(enumerate(snaps), key=lambda t: (t[1].bler, t[1].ber, t[0]))[1]


def train_full(train_cfg: TrainConfig, code_cfg: CodeConfig, channel_params: ChannelParams,
               workers: int = 1, out_dir=None, on_batch=None) -> TrainOutcome:
    """Train every seed, calibrate and evaluate all snapshots, keep the lowest-BLER one.

    With ``out_dir`` each seed's snapshots and history are written as soon as
    they exist, so an interrupted run keeps its finished seeds.
    """
    from .persistence import ModelFile, save_model

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    jobs = [(code_cfg, train_cfg, channel_params, s, None if out is None else out / f"seed{s}_log.jsonl")
            for s in train_cfg.seeds]
    results: list[SeedResult] = []

    def persist(res: SeedResult):
        if out is None:
            return
        template = codec_mod.init_codec(code_cfg, 0)
        for kind, params in (("final", res.final), ("best", res.best)):
            mf = ModelFile(template.with_parameters(params), {"seed": res.seed, "snapshot": kind,
                                                              "history_digest": res.history.digest()})
            save_model(out / f"seed{res.seed}_{kind}.defm", mf)
        (out / f"seed{res.seed}_history.json").write_text(json.dumps(res.history.to_dict()))

    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
                for res in pool.map(_train_seed_job, jobs):
                    results.append(res)
                    persist(res)
        else:
            for job in jobs:
                res = train_seed(*job[:4], on_batch=on_batch, log_path=job[4])
                results.append(res)
                persist(res)
    except KeyboardInterrupt:
        log.warning("training interrupted after %d of %d seeds", len(results), len(jobs))
        raise
    snaps = select_snapshots(code_cfg, train_cfg, channel_params, results, workers)
    winner = pick_winner(snaps)
    if out is not None:
        hist = {r.seed: r.history.digest() for r in results}
        save_model(out / "winner.defm", ModelFile(winner.codec, {
            "seed": winner.seed, "snapshot": winner.kind, "history_digest": hist[winner.seed],
            "selection_bler": winner.bler, "selection_ber": winner.ber}))
        summary = [{"seed": s.seed, "snapshot": s.kind, "bler": s.bler, "ber": s.ber} for s in snaps]
        (out / "selection.json").write_text(json.dumps(summary, indent=2))
    return TrainOutcome(winner, snaps, [r.history for r in results])
