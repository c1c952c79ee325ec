"""Encoder/decoder pair with calibration and batched link simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decoder as dec_mod
from . import encoder as enc_mod
from .channel import Channel
from .config import CodeConfig
from .errors import UsageError
from .modulation import hard_decision
from .numerics import make_rng


@dataclass
class DefCodec:
    cfg: CodeConfig
    encoder: enc_mod.EncoderModel
    decoder: dec_mod.DecoderModel

    @property
    def L_info(self) -> int:
        return self.cfg.L_info

    @property
    def calibrated(self) -> bool:
        return self.encoder.calib is not None and self.decoder.state_norm is not None

    def copy(self) -> "DefCodec":
        return DefCodec(self.cfg, self.encoder.copy(), self.decoder.copy())

    def parameters(self) -> dict[str, np.ndarray]:
        p = {f"enc.{k}": v for k, v in self.encoder.parameters().items()}
        p.update({f"dec.{k}": v for k, v in self.decoder.parameters().items()})
        return p

    def with_parameters(self, params) -> "DefCodec":
        enc = self.encoder.with_parameters({k[4:]: v for k, v in params.items() if k.startswith("enc.")})
        dec = self.decoder.with_parameters({k[4:]: v for k, v in params.items() if k.startswith("dec.")})
        return DefCodec(self.cfg, enc, dec)

    def transmit(self, info_bits, channel: Channel, rng):
        """Interactive encode + inference decode; returns ``(probs (B, L), transcript)``."""
        if not self.calibrated:
            raise UsageError("codec must be calibrated before link-level simulation")
        msg = enc_mod.pad_message(info_bits, self.cfg.pad_bits)
        tr = enc_mod.encode_interactive(self.encoder, self.cfg, msg, channel, rng)
        probs, _ = dec_mod.decode(self.decoder, tr.x_bar, tr.p_bar, self.cfg.gammas, "inference")
        return probs, tr

    def simulate(self, info_bits, channel: Channel, rng):
        """Decoded information bits and total transmitted energy for a batch."""
        probs, tr = self.transmit(info_bits, channel, rng)
        decided = hard_decision(probs)[:, :self.cfg.L_info]
        return decided, tr.energy(), tr.z.shape[-1]


def init_codec(cfg: CodeConfig, seed: int) -> DefCodec:
    rng = make_rng(seed, 0)
    return DefCodec(cfg, enc_mod.init_encoder(cfg, rng), dec_mod.init_decoder(cfg, rng))


def calibrate(codec: DefCodec, channel: Channel, n_codewords: int, seed: int, chunk: int = 10_000):
    """Encoder parity statistics, then decoder state statistics on the same episodes.

    The second sweep regenerates the identical messages and noise from
    ``seed`` and encodes with the freshly calibrated parity normalization.
    """
    cfg = codec.cfg
    enc_stats = enc_mod.calibrate(codec.encoder, cfg, channel, n_codewords, seed, chunk)

    def received():
        for idx, start in enumerate(range(0, n_codewords, chunk)):
            n = min(chunk, n_codewords - start)
            rng = make_rng(seed, idx)
            msg = enc_mod.random_messages(cfg, n, rng)
            noise = enc_mod.sample_episode_noise(channel, n, cfg.K, cfg.P, rng)
            x_bar, p_bar, _ = enc_mod.encoder_forward_train(codec.encoder, cfg, msg, noise, norm="inference")
            yield x_bar, p_bar

    dec_stats = dec_mod.calibrate_states(codec.decoder, received(), cfg.gammas)
    return enc_stats, dec_stats
