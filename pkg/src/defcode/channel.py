"""AWGN forward channel and (noiseless or AWGN) feedback channel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ChannelParams
from .numerics import gaussian


def snr_to_sigma(snr_db) -> float:
    """Noise standard deviation for unit symbol power; ``None`` means noiseless."""
    if snr_db is None or (isinstance(snr_db, str) and snr_db.lower() == "noiseless"):
        return 0.0
    snr_db = float(snr_db)
    if not math.isfinite(snr_db):
        raise ValueError(f"SNR must be finite, got {snr_db}")
    return math.sqrt(1.0 / 10.0 ** (snr_db / 10.0))


def forward(x_tx, sigma: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(received, noise)`` with ``received = x_tx + noise``."""
    x_tx = np.asarray(x_tx, dtype=np.float64)
    noise = gaussian(rng, x_tx.shape, sigma)
    return x_tx + noise, noise


def feedback(received, sigma_fb: float, rng) -> np.ndarray:
    received = np.asarray(received, dtype=np.float64)
    if sigma_fb == 0:
        return received.copy()
    return received + gaussian(rng, received.shape, sigma_fb)


@dataclass(frozen=True)
class Channel:
    """Forward/feedback noise levels resolved from :class:`ChannelParams`."""

    sigma: float
    sigma_fb: float = 0.0

    @classmethod
    def from_params(cls, params: ChannelParams) -> "Channel":
        return cls(snr_to_sigma(params.forward_snr_db), snr_to_sigma(params.feedback_snr_db))

    @classmethod
    def awgn(cls, snr_db, feedback_snr_db=None) -> "Channel":
        return cls(snr_to_sigma(snr_db), snr_to_sigma(feedback_snr_db))

    def transmit(self, x_tx, rng):
        """Forward use followed by the echo: ``(received, noise, fed_back)``."""
        received, noise = forward(x_tx, self.sigma, rng)
        return received, noise, feedback(received, self.sigma_fb, rng)

    def sample_noise(self, shape, rng):
        """Draw forward and feedback noise in the same order as :meth:`transmit`."""
        n = gaussian(rng, shape, self.sigma)
        g = gaussian(rng, shape, self.sigma_fb)
        return n, g
