"""Monte-Carlo link-level simulation and code metrics.

Codewords are simulated in fixed-size blocks. Block ``b`` at SNR index ``i``
draws from ``make_rng(seed, i, b)``, so counts depend only on the master
seed and never on how blocks are spread across worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .channel import Channel
from .errors import UsageError
from .modulation import hard_decision, modulate
from .numerics import make_rng

CSV_HEADER = ["snr_db", "codewords", "block_errors", "bler", "bler_lo", "bler_hi", "ber", "avg_power"]
DEFAULT_BLOCK = 1000


def spectral_efficiency(Q: int, P: int) -> float:
    return Q / (1 + P)


def code_rate(L: int, K: int, P: int) -> float:
    return L / (K * (1 + P))


def wilson_interval(errors: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2.0)
    p = errors / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == n else min(1.0, centre + half)
    return lo, hi


class UncodedCodec:
    """Pass-through BPSK/QPSK-component signalling with hard decisions.

    Reference harness: one real +-1 symbol per bit, no redundancy.
    """

    def __init__(self, L_info: int, Q: int = 2):
        self.L_info = L_info
        self.Q = Q

    def simulate(self, info_bits, channel: Channel, rng):
        x = modulate(info_bits, self.Q)
        y = x + (channel.sigma * rng.standard_normal(x.shape) if channel.sigma > 0 else 0.0)
        decided = (y < 0).astype(np.int8)
        return decided, float(np.sum(x * x)), x.shape[-1]


@dataclass
class BlerPoint:
    snr_db: float
    codewords: int
    block_errors: int
    bit_errors: int
    info_bits: int
    avg_power: float

    @property
    def bler(self) -> float:
        return self.block_errors / self.codewords if self.codewords else math.nan

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.codewords * self.info_bits) if self.codewords else math.nan

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.block_errors, self.codewords)


@dataclass
class BlerReport:
    points: list[BlerPoint]
    fingerprint: str = ""
    nominal_power: float | None = None
    position_errors: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for pt in self.points:
            lo, hi = pt.interval
            writer.writerow([
                repr(float(pt.snr_db)), pt.codewords, pt.block_errors,
                f"{pt.bler:.6e}", f"{lo:.6e}", f"{hi:.6e}", f"{pt.ber:.6e}", f"{pt.avg_power:.6f}",
            ])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for pt in self.points:
            lo, hi = pt.interval
            note = " (0 errors observed; one-sided bound)" if pt.block_errors == 0 else ""
            lines.append(f"SNR {pt.snr_db:g} dB: BLER {pt.bler:.3e} [{lo:.2e}, {hi:.2e}] "
                         f"BER {pt.ber:.3e} over {pt.codewords} codewords, "
                         f"avg power {pt.avg_power:.4f}{note}")
        return "\n".join(lines)


def _simulate_block(args):
    codec, channel, seed, snr_index, block, n = args
    rng = make_rng(seed, snr_index, block)
    info = rng.integers(0, 2, size=(n, codec.L_info), dtype=np.int8)
    decided, energy, n_symbols = codec.simulate(info, channel, rng)
    errors = decided != info
    return (int(np.count_nonzero(errors.any(axis=1))), int(np.count_nonzero(errors)),
            errors.sum(axis=0), energy, n * n_symbols)


def _blocks(n_codewords, block_size):
    sizes = [block_size] * (n_codewords // block_size)
    if n_codewords % block_size:
        sizes.append(n_codewords % block_size)
    return sizes


def run_lls(codec, snr_list, n_codewords: int, seed: int = 0, workers: int = 1,
            feedback_snr_db=None, block_size: int = DEFAULT_BLOCK, fingerprint: str = "") -> BlerReport:
    """BLER/BER vs forward SNR over ``n_codewords`` random messages per point.

    Block errors count any wrong information bit (pad bits are excluded by
    the codec). ``feedback_snr_db=None`` means noiseless feedback.
    """
    if getattr(codec, "calibrated", True) is False:
        raise UsageError("model must be calibrated before link-level simulation")
    if n_codewords < 1:
        raise UsageError("n_codewords must be positive")
    jobs = []
    for i, snr in enumerate(snr_list):
        channel = Channel.awgn(snr, feedback_snr_db)
        for b, n in enumerate(_blocks(n_codewords, block_size)):
            jobs.append((i, (codec, channel, seed, i, b, n)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_block, [j for _, j in jobs]))
    else:
        results = [_simulate_block(j) for _, j in jobs]

    points, positions = [], []
    for i, snr in enumerate(snr_list):
        blk = [r for (idx, _), r in zip(jobs, results) if idx == i]
        block_errors = sum(r[0] for r in blk)
        bit_errors = sum(r[1] for r in blk)
        pos = np.sum([r[2] for r in blk], axis=0)
        energy = math.fsum(r[3] for r in blk)
        symbols = sum(r[4] for r in blk)
        points.append(BlerPoint(float(snr), n_codewords, block_errors, bit_errors, codec.L_info,
                                energy / symbols))
        positions.append(pos)
    nominal = None
    if hasattr(codec, "encoder"):
        from .encoder import nominal_power
        nominal = nominal_power(codec.encoder, codec.cfg.Q)
    return BlerReport(points, fingerprint, nominal, positions)


def ber_by_position(codec, snr_db: float, n_codewords: int, seed: int = 0, workers: int = 1,
                    feedback_snr_db=None, block_size: int = DEFAULT_BLOCK) -> np.ndarray:
    """Error rate of each information-bit position."""
    report = run_lls(codec, [snr_db], n_codewords, seed, workers, feedback_snr_db, block_size)
    return report.position_errors[0] / n_codewords


def uncoded_ber(snr_db: float) -> float:
    """Closed-form hard-decision error rate of +-1 signalling: Phi(-1/sigma)."""
    sigma = Channel.awgn(snr_db).sigma
    return float(norm.cdf(-1.0 / sigma))
