"""QAM/PAM bit-to-symbol mapping and hard decisions.

Each group of ``Q`` bits becomes one complex QAM symbol whose real and
imaginary parts are emitted as two consecutive real systematic symbols, so a
message of ``L`` bits yields ``K = 2L/Q`` real symbols.

The printed 16-QAM table is reproduced verbatim. It is not a bijection: rows
``0110``/``1110`` and ``0111``/``1111`` map to the same symbol pair.
:func:`validate_mapping` reports those collisions instead of hiding them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

SUPPORTED_ORDERS = (2, 4)

# bit tuple -> (x(2i), x(2i+1))
MAPPING_TABLES: dict[int, dict[tuple[int, ...], tuple[int, int]]] = {
    2: {
        (0, 0): (1, 1),
        (0, 1): (1, -1),
        (1, 0): (-1, 1),
        (1, 1): (-1, -1),
    },
    4: {
        (0, 0, 0, 0): (3, 3),
        (0, 0, 0, 1): (3, 1),
        (0, 0, 1, 0): (3, -3),
        (0, 0, 1, 1): (3, -1),
        (0, 1, 0, 0): (1, 3),
        (0, 1, 0, 1): (1, 1),
        (0, 1, 1, 0): (-1, -3),
        (0, 1, 1, 1): (-1, -1),
        (1, 0, 0, 0): (-3, 3),
        (1, 0, 0, 1): (-3, 1),
        (1, 0, 1, 0): (-3, -3),
        (1, 0, 1, 1): (-3, -1),
        (1, 1, 0, 0): (-1, 3),
        (1, 1, 0, 1): (-1, 1),
        (1, 1, 1, 0): (-1, -3),
        (1, 1, 1, 1): (-1, -1),
    },
}


def check_order(Q: int) -> None:
    if Q not in SUPPORTED_ORDERS:
        raise ConfigurationError(f"unsupported modulation order Q={Q}; expected one of {SUPPORTED_ORDERS}")


def _lookup(Q: int) -> np.ndarray:
    """(2**Q, 2) array indexed by the big-endian integer value of the bit tuple."""
    table = np.zeros((2 ** Q, 2))
    for bits, pair in MAPPING_TABLES[Q].items():
        idx = int("".join(map(str, bits)), 2)
        table[idx] = pair
    return table


_LOOKUP = {Q: _lookup(Q) for Q in SUPPORTED_ORDERS}


def modulate(bits, Q: int) -> np.ndarray:
    """Map bits to real systematic symbols.

    ``bits`` may be 1-D (one message) or 2-D ``(batch, L)``; the output has
    the same leading shape with the last axis of length ``2L/Q``. For Q=2 an
    odd ``L`` is accepted: the last bit becomes a single real symbol.
    """
    check_order(Q)
    bits = np.asarray(bits)
    L = bits.shape[-1]
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise InputError("bits must be 0 or 1")
    if Q == 2 and L % 2:
        # Table I is separable per component, so a trailing bit is a lone real symbol
        head = modulate(bits[..., :-1], Q)
        tail = _LOOKUP[2][2 * bits[..., -1:].astype(np.int64), 0]
        return np.concatenate([head, tail], axis=-1)
    if L % Q:
        raise InputError(f"message length {L} is not divisible by Q={Q}")
    groups = bits.reshape(bits.shape[:-1] + (L // Q, Q)).astype(np.int64)
    weights = 1 << np.arange(Q - 1, -1, -1)
    idx = groups @ weights
    pairs = _LOOKUP[Q][idx]
    return pairs.reshape(bits.shape[:-1] + (2 * L // Q,))


def hard_decision(probs) -> np.ndarray:
    """bit = 1 iff prob > 0.5 (an exact 0.5 decides 0)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size and (np.any(probs < 0) or np.any(probs > 1) or np.any(np.isnan(probs))):
        raise ValueError("probabilities must lie in [0, 1]")
    return (probs > 0.5).astype(np.int8)


def constellation_energy(Q: int) -> float:
    """Mean squared real symbol value under uniform bits (1 for Q=2, 5 for Q=4)."""
    check_order(Q)
    return float(np.mean(_LOOKUP[Q] ** 2))


def alphabet(Q: int) -> list[int]:
    check_order(Q)
    return sorted({int(v) for v in _LOOKUP[Q].ravel()})


@dataclass
class MappingReport:
    Q: int
    bijective: bool
    collisions: list[tuple[tuple[int, int], list[tuple[int, ...]]]]

    def __str__(self):
        if self.bijective:
            return f"Q={self.Q}: mapping is bijective over all {2 ** self.Q} bit tuples"
        lines = [f"Q={self.Q}: mapping is NOT bijective ({len(self.collisions)} colliding symbol pairs)"]
        for pair, rows in self.collisions:
            lines.append(f"  {pair} <- " + ", ".join("".join(map(str, r)) for r in rows))
        return "\n".join(lines)


def validate_mapping(Q: int) -> MappingReport:
    """Check the table for symbol pairs shared by several bit tuples."""
    check_order(Q)
    inverse: dict[tuple[int, int], list[tuple[int, ...]]] = {}
    for bits, pair in MAPPING_TABLES[Q].items():
        inverse.setdefault(pair, []).append(bits)
    collisions = [(pair, rows) for pair, rows in sorted(inverse.items()) if len(rows) > 1]
    return MappingReport(Q, not collisions, collisions)


def inverse_lookup(pair, Q: int) -> list[tuple[int, ...]]:
    """All bit tuples that map to ``pair`` (more than one means a collision)."""
    check_order(Q)
    pair = tuple(int(v) for v in pair)
    return [bits for bits, p in MAPPING_TABLES[Q].items() if p == pair]
