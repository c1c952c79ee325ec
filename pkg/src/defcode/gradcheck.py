"""Finite-difference verification of every hand-written backward pass.

Each check draws random instances, evaluates a scalar loss that is a random
linear functional of the component's output, and compares analytic gradients
with central differences (h = 1e-5). The error metric per parameter block is
``||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||, 1e-6)``. The floor
keeps blocks whose true gradient is zero (the parity bias ``c`` ahead of
batch normalization) from turning round-off into a spurious failure. For the
end-to-end loss, where full coordinate sweeps are too costly, each block is
probed along one random unit direction and the two directional derivatives
are compared the same way.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import cells
from . import codec as codec_mod
from . import decoder as dec_mod
from . import encoder as enc_mod
from .channel import Channel
from .config import CodeConfig
from .numerics import batch_normalize, batch_normalize_backward, finite_diff_gradient, make_rng

H_STEP = 1e-5
ERR_FLOOR = 1e-6
KINDS = ("rnn", "gru", "lstm")


@dataclass
class CheckResult:
    name: str
    instances: int
    worst: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: worst rel. error {self.worst:.2e} "
                f"(tol {self.tol:.0e}, {self.instances} instances, {self.seconds:.1f}s)")


def block_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), ERR_FLOOR)
    return float(np.linalg.norm(a - b) / denom)


def _fd_dict(loss, params: dict, names=None):
    """Per-block finite-difference gradients of ``loss(params)``."""
    out = {}
    for name in names or params:
        def f(v, name=name):
            return loss({**params, name: v})
        out[name] = finite_diff_gradient(f, params[name], H_STEP)
    return out


def _scaled(rng, w: dict, scale=1.0):
    return {k: rng.uniform(-scale, scale, v.shape) for k, v in w.items()}


# --------------------------------------------------------------------------
# individual checks
# --------------------------------------------------------------------------

def check_cell(kind: str, instances: int = 100, seed: int = 0) -> CheckResult:
    """Single step, including the cell-state path for LSTM."""
    t0 = time.time()
    worst = 0.0
    for n in range(instances):
        rng = make_rng(seed, 1, KINDS.index(kind), n)
        H, I, B = int(rng.integers(2, 5)), int(rng.integers(1, 5)), 2
        w = _scaled(rng, cells.zero_cell(kind, H, I))
        x = rng.standard_normal((B, I))
        h0 = rng.uniform(-1, 1, (B, H))
        s0 = rng.standard_normal((B, H)) if kind == "lstm" else None
        R = rng.standard_normal((B, H))
        S = rng.standard_normal((B, H)) if kind == "lstm" else None

        def loss(w_, x_=x, h_=h0, s_=s0):
            st, _ = cells.cell_forward(kind, w_, x_, cells.CellState(h_, s_))
            val = np.sum(R * st.h)
            if S is not None:
                val += np.sum(S * st.s)
            return float(val)

        st, cache = cells.cell_forward(kind, w, x, cells.CellState(h0, s0))
        g, gx, gstate = cells.cell_backward(kind, cache, R, S)
        fd = _fd_dict(loss, w)
        errs = [block_error(g[k], fd[k]) for k in w]
        errs.append(block_error(gx, finite_diff_gradient(lambda v: loss(w, x_=v), x, H_STEP)))
        errs.append(block_error(gstate.h, finite_diff_gradient(lambda v: loss(w, h_=v), h0, H_STEP)))
        if kind == "lstm":
            errs.append(block_error(gstate.s, finite_diff_gradient(lambda v: loss(w, s_=v), s0, H_STEP)))
        worst = max(worst, max(errs))
    return CheckResult(f"{kind.upper()} cell", instances, worst, 1e-5, time.time() - t0)


def check_bidirectional(instances: int = 100, seed: int = 0) -> CheckResult:
    """Bidirectional wrapper over a short sequence, all three cell kinds."""
    t0 = time.time()
    worst = 0.0
    for n in range(instances):
        kind = KINDS[n % 3]
        rng = make_rng(seed, 2, n)
        T, H, I, B = int(rng.integers(1, 5)), 3, 2, 2
        fw = _scaled(rng, cells.zero_cell(kind, H, I))
        bw = _scaled(rng, cells.zero_cell(kind, H, I))
        X = rng.standard_normal((T, B, I))
        Rf, Rb = rng.standard_normal((T, B, H)), rng.standard_normal((T, B, H))

        def loss(fw_, bw_, X_=X):
            f, b, _ = cells.bidirectional_forward(kind, fw_, bw_, X_)
            return float(np.sum(Rf * f) + np.sum(Rb * b))

        _, _, cache = cells.bidirectional_forward(kind, fw, bw, X)
        gf, gb, gX = cells.bidirectional_backward(cache, Rf, Rb)
        fdf = _fd_dict(lambda p: loss(p, bw), fw)
        fdb = _fd_dict(lambda p: loss(fw, p), bw)
        errs = [block_error(gf[k], fdf[k]) for k in fw] + [block_error(gb[k], fdb[k]) for k in bw]
        errs.append(block_error(gX, finite_diff_gradient(lambda v: loss(fw, bw, v), X, H_STEP)))
        worst = max(worst, max(errs))
    return CheckResult("bidirectional wrapper", instances, worst, 1e-5, time.time() - t0)


def check_psg_output(instances: int = 100, seed: int = 0) -> CheckResult:
    """PSG recursion, output map ``A h + c`` and batch normalization.

    The loss looks at both raw and normalized parities; the normalized part
    alone is blind to ``c``.
    """
    t0 = time.time()
    worst = 0.0
    for n in range(instances):
        kind = KINDS[n % 3]
        rng = make_rng(seed, 3, n)
        cfg = CodeConfig(L_info=3, pad_bits=1, Q=2, P=2, H0=3, deltas=(1, 2, 1), gammas=(0, 0, 0),
                         encoder_cell=kind, decoder_cell="gru", decoder_layers=1)
        enc = enc_mod.init_encoder(cfg, rng)
        B = 3
        inputs = enc_mod.build_psg_inputs(
            rng.choice([-1.0, 1.0], (B, cfg.K)), rng.standard_normal((B, cfg.K)),
            rng.standard_normal((B, cfg.K, cfg.P)), cfg.deltas)
        R = rng.standard_normal((B, cfg.K, cfg.P))
        R_raw = rng.standard_normal((B, cfg.K, cfg.P))
        params = enc.parameters()

        def forward(p):
            m = enc.with_parameters(p)
            states, seq = cells.sequence_forward(kind, m.cell, inputs)
            raw = (states @ m.A.T + m.c).transpose(1, 0, 2)
            y, nc = batch_normalize(raw, (0, 1))
            return float(np.sum(R * y) + np.sum(R_raw * raw)), states, seq, nc

        _, states, seq, nc = forward(params)
        d_raw = (batch_normalize_backward(nc, R) + R_raw).transpose(1, 0, 2)
        gA = np.einsum("kbp,kbh->ph", d_raw, states)
        gc = d_raw.sum(axis=(0, 1))
        gcell, _ = cells.sequence_backward(seq, d_raw @ params["A"])
        names = ["A", "c"] + [f"cell.{k}" for k in gcell]
        fd = _fd_dict(lambda p: forward(p)[0], params, names)
        errs = [block_error(gA, fd["A"]), block_error(gc, fd["c"])]
        errs += [block_error(gcell[k], fd[f"cell.{k}"]) for k in gcell]
        worst = max(worst, max(errs))
    return CheckResult("PSG output map", instances, worst, 1e-5, time.time() - t0)


def check_decoder_output(instances: int = 100, seed: int = 0) -> CheckResult:
    """Stacked bidirectional decoder, state normalization and sigmoid output layer."""
    t0 = time.time()
    worst = 0.0
    for n in range(instances):
        kind = ("gru", "lstm")[n % 2]
        rng = make_rng(seed, 4, n)
        cfg = CodeConfig(L_info=3, pad_bits=1, Q=2, P=2, H0=3, deltas=(0, 1, 1), gammas=(1, 0, 1),
                         encoder_cell="rnn", decoder_cell=kind, decoder_layers=2)
        dec = dec_mod.init_decoder(cfg, rng)
        B = 3
        x_bar = rng.standard_normal((B, cfg.K))
        p_bar = rng.standard_normal((B, cfg.K, cfg.P))
        G = rng.standard_normal((B, cfg.L))
        params = dec.parameters()

        def loss(p, xb=x_bar, pb=p_bar):
            probs, _ = dec_mod.decode(dec.with_parameters(p), xb, pb, cfg.gammas, mode="train")
            return float(np.sum(G * probs))

        _, cache = dec_mod.decode(dec, x_bar, p_bar, cfg.gammas, mode="train")
        g, gx, gp = dec_mod.decoder_backward(dec, cache, grad_probs=G)
        fd = _fd_dict(loss, params)
        errs = [block_error(g[k], fd[k]) for k in params]
        errs.append(block_error(gx, finite_diff_gradient(lambda v: loss(params, xb=v), x_bar, H_STEP)))
        errs.append(block_error(gp, finite_diff_gradient(lambda v: loss(params, pb=v), p_bar, H_STEP)))
        worst = max(worst, max(errs))
    return CheckResult("decoder output layer", instances, worst, 1e-4, time.time() - t0)


def end_to_end_instance(n: int, seed: int = 0, batch: int = 3):
    """A random tiny codec (K=4, H0=4, P=2) with a frozen batch."""
    rng = make_rng(seed, 5, n)
    enc_kind = KINDS[n % 3]
    dec_kind = ("gru", "lstm")[n % 2]
    cfg = CodeConfig(L_info=3, pad_bits=1, Q=2, P=2, H0=4, deltas=(1, 2, 2), gammas=(1, 1, 1),
                     encoder_cell=enc_kind, decoder_cell=dec_kind, decoder_layers=2)
    codec = codec_mod.init_codec(cfg, int(rng.integers(1 << 30)))
    params = codec.parameters()
    params["enc.w"] = rng.uniform(0.5, 1.5, cfg.P + 1)
    params["enc.a"] = rng.uniform(0.5, 1.5, cfg.K)
    codec = codec.with_parameters(params)
    channel = Channel.awgn(0.0, 10.0 if n % 4 == 3 else None)
    bits = enc_mod.random_messages(cfg, batch, rng)
    noise = enc_mod.sample_episode_noise(channel, batch, cfg.K, cfg.P, rng)
    return codec, bits, noise


def check_end_to_end(instances: int = 100, seed: int = 0) -> CheckResult:
    """BCE loss through decoder, channel additions, power levels and encoder."""
    from .training import forward_backward

    t0 = time.time()
    worst = 0.0
    for n in range(instances):
        codec, bits, noise = end_to_end_instance(n, seed)
        params = codec.parameters()
        _, grads, _ = forward_backward(codec, bits, noise)
        rng = make_rng(seed, 6, n)
        for name, p in params.items():
            u = rng.standard_normal(p.shape)
            u /= np.linalg.norm(u)

            def f(t):
                q = dict(params)
                q[name] = p + t * u
                return forward_backward(codec.with_parameters(q), bits, noise, grad=False)[0]

            num = (f(H_STEP) - f(-H_STEP)) / (2 * H_STEP)
            worst = max(worst, block_error(np.sum(grads[name] * u), num))
    return CheckResult("end-to-end BCE (K=4, H0=4, P=2)", instances, worst, 1e-4, time.time() - t0)


def run_all(instances: int = 100, seed: int = 0) -> list[CheckResult]:
    results = [check_cell(k, instances, seed) for k in KINDS]
    results += [
        check_bidirectional(instances, seed),
        check_psg_output(instances, seed),
        check_decoder_output(instances, seed),
        check_end_to_end(instances, seed),
    ]
    return results
