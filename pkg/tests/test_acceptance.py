"""Acceptance criteria 1-8.

Every test records one PASS/FAIL line; the lines are printed together in the
pytest terminal summary, and also when this file is run as a script.

Criteria 6 and 7 share one session-scoped training run (3 seeds for each of
two configurations). ``DEFCODE_ACCEPTANCE_EPOCHS`` shortens that run for
smoke testing; the thresholds only hold at the default of 200 epochs.
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defcode import codec as codec_mod
from defcode import decoder as dec_mod
from defcode import encoder as enc_mod
from defcode import gradcheck
from defcode.channel import Channel
from defcode.config import ChannelParams, CodeConfig, TrainConfig
from defcode.evaluation import run_lls, uncoded_ber
from defcode.modulation import modulate
from defcode.numerics import make_rng
from defcode.persistence import ModelFile, load_model, save_model, serialize
from defcode.training import Trainer, lr_at, rollback_check, train_full, train_seed

RESULTS: dict[int, str] = {}
CRITERIA = {
    1: "gradient suite",
    2: "Deepcode recovery",
    3: "equation-table conformance",
    4: "normalization / calibration",
    5: "training mechanics",
    6: "desk-scale training result",
    7: "DEF-vs-Deepcode trend (soft gate)",
    8: "determinism & persistence",
}


def record(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n} [{CRITERIA[n]}]: {'PASS' if passed else 'FAIL'} - {detail}"
    if RESULTS.get(n) != line:
        print(line)
    RESULTS[n] = line


# desk-scale configuration shared by criteria 4, 6, 7 and 8
DESK = CodeConfig(L_info=24, pad_bits=1, Q=2, P=2, H0=25, deltas=(1, 2, 2), gammas=(0, 0, 0),
                  encoder_cell="lstm", decoder_cell="lstm")
DESK_EPOCHS = int(os.environ.get("DEFCODE_ACCEPTANCE_EPOCHS", "200"))
DESK_TRAIN = TrainConfig(epochs=DESK_EPOCHS, batches_per_epoch=10, batch_size=250, train_snr_db=0.0,
                         seeds=(1, 2, 3), calib_codewords=100_000, selection_codewords=20_000)
EVAL_CODEWORDS = 20_000
EVAL_SEED = 20_240_611
BER_THRESHOLD = 1.5e-2


# ---------------------------------------------------------------- 1

def test_criterion_1_gradient_suite():
    t0 = time.time()
    results = gradcheck.run_all(instances=100, seed=0)
    elapsed = time.time() - t0
    for r in results:
        print("   ", r.line())
    worst = max(results, key=lambda r: r.worst / r.tol)
    ok = all(r.passed for r in results) and all(r.instances >= 100 for r in results) and elapsed < 120
    record(1, ok, f"{len(results)} checks x 100 instances, worst {worst.name} {worst.worst:.1e} "
                  f"(tol {worst.tol:.0e}), {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 2

DEEPCODE = dataclasses.replace(DESK, L_info=9, H0=5, deltas=(0, 1, 1), gammas=(0, 0, 0))


@pytest.fixture(scope="module")
def deepcode_codec():
    c = codec_mod.init_codec(DEEPCODE, 0)
    codec_mod.calibrate(c, Channel.awgn(0.0), 2000, seed=1, chunk=1000)
    return c


def _deepcode_encoder_input(tr, b, k):
    prev = tr.r_hat[b, k - 1] if k > 0 else np.zeros(2)
    return np.array([tr.x[b, k], tr.n0_hat[b, k], prev[0], prev[1]])


def _deepcode_decoder_input(tr, b, k):
    return np.array([tr.x_bar[b, k], tr.p_bar[b, k, 0], tr.p_bar[b, k, 1]])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), snr=st.floats(-3, 6), noiseless_fb=st.booleans())
def test_criterion_2_deepcode_recovery(deepcode_codec, seed, snr, noiseless_fb):
    cfg = DEEPCODE
    assert cfg.encoder_input_size == 4 and cfg.decoder_input_size == 3
    rng = make_rng(seed)
    msg = enc_mod.random_messages(cfg, 3, rng)
    tr = enc_mod.encode_interactive(deepcode_codec.encoder, cfg, msg,
                                    Channel.awgn(snr, None if noiseless_fb else 10.0), rng)
    dec_in = dec_mod.build_decoder_inputs(tr.x_bar, tr.p_bar, cfg.gammas)
    assert tr.psg_inputs.shape[-1] == 4 and dec_in.shape[-1] == 3
    for b in range(3):
        for k in range(cfg.K):
            np.testing.assert_array_equal(tr.psg_inputs[k, b], _deepcode_encoder_input(tr, b, k))
            np.testing.assert_array_equal(dec_in[k, b], _deepcode_decoder_input(tr, b, k))
    if noiseless_fb:
        # with exact feedback the estimates are the channel noise itself
        np.testing.assert_allclose(tr.n0_hat, tr.n0, rtol=0, atol=1e-14)
        np.testing.assert_allclose(tr.r_hat, tr.v, rtol=0, atol=1e-14)
    record(2, True, "encoder inputs length 4, decoder inputs length 3, elementwise equal "
                    "for every k on 40 random transcripts")


# ---------------------------------------------------------------- 3

TABLE_I = {"00": (1, 1), "01": (1, -1), "10": (-1, 1), "11": (-1, -1)}
TABLE_II = {
    "0000": (3, 3), "0001": (3, 1), "0010": (3, -3), "0011": (3, -1),
    "0100": (1, 3), "0101": (1, 1), "0110": (-1, -3), "0111": (-1, -1),
    "1000": (-3, 3), "1001": (-3, 1), "1010": (-3, -3), "1011": (-3, -1),
    "1100": (-1, 3), "1101": (-1, 1), "1110": (-1, -3), "1111": (-1, -1),
}


def test_criterion_3_tables_and_assembly():
    rows = 0
    for Q, table in ((2, TABLE_I), (4, TABLE_II)):
        for bits, pair in table.items():
            np.testing.assert_array_equal(modulate([int(c) for c in bits], Q), pair)
            rows += 1
    K, P = 50, 2
    r = np.random.default_rng(0)
    x, par = r.standard_normal(K), r.standard_normal((K, P))
    w, a = r.uniform(0.5, 1.5, P + 1), r.uniform(0.5, 1.5, K)
    z = enc_mod.assemble_codeword(x, par, w, a)
    assert z.size == (P + 1) * K
    for j in range((P + 1) * K):
        if j < K:
            assert z[j] == w[0] * a[j] * x[j]
        else:
            l, k = (j - K) % P, (j - K) // P
            assert z[j] == w[l + 1] * a[k] * par[k, l]
    record(3, True, f"{rows} table rows exact; all {(P + 1) * K} codeword indices match for K=50, P=2")


# ---------------------------------------------------------------- 4

def _calibration_check(codec, seed):
    codec_mod.calibrate(codec, Channel.awgn(0.0), 100_000, seed=seed)
    parts = []
    for chunk in range(10):
        rng = make_rng(seed, 99, chunk)
        msg = enc_mod.random_messages(DESK, 10_000, rng)
        noise = enc_mod.sample_episode_noise(Channel.awgn(0.0), 10_000, DESK.K, DESK.P, rng)
        raw = enc_mod.raw_parities(codec.encoder, DESK, msg, noise)
        parts.append(enc_mod.normalize_parity(raw, "inference", codec.encoder.calib))
    p = np.concatenate(parts)
    means = [float(p[..., l].mean()) for l in range(DESK.P)]
    vars_ = [float(p[..., l].var()) for l in range(DESK.P)]
    return means, vars_


def test_criterion_4_normalization_and_power():
    codec = codec_mod.init_codec(DESK, 5)
    means, vars_ = _calibration_check(codec, seed=4)
    stats_ok = all(abs(m) <= 0.02 for m in means) and all(abs(v - 1) <= 0.05 for v in vars_)

    # power constraints after every step, with both level vectors trainable from the start
    tc = dataclasses.replace(DESK_TRAIN, epochs=3, batch_size=50, w_train_start_epoch=0, a_train_start_epoch=0)
    codec = codec_mod.init_codec(DESK, 6)
    tr = Trainer(codec, tc, Channel.awgn(0.0), 6)
    worst = 0.0
    for _ in range(tc.total_batches):
        tr.train_one_batch()
        w, a = tr.params["enc.w"], tr.params["enc.a"]
        worst = max(worst, abs(np.sum(w * w) - (DESK.P + 1)), abs(np.sum(a * a) - DESK.K))
    moved = not np.allclose(tr.params["enc.a"], 1.0)
    ok = stats_ok and worst <= 1e-9 and moved
    record(4, ok, f"stream means {['%.4f' % m for m in means]}, vars {['%.4f' % v for v in vars_]} "
                  f"after 1e5-codeword calibration; max power-constraint error {worst:.1e} over "
                  f"{tc.total_batches} steps")
    assert ok


# ---------------------------------------------------------------- 5

def test_criterion_5_training_mechanics():
    defaults = TrainConfig()
    assert lr_at(999, defaults) == 0.02
    assert lr_at(1000, defaults) == pytest.approx(0.002, abs=0)
    assert rollback_check(0.01, 0.1) == "discard"
    assert rollback_check(0.01, 0.0999) == "keep"

    small = CodeConfig(L_info=5, pad_bits=1, H0=4, gammas=(0, 0, 0))
    tr = Trainer(codec_mod.init_codec(small, 0), defaults, Channel.awgn(0.0), 0)
    r = np.random.default_rng(0)

    def grads():
        return {k: r.standard_normal(v.shape) for k, v in tr.params.items()}

    # roll-back at exactly 10x the previous accepted loss, restoring the pre-update state bit-exactly
    tr.process_batch(0.5, grads())
    snap = ({k: v.copy() for k, v in tr.params.items()}, tr.adam.copy())
    tr.process_batch(0.4, grads())
    ev = tr.process_batch(4.0, grads())
    assert ev["event"] == "rollback"
    assert all(tr.params[k].tobytes() == snap[0][k].tobytes() for k in snap[0])
    assert tr.adam.t == snap[1].t
    assert all(tr.adam.m[k].tobytes() == snap[1].m[k].tobytes() for k in snap[1].m)
    assert all(tr.adam.v[k].tobytes() == snap[1].v[k].tobytes() for k in snap[1].v)
    ev = tr.process_batch(0.4 * 9.99, grads())
    assert ev["event"] == "step"

    # staged power levels under the default schedule (fake losses, real optimizer)
    w_first = a_first = None
    while tr.batch_index < 2100:
        b = tr.batch_index
        tr.process_batch(0.3, grads())
        if w_first is None and not np.all(tr.params["enc.w"] == 1.0):
            w_first = b
        if a_first is None and not np.all(tr.params["enc.a"] == 1.0):
            a_first = b
    ok = (w_first == defaults.w_train_start_epoch * defaults.batches_per_epoch
          and a_first == defaults.a_train_start_epoch * defaults.batches_per_epoch)
    record(5, ok, f"LR 0.02 @999 / 0.002 @1000; roll-back at 10x restores weights+ADAM exactly; "
                  f"w first moves at batch {w_first} (epoch 100), a at batch {a_first} (epoch 200)")
    assert ok


# ---------------------------------------------------------------- 6 & 7

def _seed_models(outcome):
    """Each seed's better snapshot by selection BLER."""
    best = {}
    for s in outcome.snapshots:
        if s.seed not in best or (s.bler, s.ber) < (best[s.seed].bler, best[s.seed].ber):
            best[s.seed] = s
    return best


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out = {}
    for name, deltas in (("def", (1, 2, 2)), ("deepcode", (0, 1, 1))):
        cfg = dataclasses.replace(DESK, deltas=deltas)
        t0 = time.time()
        outcome = train_full(DESK_TRAIN, cfg, ChannelParams(0.0, None), workers=os.cpu_count() or 1,
                             out_dir=tmp_path_factory.mktemp(name))
        out[name] = (outcome, time.time() - t0)
    return out


def test_criterion_6_desk_training(desk_runs):
    outcome, seconds = desk_runs["def"]
    winner = outcome.winner
    report = run_lls(winner.codec, [0.0], EVAL_CODEWORDS, seed=EVAL_SEED)
    pt = report.points[0]
    oracle = uncoded_ber(0.0)
    ok = pt.ber <= BER_THRESHOLD
    record(6, ok, f"winner seed {winner.seed} ({winner.kind}): BER {pt.ber:.2e} (threshold {BER_THRESHOLD:.1e}, "
                  f"uncoded {oracle:.4f}), BLER {pt.bler:.2e} over {EVAL_CODEWORDS} fresh codewords; "
                  f"{DESK_EPOCHS} epochs, 3 seeds, {seconds / 60:.1f} min incl. selection")
    assert ok
    assert all(winner.bler <= s.bler for s in outcome.snapshots)


def test_criterion_7_trend(desk_runs):
    def_models = _seed_models(desk_runs["def"][0])
    dc_models = _seed_models(desk_runs["deepcode"][0])
    wins, pairs = 0, []
    for seed in DESK_TRAIN.seeds:
        a = run_lls(def_models[seed].codec, [0.0], EVAL_CODEWORDS, seed=EVAL_SEED + seed).points[0].bler
        b = run_lls(dc_models[seed].codec, [0.0], EVAL_CODEWORDS, seed=EVAL_SEED + seed).points[0].bler
        wins += a <= b
        pairs.append(f"seed {seed}: {a:.2e} vs {b:.2e}")
    ok = wins >= 2
    record(7, ok, f"DEF BLER <= Deepcode BLER in {wins}/3 seed pairs ({'; '.join(pairs)})"
                  + ("" if ok else " - soft gate, reported as warning"))
    if not ok:
        warnings.warn(f"criterion 7 soft gate missed: {wins}/3 seed pairs", stacklevel=1)


# ---------------------------------------------------------------- 8

def test_criterion_8_determinism_and_persistence(tmp_path):
    tc = dataclasses.replace(DESK_TRAIN, epochs=5, batch_size=100)
    runs = []
    for _ in range(2):
        res = train_seed(DESK, tc, ChannelParams(), seed=7)
        codec = codec_mod.init_codec(DESK, 0).with_parameters(res.final)
        codec_mod.calibrate(codec, Channel.awgn(0.0), 5000, seed=3)
        report = run_lls(codec, [0.0, 1.0], 2000, seed=4, workers=1)
        runs.append((res, codec, report))
    (r1, c1, rep1), (r2, c2, rep2) = runs
    same_history = r1.history.to_dict() == r2.history.to_dict()
    same_report = rep1.to_csv() == rep2.to_csv()
    p1 = save_model(tmp_path / "a.defm", ModelFile(c1, {"history_digest": r1.history.digest()}))
    p2 = save_model(tmp_path / "b.defm", ModelFile(c2, {"history_digest": r2.history.digest()}))
    loaded = load_model(tmp_path / "a.defm").codec
    exact = all(loaded.parameters()[k].tobytes() == v.tobytes() for k, v in c1.parameters().items())
    exact &= loaded.encoder.calib.mean.tobytes() == c1.encoder.calib.mean.tobytes()
    exact &= loaded.decoder.state_norm.var.tobytes() == c1.decoder.state_norm.var.tobytes()
    exact &= serialize(ModelFile(loaded, {"history_digest": r1.history.digest()})) == (tmp_path / "a.defm").read_bytes()
    ok = same_history and same_report and exact and p1 == p2
    record(8, ok, f"history digest {r1.history.digest()[:12]} identical across reruns: {same_history}; "
                  f"report identical: {same_report}; model file round-trip bit-exact: {exact}")
    assert ok


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
