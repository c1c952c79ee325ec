"""Command-line interface: ``defcode {train,calibrate,evaluate,inspect,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import codec as codec_mod
from .channel import Channel
from .config import RunConfig, format_config, load_config
from .errors import DefCodeError
from .evaluation import run_lls
from .persistence import ModelFile, load_model, save_model

log = logging.getLogger("defcode")

POWER_AUDIT_TOL = 0.05


def _snr_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid SNR list {text!r}; expected e.g. 0,1,2")
    if not values:
        raise argparse.ArgumentTypeError("empty SNR list")
    return values


def _feedback(text: str):
    return None if text.lower() in ("noiseless", "none") else float(text)


def _global_flags(parser, suppress=False):
    # subcommands repeat the flags with suppressed defaults so that a value
    # given before the subcommand is not overwritten
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (default: from config / 0)")
    parser.add_argument("--workers", type=int, default=d(1), help="worker processes")
    parser.add_argument("--config", type=Path, default=d(None), help="flat key = value config file")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = argparse.ArgumentParser(prog="defcode", description="Train and evaluate deep extended feedback codes.")
    _global_flags(p)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train all seeds and keep the best snapshot")
    t.add_argument("out", type=Path, help="output directory for model files, histories and logs")

    c = sub.add_parser("calibrate", parents=[common], help="estimate inference normalization statistics")
    c.add_argument("model", type=Path)
    c.add_argument("--codewords", type=int, default=None, help="default: calib_codewords from config")
    c.add_argument("--snr", type=float, default=None, help="forward SNR in dB (default: train_snr_db)")
    c.add_argument("--feedback-snr", type=_feedback, default="noiseless")
    c.add_argument("-o", "--output", type=Path, default=None, help="default: overwrite the input model")

    e = sub.add_parser("evaluate", parents=[common], help="BLER/BER versus forward SNR as CSV")
    e.add_argument("model", type=Path)
    e.add_argument("--snr", type=_snr_list, default=[0.0], help="comma-separated forward SNRs in dB")
    e.add_argument("--codewords", type=int, default=10_000)
    e.add_argument("--feedback-snr", type=_feedback, default="noiseless")
    e.add_argument("-o", "--output", type=Path, default=None, help="CSV path (default: stdout)")
    e.add_argument("--positions", action="store_true", help="also report per-position BER at each SNR")

    i = sub.add_parser("inspect", parents=[common], help="print a model summary")
    i.add_argument("model", type=Path)

    g = sub.add_parser("gradcheck", parents=[common], help="run the finite-difference gradient suite")
    g.add_argument("--instances", type=int, default=100)
    return p


def _run_config(args) -> RunConfig:
    return load_config(args.config) if args.config is not None else RunConfig()


def cmd_train(args) -> int:
    from .training import train_full

    rc = _run_config(args)
    train = rc.train
    if args.seed is not None:
        import dataclasses
        train = dataclasses.replace(train, seeds=(args.seed,))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.txt").write_text(format_config(RunConfig(rc.code, train, rc.channel)))

    def progress(event):
        if event["batch"] % 100 == 0 or event["event"] != "step":
            log.info("seed %d batch %d loss %.5f (%s)", event["seed"], event["batch"], event["loss"], event["event"])

    outcome = train_full(train, rc.code, rc.channel, workers=args.workers, out_dir=args.out, on_batch=progress)
    w = outcome.winner
    print(f"winner: seed {w.seed} ({w.kind}) BLER {w.bler:.3e} BER {w.ber:.3e} -> {args.out / 'winner.defm'}")
    return 0


def cmd_calibrate(args) -> int:
    rc = _run_config(args)
    mf = load_model(args.model)
    n = args.codewords if args.codewords is not None else rc.train.calib_codewords
    snr = args.snr if args.snr is not None else rc.train.train_snr_db
    seed = 0 if args.seed is None else args.seed
    codec_mod.calibrate(mf.codec, Channel.awgn(snr, args.feedback_snr), n, seed=seed)
    meta = dict(mf.metadata, calib_codewords=n, calib_snr_db=snr, calib_seed=seed)
    digest = save_model(args.output or args.model, ModelFile(mf.codec, meta))
    print(f"calibrated over {n} codewords at {snr:g} dB; fingerprint {digest}")
    return 0


def cmd_evaluate(args) -> int:
    mf = load_model(args.model)
    seed = 0 if args.seed is None else args.seed
    report = run_lls(mf.codec, args.snr, args.codewords, seed=seed, workers=args.workers,
                     feedback_snr_db=args.feedback_snr, fingerprint=mf.digest)
    text = report.to_csv()
    if args.output is None:
        sys.stdout.write(text)
    else:
        args.output.write_text(text)
    print(f"model {mf.digest}", file=sys.stderr)
    print(report.summary(), file=sys.stderr)
    for pt in report.points:
        if report.nominal_power and abs(pt.avg_power / report.nominal_power - 1) > POWER_AUDIT_TOL:
            print(f"warning: measured power {pt.avg_power:.4f} differs from nominal "
                  f"{report.nominal_power:.4f} by more than 5% at {pt.snr_db:g} dB", file=sys.stderr)
    if args.positions:
        for snr, pos in zip(args.snr, report.position_errors):
            rates = pos / args.codewords
            med = float(np.median(rates))
            ratio = float(rates.max() / med) if med > 0 else float("inf")
            print(f"SNR {snr:g} dB position BER: max/median = {ratio:.2f}; "
                  + " ".join(f"{r:.2e}" for r in rates), file=sys.stderr)
    return 0


def cmd_inspect(args) -> int:
    mf = load_model(args.model)
    c = mf.codec
    cfg = c.cfg
    print(f"model file   {args.model} (format v{mf.version})")
    print(f"fingerprint  {mf.digest}")
    print(f"code         L={cfg.L} ({cfg.L_info} info + {cfg.pad_bits} pad), Q={cfg.Q}, P={cfg.P}, K={cfg.K}")
    print(f"rate / SE    {cfg.rate:.4f} / {cfg.spectral_efficiency:.4f} bits/s/Hz")
    print(f"extensions   deltas={cfg.deltas} gammas={cfg.gammas}")
    print(f"encoder      {c.encoder.kind.upper()} H0={c.encoder.H}, input size {cfg.encoder_input_size}")
    print(f"decoder      {len(c.decoder.layers)} x bidirectional {c.decoder.kind.upper()} "
          f"H={c.decoder.H}, input size {cfg.decoder_input_size}")
    print(f"w            {np.array2string(c.encoder.w, precision=4)}")
    print(f"a            min {c.encoder.a.min():.4f} max {c.encoder.a.max():.4f}")
    n_params = sum(v.size for v in c.parameters().values())
    print(f"parameters   {n_params}")
    if c.calibrated:
        print(f"calibration  encoder over {c.encoder.calib.count} samples, decoder over {c.decoder.state_norm.count}")
        if any(np.ravel(c.encoder.calib.degenerate)):
            print("             warning: degenerate parity stream variance floored")
    else:
        print("calibration  none (run `defcode calibrate` before evaluating)")
    if mf.metadata:
        print("metadata     " + json.dumps(mf.metadata, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.instances, 0 if args.seed is None else args.seed)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except (DefCodeError, ValueError, OSError) as exc:
        print(f"defcode: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
