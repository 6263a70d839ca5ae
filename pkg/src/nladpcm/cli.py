"""``nladpcm`` command line: encode, decode, train-codebooks, sweep, report."""

from __future__ import annotations

import argparse
import os
import sys

from . import experiments as ex
from .codec import Bitstream, CodecConfig, Scheme, WeightMode, decode, encode
from .mlp import TrainConfig
from .quantizer import BitAllocation
from .signal_io import DEFAULT_SAMPLE_RATE, load_corpus, load_pcm, write_pcm


class CliError(Exception):
    pass


def _allocation(text: str) -> BitAllocation:
    try:
        return BitAllocation.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bits_range(text: str) -> list[int]:
    try:
        vals = [int(v) for v in ex._range_or_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad bit range {text!r}") from None
    if not vals or any(not 1 <= v <= 10 for v in vals):
        raise argparse.ArgumentTypeError("bits must lie in 1..10")
    return vals


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sample-rate", type=int, default=DEFAULT_SAMPLE_RATE,
                   help="sample rate in Hz for raw PCM input (default 8000)")
    p.add_argument("--seed", type=int, default=0, help="global training seed")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", "-o", help="output file or directory")


def _add_training(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--learn-rate", type=float, default=d.learn_rate)
    p.add_argument("--init-scale", type=float, default=d.init_scale)


def _add_codebooks(p: argparse.ArgumentParser) -> None:
    p.add_argument("--codebooks", help="codebook bank file, or a directory written by "
                                       "train-codebooks")
    p.add_argument("--quantizer", choices=sorted(ex.QUANTIZER_NAMES),
                   default="equal-occupancy",
                   help="codebook family to pick from a directory")


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, learn_rate=args.learn_rate,
                       init_scale=args.init_scale, seed=args.seed)


def _tuning(args) -> CodecConfig:
    return CodecConfig(train=_train_config(args), lms_step=args.lms_step)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nladpcm",
                                     description="ADPCM speech coding with linear and "
                                                 "MLP predictors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a wav/raw file into a bitstream")
    p.add_argument("input")
    p.add_argument("--scheme", type=Scheme.parse, default=Scheme.BACKWARD_LD,
                   help="backward-lms, backward-ld, backward-nl or forward-nl")
    p.add_argument("--nq", type=int, choices=(2, 3, 4, 5), default=4,
                   help="residual bits per sample")
    p.add_argument("--frame-len", type=int, default=200)
    p.add_argument("--order", type=int, default=10)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="bandwidth expansion factor (backward-ld)")
    p.add_argument("--update-period", type=int, default=None,
                   help="retraining period in samples (backward-nl)")
    p.add_argument("--allocation", type=_allocation, default=BitAllocation(),
                   help="hw-hb-ow-ob weight bits (forward-nl), e.g. 7-10-7-10")
    p.add_argument("--weight-mode", choices=[m.value for m in WeightMode], default="quantized")
    p.add_argument("--lms-step", type=float, default=0.05)
    _add_codebooks(p)
    _add_training(p)
    _add_common(p)

    p = sub.add_parser("decode", help="decode a bitstream to a 16-bit wav")
    p.add_argument("input")
    p.add_argument("--lms-step", type=float, default=0.05)
    _add_codebooks(p)
    _add_training(p)
    _add_common(p)

    p = sub.add_parser("train-codebooks",
                       help="design weight codebooks from forward nets over a corpus")
    p.add_argument("corpus", nargs="+", help="training wav/raw files or directories")
    p.add_argument("--frame-len", type=int, default=200)
    p.add_argument("--bits", type=_bits_range, default=list(range(6, 11)),
                   help="bit widths to design, list or range (default 6..10)")
    p.add_argument("--clip-fraction", type=float, default=0.0,
                   help="tail fraction clipped by the uniform family")
    p.add_argument("--bins", type=int, default=50, help="histogram bins per group")
    _add_training(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="run a parameter grid and write a results CSV")
    p.add_argument("grid", help="grid file (key = comma-separated values)")
    p.add_argument("--corpus", nargs="+", help="held-out evaluation corpus (overrides grid)")
    p.add_argument("--train-corpus", nargs="+",
                   help="codebook training corpus (overrides grid)")
    p.add_argument("--codebooks", help="codebook directory (overrides grid)")
    p.add_argument("--timing", action="store_true",
                   help="fill wall_seconds (makes the CSV run-dependent)")
    _add_common(p)

    p = sub.add_parser("report", help="pivot a results CSV into table/figure CSVs")
    p.add_argument("results")
    _add_common(p)
    return parser


def cmd_encode(args) -> int:
    signal = load_pcm(args.input, sample_rate_hz=args.sample_rate)
    config = CodecConfig(scheme=args.scheme, nq=args.nq, frame_len=args.frame_len,
                         order=args.order, lam=args.lam, nl_update_period=args.update_period,
                         allocation=args.allocation, train=_train_config(args),
                         sample_rate_hz=signal.sample_rate_hz, lms_step=args.lms_step)
    bank = None
    if config.scheme is Scheme.FORWARD_NL:
        if not args.codebooks:
            raise CliError("forward-nl needs --codebooks")
        bank = ex.load_bank(args.codebooks, config.allocation, ex.QUANTIZER_NAMES[args.quantizer])
    result = encode(config, signal, bank, weight_mode=args.weight_mode)
    out = args.out or os.path.splitext(args.input)[0] + ".adpx"
    with open(out, "wb") as fh:
        fh.write(result.bitstream.to_bytes())
    print(f"wrote {out}: {len(signal)} samples, {result.bitstream.payload_bits} payload bits")
    return 0


def cmd_decode(args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    tuning = _tuning(args)
    stream = Bitstream.from_bytes(data, base=tuning)
    bank = None
    if args.codebooks:
        bank = ex.load_bank(args.codebooks, stream.config.allocation,
                            ex.QUANTIZER_NAMES[args.quantizer])
    signal = decode(stream, bank)
    out = args.out or os.path.splitext(args.input)[0] + ".decoded.wav"
    write_pcm(signal, out)
    print(f"wrote {out}: {len(signal)} samples")
    return 0


def cmd_train_codebooks(args) -> int:
    corpus = load_corpus(args.corpus, args.sample_rate)
    out = args.out or "codebooks"
    written = ex.train_codebooks(corpus, args.frame_len, args.bits, out,
                                 train=_train_config(args), clip_fraction=args.clip_fraction,
                                 bins=args.bins)
    print(f"wrote {written['histograms']} and {len(written['banks'])} codebook files to {out}")
    return 0


def cmd_sweep(args) -> int:
    grid = ex.ExperimentGrid.load(args.grid)
    grid.seed = args.seed if args.seed else grid.seed
    grid.train = TrainConfig(epochs=grid.train.epochs, learn_rate=grid.train.learn_rate,
                             init_scale=grid.train.init_scale, seed=grid.seed)
    grid.sample_rate_hz = args.sample_rate
    if args.corpus:
        grid.corpus = args.corpus
    if args.train_corpus:
        grid.train_corpus = args.train_corpus
    if args.codebooks:
        grid.codebooks = args.codebooks
    if not grid.corpus:
        raise CliError("no evaluation corpus: set 'corpus' in the grid or pass --corpus")
    out = args.out or grid.output
    rows = ex.sweep(grid, workers=args.workers, timing=args.timing)
    if out:
        ex.write_rows(rows, out)
    else:
        ex.write_rows(rows, sys.stdout)
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} grid points, {failed} failed" + (f"; wrote {out}" if out else ""),
          file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    rows = ex.read_rows(args.results)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.results)), "report")
    written = ex.report(rows, out)
    print(f"wrote {len(written)} pivot files to {out}")
    return 0


COMMANDS = {"encode": cmd_encode, "decode": cmd_decode, "train-codebooks": cmd_train_codebooks,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"nladpcm {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
