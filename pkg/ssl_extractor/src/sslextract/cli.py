"""Command line driver for batch embedding extraction.

Exit codes: 0 success, 1 usage errors (synopsis on stderr), 2 data or
model errors (message names the offending input when known).
"""

import argparse
import sys

from .extract import (
    BadAudio,
    ExtractSpec,
    MODELS,
    ModelUnavailable,
    N_LAYERS,
    extract,
    extract_all_layers,
)

SYNOPSIS = (
    "usage: ssl-extract --model M (--layer K | --all-layers) "
    "--wav-dir D --out PATH\n"
    "                   [--cmvn] [--speaker-meta TSV] [--device DEV] "
    "[--random-init] [--seed N]"
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _layer(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < N_LAYERS:
        raise argparse.ArgumentTypeError(
            f"layer must lie in [0, {N_LAYERS - 1}], got {value}")
    return value


def _build_parser():
    parser = _Parser(prog="ssl-extract", usage=SYNOPSIS,
                     description="extract layer-wise speech embeddings "
                                 "into FEA1 archives")
    parser.add_argument("--model", required=True, choices=sorted(MODELS),
                        help="pretrained encoder to use")
    which = parser.add_mutually_exclusive_group(required=True)
    which.add_argument("--layer", type=_layer,
                       help=f"hidden layer index in [0, {N_LAYERS - 1}]")
    which.add_argument("--all-layers", action="store_true",
                       help="write one archive per layer into --out")
    parser.add_argument("--wav-dir", required=True,
                        help="directory of input wav files")
    parser.add_argument("--out", required=True,
                        help="archive path, or directory with --all-layers")
    parser.add_argument("--cmvn", action="store_true",
                        help="mean/variance normalize before writing")
    parser.add_argument("--speaker-meta",
                        help="utt_id/speaker_id TSV: normalize per speaker")
    parser.add_argument("--device", default="cpu", help="torch device hint")
    parser.add_argument("--random-init", action="store_true",
                        help="random weights with the real architecture "
                             "(testing without checkpoint downloads)")
    parser.add_argument("--seed", type=int, default=0,
                        help="weight seed for --random-init")
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.speaker_meta and not args.cmvn:
            raise UsageError("--speaker-meta requires --cmvn")
    except UsageError as exc:
        print(SYNOPSIS, file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        spec = ExtractSpec(
            model_name=args.model, layer=args.layer, wav_dir=args.wav_dir,
            out=args.out, device=args.device, apply_cmvn=args.cmvn,
            speaker_meta=args.speaker_meta, random_init=args.random_init,
            seed=args.seed)
        if args.all_layers:
            for path in extract_all_layers(spec):
                print(f"wrote {path}")
        else:
            print(f"wrote {extract(spec)}")
    except (BadAudio, ModelUnavailable, OSError, ValueError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
