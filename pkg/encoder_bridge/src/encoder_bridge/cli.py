"""The ``encode`` command: two text files in, two AMIP stores out.

    encode --queries Q.txt --passages P.txt --model NAME --out DIR

writes DIR/queries.amip, DIR/keys.amip, and DIR/manifest.json. Exit codes:
0 ok, 1 usage, 2 anything wrong with the data or the encoder.
"""

import argparse
import sys

from .bridge import BridgeError, CorpusSpec, encode_corpus


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="encode",
                     description="Encode text corpora into AMIP embedding stores.")
    parser.add_argument("--queries", required=True, help="newline-delimited query file")
    parser.add_argument("--passages", required=True, help="newline-delimited passage file")
    parser.add_argument("--model", required=True,
                        help="encoder name; hashed-ngram* selects the built-in "
                             "offline encoder, anything else loads a "
                             "sentence-transformers model")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--out-dim", type=int, default=384,
                        help="expected embedding width (default 384)")
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    try:
        spec = CorpusSpec(queries_path=args.queries, passages_path=args.passages,
                          model_name=args.model, out_dim=args.out_dim)
        manifest = encode_corpus(spec, args.out, batch_size=args.batch_size,
                                 device=args.device)
    except (BridgeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {manifest['queries']['rows']} query rows and "
          f"{manifest['passages']['rows']} key rows (d={manifest['dim']}) "
          f"to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
