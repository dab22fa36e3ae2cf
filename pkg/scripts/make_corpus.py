"""Write the bundled synthetic corpus to disk as PNGs plus a manifest.

    python3 scripts/make_corpus.py [out_dir] [--size N]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rfsr.corpus import materialize_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", nargs="?", default="data/corpus")
    parser.add_argument("--size", type=int, default=128)
    args = parser.parse_args()
    manifest = materialize_corpus(args.out_dir, size=args.size)
    print(f"wrote {manifest}")


if __name__ == "__main__":
    main()
