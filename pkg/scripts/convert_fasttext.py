#!/usr/bin/env python3
"""Convert a published binary subword embedding model to the FTXT1 store.

    python scripts/convert_fasttext.py wiki.de.bin wiki.de.ftxt [--max-words N]

The output is the text store the engine loads (header
"FTXT1 dim min_n max_n bucket_count word_count", word vectors, bucket rows).
Full models produce multi-gigabyte text files; --max-words caps the word
list (bucket rows are always kept so OOV inference is unaffected).
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from gner.embeddings import convert_fasttext_bin, write_fasttext_store


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("bin_path")
    ap.add_argument("out_path")
    ap.add_argument("--max-words", type=int, help="keep only the N most frequent words")
    args = ap.parse_args()
    store = convert_fasttext_bin(args.bin_path, max_words=args.max_words)
    write_fasttext_store(store, args.out_path)
    print(f"wrote {args.out_path}: {len(store.word_vectors)} words, "
          f"{store.bucket_count} buckets, dim {store.dim}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
