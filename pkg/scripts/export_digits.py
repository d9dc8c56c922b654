"""Regenerate data/digits_8x8.csv from scikit-learn's bundled copy of the
UCI optical handwritten digits set (1797 samples of 8x8 images, pixel
values 0..16, labels 0..9).

The CSV this writes is committed to the repository so the package has no
runtime dependency on scikit-learn; rerun this script only to rebuild the
file from scratch.  Format: one sample per line, 64 integer pixels
(row-major) then the label, comma-separated, LF line endings.

Usage: python scripts/export_digits.py [output-path]
"""

from __future__ import annotations

import sys
from pathlib import Path

from sklearn.datasets import load_digits


def main() -> None:
    out_path = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parent.parent / "data" / "digits_8x8.csv"
    )
    bunch = load_digits()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="ascii", newline="\n") as handle:
        for pixels, label in zip(bunch.data, bunch.target):
            fields = [str(int(p)) for p in pixels] + [str(int(label))]
            handle.write(",".join(fields) + "\n")
    print(f"wrote {len(bunch.target)} samples to {out_path}")


if __name__ == "__main__":
    main()
