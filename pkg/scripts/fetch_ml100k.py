"""Write MovieLens 100K as ``ratings.csv`` (userId,movieId,rating,timestamp).

Tries the GroupLens zip first. When that host is unreachable, falls back to
the copy of ``u.data`` bundled (as parquet) in the ``pytorch-widedeep`` wheel,
which only needs a PyPI mirror. The wheel is downloaded, not installed.

    python scripts/fetch_ml100k.py [--out data/ml-100k/ratings.csv] [--wheel PATH]
"""

import argparse
import csv
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def _rows_from_grouplens():
    with urllib.request.urlopen(GROUPLENS_URL, timeout=20) as resp:
        blob = resp.read()
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        text = zf.read("ml-100k/u.data").decode("latin-1")
    for line in text.splitlines():
        if line.strip():
            yield line.split("\t")


def _read_wheel(wheel):
    import pandas as pd

    with zipfile.ZipFile(wheel) as zf:
        return pd.read_parquet(io.BytesIO(zf.read(WHEEL_MEMBER)))


def _rows_from_wheel(wheel=None):
    if wheel is not None:
        df = _read_wheel(wheel)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            subprocess.run(
                [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                 "-d", tmp, "pytorch-widedeep==1.7.0"],
                check=True,
            )
            df = _read_wheel(next(Path(tmp).glob("pytorch_widedeep-*.whl")))
    for row in df[["user_id", "movie_id", "rating", "timestamp"]].itertuples(index=False):
        yield [str(v) for v in row]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/ml-100k/ratings.csv")
    parser.add_argument("--wheel", type=Path, help="already-downloaded pytorch-widedeep wheel")
    args = parser.parse_args()

    if args.wheel is not None:
        rows = list(_rows_from_wheel(args.wheel))
        source = str(args.wheel)
    else:
        try:
            rows = list(_rows_from_grouplens())
            source = "grouplens"
        except OSError:
            rows = list(_rows_from_wheel())
            source = "pytorch-widedeep wheel"
    if len(rows) != 100_000:
        raise SystemExit(f"expected 100000 ratings, got {len(rows)}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["userId", "movieId", "rating", "timestamp"])
        for user, movie, rating, ts in rows:
            writer.writerow([user, movie, f"{float(rating):.1f}", ts])
    print(f"wrote {len(rows)} ratings to {out} (source: {source})")


if __name__ == "__main__":
    main()
