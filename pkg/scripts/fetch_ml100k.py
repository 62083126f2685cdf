"""Place MovieLens-100K ``u.data`` under ``data/ml-100k/``.

Tries the GroupLens archive first, then falls back to the copy bundled in the
``pytorch-widedeep`` wheel (same 100,000 rows, same columns).
"""
import argparse
import glob
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def from_grouplens(timeout=20):
    with urllib.request.urlopen(GROUPLENS_URL, timeout=timeout) as resp:
        payload = resp.read()
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        return zf.read("ml-100k/u.data")


def from_wheel():
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "pytorch-widedeep"],
            check=True,
        )
        wheel = glob.glob(f"{tmp}/pytorch_widedeep-*.whl")[0]
        with zipfile.ZipFile(wheel) as zf:
            frame = pd.read_parquet(io.BytesIO(zf.read(WHEEL_MEMBER)))
    cols = ["user_id", "movie_id", "rating", "timestamp"]
    lines = ("\t".join(str(v) for v in row) for row in frame[cols].itertuples(index=False))
    return ("\n".join(lines) + "\n").encode()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "ml-100k"))
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        payload = from_grouplens()
        print("fetched from grouplens")
    except Exception as exc:  # noqa: BLE001 - any network failure means fallback
        print(f"grouplens unavailable ({exc}); using pytorch-widedeep bundle")
        payload = from_wheel()
    (out / "u.data").write_bytes(payload)
    print(f"wrote {out / 'u.data'}")


if __name__ == "__main__":
    main()
