"""Fetch MovieLens-100K as a movielens-csv file.

The public GroupLens host is often unreachable from build sandboxes, but the
RecBole wheel on PyPI ships the same 100K ratings as an atomic ``.inter``
file. This downloads that wheel (no install) and converts the ratings.

    python scripts/fetch_ml100k.py [DEST_DIR]
"""

import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL_SPEC = "recbole==1.2.1"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"
DEFAULT_DEST = Path.home() / ".cache" / "pprec" / "ml-100k"


def fetch(dest=DEFAULT_DEST):
    dest = Path(dest)
    out = dest / "ratings.csv"
    if out.exists():
        return out
    dest.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, WHEEL_SPEC],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        text = zipfile.ZipFile(wheel).read(MEMBER).decode("utf-8")
    lines = text.splitlines()
    part = out.with_suffix(".part")
    with open(part, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("userId,movieId,rating,timestamp\n")
        for line in lines[1:]:
            if line.strip():
                fh.write(",".join(line.split("\t")) + "\n")
    part.replace(out)
    return out


if __name__ == "__main__":
    print(fetch(sys.argv[1] if len(sys.argv) > 1 else DEFAULT_DEST))
