#!/usr/bin/env python3
"""Download the benchmark datasets into data/ and verify checksums.

The library itself never touches the network; this script is the only
place downloads happen. Files land next to their schema files under
data/ with the names the schemas expect. Checksums live in
data/checksums.sha256 (sha256sum format); a download whose digest does
not match its recorded entry is deleted and reported.

Usage:
    python3 scripts/fetch_datasets.py [names...]   fetch (default: all)
    python3 scripts/fetch_datasets.py --record     refresh checksum entries
    python3 scripts/fetch_datasets.py --verify     check existing files only
"""

import argparse
import hashlib
import io
import pathlib
import sys
import tarfile
import urllib.error
import urllib.request

DATA_DIR = pathlib.Path(__file__).resolve().parent.parent / "data"
CHECKSUM_FILE = DATA_DIR / "checksums.sha256"

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"

# name -> (target file, list of source URLs, post-processing tag)
# Sources with several URLs are concatenated in order. An empty URL list
# marks a file that ships with the repository (verify-only).
SOURCES = {
    "iris": ("iris.csv", [], None),
    "abalone": ("abalone.csv", [f"{UCI}/abalone/abalone.data"], None),
    "cpu": ("cpu.csv", [f"{UCI}/cpu-performance/machine.data"], None),
    "delta_ailerons": (
        "delta_ailerons.csv",
        ["https://www.dcc.fc.up.pt/~ltorgo/Regression/delta_ailerons.tgz"],
        "tgz:delta_ailerons.data",
    ),
    "diabetes": (
        "diabetes.csv",
        [
            "https://raw.githubusercontent.com/jbrownlee/Datasets/master/"
            "pima-indians-diabetes.data.csv"
        ],
        None,
    ),
    "landsat": (
        "landsat.csv",
        [
            f"{UCI}/statlog/satimage/sat.trn",
            f"{UCI}/statlog/satimage/sat.tst",
        ],
        None,
    ),
}


def sha256_of(path: pathlib.Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_checksums() -> dict:
    table = {}
    if not CHECKSUM_FILE.exists():
        return table
    for line in CHECKSUM_FILE.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        digest, _, name = line.partition("  ")
        table[name.strip()] = digest.strip()
    return table


def save_checksums(table: dict) -> None:
    lines = [f"{digest}  {name}" for name, digest in sorted(table.items())]
    CHECKSUM_FILE.write_text("\n".join(lines) + "\n")


def download(url: str) -> bytes:
    request = urllib.request.Request(url, headers={"User-Agent": "fetch-datasets"})
    with urllib.request.urlopen(request, timeout=120) as response:
        return response.read()


def extract_tgz_member(blob: bytes, member_suffix: str) -> bytes:
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for member in tar.getmembers():
            if member.name.endswith(member_suffix):
                extracted = tar.extractfile(member)
                if extracted is None:
                    break
                return extracted.read()
    raise RuntimeError(f"archive has no member ending in {member_suffix!r}")


def fetch_one(name: str) -> pathlib.Path:
    target_name, urls, post = SOURCES[name]
    target = DATA_DIR / target_name
    parts = []
    for url in urls:
        print(f"  {url}")
        blob = download(url)
        if post and post.startswith("tgz:"):
            blob = extract_tgz_member(blob, post.split(":", 1)[1])
        parts.append(blob)
    body = b"".join(parts)
    if not body.endswith(b"\n"):
        body += b"\n"
    target.write_bytes(body)
    return target


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "names",
        nargs="*",
        help=f"datasets to fetch (default: all of {', '.join(SOURCES)})",
    )
    parser.add_argument(
        "--record",
        action="store_true",
        help="update checksum entries for the files now on disk",
    )
    parser.add_argument(
        "--verify",
        action="store_true",
        help="verify existing files against recorded checksums; no downloads",
    )
    args = parser.parse_args(argv)

    names = args.names or list(SOURCES)
    unknown = [n for n in names if n not in SOURCES]
    if unknown:
        print(f"unknown dataset(s): {', '.join(unknown)}", file=sys.stderr)
        return 2
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    table = load_checksums()

    if args.verify:
        bad = 0
        for name in names:
            target = DATA_DIR / SOURCES[name][0]
            if not target.exists():
                print(f"{name}: missing ({target})")
                bad += 1
                continue
            digest = sha256_of(target)
            want = table.get(target.name)
            if want is None:
                print(f"{name}: no recorded checksum for {target.name}")
                bad += 1
            elif digest != want:
                print(f"{name}: checksum mismatch for {target.name}")
                bad += 1
            else:
                print(f"{name}: ok")
        return 1 if bad else 0

    failures = 0
    for name in names:
        target = DATA_DIR / SOURCES[name][0]
        want = table.get(target.name)
        if not SOURCES[name][1]:
            if args.record and target.exists():
                table[target.name] = sha256_of(target)
                print(f"{name}: recorded checksum of repo file")
            else:
                print(f"{name}: ships with the repository; nothing to fetch")
            continue
        if target.exists() and not args.record:
            digest = sha256_of(target)
            if want == digest:
                print(f"{name}: already present and verified")
                continue
            if want is not None:
                print(f"{name}: on-disk file does not match its checksum; refetching")
        print(f"{name}:")
        try:
            target = fetch_one(name)
        except (urllib.error.URLError, OSError, RuntimeError) as exc:
            print(f"{name}: download failed: {exc}", file=sys.stderr)
            failures += 1
            continue
        digest = sha256_of(target)
        if args.record or want is None:
            table[target.name] = digest
            print(f"  recorded sha256 {digest[:16]}…")
        elif digest != want:
            target.unlink()
            print(
                f"{name}: checksum mismatch (expected {want[:16]}…, got "
                f"{digest[:16]}…); file removed",
                file=sys.stderr,
            )
            failures += 1
            continue
        print(f"  wrote {target}")
    save_checksums(table)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
