#!/usr/bin/env python3
"""Download MNIST (IDX) and CIFAR-10 (binary batches) into a data directory.

Network access required; the library itself never downloads anything.

Usage: python scripts/fetch_data.py [--data-dir data] [--skip-cifar]
"""

import argparse
import gzip
import shutil
import sys
import tarfile
import urllib.request
from pathlib import Path

MNIST_MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]
MNIST_FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


def download(url: str, dest: Path) -> None:
    print(f"fetching {url}")
    with urllib.request.urlopen(url) as response, open(dest, "wb") as fh:
        shutil.copyfileobj(response, fh)


def fetch_mnist(data_dir: Path) -> None:
    for name in MNIST_FILES:
        plain = data_dir / name[:-3]
        if plain.exists():
            print(f"{plain} already present")
            continue
        archive = data_dir / name
        last_error = None
        for mirror in MNIST_MIRRORS:
            try:
                download(mirror + name, archive)
                break
            except OSError as exc:
                last_error = exc
        else:
            raise SystemExit(f"could not fetch {name}: {last_error}")
        plain.write_bytes(gzip.decompress(archive.read_bytes()))
        archive.unlink()


def fetch_cifar(data_dir: Path) -> None:
    target = data_dir / "cifar-10-batches-bin"
    if (target / "data_batch_1.bin").exists():
        print(f"{target} already present")
        return
    archive = data_dir / "cifar-10-binary.tar.gz"
    if not archive.exists():
        download(CIFAR_URL, archive)
    with tarfile.open(archive) as tar:
        tar.extractall(data_dir)
    archive.unlink()


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="data")
    parser.add_argument("--skip-cifar", action="store_true")
    args = parser.parse_args()
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    fetch_mnist(data_dir)
    if not args.skip_cifar:
        fetch_cifar(data_dir)
    print("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
