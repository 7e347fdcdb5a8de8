import os
from pathlib import Path

import pytest

DATA_DIR = Path(os.environ.get("VCLAB_DATA_DIR", Path(__file__).resolve().parent.parent / "data"))


def mnist_available() -> bool:
    return any((DATA_DIR / sub / "train-images-idx3-ubyte").exists()
               or (DATA_DIR / sub / "train-images-idx3-ubyte.gz").exists()
               for sub in ("", "mnist", "MNIST/raw"))


def cifar_available() -> bool:
    return any((DATA_DIR / sub / "data_batch_1.bin").exists()
               for sub in ("", "cifar-10-batches-bin", "cifar10"))


requires_mnist = pytest.mark.skipif(
    not mnist_available(),
    reason=f"MNIST IDX files not found under {DATA_DIR} (run scripts/fetch_data.py)")

requires_cifar = pytest.mark.skipif(
    not cifar_available(),
    reason=f"CIFAR-10 binary batches not found under {DATA_DIR} (run scripts/fetch_data.py)")


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" and report.outcome in ("passed", "failed"):
        print(f"\n[acceptance] {report.nodeid.split('::')[-1]}: {report.outcome.upper()}")
    elif report.when == "setup" and report.outcome == "skipped":
        print(f"\n[acceptance] {report.nodeid.split('::')[-1]}: SKIPPED")
