#!/usr/bin/env python3
"""Download the MNIST IDX files and the CIFAR-10 binary batches.

Usage:
    python scripts/fetch_data.py [--dest DIR] [--dataset mnist|cifar10|all]

Files land in DIR (default: $WTFREE_DATA_DIR or ./data) under the names the
package's loaders look for.  MNIST files are kept gzip-compressed; the
loaders read .gz transparently.  Each download is verified by actually
loading it before the script reports success.
"""

import argparse
import os
import shutil
import sys
import tarfile
import tempfile
import urllib.error
import urllib.request

MNIST_MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist",
    "https://storage.googleapis.com/cvdf-datasets/mnist",
    "http://yann.lecun.com/exdb/mnist",
)
MNIST_NAMES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR_NAMES = tuple(f"data_batch_{i}.bin" for i in range(1, 6)) + ("test_batch.bin",)


def download(url: str, dest: str) -> bool:
    try:
        print(f"  {url}")
        with urllib.request.urlopen(url, timeout=60) as response:
            with tempfile.NamedTemporaryFile(delete=False, dir=os.path.dirname(dest)) as tmp:
                shutil.copyfileobj(response, tmp)
        os.replace(tmp.name, dest)
        return True
    except (urllib.error.URLError, OSError) as e:
        print(f"    failed: {e}")
        return False


def fetch_mnist(dest_dir: str) -> bool:
    ok = True
    for name in MNIST_NAMES:
        target = os.path.join(dest_dir, name)
        if os.path.exists(target):
            print(f"already present: {target}")
            continue
        if not any(download(f"{mirror}/{name}", target) for mirror in MNIST_MIRRORS):
            print(f"could not fetch {name} from any mirror", file=sys.stderr)
            ok = False
    return ok


def fetch_cifar10(dest_dir: str) -> bool:
    if all(os.path.exists(os.path.join(dest_dir, n)) for n in CIFAR_NAMES):
        print("cifar10 batches already present")
        return True
    archive = os.path.join(dest_dir, "cifar-10-binary.tar.gz")
    if not os.path.exists(archive) and not download(CIFAR_URL, archive):
        return False
    with tarfile.open(archive) as tar:
        for member in tar.getmembers():
            base = os.path.basename(member.name)
            if base in CIFAR_NAMES:
                member.name = base  # flatten the cifar-10-batches-bin/ prefix
                tar.extract(member, dest_dir)
                print(f"extracted {base}")
    return True


def verify(dest_dir: str, dataset: str) -> bool:
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
    from wtfree.data import load_named_dataset
    from wtfree.errors import DataFormatError

    ok = True
    for split in ("train", "test"):
        try:
            ds = load_named_dataset(dataset, split, data_dir=dest_dir)
            print(f"verified {dataset} {split}: {len(ds)} images of {ds.input_shape}")
        except DataFormatError as e:
            print(f"verification failed for {dataset} {split}: {e}", file=sys.stderr)
            ok = False
    return ok


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default=os.environ.get("WTFREE_DATA_DIR", "data"))
    parser.add_argument("--dataset", choices=("mnist", "cifar10", "all"), default="all")
    args = parser.parse_args()

    os.makedirs(args.dest, exist_ok=True)
    ok = True
    if args.dataset in ("mnist", "all"):
        ok = fetch_mnist(args.dest) and verify(args.dest, "mnist") and ok
    if args.dataset in ("cifar10", "all"):
        ok = fetch_cifar10(args.dest) and verify(args.dest, "cifar10") and ok
    if ok:
        print(f"\ndone; point WTFREE_DATA_DIR at {os.path.abspath(args.dest)}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
