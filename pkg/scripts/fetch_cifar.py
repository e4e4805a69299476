"""Download and unpack the python-pickle CIFAR archives.

Usage: python scripts/fetch_cifar.py {cifar10,cifar100} ROOT

Afterwards point ``dataset.root`` at ROOT. Archives that are already
extracted are left alone.
"""
import argparse
import tarfile
import urllib.request
from pathlib import Path

ARCHIVES = {
    "cifar10": ("https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz", "cifar-10-batches-py"),
    "cifar100": ("https://www.cs.toronto.edu/~kriz/cifar-100-python.tar.gz", "cifar-100-python"),
}


def fetch(name: str, root: Path) -> Path:
    url, folder = ARCHIVES[name]
    root.mkdir(parents=True, exist_ok=True)
    if (root / folder).is_dir():
        return root / folder
    archive = root / url.rsplit("/", 1)[1]
    if not archive.exists():
        print(f"downloading {url}")
        urllib.request.urlretrieve(url, archive)
    with tarfile.open(archive) as tar:
        tar.extractall(root, filter="data") if hasattr(tarfile, "data_filter") else tar.extractall(root)
    return root / folder


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("name", choices=sorted(ARCHIVES))
    parser.add_argument("root", type=Path)
    args = parser.parse_args()
    print(fetch(args.name, args.root))


if __name__ == "__main__":
    main()
