"""Bundled data: the 12-image synthetic evaluation corpus."""

from importlib import resources
from pathlib import Path


def corpus_dir() -> Path:
    return Path(str(resources.files(__package__).joinpath("corpus")))


def corpus_manifest_path() -> Path:
    return corpus_dir() / "manifest.csv"
