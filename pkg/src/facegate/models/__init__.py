"""Bundled cascade model files."""

from importlib import resources

DEFAULT_CASCADE = "frontal-synth.xml"


def default_cascade_bytes() -> bytes:
    return resources.files(__package__).joinpath(DEFAULT_CASCADE).read_bytes()
