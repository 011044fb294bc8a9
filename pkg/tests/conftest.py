import random

import pytest

from facegate.fixtures import (CORPUS_MIN_SIZE, build_corpus, corpus_cascade,
                               corpus_cascade_staged, fixture_cascade)
from facegate.imageio import GrayImage, RgbImage


@pytest.fixture(scope="session")
def center_surround():
    return fixture_cascade()


@pytest.fixture(scope="session")
def blob_cascade():
    return corpus_cascade()


@pytest.fixture(scope="session")
def blob_cascade_staged():
    return corpus_cascade_staged()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    build_corpus(out)
    return out


@pytest.fixture(scope="session")
def corpus_min_size():
    return CORPUS_MIN_SIZE


def random_gray(rng: random.Random, w: int, h: int) -> GrayImage:
    return GrayImage(w, h, bytes(rng.randrange(256) for _ in range(w * h)))


def random_rgb(rng: random.Random, w: int, h: int) -> RgbImage:
    return RgbImage(w, h, bytes(rng.randrange(256) for _ in range(w * h * 3)))
