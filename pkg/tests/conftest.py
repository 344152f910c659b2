"""Shared fixtures: one procedural backend and small sprite libraries."""

import pytest

from finegrain.backends import ProceduralBackend
from finegrain.core import COCO_CLASSES
from finegrain.synthesis import build_sprite_library


@pytest.fixture(scope="session")
def backend():
    return ProceduralBackend()


@pytest.fixture(scope="session")
def library(backend):
    # 16 categories keep planning fast while exercising category sampling.
    return build_sprite_library(backend, COCO_CLASSES[:16], per_category=1, seed=101)


@pytest.fixture(scope="session")
def full_library(backend):
    return build_sprite_library(backend, COCO_CLASSES, per_category=1, seed=101)
