"""Shared fixtures: the standard seed-42 model and its captured boundaries.

The expensive pieces (a 12-layer forward over 32x256 tokens) are
session-scoped so the whole suite pays for them once.
"""

import numpy as np
import pytest

from depthprune import CalibrationSet, MetricKind, forward_capture, init_model

STD_VOCAB = 256
STD_DIM = 64
STD_LAYERS = 12
STD_HEADS = 4
STD_SEED = 42
CALIB_SEED = 7


@pytest.fixture(scope="session")
def std_model():
    return init_model(STD_VOCAB, STD_DIM, STD_LAYERS, STD_HEADS, seed=STD_SEED)


@pytest.fixture(scope="session")
def std_calib():
    return CalibrationSet.random(32, 256, STD_VOCAB, seed=CALIB_SEED)


@pytest.fixture(scope="session")
def ppl_calib():
    return CalibrationSet.random(8, 256, STD_VOCAB, seed=CALIB_SEED + 1)


@pytest.fixture(scope="session")
def std_capture(std_model, std_calib):
    return forward_capture(std_model, std_calib)


@pytest.fixture(scope="session")
def std_boundaries(std_capture):
    return std_capture[0]


@pytest.fixture(scope="session")
def small_model():
    """Cheap 3-layer model for tests that only need plumbing."""
    return init_model(64, 16, 3, 2, seed=5, max_positions=128)


@pytest.fixture(scope="session")
def small_calib():
    return CalibrationSet.random(4, 16, 64, seed=11)


@pytest.fixture(scope="session")
def small_boundaries(small_model, small_calib):
    boundaries, _ = forward_capture(small_model, small_calib)
    return boundaries


@pytest.fixture(params=[MetricKind.MSSD, MetricKind.MASD], ids=["mssd", "masd"])
def metric_kind(request):
    return request.param
