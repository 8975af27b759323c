from __future__ import annotations

import os

import numpy as np
import pytest

from se2lab.core import DiffusionParams, GridSpec

os.environ.setdefault("SE2LAB_THREADS", str(os.cpu_count() or 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grid():
    return GridSpec(P=10, Q=10, R=6)


@pytest.fixture
def enh_params():
    return DiffusionParams.enhancement(D11=1.0, D33=0.05, alpha=0.05, s=0.5)


@pytest.fixture
def com_params():
    return DiffusionParams.completion(D33=0.08, alpha=0.05, s=0.5)
