"""Shared fixtures: small canonical instances used across the test modules."""

import numpy as np
import pytest

from bisecr.simulate import grid_array
from bisecr.types import FEMALE, MALE, UNKNOWN, CaptureData, RowKind, StateSpace, TrapArray


@pytest.fixture
def example_capture_data():
    """The worked 3-trap, 4-occasion survey: two anchored individuals plus a
    left-only and a right-only history that could be the same animal."""
    K, J = 3, 4
    left = np.zeros((4, K, J), dtype=np.uint8)
    right = np.zeros((4, K, J), dtype=np.uint8)
    # individual 1: simultaneous at (trap 0, occ 1)
    left[0, 0, 1] = 1
    left[0, 2, 0] = 1
    right[0, 0, 0] = 1
    right[0, 0, 1] = 1
    right[0, 1, 1] = 1
    right[0, 1, 2] = 1
    right[0, 2, 1] = 1
    # individual 2: simultaneous at (trap 0, occ 3)
    left[1, 0, 3] = 1
    left[1, 1, 0] = 1
    left[1, 1, 3] = 1
    left[1, 2, 1] = 1
    right[1, 0, 0] = 1
    right[1, 0, 1] = 1
    right[1, 0, 3] = 1
    right[1, 2, 0] = 1
    right[1, 2, 2] = 1
    # left-only history
    left[2, 0, 1] = 1
    left[2, 0, 3] = 1
    left[2, 1, 0] = 1
    left[2, 1, 2] = 1
    left[2, 2, 3] = 1
    # right-only history, disjoint trap-occasion cells from the left-only one
    right[3, 0, 0] = 1
    right[3, 0, 2] = 1
    right[3, 1, 1] = 1
    right[3, 2, 0] = 1
    right[3, 2, 2] = 1
    return CaptureData(
        J=J, left=left, right=right,
        row_kind=np.array([RowKind.FULL, RowKind.FULL,
                           RowKind.LEFT_ONLY, RowKind.RIGHT_ONLY], dtype=np.int8),
        sex=np.array([MALE, FEMALE, UNKNOWN, UNKNOWN], dtype=np.int8),
    )


@pytest.fixture
def example_traps():
    coords = np.array([[0.5, 0.5], [1.0, 0.5], [1.5, 0.5]])
    return TrapArray(coords=coords)


@pytest.fixture
def example_space():
    return StateSpace(0.0, 2.0, 0.0, 1.0)


@pytest.fixture
def small_grid():
    """A 2 x 2 station grid in a compact space, for fast simulations."""
    return grid_array(2, 2, 1.0, 1.0, 0.5)
