import numpy as np
import pytest

from privgrid import GridSpec, HouseholdDataset, HouseholdRecord


def random_dataset(rng, grid, n_households, max_reading=1.0):
    """Households at random cells with uniform readings in [0, max_reading]."""
    records = []
    for i in range(n_households):
        cell = (int(rng.integers(0, grid.c_x)), int(rng.integers(0, grid.c_y)))
        records.append(HouseholdRecord(f"h{i}", cell, rng.uniform(0, max_reading, grid.c_t)))
    return HouseholdDataset(grid, records)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
