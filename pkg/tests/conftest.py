import pytest
import torch


@pytest.fixture(autouse=True)
def _deterministic():
    """Single-threaded, fixed-seed torch for every test."""
    torch.set_num_threads(1)
    torch.manual_seed(0)
