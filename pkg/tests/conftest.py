import numpy as np
import pytest

from moesumm import Example, desk_config, init_params


@pytest.fixture
def tiny_config():
    """Smallest config that still exercises every code path."""
    return desk_config(vocab_size=16, d_model=8, n_heads=2, n_layers=1,
                       d_hidden_main=12, d_hidden_deputy=6, n_deputies=2,
                       n_datasets=2, max_src_len=6, max_tgt_len=5)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, 3)


@pytest.fixture
def tiny_example():
    return Example([5, 6, 7], [1, 8, 9, 2], 0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
