import numpy as np
import pytest

from prfl.model import Dataset, ParamVector, TrainSpec, init_model, mlp_shapes


@pytest.fixture
def tiny_shapes():
    # 3 -> 4 -> 2 network, 26 parameters
    return mlp_shapes([3, 4, 2])


@pytest.fixture
def tiny_model(tiny_shapes):
    return init_model(tiny_shapes, seed=7)


@pytest.fixture
def tiny_data():
    rng = np.random.default_rng(11)
    feats = rng.normal(size=(40, 3))
    labels = (feats[:, 0] > 0).astype(np.int64)
    return Dataset(feats, labels, num_classes=2)


@pytest.fixture
def quick_spec():
    return TrainSpec(learning_rate_schedule=lambda r: 0.1,
                     batch_size=8, local_iterations=3)


def pv(values, shapes=None):
    """Shorthand: a ParamVector over one flat layer."""
    arr = np.asarray(values, dtype=np.float64)
    return ParamVector(arr, shapes or ((arr.size,),))
