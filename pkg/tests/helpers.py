import numpy as np

import tensor as T


def rand(rng, *shape, scale=1.0):
    return T.Tensor(rng.normal(size=shape) * scale)


def probe(rng, shape):
    """Fixed random weights that turn a tensor into a scalar for gradient checks."""
    weights = T.Tensor(rng.normal(size=shape))
    return lambda out: T.tensor_sum(out * weights)


def interior_flow(rng, h, w, limit=0.9):
    return T.Tensor(rng.uniform(-limit, limit, size=(3, h, w)))


def perturb_zero_tensors(params, rng, scale=0.05):
    """Give zero-initialised layers small random values, as after a few updates."""
    for _, t in params:
        if not np.any(t.data):
            t.data = rng.normal(size=t.shape) * scale
