"""Randomized finite-difference cases for every differentiable operation.

Each case factory takes a numpy Generator and returns ``(fn, arrays, wrt)``:
``fn`` maps float64 Tensors to an output Tensor, ``arrays`` are the inputs
and ``wrt`` lists which of them to differentiate.
"""

from __future__ import annotations

import numpy as np

from oracles import central_difference, relative_error
from pcgscreen import autodiff as ad
from pcgscreen.model import InceptionModuleConfig, NetworkConfig, build_network

STEP = 1e-3


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    # values spread over [-1, 1] at least 2/n apart, so maxima stay unique under +-STEP
    n = int(np.prod(shape))
    return (rng.permutation(n) / max(n - 1, 1) * 2 - 1).reshape(shape)


def case_conv1d(rng):
    B, C, O = rng.integers(1, 4, size=3)
    K = int(rng.integers(1, 7))
    L = int(rng.integers(K, 13))
    arrays = [rng.uniform(-1, 1, (B, C, L)), rng.uniform(-1, 1, (O, C, K)), rng.uniform(-1, 1, O)]
    return (lambda x, w, b: ad.conv1d(x, w, b)), arrays, [0, 1, 2]


def case_maxpool1d(rng):
    B, C = rng.integers(1, 3, size=2)
    L = int(rng.integers(2, 12))
    window = int(rng.integers(1, 6))
    return (lambda x: ad.maxpool1d(x, window)), [_distinct(rng, (B, C, L))], [0]


def case_global_avg_pool(rng):
    B, C = rng.integers(1, 4, size=2)
    L = int(rng.integers(1, 10))
    return ad.global_avg_pool, [rng.uniform(-1, 1, (B, C, L))], [0]


def _bn_case(rng, training):
    C = int(rng.integers(1, 4))
    shape = (int(rng.integers(2, 4)), C, int(rng.integers(2, 7))) if rng.random() < 0.7 else (
        int(rng.integers(3, 6)), C)
    rm = rng.uniform(-0.5, 0.5, C)
    rv = rng.uniform(0.5, 1.5, C)

    def fn(x, gamma, beta):
        return ad.batchnorm1d(x, gamma, beta, rm.copy(), rv.copy(), training)

    arrays = [rng.uniform(-1, 1, shape), rng.uniform(0.5, 1.5, C), rng.uniform(-1, 1, C)]
    return fn, arrays, [0, 1, 2]


def case_batchnorm_train(rng):
    return _bn_case(rng, True)


def case_batchnorm_eval(rng):
    return _bn_case(rng, False)


def case_dense(rng):
    B, F, K = rng.integers(1, 5, size=3)
    arrays = [rng.uniform(-1, 1, (B, F)), rng.uniform(-1, 1, (F, K)), rng.uniform(-1, 1, K)]
    return ad.dense, arrays, [0, 1, 2]


def case_relu(rng):
    shape = tuple(rng.integers(1, 5, size=int(rng.integers(2, 4))))
    return ad.relu, [_away_from_zero(rng, shape)], [0]


def case_sigmoid(rng):
    shape = tuple(rng.integers(1, 5, size=2))
    return ad.sigmoid, [rng.uniform(-3, 3, shape)], [0]


def case_softmax(rng):
    shape = tuple(rng.integers(1, 5, size=2))
    return ad.softmax, [rng.uniform(-2, 2, shape)], [0]


def case_concat_channels(rng):
    B, L = rng.integers(1, 4, size=2)
    parts = [rng.uniform(-1, 1, (B, int(rng.integers(1, 4)), L)) for _ in range(int(rng.integers(2, 4)))]
    return (lambda *ts: ad.concat_channels(ts)), parts, list(range(len(parts)))


def case_add(rng):
    shape = tuple(rng.integers(1, 5, size=3))
    return ad.add, [rng.uniform(-1, 1, shape), rng.uniform(-1, 1, shape)], [0, 1]


def case_binary_to_two_class(rng):
    B = int(rng.integers(1, 6))
    return ad.binary_to_two_class, [rng.uniform(0.05, 0.95, (B, 1))], [0]


def case_weighted_cce_softmax(rng):
    B, K = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    targets = np.eye(K)[rng.integers(0, K, size=B)]
    weights = rng.uniform(0.2, 3.0, K)
    fn = lambda z: ad.weighted_cce(ad.softmax(z), targets, weights)  # noqa: E731
    return fn, [rng.uniform(-2, 2, (B, K))], [0]


def case_weighted_cce_sigmoid(rng):
    B = int(rng.integers(1, 6))
    targets = np.eye(2)[rng.integers(0, 2, size=B)]
    weights = rng.uniform(0.2, 3.0, 2)
    fn = lambda z: ad.weighted_cce(ad.binary_to_two_class(ad.sigmoid(z)), targets, weights)  # noqa: E731
    return fn, [rng.uniform(-2, 2, (B, 1))], [0]


OP_CASES = {
    "conv1d": case_conv1d,
    "maxpool1d": case_maxpool1d,
    "global_avg_pool": case_global_avg_pool,
    "batchnorm1d_train": case_batchnorm_train,
    "batchnorm1d_eval": case_batchnorm_eval,
    "dense": case_dense,
    "relu": case_relu,
    "sigmoid": case_sigmoid,
    "softmax": case_softmax,
    "concat_channels": case_concat_channels,
    "add": case_add,
    "binary_to_two_class": case_binary_to_two_class,
    "weighted_cce_softmax": case_weighted_cce_softmax,
    "weighted_cce_sigmoid": case_weighted_cce_sigmoid,
}


def max_case_error(fn, arrays, wrt, rng, step=STEP) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [ad.Tensor(a.copy(), requires_grad=i in wrt) for i, a in enumerate(arrays)]
    out = fn(*tensors)
    seed = rng.uniform(-1, 1, out.shape) if out.data.size > 1 else np.ones(out.shape)
    out.backward(seed)

    def objective(arrs):
        with ad.no_grad():
            res = fn(*[ad.Tensor(a) for a in arrs])
        return float(np.sum(res.data * seed))

    worst = 0.0
    for i in wrt:
        numeric = central_difference(objective, arrays, i, step)
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def op_errors(name: str, n_shapes: int = 20, seed: int = 0) -> list[float]:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_shapes):
        fn, arrays, wrt = OP_CASES[name](rng)
        errs.append(max_case_error(fn, arrays, wrt, rng))
    return errs


# ReLU and max-pool kinks sit close to random activations; a 1e-3 step crosses
# some of them, so the whole-network check uses a smaller step in float64.
NETWORK_STEP = 1e-6


def toy_network_error(seed: int = 0, step: float = NETWORK_STEP) -> float:
    """Relative error of the full parameter gradient of a depth-2 network with a shortcut."""
    cfg = NetworkConfig(
        depth=2,
        residual_period=2,
        module=InceptionModuleConfig(bottleneck_channels=2, kernel_sizes=(2, 3, 5), filters_per_branch=2),
        input_length=16,
    )
    model = build_network(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(-1, 1, (3, 1, cfg.input_length))
    targets = np.eye(2)[[0, 1, 1]]
    weights = np.array([0.8, 1.3])

    def loss():
        return ad.weighted_cce(model.forward(x, training=True), targets, weights)

    model.zero_grad()
    loss().backward()
    names = list(model.params)
    analytic = np.concatenate([model.params[n].grad.ravel() for n in names])

    numeric = []
    for n in names:
        p = model.params[n].data
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with ad.no_grad():
                fp = float(loss().data)
            flat[i] = orig - step
            with ad.no_grad():
                fm = float(loss().data)
            flat[i] = orig
            numeric.append((fp - fm) / (2 * step))
    return relative_error(analytic, np.array(numeric))
