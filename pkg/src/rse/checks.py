"""Named finite-difference gradient suites over every differentiable op.

Shared by the command line and the test suite. Each suite builds small
double-precision instances at seeded random points and reports the worst
relative error from `autodiff.gradcheck`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import units
from .autodiff import Tensor, ValidationError, gradcheck
from .network import ModelConfig, build_model, rse_forward
from .shuffle import shuffle_permutation


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _weighted(rng, shape):
    """Random linear functional; avoids symmetric cancellations in sums."""
    w = rng.standard_normal(shape)
    return lambda y: ad.sum_all(ad.mul(y, Tensor(w)))


def check_affine(rng):
    x, w, b = _t(rng, 3, 5), _t(rng, 5, 4), _t(rng, 4)
    probe = _weighted(rng, (3, 4))
    return gradcheck(lambda x, w, b: probe(ad.affine(x, w, b)), [x, w, b])


def check_layernorm(rng):
    x = _t(rng, 4, 6)
    probe = _weighted(rng, (4, 6))
    return gradcheck(lambda x: probe(ad.layernorm_nogain(x)), [x])


def check_gelu(rng):
    x = _t(rng, 5, 3)
    probe = _weighted(rng, (5, 3))
    return gradcheck(lambda x: probe(ad.gelu(x)), [x])


def check_relu(rng):
    x = Tensor(rng.standard_normal((5, 3)) + 0.5, requires_grad=True)  # keep off the kink
    probe = _weighted(rng, (5, 3))
    return gradcheck(lambda x: probe(ad.relu(x)), [x])


def check_sigmoid(rng):
    x = _t(rng, 7)
    probe = _weighted(rng, (7,))
    return gradcheck(lambda x: probe(ad.sigmoid(x)), [x])


def check_tanh(rng):
    x = _t(rng, 7)
    probe = _weighted(rng, (7,))
    return gradcheck(lambda x: probe(ad.tanh(x)), [x])


def check_permute(rng):
    x = _t(rng, 8, 3)
    perm = shuffle_permutation(3)
    probe = _weighted(rng, (8, 3))
    return gradcheck(lambda x: probe(ad.permute_seq(x, perm)), [x])


def check_conv1d(rng):
    x, k, b = _t(rng, 8, 2), _t(rng, 4, 2, 3), _t(rng, 3)
    probe = _weighted(rng, (4, 3))
    return gradcheck(lambda x, k, b: probe(ad.conv1d_strided(x, k, 2, b)), [x, k, b])


def check_softmax_xent(rng):
    z = _t(rng, 6, 4)
    labels = rng.integers(0, 4, size=6)
    mask = np.ones(6)
    mask[rng.integers(0, 6)] = 0.0
    return gradcheck(lambda z: ad.softmax_xent(z, labels, mask), [z])


def check_embedding(rng):
    table = _t(rng, 5, 3)
    ids = rng.integers(0, 5, size=(2, 4))
    probe = _weighted(rng, (2, 4, 3))
    return gradcheck(lambda t: probe(ad.embedding_lookup(t, ids)), [table])


def check_swap_half(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    pa = _weighted(rng, (3, 4))
    pb = _weighted(rng, (3, 4))

    def f(a, b):
        x, y = units.swap_half(a, b)
        return ad.add(pa(x), pb(y))

    return gradcheck(f, [a, b])


def check_rsu(rng):
    params = units.rsu_init(m=3, rng=rng, dtype=np.float64)
    pairs = _t(rng, 4, 6)
    probe = _weighted(rng, (4, 6))
    tensors = [pairs, params.Z, params.W, params.B, params.S]
    return gradcheck(lambda p, *_: probe(units.rsu_forward(params, p)), tensors)


def check_gated_su(rng):
    params = units.gated_su_init(m=2, rng=rng, dtype=np.float64)
    pairs = _t(rng, 3, 4)
    probe = _weighted(rng, (3, 4))
    tensors = [pairs] + [t for _, t in params.named_tensors()]
    return gradcheck(lambda p, *_: probe(units.gated_su_forward(params, p)), tensors)


def check_model(rng, n=8, m=4):
    """Full forward/backward through a tiny token model."""
    cfg = ModelConfig(m=m, blocks=1, n_max=n, vocab=4, classes=4)
    model = build_model(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    tokens = rng.integers(0, 4, size=n)
    labels = rng.integers(0, 4, size=n)
    mask = np.ones(n)
    tensors = [t for _, t in model.named_parameters()]

    def f(*_):
        return ad.softmax_xent(rse_forward(model, tokens), labels, mask)

    return gradcheck(f, tensors)


def check_conv_frontend(rng):
    cfg = ModelConfig(m=4, blocks=1, n_max=16, vocab=0, classes=3, conv_layers=2)
    model = build_model(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    x = Tensor(rng.standard_normal((16, 1)), requires_grad=True)
    labels = rng.integers(0, 3, size=4)
    mask = np.ones(4)
    tensors = [x] + [t for _, t in model.named_parameters()]

    def f(*_):
        return ad.softmax_xent(rse_forward(model, x), labels, mask)

    return gradcheck(f, tensors)


OP_SUITES = {
    "affine": check_affine,
    "layernorm": check_layernorm,
    "gelu": check_gelu,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "tanh": check_tanh,
    "permute": check_permute,
    "conv1d": check_conv1d,
    "softmax_xent": check_softmax_xent,
    "embedding": check_embedding,
    "swap_half": check_swap_half,
    "rsu": check_rsu,
    "gated_su": check_gated_su,
    "conv_frontend": check_conv_frontend,
    "model": check_model,
}


def run_suite(name, points=10, seed=0):
    """Worst gradcheck error over `points` random instances of one suite."""
    if name not in OP_SUITES:
        raise ValidationError(f"unknown gradcheck suite {name!r}")
    fn = OP_SUITES[name]
    if name in ("model", "conv_frontend"):
        points = min(points, 2)  # whole-model checks are slow
    worst = 0.0
    for i in range(points):
        rng = np.random.default_rng((seed, i))
        worst = max(worst, fn(rng))
    return worst
