"""Finite-difference checks for every differentiable primitive and the full loss."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .data import load_dataset
from .model import MPNPModel
from .nn import GRUCell
from .objective import pair_loss

FIXTURE_PACKAGE = "mpnp_ddi.fixtures"


def fixture_paths():
    """(drugs, pairs) paths of the tiny shipped dataset."""
    root = resources.files(FIXTURE_PACKAGE)
    return root / "drugs.tsv", root / "pairs.tsv"


@dataclass
class CheckResult:
    name: str
    report: ad.GradCheckReport

    @property
    def passed(self):
        return self.report.passed


def _weighted_sum(out, weights):
    return ad.sum_(out * Tensor(weights))


def _primitive_cases(rng):
    """name -> (fn, inputs) for scalar-valued probes of each primitive."""
    def t(*shape, low=-1.0, high=1.0):
        return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)

    def away_from_zero(*shape):
        x = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        return Tensor(x, requires_grad=True)

    w23 = rng.normal(size=(2, 3))
    w3 = rng.normal(size=3)
    cases = {}

    def unary(name, op, x, w):
        cases[name] = (lambda a: _weighted_sum(op(a), w), [x])

    def binary(name, op, a, b, w):
        cases[name] = (lambda x, y: _weighted_sum(op(x, y), w), [a, b])

    binary("add", ad.add, t(2, 3), t(3), w23)
    binary("sub", ad.sub, t(2, 3), t(2, 1), w23)
    binary("mul", ad.mul, t(2, 3), t(2, 3), w23)
    binary("div", ad.div, t(2, 3), t(2, 3, low=0.5, high=2.0), w23)
    unary("scale", lambda a: ad.scale(a, -1.7), t(2, 3), w23)
    unary("sigmoid", ad.sigmoid, t(2, 3, low=-3, high=3), w23)
    unary("tanh", ad.tanh, t(2, 3, low=-2, high=2), w23)
    unary("exp", ad.exp, t(2, 3), w23)
    unary("log", ad.log, t(2, 3, low=0.3, high=3.0), w23)
    unary("square", ad.square, t(2, 3), w23)
    unary("softplus", ad.softplus, t(2, 3, low=-4, high=4), w23)
    unary("clamp", lambda a: ad.clamp(a, -0.5, 0.5),
          Tensor(np.array([[-0.9, -0.2, 0.1], [0.3, 0.8, -0.7]]), requires_grad=True), w23)
    binary("prelu", ad.prelu, away_from_zero(2, 3), Tensor(np.array([0.25]), requires_grad=True),
           w23)
    binary("matmul", ad.matmul, t(2, 4), t(4, 3), w23)
    binary("matmul_batched", ad.matmul, t(2, 3, 4), t(2, 4, 2), rng.normal(size=(2, 3, 2)))
    binary("matmul_weight", ad.matmul, t(2, 3, 4), t(4, 2), rng.normal(size=(2, 3, 2)))
    unary("transpose", ad.transpose, t(3, 2), w23)
    unary("reshape", lambda a: ad.reshape(a, (2, 3)), t(3, 2), w23)
    unary("getitem", lambda a: a[1:, ::2], t(3, 5), w23)
    binary("concat", lambda a, b: ad.concat([a, b], axis=1), t(2, 1), t(2, 2), w23)
    unary("sum", lambda a: ad.sum_(a, axis=0), t(2, 3), w3)
    unary("mean", lambda a: ad.mean(a, axis=0), t(2, 3), w3)
    unary("softmax", lambda a: ad.softmax(a, axis=1), t(2, 3, low=-2, high=2), w23)
    unary("gather", lambda a: ad.gather(a, np.array([2, 0, 2, 1])), t(3, 2),
          rng.normal(size=(4, 2)))
    unary("scatter_sum", lambda a: ad.scatter_sum(a, np.array([1, 0, 1, 1]), 2), t(4, 3),
          w23)
    unary("segment_softmax",
          lambda a: ad.segment_softmax(a, np.array([0, 0, 1, 1, 1]), 2), t(5, low=-2, high=2),
          rng.normal(size=5))

    w43 = rng.normal(size=(4, 3))

    def bn(x, gamma, beta):
        # fresh state each call so perturbed evaluations never see each other's statistics
        out = ad.batch_norm(x, gamma, beta, ad.BatchNormState.create(3), training=True)
        return _weighted_sum(out, w43)
    cases["batch_norm"] = (bn, [t(4, 3), t(3, low=0.5, high=1.5), t(3)])

    gru = GRUCell(rng, 3)
    cases["gru_cell"] = (
        lambda x, h, wi, wh, bi, bh: _weighted_sum(gru(x, h), w23),
        [t(2, 3), t(2, 3), gru.w_input, gru.w_hidden, gru.b_input, gru.b_hidden],
    )
    return cases


def primitive_checks(seed=0, step=1e-5, tolerance=1e-4):
    rng = np.random.default_rng(seed)
    return [
        CheckResult(name, ad.check_gradients(fn, inputs, step, tolerance))
        for name, (fn, inputs) in _primitive_cases(rng).items()
    ]


def full_loss_check(graphs_i, graphs_j, relations, labels, hidden_dim=4, seed=0, step=1e-5,
                    tolerance=1e-4, config=None):
    """Gradient check of the composite training loss w.r.t. every model parameter.

    Latent noise is drawn once and held fixed; batch norm runs on batch
    statistics without touching its running averages.
    """
    config = config or TrainConfig(hidden_dim=hidden_dim, seed=seed)
    model = MPNPModel(max(relations) + 1, config)
    noise = np.random.default_rng(seed + 1).standard_normal(
        (2 * len(graphs_i), config.num_blocks, config.hidden_dim))
    named = list(model.named_parameters())

    def loss(*_params):
        out = model.forward(graphs_i, graphs_j, relations, training=True, noise=noise,
                            update_stats=False)
        return pair_loss(out, labels, config.lambda_unc, config.lambda_kl).total

    return CheckResult("full_loss", ad.check_gradients(loss, [p for _, p in named], step,
                                                       tolerance))


def fixture_loss_check(**kwargs):
    bundle = load_dataset(*fixture_paths())
    gi = [bundle.graphs[a] for a, _, _, _ in bundle.pairs]
    gj = [bundle.graphs[b] for _, b, _, _ in bundle.pairs]
    rel = [r for _, _, r, _ in bundle.pairs]
    lab = [y for _, _, _, y in bundle.pairs]
    return full_loss_check(gi, gj, rel, lab, **kwargs)


def run_suite(seed=0, step=1e-5, tolerance=1e-4):
    return primitive_checks(seed, step, tolerance) + [
        fixture_loss_check(seed=seed, step=step, tolerance=tolerance)
    ]
