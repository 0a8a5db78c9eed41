"""Composite loss, AdamW, cosine schedule and the accumulation training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import MPNPModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# -- loss terms ------------------------------------------------------------
def bce_with_logits(mu, y):
    """Mean of max(mu,0) - y*mu + log(1 + exp(-|mu|))."""
    mu = ad.as_tensor(mu)
    y = Tensor(np.asarray(y, dtype=float).reshape(mu.shape))
    return ad.mean(ad.softplus(mu) - mu * y)


def uncertainty_loss(mu, s, y):
    """Mean of (sigmoid(mu) - y)^2 * exp(-s) + s."""
    mu, s = ad.as_tensor(mu), ad.as_tensor(s)
    y = Tensor(np.asarray(y, dtype=float).reshape(mu.shape))
    err2 = ad.square(ad.sigmoid(mu) - y)
    return ad.mean(err2 * ad.exp(-s) + s)


@dataclass
class LossBreakdown:
    pred: Tensor
    unc: Tensor
    kl: Tensor
    total: Tensor

    def values(self):
        return {k: getattr(self, k).item() for k in ("pred", "unc", "kl", "total")}


def total_loss(pred, unc, kl, lambda_unc, lambda_kl):
    pred, unc, kl = ad.as_tensor(pred), ad.as_tensor(unc), ad.as_tensor(kl)
    total = pred + ad.scale(unc, lambda_unc) + ad.scale(kl, lambda_kl)
    return LossBreakdown(pred, unc, kl, total)


def pair_loss(out, labels, lambda_unc, lambda_kl):
    """LossBreakdown for a PairOutputs batch; kl = mean(KL_i) + mean(KL_j)."""
    kl = ad.mean(out.kl_i) + ad.mean(out.kl_j)
    return total_loss(
        bce_with_logits(out.mu, labels), uncertainty_loss(out.mu, out.s, labels), kl,
        lambda_unc, lambda_kl,
    )


# -- optimizer -------------------------------------------------------------
@dataclass
class OptimizerState:
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 0.0


def adamw_step(params, grads, state, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
    """One AdamW update in place. ``params``/``grads`` map name -> array."""
    b1, b2 = betas
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    state.step += 1
    state.lr = lr
    t = state.step
    for name, theta in params.items():
        g = grads[name]
        if theta.shape != g.shape:
            raise ad.ShapeError("adamw_step", theta.shape, g.shape, detail=name)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(theta)
            v = state.second_moment[name] = np.zeros_like(theta)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        decay = lr * weight_decay * theta
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
        theta -= decay
    return state


def cosine_lr(step, total_steps, base_lr):
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# -- training loop ---------------------------------------------------------
@dataclass
class Example:
    graph_i: object
    graph_j: object
    relation: int
    label: int


@dataclass
class EpochLog:
    epoch: int
    pred: float
    unc: float
    kl: float
    total: float
    lr: float

    def row(self):
        return (f"{self.epoch}\t{self.pred:.10g}\t{self.unc:.10g}\t{self.kl:.10g}\t"
                f"{self.total:.10g}\t{self.lr:.10g}")


LOG_HEADER = "epoch\tpred\tunc\tkl\ttotal\tlr"


@dataclass
class FitResult:
    model: MPNPModel
    optimizer: OptimizerState
    history: list
    rng: np.random.Generator


def num_optimizer_steps(num_examples, config):
    batches = math.ceil(num_examples / config.batch_size)
    return config.epochs * math.ceil(batches / config.accumulation_steps)


def fit(dataset, config, num_relations=None, model=None, rng=None, log_path=None,
        callback=None):
    """Train on a list of ``Example``; returns a FitResult.

    Gradients of ``accumulation_steps`` consecutive batches are averaged
    before each optimizer step; a partial group at the end of an epoch is
    stepped on its own average.
    """
    config.validate()
    if not dataset:
        raise TrainingError("empty training set")
    if num_relations is None:
        num_relations = max(ex.relation for ex in dataset) + 1
    model = model or MPNPModel(num_relations, config)
    rng = rng or np.random.default_rng(config.seed + 1)
    named = dict(model.named_parameters())
    params = {k: p.data for k, p in named.items()}
    opt = OptimizerState(lr=config.learning_rate)
    total_steps = num_optimizer_steps(len(dataset), config)
    n_batches = math.ceil(len(dataset) / config.batch_size)
    history = []
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write(LOG_HEADER + "\n")

    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset)) if config.shuffle else np.arange(len(dataset))
        sums = np.zeros(4)
        accum = {k: np.zeros_like(v) for k, v in params.items()}
        n_accum = 0
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = [dataset[i] for i in idx]
            closes_group = (b + 1) % config.accumulation_steps == 0 or b == n_batches - 1
            model.zero_grad()
            out = model.forward(
                [ex.graph_i for ex in batch], [ex.graph_j for ex in batch],
                [ex.relation for ex in batch], training=True, rng=rng,
                update_stats=closes_group,
            )
            losses = pair_loss(out, [ex.label for ex in batch], config.lambda_unc,
                               config.lambda_kl)
            vals = losses.values()
            if not all(np.isfinite(v) for v in vals.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}: {vals}")
            losses.total.backward()
            sums += [vals["pred"], vals["unc"], vals["kl"], vals["total"]]
            for k, p in named.items():
                if p.grad is not None:
                    accum[k] += p.grad
            n_accum += 1
            if closes_group:
                lr = cosine_lr(opt.step, total_steps, config.learning_rate)
                grads = {k: g / n_accum for k, g in accum.items()}
                adamw_step(params, grads, opt, lr, config.weight_decay)
                for g in accum.values():
                    g[...] = 0.0
                n_accum = 0
        mean = sums / n_batches
        entry = EpochLog(epoch, *mean, opt.lr)
        history.append(entry)
        log.debug("epoch %d pred=%.4f unc=%.4f kl=%.4f total=%.4f", epoch, *mean)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(entry.row() + "\n")
        if callback is not None:
            callback(epoch, model)
    model.zero_grad()
    return FitResult(model, opt, history, rng)


def predict(model, examples, batch_size=64):
    """Evaluation-mode (mu, s) arrays for a list of examples."""
    mus, ss = [], []
    with ad.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            out = model.forward(
                [ex.graph_i for ex in chunk], [ex.graph_j for ex in chunk],
                [ex.relation for ex in chunk], training=False,
            )
            mus.append(out.mu.data.copy())
            ss.append(out.s.data.copy())
    return np.concatenate(mus), np.concatenate(ss)


def evaluation_loss(model, examples, config):
    """Evaluation-mode LossBreakdown values over the full example list."""
    with ad.no_grad():
        out = model.forward(
            [ex.graph_i for ex in examples], [ex.graph_j for ex in examples],
            [ex.relation for ex in examples], training=False,
        )
        return pair_loss(out, [ex.label for ex in examples], config.lambda_unc,
                         config.lambda_kl).values()

