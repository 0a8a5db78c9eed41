"""Parameter containers and the small layers the model is built from."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Module:
    """Anything holding named parameter tensors or child modules."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix=""):
        """Non-trainable arrays that belong in a checkpoint (batch-norm statistics)."""
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, ad.BatchNormState):
                yield f"{name}.running_mean", val.running_mean
                yield f"{name}.running_var", val.running_var
            elif isinstance(val, Module):
                yield from val.named_buffers(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True):
        self.weight = Tensor(glorot(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise ad.ShapeError("linear", x.shape, self.weight.shape)
        out = ad.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class PReLU(Module):
    def __init__(self, init=0.25):
        self.slope = Tensor(np.array([init]), requires_grad=True)

    def __call__(self, x):
        return ad.prelu(x, self.slope)


class BatchNorm(Module):
    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.state = ad.BatchNormState.create(dim, momentum, eps)

    def __call__(self, x, training, update_stats=True):
        if not training:
            return ad.batch_norm(x, self.gamma, self.beta, self.state, training=False)
        if update_stats:
            return ad.batch_norm(x, self.gamma, self.beta, self.state, training=True)
        # batch statistics without touching the running averages
        scratch = ad.BatchNormState(
            self.state.running_mean.copy(), self.state.running_var.copy(),
            self.state.momentum, self.state.eps,
        )
        return ad.batch_norm(x, self.gamma, self.beta, scratch, training=True)


class GRUCell(Module):
    """Standard GRU: r, z gates and candidate n over input x and hidden h."""

    def __init__(self, rng, dim):
        self.dim = dim
        self.w_input = Tensor(
            np.concatenate([glorot(rng, dim, dim) for _ in range(3)], axis=1), requires_grad=True
        )
        self.w_hidden = Tensor(
            np.concatenate([glorot(rng, dim, dim) for _ in range(3)], axis=1), requires_grad=True
        )
        self.b_input = Tensor(np.zeros(3 * dim), requires_grad=True)
        self.b_hidden = Tensor(np.zeros(3 * dim), requires_grad=True)

    def __call__(self, x, h):
        d = self.dim
        gi = ad.matmul(x, self.w_input) + self.b_input
        gh = ad.matmul(h, self.w_hidden) + self.b_hidden
        r = ad.sigmoid(gi[:, :d] + gh[:, :d])
        z = ad.sigmoid(gi[:, d:2 * d] + gh[:, d:2 * d])
        n = ad.tanh(gi[:, 2 * d:] + r * gh[:, 2 * d:])
        return (1.0 - z) * n + z * h
