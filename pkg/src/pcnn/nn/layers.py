"""Differentiable layers with explicit forward and backward passes.

Point-stage features are ``(B, I, J)`` arrays; after global pooling they are
``(B, J)``. Geometry (q tensors, pooling partitions, upsampling matrices) is
precomputed per sample and handed in through ``geom``; no gradient flows into it.
"""

from __future__ import annotations

import numpy as np

from ..conv import apply_kernel, contraction_backward


class Layer:
    """Base class. ``params`` and ``grads`` share keys."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros(p.shape, dtype=np.float64)

    def forward(self, x, geom, train: bool, record: dict):
        raise NotImplementedError

    def backward(self, grad, geom, record: dict):
        raise NotImplementedError

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable buffers that belong in a checkpoint."""
        return {}

    def load_state(self, state: dict[str, np.ndarray]):
        pass


class PcConv(Layer):
    kind = "pc_conv"

    def __init__(self, in_channels: int, out_channels: int, n_trans: int, rng, dtype, bias: bool = False):
        super().__init__()
        std = np.sqrt(2.0 / (n_trans * in_channels))
        self.params["k"] = (rng.standard_normal((n_trans, in_channels, out_channels)) * std).astype(dtype)
        if bias:
            self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, geom, train, record):
        k = self.params["k"].astype(np.float64)
        out = np.stack([g["matrix"] @ apply_kernel(x[b], k) for b, g in enumerate(geom)])
        if "b" in self.params:
            out += self.params["b"].astype(np.float64)
        record["x"] = x
        return out

    def backward(self, grad, geom, record):
        x = record["x"]
        k = self.params["k"].astype(np.float64)
        grad_x = np.empty_like(x)
        for b, g in enumerate(geom):
            gx, gk = contraction_backward(g["matrix"], x[b], k, grad[b])
            grad_x[b] = gx
            self.grads["k"] += gk
        if "b" in self.params:
            self.grads["b"] += grad.sum(axis=(0, 1))
        return grad_x


class BatchNorm(Layer):
    """Per-channel normalization over every axis except the last."""

    kind = "batch_norm"

    def __init__(self, channels: int, dtype, momentum: float = 0.9, eps: float = 1e-10):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.updates = 0
        self.momentum = momentum
        self.eps = eps
        self.zero_grad()

    def forward(self, x, geom, train, record):
        axes = tuple(range(x.ndim - 1))
        gamma = self.params["gamma"].astype(np.float64)
        beta = self.params["beta"].astype(np.float64)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            # The first batch replaces the unit initial statistics outright.
            m = self.momentum if self.updates else 0.0
            self.updates += 1
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(self.running_mean.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(self.running_var.dtype)
        else:
            mean = self.running_mean.astype(np.float64)
            var = self.running_var.astype(np.float64)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        record.update(xhat=xhat, inv=inv, train=train)
        return gamma * xhat + beta

    def backward(self, grad, geom, record):
        axes = tuple(range(grad.ndim - 1))
        xhat, inv = record["xhat"], record["inv"]
        gamma = self.params["gamma"].astype(np.float64)
        self.grads["gamma"] += (grad * xhat).sum(axis=axes)
        self.grads["beta"] += grad.sum(axis=axes)
        gx = grad * gamma
        if not record["train"]:
            return gx * inv
        return inv * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes))

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var,
                "updates": np.array([self.updates], dtype=np.float64)}

    def load_state(self, state):
        self.running_mean = np.asarray(state["running_mean"], dtype=self.running_mean.dtype).copy()
        self.running_var = np.asarray(state["running_var"], dtype=self.running_var.dtype).copy()
        self.updates = int(np.asarray(state.get("updates", [1])).reshape(-1)[0])


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, geom, train, record):
        mask = x > 0
        record["mask"] = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad, geom, record):
        return np.where(record["mask"], grad, 0.0)


def segment_max(values: np.ndarray, assignment: np.ndarray, n_cells: int):
    """Per-cell, per-channel max of ``values`` ``(I, J)`` and the lowest arg index attaining it."""
    order = np.argsort(assignment, kind="stable")
    sorted_vals = values[order]
    starts = np.searchsorted(assignment[order], np.arange(n_cells))
    if np.any(np.diff(np.append(starts, len(order))) == 0):
        raise ValueError("every pooling cell must own at least one point")
    cell_max = np.maximum.reduceat(sorted_vals, starts, axis=0)
    seg = assignment[order]
    hit = sorted_vals == cell_max[seg]
    big = np.iinfo(np.int64).max
    cand = np.where(hit, order[:, None], big)
    argmax = np.minimum.reduceat(cand, starts, axis=0)
    return cell_max, argmax


class PoolMax(Layer):
    kind = "pool_max"

    def forward(self, x, geom, train, record):
        outs, args = [], []
        for b, g in enumerate(geom):
            m, a = segment_max(x[b], g["assignment"], g["n_cells"])
            outs.append(m)
            args.append(a)
        record["argmax"] = args
        record["in_shape"] = x.shape
        return np.stack(outs)

    def backward(self, grad, geom, record):
        gx = np.zeros(record["in_shape"])
        ch = np.arange(grad.shape[2])
        for b, a in enumerate(record["argmax"]):
            # argmax entries are unique per (cell, channel): cells are disjoint.
            gx[b, a, ch[None, :]] = grad[b]
        return gx


class Upsample(Layer):
    kind = "upsample"

    def forward(self, x, geom, train, record):
        return np.stack([g["matrix"] @ x[b] for b, g in enumerate(geom)])

    def backward(self, grad, geom, record):
        return np.stack([g["matrix"].T @ grad[b] for b, g in enumerate(geom)])


class ConcatSkip(Layer):
    """Channel concatenation of the running features with an earlier layer's output."""

    kind = "concat_skip"

    def forward(self, x, geom, train, record, skip=None):
        record["split"] = x.shape[-1]
        return np.concatenate([x, skip], axis=-1)

    def backward(self, grad, geom, record):
        s = record["split"]
        return grad[..., :s], grad[..., s:]


class GlobalPool(Layer):
    """Max over all points of each sample."""

    kind = "global_pool"

    def forward(self, x, geom, train, record):
        n = x.shape[1]
        m = x.max(axis=1)
        hit = x == m[:, None, :]
        # lowest index among ties
        arg = np.argmax(hit, axis=1)
        record.update(arg=arg, n=n)
        return m

    def backward(self, grad, geom, record):
        B, J = grad.shape
        gx = np.zeros((B, record["n"], J))
        gx[np.arange(B)[:, None], record["arg"], np.arange(J)[None, :]] = grad
        return gx


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng, dtype):
        super().__init__()
        std = np.sqrt(2.0 / in_features)
        self.params["W"] = (rng.standard_normal((in_features, out_features)) * std).astype(dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    def forward(self, x, geom, train, record):
        record["x"] = x
        return x @ self.params["W"].astype(np.float64) + self.params["b"].astype(np.float64)

    def backward(self, grad, geom, record):
        x = record["x"]
        self.grads["W"] += x.T @ grad
        self.grads["b"] += grad.sum(axis=0)
        return grad @ self.params["W"].astype(np.float64).T


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = None

    def forward(self, x, geom, train, record):
        if not train or self.rate == 0:
            record["mask"] = None
            return x
        keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        record["mask"] = keep
        return x * keep

    def backward(self, grad, geom, record):
        mask = record["mask"]
        return grad if mask is None else grad * mask
