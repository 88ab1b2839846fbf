"""Minimal dense-network substrate: forward/backward passes, Adam, checkpoints.

Everything runs in float64 numpy. Networks are plain affine chains with a
smooth hidden nonlinearity (SiLU) and an identity output layer; gradients
are computed by hand-written reverse mode, which keeps results bitwise
reproducible across runs with the same seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Input or parameter shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared; carries the offending batch index or step."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def silu(z):
    return z / (1.0 + np.exp(-z))


def silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


class DenseNetwork:
    """Affine chain with SiLU hidden activations and identity output.

    Parameters are He-style fan-in scaled uniform for weights and zero for
    biases, drawn from a seeded generator so construction is deterministic.
    """

    def __init__(self, layer_sizes, seed=0):
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2:
            raise ShapeError(f"need at least input and output sizes, got {layer_sizes}")
        if any(s <= 0 for s in layer_sizes):
            raise ShapeError(f"layer sizes must be positive, got {layer_sizes}")
        self.layer_sizes = layer_sizes
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.layer_sizes[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(
                f"expected input of shape (B, {self.input_dim}), got {np.shape(x)}"
            )
        return x

    def forward(self, x):
        """Evaluate the network on a (B, d_in) batch, returning (B, d_out)."""
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x):
        """Forward pass that also returns the per-layer cache for backward."""
        x = self._check_input(x)
        pre_acts = []
        acts = [x]
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_acts.append(z)
            h = z if i == last else silu(z)
            acts.append(h)
        return h, (pre_acts, acts)

    def backward(self, cache, dout):
        """Backpropagate dL/d(output) through the cached forward pass.

        Returns ([(dW, db), ...] matching layer order, dL/d(input)).
        """
        pre_acts, acts = cache
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != acts[-1].shape:
            raise ShapeError(
                f"output grad shape {dout.shape} != output shape {acts[-1].shape}"
            )
        grads = [None] * self.n_layers
        dh = dout
        last = self.n_layers - 1
        for i in range(last, -1, -1):
            dz = dh if i == last else dh * silu_grad(pre_acts[i])
            grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
            dh = dz @ self.weights[i].T
        return grads, dh

    def value_and_grad(self, x, loss_fn):
        """Loss, parameter grads and input grad for a scalar loss of the outputs.

        ``loss_fn(out)`` must return ``(per_sample, dout)`` where the scalar
        loss is ``mean(per_sample)`` and ``dout`` is its gradient wrt the
        outputs. Raises NonFiniteError with the offending batch index when the
        loss goes non-finite.
        """
        out, cache = self.forward_cached(x)
        per_sample, dout = loss_fn(out)
        per_sample = np.asarray(per_sample, dtype=np.float64)
        if not np.all(np.isfinite(per_sample)):
            bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
            raise NonFiniteError(f"non-finite loss at batch index {bad}", index=bad)
        grads, dx = self.backward(cache, dout)
        return float(per_sample.mean()), grads, dx

    def params_flat(self):
        """All parameters as one flat float64 vector (weights then bias per layer)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_params_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} params, got {flat.size}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def copy(self):
        net = DenseNetwork(self.layer_sizes, seed=self.seed)
        net.set_params_flat(self.params_flat())
        return net


@dataclass
class AdamState:
    """Adaptive-moment optimizer state for one parameter vector."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def _init_moments(self, n):
        if self.m is None:
            self.m = np.zeros(n)
            self.v = np.zeros(n)
        elif self.m.size != n:
            raise ShapeError(f"moment size {self.m.size} != param size {n}")

    def update(self, params, grads, lr=None):
        """One bias-corrected Adam step; returns the new parameter vector."""
        params = np.asarray(params, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
        if params.shape != grads.shape:
            raise ShapeError(f"param shape {params.shape} != grad shape {grads.shape}")
        self._init_moments(params.size)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads**2
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        step_lr = self.lr if lr is None else lr
        return params - step_lr * m_hat / (np.sqrt(v_hat) + self.eps)


def flatten_grads(grads):
    """Flatten a backward() gradient list into one vector matching params_flat."""
    parts = []
    for dw, db in grads:
        parts.append(dw.ravel())
        parts.append(db.ravel())
    return np.concatenate(parts)


CHECKPOINT_FORMAT = "sbdc-lab-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, net, role, opt=None, seed=None, step_count=0, extra=None):
    """Write a versioned JSON checkpoint; floats round-trip bit-exact via repr."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "role": role,
        "layer_sizes": list(net.layer_sizes),
        "activation": "silu",
        "params": net.params_flat().tolist(),
        "seed": seed,
        "step_count": int(step_count),
        "extra": extra or {},
    }
    if opt is not None:
        doc["optimizer"] = {
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "step_count": opt.step_count,
            "m": opt.m.tolist() if opt.m is not None else None,
            "v": opt.v.tolist() if opt.v is not None else None,
        }
    else:
        doc["optimizer"] = None
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Read a checkpoint; returns (net, doc) with optimizer state left in doc."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    net = DenseNetwork(doc["layer_sizes"], seed=doc.get("seed") or 0)
    net.set_params_flat(np.array(doc["params"], dtype=np.float64))
    return net, doc


def load_optimizer(doc):
    """Rebuild AdamState from a checkpoint document, or None if absent."""
    spec = doc.get("optimizer")
    if spec is None:
        return None
    opt = AdamState(
        lr=spec["lr"], beta1=spec["beta1"], beta2=spec["beta2"], eps=spec["eps"],
        step_count=spec["step_count"],
    )
    if spec["m"] is not None:
        opt.m = np.array(spec["m"], dtype=np.float64)
        opt.v = np.array(spec["v"], dtype=np.float64)
    return opt
