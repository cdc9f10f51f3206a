"""Dense MLP primitives with hand-written backpropagation.

Everything here is a pure function of its arguments.  Matrices are plain
2-D float64 numpy arrays; a network's parameters travel as a flat
:class:`ParamVector` so they can be averaged, transmitted and stepped
without caring about layer structure.

Layer ``l`` computes ``h_l = act_l(h_{l-1} @ W_l + b_l)`` with ``W_l`` of
shape ``(d_{l-1}, d_l)`` and ``b_l`` of shape ``(1, d_l)``.  The loss head
(if any) sits on top of the last layer's output.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
HEADS = ("softmax_xent", "mse", "none")


class ConfigurationError(ValueError):
    """Raised for shape/dimension mismatches and invalid settings."""


@dataclass(frozen=True)
class MLPSpec:
    layer_dims: tuple[int, ...]
    activations: tuple[str, ...]
    head: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_dims) < 2:
            raise ConfigurationError("an MLP needs at least one layer (two dims)")
        if any(d < 1 for d in self.layer_dims):
            raise ConfigurationError(f"layer dims must be positive: {self.layer_dims}")
        if len(self.activations) != self.n_layers:
            raise ConfigurationError(
                f"{self.n_layers} layers but {len(self.activations)} activations")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        if self.head not in HEADS:
            raise ConfigurationError(f"unknown head {self.head!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def manifest(self) -> tuple[tuple[int, int], ...]:
        shapes = []
        for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            shapes.append((d_in, d_out))
            shapes.append((1, d_out))
        return tuple(shapes)

    @property
    def n_params(self) -> int:
        return sum(r * c for r, c in self.manifest())


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat float64 parameters plus the (rows, cols) shapes they unflatten to."""

    data: np.ndarray
    manifest: tuple[tuple[int, int], ...]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "manifest", tuple((int(r), int(c)) for r, c in self.manifest))
        if data.size != sum(r * c for r, c in self.manifest):
            raise ConfigurationError(
                f"parameter length {data.size} does not match manifest {self.manifest}")

    def __len__(self) -> int:
        return self.data.size

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "ParamVector":
        arrays = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in arrays]
        manifest = tuple(a.shape for a in arrays)
        if not arrays:
            return cls(np.zeros(0), ())
        return cls(np.concatenate([a.reshape(-1) for a in arrays]), manifest)

    @classmethod
    def zeros(cls, manifest) -> "ParamVector":
        return cls(np.zeros(sum(r * c for r, c in manifest)), manifest)

    def unflatten(self) -> list[np.ndarray]:
        """Views (not copies) of each weight/bias block."""
        out, pos = [], 0
        for r, c in self.manifest:
            out.append(self.data[pos:pos + r * c].reshape(r, c))
            pos += r * c
        return out

    def copy(self) -> "ParamVector":
        return ParamVector(self.data.copy(), self.manifest)

    def matches(self, spec: MLPSpec) -> bool:
        return self.manifest == spec.manifest()


def _check_params(spec: MLPSpec, params: ParamVector):
    if params.manifest != spec.manifest():
        raise ConfigurationError(
            f"parameter manifest {params.manifest} does not match spec {spec.manifest()}")


def _as_matrix(x, cols: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != cols:
        raise ConfigurationError(f"{what} has shape {x.shape}, expected (*, {cols})")
    return x


def _act(name: str, u: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(u, 0.0)
    if name == "tanh":
        return np.tanh(u)
    return u


def _act_prime(name: str, h: np.ndarray) -> np.ndarray:
    # derivative expressed through the layer output h = act(u); relu'(0) = 0
    if name == "relu":
        return (h > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(h)


def _act_second(name: str, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return -2.0 * h * (1.0 - h * h)
    return np.zeros_like(h)


def forward(spec: MLPSpec, params: ParamVector, inputs) -> list[np.ndarray]:
    """Per-layer outputs ``[h_1, ..., h_L]``; the last entry is the network output
    (logits for a softmax head)."""
    _check_params(spec, params)
    h = _as_matrix(inputs, spec.in_dim, "input")
    blocks = params.unflatten()
    stack = []
    for l, act in enumerate(spec.activations):
        W, b = blocks[2 * l], blocks[2 * l + 1]
        h = _act(act, h @ W + b)
        stack.append(h)
    return stack


def _head_loss_grad(head: str, out: np.ndarray, labels, row_weight: np.ndarray):
    """Weighted loss and its gradient w.r.t. the network output.

    ``row_weight`` is 1/B for an ordinary batch mean.
    """
    if head == "softmax_xent":
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if y.size != out.shape[0]:
            raise ConfigurationError("label count does not match batch size")
        if y.size and (y.min() < 0 or y.max() >= out.shape[1]):
            raise ConfigurationError("label out of range for the softmax head")
        shifted = out - out.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - lse
        rows = np.arange(y.size)
        loss = float(-(row_weight * logp[rows, y]).sum())
        p = np.exp(logp)
        g = p.copy()
        g[rows, y] -= 1.0
        return loss, g * row_weight[:, None], p
    if head == "mse":
        y = np.asarray(labels, dtype=np.float64).reshape(out.shape)
        r = out - y
        loss = float((row_weight * (r * r).sum(axis=1)).sum())
        return loss, 2.0 * r * row_weight[:, None], None
    raise ConfigurationError("loss requested from a network with head='none'")


def _backward(spec: MLPSpec, blocks, x, stack, g_out):
    """Reverse pass from an output cotangent; returns (param grad blocks, input grad)."""
    grads = [None] * (2 * spec.n_layers)
    g = g_out
    for l in range(spec.n_layers - 1, -1, -1):
        h_prev = x if l == 0 else stack[l - 1]
        delta = g * _act_prime(spec.activations[l], stack[l])
        grads[2 * l] = h_prev.T @ delta
        grads[2 * l + 1] = delta.sum(axis=0, keepdims=True)
        g = delta @ blocks[2 * l].T
    return grads, g


def _batch_weights(n: int) -> np.ndarray:
    if n == 0:
        raise ConfigurationError("empty batch")
    return np.full(n, 1.0 / n)


def loss_and_grad(spec: MLPSpec, params: ParamVector, inputs, labels):
    """Batch-mean loss, its parameter gradient and its input gradient."""
    if spec.head == "none":
        raise ConfigurationError("loss_and_grad needs a loss head; this network has head='none'")
    x = _as_matrix(inputs, spec.in_dim, "input")
    stack = forward(spec, params, x)
    loss, g_out, _ = _head_loss_grad(spec.head, stack[-1], labels, _batch_weights(x.shape[0]))
    grads, g_in = _backward(spec, params.unflatten(), x, stack, g_out)
    return loss, ParamVector.from_arrays(grads), g_in


def loss_value(spec: MLPSpec, params: ParamVector, inputs, labels) -> float:
    x = _as_matrix(inputs, spec.in_dim, "input")
    stack = forward(spec, params, x)
    return _head_loss_grad(spec.head, stack[-1], labels, _batch_weights(x.shape[0]))[0]


def predict(spec: MLPSpec, params: ParamVector, inputs) -> np.ndarray:
    return forward(spec, params, inputs)[-1]


def vjp(spec: MLPSpec, params: ParamVector, inputs, cotangent):
    """Jᵀ·cotangent for both parameters and inputs of the raw network output."""
    x = _as_matrix(inputs, spec.in_dim, "input")
    stack = forward(spec, params, x)
    u = np.asarray(cotangent, dtype=np.float64)
    if u.shape != stack[-1].shape:
        raise ConfigurationError(
            f"cotangent shape {u.shape} does not match output shape {stack[-1].shape}")
    grads, g_in = _backward(spec, params.unflatten(), x, stack, u)
    return ParamVector.from_arrays(grads), g_in


def vjp_params(spec: MLPSpec, params: ParamVector, inputs, cotangent) -> ParamVector:
    """Gradient of ``<cotangent, forward(inputs)>`` with respect to the parameters."""
    return vjp(spec, params, inputs, cotangent)[0]


def input_gradient(spec: MLPSpec, params: ParamVector, inputs, labels,
                   row_weight: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the (weighted) head loss with respect to the inputs.

    With the default weights this equals ``loss_and_grad(...)[2]``.  Passing
    ``row_weight`` lets several independent batches be stacked into one call,
    each row weighted by 1/(its own batch size).
    """
    x = _as_matrix(inputs, spec.in_dim, "input")
    w = _batch_weights(x.shape[0]) if row_weight is None else np.asarray(row_weight, float)
    stack = forward(spec, params, x)
    _, g_out, _ = _head_loss_grad(spec.head, stack[-1], labels, w)
    return _backward(spec, params.unflatten(), x, stack, g_out)[1]


def gradient_matching_loss(spec: MLPSpec, params: ParamVector, inputs, labels, targets,
                           row_weight: np.ndarray | None = None, n_groups: int | None = None):
    """Mismatch between this network's input gradient and ``targets``.

    Returns ``(loss, grad)`` where ``loss = sum ||g_in - targets||^2 / n_groups``
    (``n_groups`` defaults to 1, i.e. one batch) and ``grad`` is its exact
    parameter gradient.  ``g_in`` is itself a gradient, so ``grad`` is obtained
    by running reverse mode over the backward pass (second derivatives of the
    activations and of the softmax enter here).
    """
    if spec.head == "none":
        raise ConfigurationError("gradient matching needs a loss head")
    x = _as_matrix(inputs, spec.in_dim, "input")
    w = _batch_weights(x.shape[0]) if row_weight is None else np.asarray(row_weight, float)
    t = _as_matrix(targets, spec.in_dim, "targets")
    if t.shape != x.shape:
        raise ConfigurationError("targets must have the same shape as inputs")
    scale = 1.0 / (1 if n_groups is None else n_groups)
    blocks = params.unflatten()
    L = spec.n_layers
    stack = forward(spec, params, x)
    _, g_top, p = _head_loss_grad(spec.head, stack[-1], labels, w)

    # primal backward pass, keeping every intermediate
    gs = [None] * (L + 1)      # gs[l]: gradient w.r.t. h_l (gs[0] w.r.t. input)
    ss = [None] * (L + 1)      # ss[l]: act'(u_l)
    ds = [None] * (L + 1)      # ds[l]: delta_l
    gs[L] = g_top
    for l in range(L, 0, -1):
        ss[l] = _act_prime(spec.activations[l - 1], stack[l - 1])
        ds[l] = gs[l] * ss[l]
        gs[l - 1] = ds[l] @ blocks[2 * (l - 1)].T
    resid = gs[0] - t
    loss = float(scale * (resid * resid).sum())

    # reverse over the backward pass
    gbar_W = [np.zeros_like(blocks[2 * i]) for i in range(L)]
    gbar_b = [np.zeros_like(blocks[2 * i + 1]) for i in range(L)]
    ubar = [None] * (L + 1)
    gbar = 2.0 * scale * resid
    for l in range(1, L + 1):
        W = blocks[2 * (l - 1)]
        dbar = gbar @ W
        gbar_W[l - 1] += gbar.T @ ds[l]
        sbar = dbar * gs[l]
        ubar[l] = sbar * _act_second(spec.activations[l - 1], stack[l - 1])
        gbar = dbar * ss[l]
    # gbar is now the adjoint of the head gradient g_top
    if spec.head == "softmax_xent":
        v = gbar * w[:, None]
        obar = p * v - p * (p * v).sum(axis=1, keepdims=True)
    else:
        obar = 2.0 * gbar * w[:, None]

    # reverse over the forward pass
    hbar = obar
    for l in range(L, 0, -1):
        u_adj = hbar * ss[l] + ubar[l]
        h_prev = x if l == 1 else stack[l - 2]
        gbar_W[l - 1] += h_prev.T @ u_adj
        gbar_b[l - 1] += u_adj.sum(axis=0, keepdims=True)
        hbar = u_adj @ blocks[2 * (l - 1)].T
    grads = []
    for i in range(L):
        grads += [gbar_W[i], gbar_b[i]]
    return loss, ParamVector.from_arrays(grads)


def fd_grad(func: Callable[[ParamVector], float], params: ParamVector,
            step: float = 1e-5) -> ParamVector:
    """Central-difference gradient, one evaluation pair per coordinate."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    base = params.data
    out = np.zeros_like(base)
    for j in range(base.size):
        probe = base.copy()
        probe[j] = base[j] + step
        f_plus = func(ParamVector(probe, params.manifest))
        probe[j] = base[j] - step
        f_minus = func(ParamVector(probe, params.manifest))
        out[j] = (f_plus - f_minus) / (2.0 * step)
    return ParamVector(out, params.manifest)


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    if params.manifest != grad.manifest:
        raise ConfigurationError("gradient manifest does not match parameters")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    return ParamVector(params.data - lr * grad.data, params.manifest)


def mean_params(vectors: Sequence[ParamVector]) -> ParamVector:
    """Elementwise mean, summed in list order."""
    if not vectors:
        raise ConfigurationError("cannot average an empty list of parameter vectors")
    manifest = vectors[0].manifest
    acc = np.zeros_like(vectors[0].data)
    for v in vectors:
        if v.manifest != manifest:
            raise ConfigurationError("cannot average vectors with different manifests")
        acc = acc + v.data
    return ParamVector(acc / len(vectors), manifest)
