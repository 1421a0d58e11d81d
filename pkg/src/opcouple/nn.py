"""Dense feed-forward networks with hand-rolled exact gradients.

Everything is float64. Layers are fully connected; hidden layers use tanh,
the output layer is linear by default. Besides plain backprop the module
provides the input-directional derivative (JVP) of the network together with
the exact parameter gradient of that derivative, which the operator training
loss needs for its derivative-mismatch penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

_ACTIVATIONS = ("tanh", "identity")


@dataclass
class DenseNet:
    """Weights W[l] of shape (n_out, n_in), biases b[l] of shape (n_out,)."""

    weights: list
    biases: list
    activations: tuple

    @property
    def layer_sizes(self):
        sizes = [self.weights[0].shape[1]]
        for w in self.weights:
            sizes.append(w.shape[0])
        return sizes

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def params(self):
        """Flat parameter list [W0, b0, W1, b1, ...] (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())


def init_dense(layer_sizes, rng, out_activation: str = "identity") -> DenseNet:
    """Xavier-uniform initialized network, tanh hidden layers.

    layer_sizes includes input and output widths, so a 3-hidden-layer network
    of width 100 mapping 2 -> 1 is [2, 100, 100, 100, 1].
    """
    if len(layer_sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    if out_activation not in _ACTIVATIONS:
        raise ShapeError(f"unknown activation {out_activation!r}")
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    acts = tuple(["tanh"] * (len(weights) - 1) + [out_activation])
    return DenseNet(weights, biases, acts)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ShapeError(f"expected 1D or 2D input, got shape {x.shape}")
    return x, False


def forward(net: DenseNet, x):
    """Evaluate the network. 1D input gives 1D output, 2D is batched rows."""
    xb, squeeze = _as_batch(x)
    a = xb
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = a @ w.T + b
        if act == "tanh":
            a = np.tanh(a)
    return a[0] if squeeze else a


def forward_cache(net: DenseNet, x):
    """Batched forward pass keeping every layer activation for backprop."""
    xb, _ = _as_batch(x)
    acts = [xb]
    a = xb
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = a @ w.T + b
        if act == "tanh":
            a = np.tanh(a)
        acts.append(a)
    return a, acts


def backprop(net: DenseNet, acts, upstream):
    """Parameter gradients of sum(upstream * output) plus the input gradient.

    acts is the activation list from forward_cache; upstream has the shape of
    the output batch. Returns (grads, dx) with grads ordered like params().
    """
    delta = np.asarray(upstream, dtype=np.float64)
    if delta.shape != acts[-1].shape:
        raise ShapeError(f"upstream shape {delta.shape} != output shape {acts[-1].shape}")
    grads = [None] * (2 * len(net.weights))
    for layer in range(len(net.weights) - 1, -1, -1):
        if net.activations[layer] == "tanh":
            delta = delta * (1.0 - acts[layer + 1] ** 2)
        grads[2 * layer] = delta.T @ acts[layer]
        grads[2 * layer + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[layer]
    return grads, delta


def grad_params(net: DenseNet, x, upstream):
    """Gradients of <upstream, net(x)> with respect to every parameter."""
    _, acts = forward_cache(net, x)
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 1 and acts[-1].shape[0] == 1:
        up = up[None, :]
    grads, _ = backprop(net, acts, up)
    return grads


def grad_input(net: DenseNet, x):
    """Exact Jacobian d net(x) / dx, shape (n_out, n_in) for a 1D input.

    Batched 2D input gives (B, n_out, n_in). Forward accumulation: the
    Jacobian of an affine layer is W, tanh contributes diag(1 - a^2).
    """
    xb, squeeze = _as_batch(x)
    a = xb
    jac = np.broadcast_to(np.eye(net.n_in), (xb.shape[0], net.n_in, net.n_in)).copy()
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = a @ w.T + b
        jac = np.einsum("oi,bij->boj", w, jac)
        if act == "tanh":
            a = np.tanh(a)
            jac = jac * (1.0 - a**2)[:, :, None]
    return jac[0] if squeeze else jac


def input_jvp_cache(net: DenseNet, x, v):
    """Forward pass together with its directional derivative along v.

    Returns (y, dy, cache). cache holds per-layer primal activations plus
    post- and pre-activation tangents so jvp_backprop can differentiate dy
    with respect to parameters.
    """
    xb, _ = _as_batch(x)
    vb, _ = _as_batch(v)
    if vb.shape != xb.shape:
        raise ShapeError(f"tangent shape {vb.shape} != input shape {xb.shape}")
    a, d = xb, vb
    acts, tangents, pre_tangents = [a], [d], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        dz = d @ w.T
        if act == "tanh":
            a = np.tanh(z)
            d = (1.0 - a**2) * dz
        else:
            a, d = z, dz
        acts.append(a)
        tangents.append(d)
        pre_tangents.append(dz)
    return a, d, (acts, tangents, pre_tangents)


def input_jvp(net: DenseNet, x, v):
    """Directional derivative of the network output along v at x."""
    xb, squeeze = _as_batch(x)
    y, dy, _ = input_jvp_cache(net, xb, np.broadcast_to(np.asarray(v, float), xb.shape))
    return (y[0], dy[0]) if squeeze else (y, dy)


def jvp_backprop(net: DenseNet, cache, up_y, up_dy):
    """Parameter gradients of sum(up_y * y) + sum(up_dy * dy).

    Reverse pass through the joint primal/tangent graph built by
    input_jvp_cache. Needed because the training loss penalizes the network's
    input-directional derivative, whose parameter gradient involves both the
    primal and tangent chains.
    """
    acts, tangents, pre_tangents = cache
    ga = np.asarray(up_y, dtype=np.float64)
    gd = np.asarray(up_dy, dtype=np.float64)
    if ga.shape != acts[-1].shape or gd.shape != tangents[-1].shape:
        raise ShapeError("upstream shapes do not match cached outputs")
    grads = [None] * (2 * len(net.weights))
    for layer in range(len(net.weights) - 1, -1, -1):
        a = acts[layer + 1]
        if net.activations[layer] == "tanh":
            # Layer graph: z = a_prev W^T + b, dz = d_prev W^T,
            # a = tanh(z), d = (1 - a^2) dz. Adjoints:
            s = 1.0 - a**2
            gdz = gd * s
            gz = (ga - 2.0 * a * gd * pre_tangents[layer]) * s
        else:
            gdz = gd
            gz = ga
        grads[2 * layer] = gz.T @ acts[layer] + gdz.T @ tangents[layer]
        grads[2 * layer + 1] = gz.sum(axis=0)
        ga = gz @ net.weights[layer]
        gd = gdz @ net.weights[layer]
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators matching a flat parameter list."""

    m: list
    v: list
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr: float) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
        lr=lr,
    )


def adam_step(params, grads, state: AdamState):
    """One Adam update, in place on params. Returns params for chaining."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and state lengths differ")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
