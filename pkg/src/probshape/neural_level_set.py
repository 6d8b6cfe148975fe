"""Fully connected tanh network with exact value, gradient and Laplacian.

The network doubles as the approximate PDE state and as an implicit domain
description through its positive level set.  All derivatives are computed
analytically: first and second directional derivatives are propagated
forward through the layers, and parameter gradients are obtained by
reverse-mode passes through the same recursions.  No finite differences
anywhere outside the test suite.

All arithmetic is float64; the exit-sampling thresholds downstream are too
fragile for single precision.  Hot-loop entry points accept an optional
Workspace so repeated evaluations at a fixed batch size do not reallocate
(large numpy temporaries are mmap-churned on this class of hosts, which
costs more than the arithmetic).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NeuralLevelSet",
    "AdamState",
    "Workspace",
    "forward",
    "gradient",
    "laplacian",
    "values",
    "gradients",
    "laplacians",
    "value_grad_laplacian",
    "value_and_vjp",
    "laplacian_and_vjp",
    "value_vjp",
    "laplacian_vjp",
    "adam_update",
    "glorot_init",
    "zero_network",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_WIDTHS = (2, 20, 20, 1)

_CHECKPOINT_MAGIC = b"NLSC"
_CHECKPOINT_VERSION = 1


@dataclass
class NeuralLevelSet:
    """Feedforward tanh network R^2 -> R.

    weights[l] has shape (widths[l+1], widths[l]) and biases[l] has shape
    (widths[l+1],).  Hidden layers use tanh, the output layer is affine.
    """

    layer_widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        w = tuple(int(n) for n in self.layer_widths)
        if len(w) < 2 or any(n <= 0 for n in w):
            raise ValueError(f"invalid layer widths {w}")
        if w[0] != 2 or w[-1] != 1:
            raise ValueError("network must map R^2 -> R")
        if len(self.weights) != len(w) - 1 or len(self.biases) != len(w) - 1:
            raise ValueError("layer count inconsistent with widths")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[l + 1], w[l]) or b.shape != (w[l + 1],):
                raise ValueError(f"shape mismatch in layer {l}")
        self.layer_widths = w

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...] (views, not copies)."""
        out: list[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "NeuralLevelSet":
        return NeuralLevelSet(
            self.layer_widths,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )


def glorot_init(widths: Sequence[int] = DEFAULT_WIDTHS, rng: np.random.Generator | None = None) -> NeuralLevelSet:
    """Uniform Glorot-scaled weights, zero biases."""
    rng = np.random.default_rng() if rng is None else rng
    widths = tuple(int(n) for n in widths)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NeuralLevelSet(widths, weights, biases)


def zero_network(widths: Sequence[int] = DEFAULT_WIDTHS) -> NeuralLevelSet:
    widths = tuple(int(n) for n in widths)
    return NeuralLevelSet(
        widths,
        [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
        [np.zeros(o) for o in widths[1:]],
    )


def zero_like_parameters(net: NeuralLevelSet) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in net.parameters()]


class Workspace:
    """Named buffer pool reused across calls with a fixed batch size."""

    def __init__(self):
        self._bufs: dict = {}

    def buf(self, key, shape) -> np.ndarray:
        b = self._bufs.get(key)
        if b is None or b.shape != shape:
            b = np.empty(shape)
            self._bufs[key] = b
        return b


# ---------------------------------------------------------------------------
# forward evaluation
#
# Per hidden layer, with s = tanh(z), p = 1 - s^2, q = -2 s p:
#   value channel      a = s
#   first derivative   d = p * dz
#   second derivative  h = p * hz + q * dz^2
# propagated along both coordinate directions (leading axis of d, h).  The
# Laplacian is the sum of the two second directional derivatives at the
# output, whose activation is the identity.
# ---------------------------------------------------------------------------


def _as_batch(x) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"expected points of shape (n, 2), got {X.shape}")
    return X


def _forward_trace(net: NeuralLevelSet, X: np.ndarray, order: int, ws: Workspace):
    """Run the network on a batch, keeping per-layer intermediates.

    order 0: values only; order 1: plus first-derivative channels; order 2:
    plus second-derivative channels.  Derivative channels have shape
    (2, n, width) with the coordinate direction leading.  Returns a list of
    per-layer dicts of buffers owned by the workspace.
    """
    n = X.shape[0]
    last = net.n_layers - 1
    A = X
    if order >= 1:
        D = ws.buf(("f", order, "D0"), (2, n, 2))
        D[0, :, 0] = 1.0
        D[0, :, 1] = 0.0
        D[1, :, 0] = 0.0
        D[1, :, 1] = 1.0
    else:
        D = None
    if order >= 2:
        H = ws.buf(("f", order, "H0"), (2, n, 2))
        H.fill(0.0)
    else:
        H = None
    trace = [{"A": A, "D": D, "H": H}]
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        w = W.shape[0]
        Z = ws.buf(("f", order, "Z", l), (n, w))
        np.matmul(A, W.T, out=Z)
        Z += b
        if D is not None:
            Dz = ws.buf(("f", order, "Dz", l), (2, n, w))
            np.matmul(D.reshape(2 * n, -1), W.T, out=Dz.reshape(2 * n, w))
        else:
            Dz = None
        if H is not None:
            Hz = ws.buf(("f", order, "Hz", l), (2, n, w))
            np.matmul(H.reshape(2 * n, -1), W.T, out=Hz.reshape(2 * n, w))
        else:
            Hz = None
        if l == last:
            trace.append({"A": Z, "D": Dz, "H": Hz})
            A, D, H = Z, Dz, Hz
            continue
        S = ws.buf(("f", order, "S", l), (n, w))
        np.tanh(Z, out=S)
        P = ws.buf(("f", order, "P", l), (n, w))
        np.multiply(S, S, out=P)
        np.subtract(1.0, P, out=P)
        layer = {"A": S, "S": S, "P": P, "Dz": Dz, "Hz": Hz}
        if Dz is not None:
            Dn = ws.buf(("f", order, "Dn", l), (2, n, w))
            np.multiply(P[None, :, :], Dz, out=Dn)
            layer["D"] = Dn
        else:
            Dn = None
        if Hz is not None:
            Q = ws.buf(("f", order, "Q", l), (n, w))
            np.multiply(S, P, out=Q)
            Q *= -2.0
            layer["Q"] = Q
            Hn = ws.buf(("f", order, "Hn", l), (2, n, w))
            np.multiply(P[None, :, :], Hz, out=Hn)
            T = ws.buf(("f", order, "T", l), (2, n, w))
            np.multiply(Dz, Dz, out=T)
            T *= Q[None, :, :]
            Hn += T
            layer["H"] = Hn
        else:
            Hn = None
        trace.append(layer)
        A, D, H = S, Dn, Hn
    return trace


def values(net: NeuralLevelSet, x, ws: Workspace | None = None) -> np.ndarray:
    """Network values on a batch of points, shape (n,)."""
    X = _as_batch(x)
    ws = ws or Workspace()
    trace = _forward_trace(net, X, 0, ws)
    return trace[-1]["A"][:, 0].copy()


def gradients(net: NeuralLevelSet, x, ws: Workspace | None = None) -> np.ndarray:
    """Spatial gradients on a batch, shape (n, 2)."""
    X = _as_batch(x)
    ws = ws or Workspace()
    trace = _forward_trace(net, X, 1, ws)
    return trace[-1]["D"][:, :, 0].T.copy()


def laplacians(net: NeuralLevelSet, x, ws: Workspace | None = None) -> np.ndarray:
    """Laplacians on a batch, shape (n,)."""
    X = _as_batch(x)
    ws = ws or Workspace()
    H = _forward_trace(net, X, 2, ws)[-1]["H"]
    return H[0, :, 0] + H[1, :, 0]


def value_grad_laplacian(net: NeuralLevelSet, x, ws: Workspace | None = None):
    """Value, gradient and Laplacian in one pass: ((n,), (n,2), (n,))."""
    X = _as_batch(x)
    ws = ws or Workspace()
    out = _forward_trace(net, X, 2, ws)[-1]
    return (
        out["A"][:, 0].copy(),
        out["D"][:, :, 0].T.copy(),
        out["H"][0, :, 0] + out["H"][1, :, 0],
    )


def forward(net: NeuralLevelSet, x) -> float:
    """v(x) for a single point."""
    return float(values(net, np.asarray(x, dtype=float)[None, :])[0])


def gradient(net: NeuralLevelSet, x) -> np.ndarray:
    """grad v(x) for a single point, shape (2,)."""
    return gradients(net, np.asarray(x, dtype=float)[None, :])[0]


def laplacian(net: NeuralLevelSet, x) -> float:
    """Laplacian of v at a single point."""
    return float(laplacians(net, np.asarray(x, dtype=float)[None, :])[0])


# ---------------------------------------------------------------------------
# reverse-mode parameter gradients
# ---------------------------------------------------------------------------


def value_and_vjp(net: NeuralLevelSet, x, ws: Workspace | None = None):
    """Values plus a pullback mapping a cotangent to parameter gradients.

    vjp(c) returns the gradient of sum_n c[n] * v(x_n) as a list aligned
    with net.parameters().  Call the pullback before reusing the workspace.
    """
    X = _as_batch(x)
    n = X.shape[0]
    ws = ws or Workspace()
    trace = _forward_trace(net, X, 0, ws)
    last = net.n_layers - 1

    def vjp(cotangent: np.ndarray) -> list[np.ndarray]:
        grads = zero_like_parameters(net)
        Zb = ws.buf(("bv", "Zb", last), (n, 1))
        Zb[:, 0] = cotangent
        for l in range(last, -1, -1):
            A_prev = trace[l]["A"]
            grads[2 * l] += Zb.T @ A_prev
            grads[2 * l + 1] += Zb.sum(axis=0)
            if l > 0:
                W = net.weights[l]
                Ab = ws.buf(("bv", "Ab", l - 1), (n, W.shape[1]))
                np.matmul(Zb, W, out=Ab)
                P = trace[l]["P"]
                Zb = ws.buf(("bv", "Zb", l - 1), (n, W.shape[1]))
                np.multiply(Ab, P, out=Zb)
        return grads

    return trace[-1]["A"][:, 0].copy(), vjp


def laplacian_and_vjp(net: NeuralLevelSet, x, ws: Workspace | None = None):
    """Laplacians plus the pullback of sum_n c[n] * laplacian(v)(x_n).

    Reverse pass through the forward second-derivative recursion; the value
    channel collects adjoint mass through the activation derivatives even
    though the objective only reads the second-derivative channel.
    """
    X = _as_batch(x)
    n = X.shape[0]
    ws = ws or Workspace()
    trace = _forward_trace(net, X, 2, ws)
    last = net.n_layers - 1
    lap = trace[-1]["H"][0, :, 0] + trace[-1]["H"][1, :, 0]

    def vjp(cotangent: np.ndarray) -> list[np.ndarray]:
        grads = zero_like_parameters(net)
        Ab = ws.buf(("bl", "Ab", last), (n, 1))
        Ab.fill(0.0)
        Db = ws.buf(("bl", "Db", last), (2, n, 1))
        Db.fill(0.0)
        Hb = ws.buf(("bl", "Hb", last), (2, n, 1))
        Hb[0, :, 0] = cotangent
        Hb[1, :, 0] = cotangent
        for l in range(last, -1, -1):
            W = net.weights[l]
            wp = W.shape[1]
            prev = trace[l]
            A_prev, D_prev, H_prev = prev["A"], prev["D"], prev["H"]
            if l == last:
                Zb, Dzb, Hzb = Ab, Db, Hb
            else:
                out = trace[l + 1]
                S, P, Q, Dz, Hz = out["S"], out["P"], out["Q"], out["Dz"], out["Hz"]
                w = W.shape[0]
                # h = P*hz + Q*dz^2 ; d = P*dz ; a = S
                Hzb = ws.buf(("bl", "Hzb", l), (2, n, w))
                np.multiply(P[None], Hb, out=Hzb)
                Dzb = ws.buf(("bl", "Dzb", l), (2, n, w))
                np.multiply(Dz, Hb, out=Dzb)
                Dzb *= (2.0 * Q)[None]
                T = ws.buf(("bl", "T", l), (2, n, w))
                np.multiply(P[None], Db, out=T)
                Dzb += T
                # adjoints into z via dS/dz = P, dP/dz = -2*S*P, dQ/dz = (6*S^2-2)*P
                np.multiply(Hb, Hz, out=T)
                Pbar = ws.buf(("bl", "Pbar", l), (n, w))
                np.add(T[0], T[1], out=Pbar)
                np.multiply(Db, Dz, out=T)
                Pbar += T[0]
                Pbar += T[1]
                np.multiply(Dz, Dz, out=T)
                T *= Hb
                Qbar = ws.buf(("bl", "Qbar", l), (n, w))
                np.add(T[0], T[1], out=Qbar)
                Sb = ws.buf(("bl", "Sb", l), (n, w))
                np.multiply(S, S, out=Sb)
                Sb *= 6.0
                Sb -= 2.0
                Sb *= Qbar
                Pbar *= S
                Pbar *= -2.0
                Sb += Pbar
                Sb += Ab
                Zb = ws.buf(("bl", "Zb", l), (n, w))
                np.multiply(Sb, P, out=Zb)
            grads[2 * l] += Zb.T @ A_prev
            grads[2 * l] += Dzb.reshape(2 * n, -1).T @ D_prev.reshape(2 * n, -1)
            grads[2 * l] += Hzb.reshape(2 * n, -1).T @ H_prev.reshape(2 * n, -1)
            grads[2 * l + 1] += Zb.sum(axis=0)
            if l > 0:
                Ab = ws.buf(("bl", "Ab", l - 1), (n, wp))
                np.matmul(Zb, W, out=Ab)
                Db = ws.buf(("bl", "Db", l - 1), (2, n, wp))
                np.matmul(Dzb.reshape(2 * n, -1), W, out=Db.reshape(2 * n, wp))
                Hb = ws.buf(("bl", "Hb", l - 1), (2, n, wp))
                np.matmul(Hzb.reshape(2 * n, -1), W, out=Hb.reshape(2 * n, wp))
        return grads

    return lap, vjp


def value_vjp(net: NeuralLevelSet, x, cotangent: np.ndarray, ws: Workspace | None = None) -> list[np.ndarray]:
    """Gradient of sum_n cotangent[n] * v(x_n) with respect to the parameters."""
    _, vjp = value_and_vjp(net, x, ws)
    return vjp(np.asarray(cotangent, dtype=float))


def laplacian_vjp(net: NeuralLevelSet, x, cotangent: np.ndarray, ws: Workspace | None = None) -> list[np.ndarray]:
    """Gradient of sum_n cotangent[n] * laplacian(v)(x_n) w.r.t. parameters."""
    _, vjp = laplacian_and_vjp(net, x, ws)
    return vjp(np.asarray(cotangent, dtype=float))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment accumulators plus a step-indexed learning-rate map."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int
    beta1: float
    beta2: float
    epsilon: float
    learning_rate_schedule: Callable[[int], float]

    @classmethod
    def fresh(
        cls,
        net: NeuralLevelSet,
        learning_rate_schedule: Callable[[int], float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        return cls(
            first_moment=zero_like_parameters(net),
            second_moment=zero_like_parameters(net),
            step_count=0,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            learning_rate_schedule=learning_rate_schedule,
        )


def adam_update(net: NeuralLevelSet, grads: list[np.ndarray], state: AdamState) -> tuple[NeuralLevelSet, AdamState]:
    """One bias-corrected Adam step, in place on net and state."""
    params = net.parameters()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for g, p in zip(grads, params):
        if np.shape(g) != p.shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter shape {p.shape}")
    t = state.step_count + 1
    lr = state.learning_rate_schedule(t)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    state.step_count = t
    return net, state


# ---------------------------------------------------------------------------
# checkpoint serialization
#
# Little-endian binary layout:
#   magic "NLSC" | uint32 version | uint32 n_widths | uint32 widths...
#   then per layer: float64 row-major weight matrix, float64 bias vector.
# Round trips are bit exact.
# ---------------------------------------------------------------------------


def save_checkpoint(net: NeuralLevelSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(net.layer_widths)))
        fh.write(np.asarray(net.layer_widths, dtype="<u4").tobytes())
        for W, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> NeuralLevelSet:
    with open(path, "rb") as fh:
        if fh.read(4) != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        version, n_widths = struct.unpack("<II", fh.read(8))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        widths = tuple(np.frombuffer(fh.read(4 * n_widths), dtype="<u4").astype(int))
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            W = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8").reshape(fan_out, fan_in)
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            weights.append(W.copy())
            biases.append(b.copy())
    return NeuralLevelSet(widths, weights, biases)
