"""Collocation sampling, the physics-informed loss, and network training.

The state equation -laplacian(u) = 1, u = 0 on the current boundary, is
solved on the whole hold-all rectangle with an interior Dirichlet interface:
interior residual points cover all of the hold-all, Dirichlet points sit on
the polygonal chain.  This lets the trained network double as a level-set
description of the current domain and improves the state gradient near the
interface.

The loss for sample sets Xb (boundary) and Xi (interior) is

    ( w_b * sum_{x in Xb} v(x)^2 + w_i * sum_{x in Xi} (lap v(x) + 1)^2 )
        / (|Xb| + |Xi|)

with default prefactors w_b = 2 |Xb| and w_i = |Xi|.  The defaults grow with
the sample counts; pass weights=(1.0, 1.0) for a sample-size-free mean form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import neural_level_set as nls
from .geometry import PolygonalBoundary, Rectangle

__all__ = [
    "CollocationSet",
    "PiecewiseConstantSchedule",
    "TrainResult",
    "TrainingDivergedError",
    "sample_collocation",
    "pinn_loss",
    "loss_and_gradient",
    "train",
    "train_restarts",
    "transfer_train",
]

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class CollocationSet:
    """Interior cloud on the hold-all plus per-edge boundary cloud."""

    interior: np.ndarray
    boundary: np.ndarray

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary.shape[0]


def sample_collocation(
    boundary: PolygonalBoundary,
    holdall: Rectangle,
    n_interior: int,
    n_boundary: int,
    rng: np.random.Generator,
) -> CollocationSet:
    """Uniform interior points on the hold-all and per-edge boundary points.

    The same number of points is drawn from every edge regardless of its
    length: ceil(n_boundary / k) per edge, so the total is rounded up to the
    next multiple of the edge count.
    """
    interior = holdall.sample(n_interior, rng) if n_interior > 0 else np.zeros((0, 2))
    k = boundary.n_vertices
    per_edge = -(-n_boundary // k) if n_boundary > 0 else 0
    if per_edge > 0:
        t = rng.random((k, per_edge))
        pts = boundary.vertices[:, None, :] + t[:, :, None] * boundary.edge_vectors[:, None, :]
        bpts = pts.reshape(k * per_edge, 2)
    else:
        bpts = np.zeros((0, 2))
    return CollocationSet(interior=interior, boundary=bpts)


def _resolve_weights(colloc: CollocationSet, weights) -> tuple[float, float]:
    if weights is None:
        return 2.0 * colloc.n_boundary, float(colloc.n_interior)
    w_b, w_i = weights
    return float(w_b), float(w_i)


def pinn_loss(net: nls.NeuralLevelSet, colloc: CollocationSet, weights=None) -> float:
    """Scalar loss; weights default to the sample-count prefactors above."""
    if colloc.n_interior + colloc.n_boundary == 0:
        raise ValueError("empty collocation set")
    w_b, w_i = _resolve_weights(colloc, weights)
    total = 0.0
    if colloc.n_boundary:
        vb = nls.values(net, colloc.boundary)
        total += w_b * float(np.sum(vb * vb))
    if colloc.n_interior:
        res = nls.laplacians(net, colloc.interior) + 1.0
        total += w_i * float(np.sum(res * res))
    return total / (colloc.n_boundary + colloc.n_interior)


def loss_and_gradient(
    net: nls.NeuralLevelSet,
    colloc: CollocationSet,
    weights=None,
    ws_boundary: nls.Workspace | None = None,
    ws_interior: nls.Workspace | None = None,
):
    """Loss value and its exact parameter gradient.

    Boundary term backpropagates through the value channel only; the
    interior term backpropagates through the Laplacian recursion.  Pass
    workspaces when calling repeatedly with fixed collocation sizes.
    """
    if colloc.n_interior + colloc.n_boundary == 0:
        raise ValueError("empty collocation set")
    w_b, w_i = _resolve_weights(colloc, weights)
    denom = colloc.n_boundary + colloc.n_interior
    grads = nls.zero_like_parameters(net)
    total = 0.0
    if colloc.n_boundary:
        vb, vjp_b = nls.value_and_vjp(net, colloc.boundary, ws_boundary)
        total += w_b * float(np.sum(vb * vb))
        gb = vjp_b((2.0 * w_b / denom) * vb)
        for g, acc in zip(gb, grads):
            acc += g
    if colloc.n_interior:
        res, vjp_i = nls.laplacian_and_vjp(net, colloc.interior, ws_interior)
        res = res + 1.0
        total += w_i * float(np.sum(res * res))
        gi = vjp_i((2.0 * w_i / denom) * res)
        for g, acc in zip(gi, grads):
            acc += g
    return total / denom, grads


@dataclass(frozen=True)
class PiecewiseConstantSchedule:
    """Learning rate as a right-continuous step function of training progress.

    breaks are fractions of the total step budget; breaks[0] must be 0.
    The default drops from 1e-3 to 1e-4 after 60% of the steps.
    """

    breaks: tuple[float, ...] = (0.0, 0.6)
    rates: tuple[float, ...] = (1e-3, 1e-4)

    def __post_init__(self):
        if len(self.breaks) != len(self.rates) or not self.breaks or self.breaks[0] != 0.0:
            raise ValueError("schedule needs matching breaks/rates starting at 0.0")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("schedule breaks must increase")

    def absolute(self, total_steps: int) -> Callable[[int], float]:
        bounds = np.asarray(self.breaks, dtype=float) * max(total_steps, 1)
        rates = np.asarray(self.rates, dtype=float)

        def rate(step: int) -> float:
            idx = int(np.searchsorted(bounds, step - 1, side="right")) - 1
            return float(rates[max(idx, 0)])

        return rate

    @classmethod
    def constant(cls, rate: float) -> "PiecewiseConstantSchedule":
        return cls(breaks=(0.0,), rates=(rate,))

    @classmethod
    def parse(cls, text: str) -> "PiecewiseConstantSchedule":
        """Parse 'frac:rate,frac:rate,...' as used in config files."""
        breaks, rates = [], []
        for part in text.split(","):
            b, r = part.split(":")
            breaks.append(float(b))
            rates.append(float(r))
        return cls(breaks=tuple(breaks), rates=tuple(rates))


@dataclass
class TrainResult:
    net: nls.NeuralLevelSet
    history: np.ndarray  # columns: step, loss, best_loss
    best_loss: float
    final_loss: float


def train(
    net: nls.NeuralLevelSet,
    boundary: PolygonalBoundary,
    holdall: Rectangle,
    steps: int,
    rng: np.random.Generator,
    n_interior: int = 45000,
    n_boundary: int = 22500,
    schedule: PiecewiseConstantSchedule | None = None,
    weights=None,
    colloc: CollocationSet | None = None,
) -> TrainResult:
    """Full-batch Adam on the loss; returns the best parameters seen.

    Collocation points are drawn once for the whole training phase.  The
    loss is evaluated before each update, so the returned network is never
    worse than the input on the sampled points.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if colloc is None:
        colloc = sample_collocation(boundary, holdall, n_interior, n_boundary, rng)
    schedule = schedule or PiecewiseConstantSchedule()
    state = nls.AdamState.fresh(net, schedule.absolute(steps))
    best = net.copy()
    best_loss = np.inf
    history = np.empty((steps, 3))
    ws_b, ws_i = nls.Workspace(), nls.Workspace()
    for step in range(1, steps + 1):
        loss, grads = loss_and_gradient(net, colloc, weights, ws_b, ws_i)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss {loss!r} at step {step}; "
                "reduce the learning rate or reinitialize"
            )
        if loss < best_loss:
            best_loss = loss
            best = net.copy()
        history[step - 1] = (step, loss, best_loss)
        nls.adam_update(net, grads, state)
    return TrainResult(net=best, history=history, best_loss=best_loss, final_loss=history[-1, 1])


def train_restarts(
    widths,
    boundary: PolygonalBoundary,
    holdall: Rectangle,
    steps: int,
    restarts: int,
    rng: np.random.Generator,
    **kwargs,
) -> TrainResult:
    """Independent Glorot restarts; keeps the run with the lowest loss."""
    best: TrainResult | None = None
    for r in range(restarts):
        net = nls.glorot_init(widths, rng)
        result = train(net, boundary, holdall, steps, rng, **kwargs)
        log.info("restart %d/%d: best loss %.3e", r + 1, restarts, result.best_loss)
        if best is None or result.best_loss < best.best_loss:
            best = result
    assert best is not None
    return best


def transfer_train(
    net: nls.NeuralLevelSet,
    boundary: PolygonalBoundary,
    holdall: Rectangle,
    rng: np.random.Generator,
    max_steps: int = 200,
    **kwargs,
) -> TrainResult:
    """Warm-started retraining after a shape update, capped at max_steps.

    Fresh collocation points are drawn for the new boundary.  max_steps = 0
    returns the input network unchanged.
    """
    if max_steps == 0:
        return TrainResult(net=net, history=np.empty((0, 3)), best_loss=np.nan, final_loss=np.nan)
    kwargs.setdefault("schedule", PiecewiseConstantSchedule.constant(1e-3))
    return train(net.copy(), boundary, holdall, max_steps, rng, **kwargs)
