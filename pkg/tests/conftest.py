"""Shared fixtures: session-scoped trainings reused across test modules."""

import time

import numpy as np
import pytest

from probshape import geometry as geo
from probshape import monte_carlo as mc
from probshape import neural_level_set as nls
from probshape import pinn


@pytest.fixture(scope="session")
def disk_training():
    """Unit-disk state solve at desk scale: 5000 Adam steps, 5000/2000 points.

    Shared by the network/pinn regression tests and acceptance criterion 2.
    """
    boundary = geo.regular_polygon((0.0, 0.0), 1.0, 64)
    holdall = geo.Rectangle(-1.5, 1.5, -1.5, 1.5)
    rng = mc.substream(42, 0xD15C)
    t0 = time.perf_counter()
    result = pinn.train_restarts(
        (2, 20, 20, 1),
        boundary,
        holdall,
        steps=5000,
        restarts=1,
        rng=rng,
        n_interior=5000,
        n_boundary=2000,
    )
    elapsed = time.perf_counter() - t0
    return {
        "net": result.net,
        "result": result,
        "boundary": boundary,
        "holdall": holdall,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="session")
def ball_training(tmp_path_factory):
    """Benchmark-quality state solve on the radius-0.25 ball (k=64).

    Returns the trained network plus a checkpoint path so the full-loop
    acceptance run can warm start without repeating the training.
    """
    boundary = geo.regular_polygon((0.5, 0.5), 0.25, 64)
    holdall = geo.Rectangle(0.0, 1.0, 0.0, 1.0)
    rng = mc.substream(0, 0xA)
    t0 = time.perf_counter()
    result = pinn.train_restarts(
        (2, 20, 20, 1),
        boundary,
        holdall,
        steps=4000,
        restarts=2,
        rng=rng,
        n_interior=6000,
        n_boundary=3000,
    )
    elapsed = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("ball") / "ball_net.ckpt"
    nls.save_checkpoint(result.net, path)
    return {
        "net": result.net,
        "result": result,
        "boundary": boundary,
        "holdall": holdall,
        "checkpoint": str(path),
        "elapsed": elapsed,
    }


def finite_difference_gradient(net, x, h=1e-4):
    e = np.eye(2)
    return np.array(
        [(nls.forward(net, x + h * e[i]) - nls.forward(net, x - h * e[i])) / (2.0 * h) for i in range(2)]
    )


def finite_difference_laplacian(net, x, h=1e-3):
    x = np.asarray(x, dtype=float)
    return (
        nls.forward(net, x + [h, 0])
        + nls.forward(net, x - [h, 0])
        + nls.forward(net, x + [0, h])
        + nls.forward(net, x - [0, h])
        - 4.0 * nls.forward(net, x)
    ) / h**2
