"""Outer shape-gradient-descent loop, configuration and result emission.

Each iteration retrains the state network on the current chain (warm
start), estimates the level-set partition by rejection sampling, draws
random starts and their Brownian exit points on both partition sides,
assembles the probabilistic shape derivative, solves the H1 deformation
system, projects to a vertex field and moves the chain by a fixed step.
There is no line search; overly long steps surface as geometry errors.

All randomness derives from one seed through keyed substreams, so a run is
reproducible bit for bit.  Wall-clock timings are recorded separately from
history.csv to keep that file deterministic.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import deformation as dfm
from . import monte_carlo as mc
from . import neural_level_set as nls
from . import pinn
from . import shape_derivative as sd
from .geometry import GeometryError, PolygonalBoundary, Rectangle, TrackingData, regular_polygon

__all__ = [
    "ConfigError",
    "RunConfig",
    "IterationRecord",
    "RunResult",
    "parse_config",
    "mc_objective",
    "run",
    "derivative_check",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; defaults reproduce the reference benchmark."""

    holdall: Rectangle = Rectangle(0.0, 1.0, 0.0, 1.0)
    ellipse_center: tuple[float, float] = (0.5, 0.5)
    ellipse_semi_major: float = 0.4
    ellipse_semi_minor: float = 0.3
    ball_center: tuple[float, float] = (0.5, 0.5)
    ball_radius: float = 0.25
    n_vertices: int = 160
    hidden_widths: tuple[int, ...] = (20, 20)
    n_interior: int = 45000
    n_boundary: int = 22500
    initial_steps: int = 50000
    restarts: int = 3
    transfer_steps: int = 200
    lr_schedule: pinn.PiecewiseConstantSchedule = field(default_factory=pinn.PiecewiseConstantSchedule)
    transfer_lr: float = 1e-3
    loss_weights: tuple[float, float] | None = None  # None = sample-count prefactors
    m_uniform: int = 10_000_000
    m_constant: int = 1_000_000
    m_exit: int = 100
    safety_factor: float = 1.1
    em_delta: float = 1e-4
    em_max_steps: int = 10_000_000
    step_length: float = 100.0
    max_iterations: int = 30
    grad_tolerance: float = 0.0
    boundary_quadrature: int = 4
    half_stiffness: bool = True
    objective_formula: str = "mean_based"
    seed: int = 0
    output_dir: str = "probshape_run"
    initial_checkpoint: str = ""
    write_svg: bool = False

    def __post_init__(self):
        for name in (
            "n_vertices",
            "n_interior",
            "n_boundary",
            "initial_steps",
            "restarts",
            "transfer_steps",
            "m_uniform",
            "m_constant",
            "m_exit",
            "em_max_steps",
            "boundary_quadrature",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be nonnegative")
        if self.step_length <= 0.0:
            raise ConfigError("step_length must be positive")
        if not (0.0 < self.em_delta < 1.0):
            raise ConfigError("em_delta must lie in (0, 1)")
        if self.safety_factor <= 1.0:
            raise ConfigError("safety_factor must exceed 1")
        if self.objective_formula not in ("mean_based", "as_printed"):
            raise ConfigError(f"unknown objective_formula {self.objective_formula!r}")

    @property
    def tracking(self) -> TrackingData:
        return TrackingData(self.ellipse_center, self.ellipse_semi_major, self.ellipse_semi_minor)

    def initial_boundary(self) -> PolygonalBoundary:
        return regular_polygon(self.ball_center, self.ball_radius, self.n_vertices)


_TUPLE2 = ("ellipse_center", "ball_center")
_INT_KEYS = (
    "n_vertices",
    "n_interior",
    "n_boundary",
    "initial_steps",
    "restarts",
    "transfer_steps",
    "m_uniform",
    "m_constant",
    "m_exit",
    "em_max_steps",
    "max_iterations",
    "boundary_quadrature",
    "seed",
)
_FLOAT_KEYS = (
    "ellipse_semi_major",
    "ellipse_semi_minor",
    "ball_radius",
    "transfer_lr",
    "safety_factor",
    "em_delta",
    "step_length",
    "grad_tolerance",
)
_BOOL_KEYS = ("half_stiffness", "write_svg")
_STR_KEYS = ("objective_formula", "output_dir", "initial_checkpoint")


def parse_config(path) -> RunConfig:
    """Read a flat key = value file; unknown keys are hard errors."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            if key == "holdall":
                xmin, xmax, ymin, ymax = (float(p) for p in val.split(","))
                values[key] = Rectangle(xmin, xmax, ymin, ymax)
            elif key in _TUPLE2:
                a, b = (float(p) for p in val.split(","))
                values[key] = (a, b)
            elif key == "hidden_widths":
                values[key] = tuple(int(p) for p in val.split(","))
            elif key == "lr_schedule":
                values[key] = pinn.PiecewiseConstantSchedule.parse(val)
            elif key == "loss_weights":
                values[key] = None if val == "printed" else tuple(float(p) for p in val.split(","))
            elif key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key in _BOOL_KEYS:
                if val not in ("true", "false"):
                    raise ValueError("expected true/false")
                values[key] = val == "true"
            elif key in _STR_KEYS:
                values[key] = val
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**values)


@dataclass
class IterationRecord:
    """One outer iteration; wall_time is excluded from history.csv so that
    equal-seed runs produce bit-identical histories."""

    iteration: int
    objective: float
    m_plus: float
    m_minus: float
    d_inf: float
    w_inf: float
    pinn_loss: float
    wall_time: float

    HEADER = "iteration,objective,m_plus,m_minus,d_inf,w_inf,pinn_loss"

    def csv_row(self) -> str:
        return ",".join(
            [str(self.iteration)]
            + [repr(float(v)) for v in (self.objective, self.m_plus, self.m_minus, self.d_inf, self.w_inf, self.pinn_loss)]
        )


@dataclass
class RunResult:
    boundary: PolygonalBoundary
    history: list[IterationRecord]
    net: nls.NeuralLevelSet
    status: str  # converged | max_iterations | geometry_error | sampling_error
    output_dir: Path


class StateField:
    """Batch value/gradient adapters around a network, with reused buffers."""

    def __init__(self, net: nls.NeuralLevelSet):
        self.net = net
        self._ws_val = nls.Workspace()
        self._ws_grad = nls.Workspace()

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return nls.values(self.net, X, self._ws_val)

    def grad(self, X: np.ndarray) -> np.ndarray:
        return nls.gradients(self.net, X, self._ws_grad)


def mc_objective(state, tracking, partition: mc.PartitionEstimate, formula: str = "mean_based") -> float:
    """Monte Carlo tracking objective from the retained partition clouds.

    mean_based: (measure+ + measure-) * mean over the union of 1/2 (v-z)^2.
    as_printed: the acceptance-fraction sum times the raw (unnormalized)
    sum over the union; grows with the cloud size, kept for comparison.
    """
    clouds = [c for c in (partition.samples_plus, partition.samples_minus) if c.shape[0] > 0]
    if not clouds:
        raise ValueError("partition retains no samples; cannot evaluate the objective")
    union = np.concatenate(clouds)
    diff = np.asarray(state(union), dtype=float) - np.asarray(tracking(union), dtype=float)
    contrib = 0.5 * diff * diff
    if formula == "mean_based":
        return (partition.measure_plus + partition.measure_minus) * float(np.mean(contrib))
    if formula == "as_printed":
        area = partition.holdall.area
        frac = partition.measure_plus / area + partition.measure_minus / area
        return frac * float(np.sum(contrib))
    raise ValueError(f"unknown objective formula {formula!r}")


def _write_boundary(path: Path, boundary: PolygonalBoundary) -> None:
    lines = [f"{repr(float(x))},{repr(float(y))}" for x, y in boundary.vertices]
    path.write_text("\n".join(lines) + "\n")


def _write_loss_history(path: Path, history: np.ndarray, offset: int = 0, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        if not append:
            fh.write("step,loss,best_loss\n")
        for row in history:
            fh.write(f"{int(row[0]) + offset},{repr(float(row[1]))},{repr(float(row[2]))}\n")


def _objective_svg(path: Path, history: list[IterationRecord]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    its = [r.iteration for r in history]
    obj = [r.objective for r in history]
    ax.semilogy(its, obj, "k-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("Monte Carlo objective")
    ax.grid(True, which="both", alpha=0.4)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _initial_network(config: RunConfig, rng: np.random.Generator) -> tuple[nls.NeuralLevelSet, np.ndarray]:
    """Train from scratch (with restarts) or load a checkpoint."""
    if config.initial_checkpoint:
        net = nls.load_checkpoint(config.initial_checkpoint)
        log.info("loaded state network from %s", config.initial_checkpoint)
        return net, np.empty((0, 3))
    widths = (2, *config.hidden_widths, 1)
    result = pinn.train_restarts(
        widths,
        config.initial_boundary(),
        config.holdall,
        config.initial_steps,
        config.restarts,
        rng,
        n_interior=config.n_interior,
        n_boundary=config.n_boundary,
        schedule=config.lr_schedule,
        weights=config.loss_weights,
    )
    return result.net, result.history


def _iteration_gradient(
    config: RunConfig,
    boundary: PolygonalBoundary,
    state: StateField,
    tracking: TrackingData,
    iteration: int,
):
    """Partition, exits and assembled derivative for the current shape."""
    partition = mc.estimate_partition(
        state,
        tracking,
        config.holdall,
        config.m_uniform,
        mc.substream(config.seed, iteration, 1),
        safety=config.safety_factor,
        n_mean=config.m_constant,
    )
    exits = {}
    for side, stream in (("+", 2), ("-", 3)):
        m = partition.m_plus if side == "+" else partition.m_minus
        if m <= 0.0:
            exits[side] = None
            continue
        starts = mc.sample_random_starts(
            state,
            tracking,
            partition,
            side,
            config.m_exit,
            mc.substream(config.seed, iteration, stream),
        )
        exits[side] = mc.sample_exits(
            state,
            boundary,
            starts,
            config.em_delta,
            seed=(config.seed, iteration, stream + 10),
            max_steps=config.em_max_steps,
        )
    d = sd.assemble(
        partition,
        exits["+"],
        exits["-"],
        boundary,
        tracking,
        state.grad,
        n_gauss=config.boundary_quadrature,
    )
    return partition, exits, d


def run(config: RunConfig) -> RunResult:
    """Shape gradient descent with a fixed step length.

    Stops at max_iterations, when the sup norm of the assembled derivative
    falls to grad_tolerance, or on a geometry/sampling failure (the last
    valid boundary is always persisted).
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tracking = config.tracking
    boundary = config.initial_boundary()
    _write_boundary(out / "boundary_iter_0.csv", boundary)

    t0 = time.perf_counter()
    net, train_history = _initial_network(config, mc.substream(config.seed, 0xA))
    _write_loss_history(out / "pinn_loss.csv", train_history)
    log.info("initial training done in %.1fs", time.perf_counter() - t0)

    history: list[IterationRecord] = []
    timings: list[tuple[int, float]] = []
    status = "max_iterations"
    history_path = out / "history.csv"
    with open(history_path, "w") as fh:
        fh.write(IterationRecord.HEADER + "\n")

    def emit(record: IterationRecord) -> None:
        history.append(record)
        timings.append((record.iteration, record.wall_time))
        with open(history_path, "a") as fh:
            fh.write(record.csv_row() + "\n")

    state = StateField(net)
    global_step = int(train_history[-1, 0]) if train_history.size else 0

    if config.max_iterations == 0:
        it_start = time.perf_counter()
        partition, _, _ = _partition_only(config, state, tracking, 0)
        objective = mc_objective(state, tracking, partition, config.objective_formula)
        final_loss = float(train_history[-1, 2]) if train_history.size else float("nan")
        emit(
            IterationRecord(0, objective, partition.m_plus, partition.m_minus,
                            float("nan"), float("nan"), final_loss, time.perf_counter() - it_start)
        )
    for iteration in range(config.max_iterations):
        it_start = time.perf_counter()
        transfer = pinn.transfer_train(
            state.net,
            boundary,
            config.holdall,
            mc.substream(config.seed, iteration, 0),
            max_steps=config.transfer_steps,
            n_interior=config.n_interior,
            n_boundary=config.n_boundary,
            schedule=pinn.PiecewiseConstantSchedule.constant(config.transfer_lr),
            weights=config.loss_weights,
        )
        state = StateField(transfer.net)
        _write_loss_history(out / "pinn_loss.csv", transfer.history, offset=global_step, append=True)
        global_step += transfer.history.shape[0]

        try:
            partition, exits, d = _iteration_gradient(config, boundary, state, tracking, iteration)
        except mc.SamplingError as exc:
            log.error("sampling failed at iteration %d: %s", iteration, exc)
            status = "sampling_error"
            break
        fem = dfm.assemble_system(boundary, config.half_stiffness)
        w = dfm.solve_deformation(fem, d)
        W = dfm.galerkin_project(fem, w)
        objective = mc_objective(state, tracking, partition, config.objective_formula)
        emit(
            IterationRecord(
                iteration,
                objective,
                partition.m_plus,
                partition.m_minus,
                d.inf_norm,
                float(np.max(np.abs(W))),
                transfer.best_loss,
                time.perf_counter() - it_start,
            )
        )
        log.info(
            "iter %3d: J=%.4e  m+=%.3e  m-=%.3e  |d|=%.3e  loss=%.3e",
            iteration, objective, partition.m_plus, partition.m_minus, d.inf_norm, transfer.best_loss,
        )
        if d.inf_norm <= config.grad_tolerance:
            status = "converged"
            break
        try:
            boundary = dfm.update_vertices(boundary, W, config.step_length)
        except GeometryError as exc:
            log.error("geometry failure at iteration %d: %s (step too long)", iteration, exc)
            status = "geometry_error"
            break
        _write_boundary(out / f"boundary_iter_{iteration + 1}.csv", boundary)

    _write_boundary(out / "final_boundary.csv", boundary)
    nls.save_checkpoint(state.net, out / "final_net.ckpt")
    with open(out / "timings.csv", "w") as fh:
        fh.write("iteration,seconds\n")
        for it, sec in timings:
            fh.write(f"{it},{sec:.3f}\n")
    if config.write_svg and history:
        _objective_svg(out / "objective.svg", history)
    return RunResult(boundary=boundary, history=history, net=state.net, status=status, output_dir=out)


def _partition_only(config: RunConfig, state: StateField, tracking: TrackingData, iteration: int):
    partition = mc.estimate_partition(
        state,
        tracking,
        config.holdall,
        config.m_uniform,
        mc.substream(config.seed, iteration, 1),
        safety=config.safety_factor,
        n_mean=config.m_constant,
    )
    return partition, None, None


def derivative_check(config: RunConfig, vertices=None, h: float = 1e-3):
    """Compare the assembled derivative against objective finite differences.

    Each probed vertex is displaced by +-h along its mean normal; the state
    is transfer-retrained and the Monte Carlo objective re-estimated with
    identical substreams (common random numbers).  The assembled value d_i
    estimates the pull-back derivative, which equals the push-forward
    derivative with flipped sign, so d is compared against -FD.

    Returns (vertex indices, d values, fd values).
    """
    tracking = config.tracking
    boundary = config.initial_boundary()
    net, _ = _initial_network(config, mc.substream(config.seed, 0xA))
    state = StateField(net)
    _, _, d = _iteration_gradient(config, boundary, state, tracking, 0)

    k = boundary.n_vertices
    probe = list(range(k)) if vertices is None else list(vertices)
    fd = np.zeros(len(probe))

    def objective_for(vertices_xy: np.ndarray) -> float:
        pert = PolygonalBoundary(vertices_xy, normalize_orientation=False)
        res = pinn.transfer_train(
            net,
            pert,
            config.holdall,
            mc.substream(config.seed, 0xBEEF, 0),
            max_steps=config.transfer_steps,
            n_interior=config.n_interior,
            n_boundary=config.n_boundary,
            schedule=pinn.PiecewiseConstantSchedule.constant(config.transfer_lr),
            weights=config.loss_weights,
        )
        st = StateField(res.net)
        part = mc.estimate_partition(
            st,
            tracking,
            config.holdall,
            config.m_uniform,
            mc.substream(config.seed, 0xBEEF, 1),
            safety=config.safety_factor,
            n_mean=config.m_constant,
        )
        return mc_objective(st, tracking, part, config.objective_formula)

    for col, j in enumerate(probe):
        nu = sd.vertex_mean_normal(boundary, j)
        plus = boundary.vertices.copy()
        plus[j] += h * nu
        minus = boundary.vertices.copy()
        minus[j] -= h * nu
        fd[col] = (objective_for(plus) - objective_for(minus)) / (2.0 * h)
    return np.asarray(probe, dtype=int), d.values[probe], fd
