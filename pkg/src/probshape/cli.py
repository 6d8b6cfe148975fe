"""Command-line entry points.

    probshape run --config run.cfg
    probshape pinn-train --config run.cfg
    probshape derivative-check --config run.cfg [--vertices 0,4,8]
    probshape exit-diagnostics --config run.cfg
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import driver, monte_carlo as mc, neural_level_set as nls, pinn

log = logging.getLogger("probshape")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="flat key = value configuration file")


def cmd_run(args) -> int:
    config = driver.parse_config(args.config)
    result = driver.run(config)
    print(f"status: {result.status}")
    if result.history:
        last = result.history[-1]
        print(f"iterations: {len(result.history)}  final objective: {last.objective:.6e}")
    print(f"outputs in {result.output_dir}")
    return 0 if result.status in ("converged", "max_iterations") else 1


def cmd_pinn_train(args) -> int:
    config = driver.parse_config(args.config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = mc.substream(config.seed, 0xA)
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
    driver._write_loss_history(out / "pinn_loss.csv", result.history)
    nls.save_checkpoint(result.net, out / "pinn_net.ckpt")
    print(f"best loss {result.best_loss:.6e}; checkpoint at {out / 'pinn_net.ckpt'}")
    return 0


def cmd_derivative_check(args) -> int:
    config = driver.parse_config(args.config)
    vertices = None
    if args.vertices:
        vertices = [int(v) for v in args.vertices.split(",")]
    idx, d, fd = driver.derivative_check(config, vertices=vertices)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "derivative_check.csv", "w") as fh:
        fh.write("vertex,d,fd_objective\n")
        for j, dj, fj in zip(idx, d, fd):
            fh.write(f"{j},{dj!r},{fj!r}\n")
    # pull-back convention: d estimates the flipped-sign push-forward derivative
    informative = np.abs(fd) > 0
    agree = np.sign(d[informative]) == np.sign(-fd[informative])
    frac = float(np.mean(agree)) if informative.any() else float("nan")
    print(f"sign agreement d vs -fd: {frac:.0%} over {int(informative.sum())} vertices")
    return 0 if frac >= 0.8 else 1


def cmd_exit_diagnostics(args) -> int:
    config = driver.parse_config(args.config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tracking = config.tracking
    boundary = config.initial_boundary()
    net, _ = driver._initial_network(config, mc.substream(config.seed, 0xA))
    state = driver.StateField(net)
    partition = mc.estimate_partition(
        state, tracking, config.holdall, config.m_uniform,
        mc.substream(config.seed, 0, 1), safety=config.safety_factor, n_mean=config.m_constant,
    )
    wrote = []
    for side, stream, name in (("+", 2, "plus"), ("-", 3, "minus")):
        m = partition.m_plus if side == "+" else partition.m_minus
        path = out / f"exit_samples_{name}.csv"
        with open(path, "w") as fh:
            fh.write("start_x,start_y,exit_x,exit_y,edge,steps\n")
            if m > 0.0:
                starts = mc.sample_random_starts(
                    state, tracking, partition, side, config.m_exit,
                    mc.substream(config.seed, 0, stream),
                )
                exits = mc.sample_exits(
                    state, boundary, starts, config.em_delta,
                    seed=(config.seed, 0, stream + 10), max_steps=config.em_max_steps,
                )
                for i in range(len(starts)):
                    fh.write(
                        f"{starts[i,0]!r},{starts[i,1]!r},{exits.exits[i,0]!r},{exits.exits[i,1]!r},"
                        f"{int(exits.edges[i])},{int(exits.steps_taken[i])}\n"
                    )
        wrote.append(str(path))
    print("wrote " + " and ".join(wrote))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="probshape", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full shape optimization loop")
    _add_config(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("pinn-train", help="state solve only; writes a checkpoint")
    _add_config(p)
    p.set_defaults(func=cmd_pinn_train)

    p = sub.add_parser("derivative-check", help="finite-difference validation of the assembled derivative")
    _add_config(p)
    p.add_argument("--vertices", default="", help="comma-separated vertex subset (default: all)")
    p.set_defaults(func=cmd_derivative_check)

    p = sub.add_parser("exit-diagnostics", help="dump exit samples for visual inspection")
    _add_config(p)
    p.set_defaults(func=cmd_exit_diagnostics)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
