import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from probshape import driver
from probshape import geometry as geo
from probshape import monte_carlo as mc
from probshape import pinn

TINY = dict(
    n_vertices=12,
    hidden_widths=(8,),
    n_interior=400,
    n_boundary=120,
    initial_steps=300,
    restarts=1,
    transfer_steps=20,
    m_uniform=2000,
    m_constant=2000,
    m_exit=4,
    em_delta=1e-3,
    max_iterations=2,
    seed=3,
)


def tiny_config(tmp_path, **overrides):
    kw = dict(TINY)
    kw.update(overrides)
    kw.setdefault("output_dir", str(tmp_path / "out"))
    return driver.RunConfig(**kw)


class TestConfigFile:
    def test_full_round_trip(self, tmp_path):
        text = """
# benchmark configuration
holdall = 0,1,0,1
ellipse_center = 0.5,0.5
ellipse_semi_major = 0.4
ellipse_semi_minor = 0.3
ball_center = 0.5,0.5
ball_radius = 0.25
n_vertices = 160
hidden_widths = 20,20
n_interior = 45000
n_boundary = 22500
initial_steps = 50000
restarts = 3
transfer_steps = 200
lr_schedule = 0:1e-3,0.6:1e-4
transfer_lr = 1e-3
loss_weights = printed
m_uniform = 10000000
m_constant = 1000000
m_exit = 100
safety_factor = 1.1
em_delta = 1e-4
em_max_steps = 10000000
step_length = 100.0
max_iterations = 30
grad_tolerance = 0.0
boundary_quadrature = 4
half_stiffness = true
objective_formula = mean_based
seed = 0
output_dir = run_out
initial_checkpoint =
write_svg = false
"""
        path = tmp_path / "run.cfg"
        path.write_text(text)
        cfg = driver.parse_config(path)
        assert cfg == driver.RunConfig(output_dir="run_out")

    def test_defaults_match_reference_protocol(self):
        cfg = driver.RunConfig()
        assert cfg.m_uniform == 10_000_000
        assert cfg.m_exit == 100
        assert cfg.n_vertices == 160
        assert cfg.ball_radius == 0.25
        assert cfg.ellipse_semi_major == 0.4 and cfg.ellipse_semi_minor == 0.3
        assert cfg.safety_factor == 1.1
        assert cfg.n_interior == 45000 and cfg.n_boundary == 22500
        assert cfg.holdall.area == 1.0

    def test_unknown_key_is_hard_error(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("n_vertices = 10\nwibble = 3\n")
        with pytest.raises(driver.ConfigError, match="unknown key"):
            driver.parse_config(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "dup.cfg"
        path.write_text("seed = 1\nseed = 2\n")
        with pytest.raises(driver.ConfigError, match="duplicate"):
            driver.parse_config(path)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("step_length = banana\n")
        with pytest.raises(driver.ConfigError, match="bad.cfg:1"):
            driver.parse_config(path)

    def test_invalid_combinations_rejected(self):
        with pytest.raises(driver.ConfigError):
            driver.RunConfig(step_length=0.0)
        with pytest.raises(driver.ConfigError):
            driver.RunConfig(em_delta=1.0)
        with pytest.raises(driver.ConfigError):
            driver.RunConfig(objective_formula="other")
        with pytest.raises(driver.ConfigError):
            driver.RunConfig(safety_factor=1.0)


class TestMcObjective:
    def _partition(self, cloud_plus, cloud_minus, measure_plus, measure_minus):
        return mc.PartitionEstimate(
            measure_plus=measure_plus, measure_minus=measure_minus, m_plus=1.0, m_minus=1.0,
            C_plus=1.0, C_minus=1.0, samples_plus=cloud_plus, samples_minus=cloud_minus,
            trials_plus=100, trials_minus=100, holdall=geo.Rectangle(0, 1, 0, 1), safety=1.1,
        )

    def test_exact_match_gives_zero(self):
        rng = np.random.default_rng(0)
        cloud = rng.random((50, 2))
        z = lambda X: X[:, 0] + X[:, 1]
        part = self._partition(cloud, np.zeros((0, 2)), 0.2, 0.0)
        assert driver.mc_objective(z, z, part) == 0.0

    def test_constant_difference_analytic_value(self):
        # v - z = kappa on a disk of area A: objective -> A kappa^2 / 2
        kappa, R = 0.4, 0.25
        rng = mc.substream(55)
        state = lambda X: np.where((X[:, 0] - 0.5) ** 2 + (X[:, 1] - 0.5) ** 2 <= R * R, kappa, -1.0)
        z = lambda X: np.zeros(len(X))
        part = mc.estimate_partition(state, z, geo.Rectangle(0, 1, 0, 1), 50_000, rng)
        J = driver.mc_objective(state, z, part)
        expected = np.pi * R * R * kappa * kappa / 2.0
        sigma_measure = np.sqrt((np.pi / 16) * (1 - np.pi / 16) / part.trials_plus)
        assert abs(J - expected) < 3 * sigma_measure * kappa * kappa / 2.0 + 1e-12

    def test_as_printed_formula(self):
        cloud = np.array([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
        state = lambda X: X[:, 0]
        z = lambda X: np.zeros(len(X))
        part = self._partition(cloud, cloud.copy(), 0.5, 0.25)
        union = np.vstack([cloud, cloud])
        raw = float(np.sum(0.5 * state(union) ** 2))
        expected = (0.5 / 1.0 + 0.25 / 1.0) * raw
        assert driver.mc_objective(state, z, part, "as_printed") == pytest.approx(expected, rel=1e-14)
        mean_based = (0.5 + 0.25) * raw / 6.0
        assert driver.mc_objective(state, z, part) == pytest.approx(mean_based, rel=1e-14)

    def test_empty_union_is_error(self):
        part = self._partition(np.zeros((0, 2)), np.zeros((0, 2)), 0.0, 0.0)
        with pytest.raises(ValueError):
            driver.mc_objective(lambda X: X[:, 0], lambda X: X[:, 0], part)


@pytest.mark.slow
class TestRunLoop:
    def test_zero_iterations_emits_initial_state_only(self, tmp_path):
        cfg = tiny_config(tmp_path, max_iterations=0)
        res = driver.run(cfg)
        assert len(res.history) == 1
        rec = res.history[0]
        assert rec.iteration == 0
        assert np.isfinite(rec.objective)
        assert np.isnan(rec.d_inf) and np.isnan(rec.w_inf)
        out = Path(cfg.output_dir)
        assert (out / "boundary_iter_0.csv").exists()
        assert (out / "history.csv").exists()
        boundary = np.loadtxt(out / "boundary_iter_0.csv", delimiter=",")
        assert boundary.shape == (cfg.n_vertices, 2)

    def test_history_iterations_strictly_increasing(self, tmp_path):
        cfg = tiny_config(tmp_path)
        res = driver.run(cfg)
        assert res.status in ("max_iterations", "converged")
        its = [r.iteration for r in res.history]
        assert its == list(range(len(its)))

    def test_identical_seeds_produce_identical_history(self, tmp_path):
        cfg_a = tiny_config(tmp_path, output_dir=str(tmp_path / "a"))
        cfg_b = tiny_config(tmp_path, output_dir=str(tmp_path / "b"))
        driver.run(cfg_a)
        driver.run(cfg_b)
        hist_a = (tmp_path / "a" / "history.csv").read_bytes()
        hist_b = (tmp_path / "b" / "history.csv").read_bytes()
        assert hist_a == hist_b
        # geometry snapshots equally deterministic
        ba = (tmp_path / "a" / "final_boundary.csv").read_bytes()
        bb = (tmp_path / "b" / "final_boundary.csv").read_bytes()
        assert ba == bb

    def test_grad_tolerance_stops_early(self, tmp_path):
        cfg = tiny_config(tmp_path, grad_tolerance=1e30, max_iterations=3)
        res = driver.run(cfg)
        assert res.status == "converged"
        assert len(res.history) == 1

    def test_checkpoint_warm_start(self, tmp_path, ball_training):
        cfg = tiny_config(
            tmp_path,
            n_vertices=64,
            initial_checkpoint=ball_training["checkpoint"],
            m_uniform=20_000,
            m_constant=20_000,
            m_exit=16,
            transfer_steps=40,
            n_interior=2000,
            n_boundary=1000,
            max_iterations=1,
            em_delta=1e-4,
        )
        res = driver.run(cfg)
        assert res.status in ("max_iterations", "converged")
        assert len(res.history) == 1
        assert np.isfinite(res.history[0].objective)


@pytest.mark.slow
class TestCli:
    def test_run_subcommand_end_to_end(self, tmp_path):
        out = tmp_path / "cli_out"
        cfg_text = "\n".join(
            [
                "n_vertices = 12",
                "hidden_widths = 8",
                "n_interior = 400",
                "n_boundary = 120",
                "initial_steps = 300",
                "restarts = 1",
                "transfer_steps = 20",
                "m_uniform = 2000",
                "m_constant = 2000",
                "m_exit = 4",
                "em_delta = 1e-3",
                "max_iterations = 1",
                "seed = 3",
                f"output_dir = {out}",
                "write_svg = true",
            ]
        )
        cfg_file = tmp_path / "tiny.cfg"
        cfg_file.write_text(cfg_text + "\n")
        proc = subprocess.run(
            [sys.executable, "-m", "probshape.cli", "run", "--config", str(cfg_file)],
            capture_output=True,
            text=True,
            timeout=600,
        )
        assert proc.returncode == 0, proc.stderr
        assert "status:" in proc.stdout
        for name in ("history.csv", "boundary_iter_0.csv", "final_boundary.csv", "timings.csv", "objective.svg", "pinn_loss.csv", "final_net.ckpt"):
            assert (out / name).exists(), name

    def test_pinn_train_writes_checkpoint(self, tmp_path):
        out = tmp_path / "train_out"
        cfg_file = tmp_path / "train.cfg"
        cfg_file.write_text(
            "\n".join(
                [
                    "n_vertices = 12",
                    "hidden_widths = 8",
                    "n_interior = 300",
                    "n_boundary = 60",
                    "initial_steps = 100",
                    "restarts = 1",
                    f"output_dir = {out}",
                ]
            )
            + "\n"
        )
        proc = subprocess.run(
            [sys.executable, "-m", "probshape.cli", "pinn-train", "--config", str(cfg_file)],
            capture_output=True,
            text=True,
            timeout=300,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "pinn_net.ckpt").exists()
        assert (out / "pinn_loss.csv").exists()
        lines = (out / "pinn_loss.csv").read_text().splitlines()
        assert lines[0] == "step,loss,best_loss"
        assert len(lines) == 101
