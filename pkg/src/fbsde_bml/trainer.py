"""Training loop: resample noise, roll out, estimate the loss, step Adam.

Each training step draws a fresh Brownian batch from a sub-seed derived from
(seed, step), so the whole run is a pure function of its configuration. The
recorded loss at step k is the pre-update loss at that step. On a divergence
(non-finite state, loss or gradient) the step is aborted, the learning rate
is halved once for the rest of the run and the step retries on a fresh
sub-stream; a second divergence stops training with the last finite
parameters.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError
from .net import AdamState, NetworkArch, NetworkParams, adam_step, forward_v, grad, init_network
from .problems import FBSDEProblem
from .rollout import LossSpec, bml, rollout
from .sampling import TimeGrid, derive_seed, make_grid, sample_brownian


@dataclass(frozen=True)
class TrainConfig:
    """One training run's settings.

    ``hidden_layers``/``hidden_width`` size both trial networks; the input
    and output dimensions follow from the problem.
    """

    problem_name: str
    loss_spec: LossSpec
    M: int
    N: int
    lr: float
    max_steps: int
    hidden_layers: int = 2
    hidden_width: int = 8
    tolerance: float = 0.0
    seed: int = 0
    record_every: int = 10

    def __post_init__(self):
        if self.M < 1 or self.N < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("M, N and network sizes must be positive")
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")
        if self.max_steps > 0 and self.record_every > self.max_steps:
            raise ValueError("record_every cannot exceed max_steps")
        if self.tolerance < 0.0:
            raise ValueError("tolerance must be non-negative")


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    y0: np.ndarray
    rel_err: Optional[float]


@dataclass
class TrainingRecord:
    """Training curve plus run outcome.

    ``stop_reason`` is one of "tolerance", "max_steps" or "divergence".
    ``final_loss`` is the last pre-update loss seen (None if no step ran).
    """

    steps: List[StepRecord] = field(default_factory=list)
    stop_reason: str = "max_steps"
    wall_clock_seconds: float = 0.0
    final_loss: Optional[float] = None
    final_y0: Optional[np.ndarray] = None
    final_rel_err: Optional[float] = None
    checkpoint_path: Optional[str] = None


@dataclass(frozen=True)
class SolutionPaths:
    """Sampled solution paths under fixed parameters: X, Y, Z at all nodes."""

    x: np.ndarray  # (M, N+1, n)
    y: np.ndarray  # (M, N+1, m)
    z: np.ndarray  # (M, N+1, m, d)
    grid: TimeGrid


def relative_error(y0_est: np.ndarray, y0_ref: np.ndarray) -> float:
    """Euclidean-norm ratio ||est - ref|| / ||ref||."""
    est = np.asarray(y0_est, dtype=np.float64).ravel()
    ref = np.asarray(y0_ref, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError(f"estimate has length {est.size}, reference {ref.size}")
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0.0:
        raise ValueError("reference has zero norm; relative error undefined")
    return float(np.linalg.norm(est - ref) / ref_norm)


def _y0_estimate(params: NetworkParams, problem: FBSDEProblem) -> np.ndarray:
    with ad.no_grad():
        return forward_v(params, 0.0, problem.x0).value.copy()


def _maybe_rel_err(y0: np.ndarray, problem: FBSDEProblem) -> Optional[float]:
    ref = problem.reference_y0
    if ref is None or np.linalg.norm(ref) == 0.0:
        return None
    return relative_error(y0, ref)


def train(problem: FBSDEProblem, config: TrainConfig):
    """Run the optimization loop; returns (params, record).

    Stops when the pre-update loss falls below ``tolerance`` (checked before
    the update, so the returned parameters are the ones that achieved it),
    after ``max_steps`` updates, or on a second divergence.
    """
    grid = make_grid(problem.T, config.N)
    arch = NetworkArch(
        input_dim=problem.n + 1,
        hidden_layers=config.hidden_layers,
        hidden_width=config.hidden_width,
        output_dim_v=problem.m,
        output_dim_u=problem.m * problem.d,
    )
    params = init_network(arch, derive_seed(config.seed, 0))
    state = AdamState.zeros(params)
    lr = config.lr
    halved = False

    record = TrainingRecord()
    t_start = time.perf_counter()
    step = 0
    attempt = 0
    while step < config.max_steps:
        noise_seed = (
            derive_seed(config.seed, step + 1)
            if attempt == 0
            else derive_seed(config.seed, step + 1, attempt)
        )
        try:
            bm = sample_brownian(grid, config.M, problem.d, noise_seed)
            batch = rollout(problem, params, bm, grid)
            loss = bml(batch, problem, config.loss_spec)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError("non-finite loss value")
            rec = None
            if step % config.record_every == 0:
                y0 = _y0_estimate(params, problem)
                rec = StepRecord(step, loss_val, y0, _maybe_rel_err(y0, problem))
            if loss_val < config.tolerance:
                if rec is not None:
                    record.steps.append(rec)
                record.final_loss = loss_val
                record.stop_reason = "tolerance"
                break
            gs = grad(loss, params)
            params, state = adam_step(params, gs, state, lr)
        except DivergenceError:
            if halved:
                record.stop_reason = "divergence"
                break
            halved = True
            lr *= 0.5
            attempt += 1
            continue
        if rec is not None:
            record.steps.append(rec)
        record.final_loss = loss_val
        step += 1
        attempt = 0

    record.wall_clock_seconds = time.perf_counter() - t_start
    record.final_y0 = _y0_estimate(params, problem)
    record.final_rel_err = _maybe_rel_err(record.final_y0, problem)
    return params, record


def export_solution(
    problem: FBSDEProblem,
    params,
    n_paths: int,
    N: int,
    seed: int,
) -> SolutionPaths:
    """Sample solution paths under fixed parameters on a fresh noise batch.

    Deterministic in (params, seed). Nothing is recorded on the tape.
    """
    grid = make_grid(problem.T, N)
    bm = sample_brownian(grid, n_paths, problem.d, seed)
    with ad.no_grad():
        batch = rollout(problem, params, bm, grid)
    return SolutionPaths(
        x=batch.x_tilde, y=batch.y_tilde, z=batch.z_tilde, grid=grid
    )
