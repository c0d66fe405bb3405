"""Forward rollouts, the three loss estimators, and the validation metric.

The rollout advances the Euler-Maruyama recursion

    X_{t_{i+1}} = X_{t_i} + b(t_i, X, y, z) T/N
                  + sigma(t_i, X, y, z) (W_{t_{i+1}} - W_{t_i}),

with the trial maps substituted into the coefficients: y_i = v(t_i, X_i),
z_i = u(t_i, X_i). Every quantity is recorded on the autodiff tape, so a
scalar loss built from the batch differentiates back into the trial
networks, through the coefficients and the state recursion alike. Brownian
increments are constants.

The loss is the measure-weighted mean squared residual of the discrete
backward identity. With F_j = sum_{i=j}^{N-1} f_i and
S_j = sum_{i=j}^{N-1} z_i (W_{t_{i+1}} - W_{t_i}),

    R_j = y_j - ( g(X_N) + (T/N) F_j - S_j ),

and the weights over node indices j = 0..N-1 are either a point mass at
j = 0 (``delta``), uniform 1/N (``lebesgue``), or the normalized geometric
sequence e^{-gamma j} (``exp_decay``), which interpolates the other two as
gamma goes to infinity or zero. Both time integrals use the left-endpoint
rectangle rule with step T/N. The same Brownian increments drive the state
recursion and the residuals.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError
from .net import NetworkParams
from .problems import FBSDEProblem
from .sampling import BrownianBatch, TimeGrid

MEASURE_KINDS = ("delta", "lebesgue", "exp_decay")


@dataclass(frozen=True)
class LossSpec:
    """Which time measure weights the residuals; gamma applies to exp_decay."""

    kind: str
    gamma: float = 0.05

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise ValueError(f"kind must be one of {MEASURE_KINDS}, got {self.kind!r}")
        if self.kind == "exp_decay" and not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def measure_weights(spec: LossSpec, N: int) -> np.ndarray:
    """Discrete weights w_j over node indices 0..N-1; they sum to one."""
    if N < 1:
        raise ValueError("N must be positive")
    if spec.kind == "delta":
        w = np.zeros(N)
        w[0] = 1.0
        return w
    if spec.kind == "lebesgue":
        return np.full(N, 1.0 / N)
    # exp_decay: e^{-gamma j} normalized via expm1 so tiny gamma stays exact
    g = spec.gamma
    scale = np.expm1(-g) / np.expm1(-g * N)
    return scale * np.exp(-g * np.arange(N))


@dataclass
class RolloutBatch:
    """Per-path, per-node tape values produced by one rollout.

    Node lists hold tensors: states x (M, n), trial values y (M, m) and
    z (M, m, d) at all N+1 nodes, generator values f at nodes 0..N-1, and
    the terminal map g(X_N). ``increments`` are the Brownian increments the
    rollout consumed, shape (M, N, d).
    """

    x_nodes: List[ad.Tensor]
    y_nodes: List[ad.Tensor]
    z_nodes: List[ad.Tensor]
    f_nodes: List[ad.Tensor]
    g_node: ad.Tensor
    grid: TimeGrid
    increments: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.x_nodes[0].shape[0]

    @property
    def x_tilde(self) -> np.ndarray:
        return np.stack([t.value for t in self.x_nodes], axis=1)

    @property
    def y_tilde(self) -> np.ndarray:
        return np.stack([t.value for t in self.y_nodes], axis=1)

    @property
    def z_tilde(self) -> np.ndarray:
        return np.stack([t.value for t in self.z_nodes], axis=1)

    @property
    def f_vals(self) -> np.ndarray:
        return np.stack([t.value for t in self.f_nodes], axis=1)

    @property
    def g_vals(self) -> np.ndarray:
        return self.g_node.value


def rollout(
    problem: FBSDEProblem,
    trial,
    bm: BrownianBatch,
    grid: TimeGrid,
) -> RolloutBatch:
    """Roll the trial-coupled forward recursion along every sampled path.

    ``trial`` is anything exposing v(t, x) -> (M, m) and u(t, x) -> (M, m, d)
    on tensors: trained networks or an AnalyticTrial. Raises DivergenceError
    (naming the step) if the state leaves the finite range.
    """
    if bm.values.shape[1] != grid.N + 1:
        raise ValueError(
            f"Brownian batch has {bm.values.shape[1]} nodes, grid has {grid.N + 1}"
        )
    if bm.d != problem.d:
        raise ValueError(f"Brownian dimension {bm.d} != problem dimension {problem.d}")
    if isinstance(trial, NetworkParams):
        arch = trial.arch
        if (
            arch.input_dim != problem.n + 1
            or arch.output_dim_v != problem.m
            or arch.output_dim_u != problem.m * problem.d
        ):
            raise ValueError("network architecture does not match problem dimensions")

    dt = grid.spacing
    dw = bm.increments()
    x = ad.as_tensor(np.broadcast_to(problem.x0, (bm.M, problem.n)).copy())
    x_nodes, y_nodes, z_nodes, f_nodes = [], [], [], []
    for i in range(grid.N + 1):
        t = float(grid.nodes[i])
        y = trial.v(t, x)
        z = trial.u(t, x)
        x_nodes.append(x)
        y_nodes.append(y)
        z_nodes.append(z)
        if i == grid.N:
            break
        f_nodes.append(problem.f(t, x, y, z))
        b_val = problem.b(t, x, y, z)
        s_val = problem.sigma(t, x, y, z)
        step_dw = dw[:, i, :]
        diffusion = ad.tensor_sum(s_val * ad.as_tensor(step_dw[:, None, :]), axis=2)
        x = x + b_val * dt + diffusion
        if not np.all(np.isfinite(x.value)):
            raise DivergenceError(
                f"non-finite forward state at time step {i + 1}", step=i + 1
            )
    g_node = problem.g(x_nodes[-1])
    return RolloutBatch(
        x_nodes=x_nodes,
        y_nodes=y_nodes,
        z_nodes=z_nodes,
        f_nodes=f_nodes,
        g_node=g_node,
        grid=grid,
        increments=dw,
    )


def _check_batch(batch: RolloutBatch, problem: FBSDEProblem) -> None:
    M = batch.n_paths
    if (
        batch.y_nodes[0].shape != (M, problem.m)
        or batch.z_nodes[0].shape != (M, problem.m, problem.d)
        or batch.x_nodes[0].shape != (M, problem.n)
    ):
        raise ValueError("rollout batch shapes do not match problem dimensions")


def bml(batch: RolloutBatch, problem: FBSDEProblem, spec: LossSpec) -> ad.Tensor:
    """Measure-weighted mean squared backward residual, on the tape.

    Residuals at zero-weight nodes are skipped, so the delta measure only
    builds the j = 0 term. Suffix sums accumulate from the terminal node
    down, in a fixed order.
    """
    _check_batch(batch, problem)
    N = batch.grid.N
    dt = batch.grid.spacing
    w = measure_weights(spec, N)
    dw = batch.increments
    g_val = batch.g_node

    node_losses = [None] * N
    suffix_z = None
    suffix_f = None
    for j in range(N - 1, -1, -1):
        z_dw = ad.tensor_sum(
            batch.z_nodes[j] * ad.as_tensor(dw[:, j, :][:, None, :]), axis=2
        )
        suffix_z = z_dw if suffix_z is None else suffix_z + z_dw
        suffix_f = batch.f_nodes[j] if suffix_f is None else suffix_f + batch.f_nodes[j]
        if w[j] != 0.0:
            resid = batch.y_nodes[j] - g_val - dt * suffix_f + suffix_z
            node_losses[j] = ad.tensor_mean(ad.tensor_sum(resid * resid, axis=1))
    total = None
    for j in range(N):
        if node_losses[j] is None:
            continue
        term = w[j] * node_losses[j]
        total = term if total is None else total + term
    return total


def _as_value(a) -> np.ndarray:
    return a.value if isinstance(a, ad.Tensor) else np.asarray(a, dtype=np.float64)


def dist_mu(
    trial: Sequence,
    reference: Sequence,
    grid: TimeGrid,
    spec: LossSpec,
) -> float:
    """Squared process distance between two (y, z) samplings on one grid.

    Both arguments are pairs of arrays sampled on the same paths and nodes:
    y of shape (M, N+1, m) and z of shape (M, N+1, m, d). Computes

        sum_j w_j * mean_r [ |y_j - Y_j|^2 + (T/N) sum_{i=j}^{N-1} |z_i - Z_i|^2 ]

    with the same node weights w_j as the loss estimators, so comparisons
    against the loss are like-for-like.
    """
    y, z = (_as_value(a) for a in trial)
    ref_y, ref_z = (_as_value(a) for a in reference)
    if y.shape != ref_y.shape or z.shape != ref_z.shape:
        raise ValueError("trial and reference shapes differ")
    if y.ndim != 3 or z.ndim != 4 or y.shape[1] != grid.N + 1 or z.shape[1] != grid.N + 1:
        raise ValueError("expected y (M, N+1, m) and z (M, N+1, m, d) samplings")
    N = grid.N
    w = measure_weights(spec, N)
    dy2 = ((y - ref_y) ** 2).sum(axis=2).mean(axis=0)  # (N+1,)
    dz2 = ((z - ref_z) ** 2).sum(axis=(2, 3)).mean(axis=0)  # (N+1,)
    suffix = np.cumsum(dz2[:N][::-1])[::-1]  # suffix[j] = sum_{i>=j} dz2[i]
    return float(np.dot(w, dy2[:N] + grid.spacing * suffix))
