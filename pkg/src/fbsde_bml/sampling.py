"""Equidistant time grids and batched Brownian-motion sample paths.

All randomness flows through numpy's Philox bit generator, a counter-based
RNG keyed here by an explicit integer seed. Within a batch the draws are
laid out path-major, so the increments of path ``r`` occupy a fixed counter
block determined by ``(seed, r, N, d)``: regenerating any subset of paths in
any order (or in parallel) reproduces the sequential result bit-for-bit.
Standard normals come from ``Generator.standard_normal`` (ziggurat method).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def derive_seed(seed: int, *branch: int) -> int:
    """Deterministically derive an independent sub-seed from (seed, branch).

    Used to give every training step (and every retry) its own noise stream
    without correlations between streams.
    """
    ss = np.random.SeedSequence([int(seed), *[int(b) for b in branch]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TimeGrid:
    """N+1 equidistant nodes t_i = i*T/N on [0, T]."""

    T: float
    N: int
    nodes: np.ndarray

    @property
    def spacing(self) -> float:
        return self.T / self.N


def make_grid(T: float, N: int) -> TimeGrid:
    """Build the equidistant grid with spacing T/N.

    Raises ValueError unless T > 0 and N >= 1.
    """
    T = float(T)
    N = int(N)
    if T <= 0.0:
        raise ValueError(f"terminal time must be positive, got T={T}")
    if N < 1:
        raise ValueError(f"need at least one time interval, got N={N}")
    nodes = np.linspace(0.0, T, N + 1)
    nodes.flags.writeable = False
    return TimeGrid(T=T, N=N, nodes=nodes)


@dataclass(frozen=True)
class BrownianBatch:
    """M sampled d-dimensional Brownian paths evaluated on a grid's nodes.

    ``values[r, i, k]`` is component k of path r at node t_i; every path
    starts at zero and consecutive nodes differ by independent
    Normal(0, T/N) draws per component.
    """

    M: int
    d: int
    seed: int
    values: np.ndarray  # (M, N+1, d)

    def increments(self) -> np.ndarray:
        """Per-interval increments W_{t_{i+1}} - W_{t_i}, shape (M, N, d)."""
        return np.diff(self.values, axis=1)


def sample_brownian(grid: TimeGrid, M: int, d: int, seed: int) -> BrownianBatch:
    """Sample M standard Brownian paths on the grid's nodes.

    Pure function of (grid, M, d, seed): identical inputs reproduce
    bit-identical batches. Raises ValueError on M < 1 or d < 1.
    """
    M = int(M)
    d = int(d)
    if M < 1:
        raise ValueError(f"need at least one path, got M={M}")
    if d < 1:
        raise ValueError(f"Brownian dimension must be positive, got d={d}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    steps = rng.standard_normal((M, grid.N, d)) * np.sqrt(grid.spacing)
    values = np.empty((M, grid.N + 1, d))
    values[:, 0, :] = 0.0
    np.cumsum(steps, axis=1, out=values[:, 1:, :])
    values.flags.writeable = False
    return BrownianBatch(M=M, d=d, seed=int(seed), values=values)
