"""Trial-solution networks, gradient extraction and a minimal Adam optimizer.

Two fully connected networks share one architecture: ``v`` maps (t, x) to
the m-dimensional backward value and ``u`` maps (t, x) to the flattened
m*d-dimensional volatility block. Hidden layers use tanh (smooth and
bounded, which keeps early rollouts stable); output layers are linear since
the target processes are unbounded. Everything runs in float64.

Weights initialize uniformly on [-1/sqrt(fan_in), +1/sqrt(fan_in)] with zero
biases, drawn from a Philox generator keyed by the seed, so initialization
is reproducible bit-for-bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError


@dataclass(frozen=True)
class NetworkArch:
    """Shared architecture hyperparameters of the v and u networks.

    ``input_dim`` is n + 1 for the stacked [t, x] input. The time input is
    fed raw (not normalized); all builtin problems have T <= 1.
    """

    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim_v: int
    output_dim_u: int
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("input_dim", "hidden_layers", "hidden_width", "output_dim_v", "output_dim_u"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activations are supported")
        if self.output_dim_u % self.output_dim_v != 0:
            raise ValueError("output_dim_u must be a multiple of output_dim_v")

    def layer_dims(self, output_dim: int) -> List[Tuple[int, int]]:
        dims = [(self.input_dim, self.hidden_width)]
        dims += [(self.hidden_width, self.hidden_width)] * (self.hidden_layers - 1)
        dims.append((self.hidden_width, output_dim))
        return dims


@dataclass
class NetworkParams:
    """All weights of both networks, as autodiff leaf tensors.

    ``tensors()`` flattens them in a fixed order (v layers then u layers,
    weight matrix before bias) which is also the checkpoint layout.
    """

    arch: NetworkArch
    seed: int
    v_layers: List[Tuple[ad.Tensor, ad.Tensor]] = field(repr=False)
    u_layers: List[Tuple[ad.Tensor, ad.Tensor]] = field(repr=False)

    @property
    def param_count(self) -> int:
        dims = self.arch.layer_dims(self.arch.output_dim_v) + self.arch.layer_dims(
            self.arch.output_dim_u
        )
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in dims)

    def tensors(self) -> List[ad.Tensor]:
        out = []
        for layers in (self.v_layers, self.u_layers):
            for w, b in layers:
                out.extend((w, b))
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.value.ravel() for t in self.tensors()])

    def load_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.param_count:
            raise ValueError(
                f"expected {self.param_count} parameter values, got {values.size}"
            )
        offset = 0
        for t in self.tensors():
            n = t.value.size
            t.value = values[offset : offset + n].reshape(t.value.shape).copy()
            offset += n

    # trial-solution interface used by rollouts
    def v(self, t: float, x):
        return forward_v(self, t, x)

    def u(self, t: float, x):
        return forward_u(self, t, x)


def init_network(arch: NetworkArch, seed: int) -> NetworkParams:
    """Fresh parameters, deterministic in (arch, seed)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))

    def make_layers(output_dim):
        layers = []
        for fan_in, fan_out in arch.layer_dims(output_dim):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append(
                (
                    ad.Tensor(w, requires_grad=True),
                    ad.Tensor(np.zeros(fan_out), requires_grad=True),
                )
            )
        return layers

    return NetworkParams(
        arch=arch,
        seed=int(seed),
        v_layers=make_layers(arch.output_dim_v),
        u_layers=make_layers(arch.output_dim_u),
    )


def _forward(layers, t: float, x):
    x = ad.as_tensor(x)
    single = x.value.ndim == 1
    if single:
        x = ad.reshape(x, (1, -1))
    tcol = np.full((x.shape[0], 1), float(t))
    h = ad.concat([ad.as_tensor(tcol), x], axis=1)
    for w, b in layers[:-1]:
        h = ad.tanh(h @ w + b)
    w, b = layers[-1]
    out = h @ w + b
    return out, single


def forward_v(params: NetworkParams, t: float, x):
    """Evaluate the backward-value network at (t, x); x is (M, n) or (n,)."""
    if x.shape[-1] != params.arch.input_dim - 1:
        raise ValueError(
            f"x has {x.shape[-1]} components, expected {params.arch.input_dim - 1}"
        )
    out, single = _forward(params.v_layers, t, x)
    return ad.reshape(out, (-1,)) if single else out


def forward_u(params: NetworkParams, t: float, x):
    """Evaluate the volatility network at (t, x), reshaped row-major to m x d."""
    if x.shape[-1] != params.arch.input_dim - 1:
        raise ValueError(
            f"x has {x.shape[-1]} components, expected {params.arch.input_dim - 1}"
        )
    out, single = _forward(params.u_layers, t, x)
    m = params.arch.output_dim_v
    d = params.arch.output_dim_u // m
    return ad.reshape(out, (m, d) if single else (-1, m, d))


def grad(loss: ad.Tensor, params: NetworkParams) -> List[np.ndarray]:
    """Reverse-mode gradient of a scalar loss w.r.t. every parameter tensor.

    Parameters that do not influence the loss get zero gradients. Brownian
    increments and other constants recorded on the tape are not
    differentiated.
    """
    tensors = params.tensors()
    for t in tensors:
        t.grad = None
    loss.backward()
    return [
        t.grad if t.grad is not None else np.zeros_like(t.value) for t in tensors
    ]


@dataclass
class AdamState:
    """First/second moment estimates plus the update counter."""

    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        tensors = params.tensors()
        return cls(
            first_moment=[np.zeros_like(t.value) for t in tensors],
            second_moment=[np.zeros_like(t.value) for t in tensors],
        )


def adam_step(
    params: NetworkParams,
    grads: List[np.ndarray],
    state: AdamState,
    lr: float,
) -> Tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update (in place); returns (params, state).

    Raises DivergenceError on non-finite gradients before touching any
    parameter, so the caller keeps the last finite iterate.
    """
    tensors = params.tensors()
    if len(grads) != len(tensors):
        raise ValueError(f"expected {len(tensors)} gradients, got {len(grads)}")
    for t, g in zip(tensors, grads):
        if g.shape != t.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {t.value.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in optimizer update")
    state.step_count += 1
    t_step = state.step_count
    c1 = 1.0 - state.beta1**t_step
    c2 = 1.0 - state.beta2**t_step
    for i, (tensor, g) in enumerate(zip(tensors, grads)):
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        tensor.value = tensor.value - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def save_checkpoint(params: NetworkParams, path, step: int = 0) -> None:
    """Write parameters as a one-line JSON header plus one float per line.

    Floats are printed with repr, which round-trips float64 exactly.
    """
    header = {
        "input_dim": params.arch.input_dim,
        "hidden_layers": params.arch.hidden_layers,
        "hidden_width": params.arch.hidden_width,
        "output_dim_v": params.arch.output_dim_v,
        "output_dim_u": params.arch.output_dim_u,
        "activation": params.arch.activation,
        "seed": params.seed,
        "step": int(step),
        "count": params.param_count,
    }
    flat = params.flatten()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for value in flat:
            fh.write(repr(float(value)) + "\n")


def load_checkpoint(path) -> Tuple[NetworkParams, int]:
    """Rebuild (params, step) from a file written by save_checkpoint."""
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        values = np.array([float(line) for line in fh])
    arch = NetworkArch(
        input_dim=header["input_dim"],
        hidden_layers=header["hidden_layers"],
        hidden_width=header["hidden_width"],
        output_dim_v=header["output_dim_v"],
        output_dim_u=header["output_dim_u"],
        activation=header["activation"],
    )
    if values.size != header["count"]:
        raise ValueError(
            f"checkpoint holds {values.size} values, header promises {header['count']}"
        )
    params = init_network(arch, header["seed"])
    params.load_flat(values)
    return params, header["step"]
