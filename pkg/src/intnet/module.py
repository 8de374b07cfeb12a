"""Parameter containers and initialisers shared by the encoders and the tagger."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import DEFAULT_DTYPE, Parameter, RngState, RunningStats


class Module:
    """Holds named parameters, running statistics and child modules.

    Parameters are initialised from a stream keyed by their full dotted
    name, so the values do not depend on construction order.
    """

    def __init__(self, prefix: str, rng: RngState, dtype=DEFAULT_DTYPE):
        self.prefix = prefix
        self.rng = rng
        self.dtype = dtype
        self._params: dict[str, Parameter] = {}
        self._stats: dict[str, RunningStats] = {}
        self._children: list[Module] = []

    def _full(self, name):
        return f"{self.prefix}.{name}" if self.prefix else name

    def param(self, name, shape, init="zeros", **kw) -> Parameter:
        full = self._full(name)
        gen = self.rng.generator("init/" + full)
        values = INITIALIZERS[init](gen, tuple(shape), **kw).astype(self.dtype)
        p = Parameter(values, name=full)
        self._params[full] = p
        return p

    def stats(self, name, channels) -> RunningStats:
        full = self._full(name)
        s = RunningStats(channels, dtype=self.dtype)
        self._stats[full] = s
        return s

    def child(self, module: "Module") -> "Module":
        self._children.append(module)
        return module

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = list(self._params.items())
        for c in self._children:
            out.extend(c.named_parameters())
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_stats(self) -> list[tuple[str, RunningStats]]:
        out = list(self._stats.items())
        for c in self._children:
            out.extend(c.named_stats())
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = np.zeros_like(p.values)

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and running statistic, in a fixed order."""
        state = {name: p.values.copy() for name, p in self.named_parameters()}
        for name, s in self.named_stats():
            state[name + ".running_mean"] = s.mean.copy()
            state[name + ".running_var"] = s.var.copy()
            state[name + ".initialized"] = np.array(float(s.initialized))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for name, p in self.named_parameters():
            if state[name].shape != p.values.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.values.shape}")
            p.values[...] = state[name]
        for name, s in self.named_stats():
            s.mean = np.array(state[name + ".running_mean"], dtype=self.dtype)
            s.var = np.array(state[name + ".running_var"], dtype=self.dtype)
            s.initialized = bool(state[name + ".initialized"])


def _zeros(gen, shape):
    return np.zeros(shape)


def _ones(gen, shape):
    return np.ones(shape)


def _uniform(gen, shape, bound):
    return gen.uniform(-bound, bound, size=shape)


def _he_normal(gen, shape):
    # fan-in of a conv weight [C_out, C_in, k] is C_in * k
    fan_in = int(np.prod(shape[1:]))
    return gen.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def _glorot_uniform(gen, shape):
    fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-bound, bound, size=shape)


INITIALIZERS = {
    "zeros": _zeros,
    "ones": _ones,
    "uniform": _uniform,
    "he_normal": _he_normal,
    "glorot_uniform": _glorot_uniform,
}


def embedding_bound(dim: int) -> float:
    """Half-width of the uniform embedding initialisation, sqrt(3/dim)."""
    return math.sqrt(3.0 / dim)
