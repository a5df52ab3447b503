"""Parameter bookkeeping shared by the dual-stream model and the neural baselines."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import RunningStats, Tensor, batchnorm, conv2d, leaky_relu
from .errors import InputError

LEAKY_SLOPE = 0.1


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """A flat registry of named parameters and batch-norm statistics.

    Names follow ``stream.block.layer.kind``. Subclasses register
    parameters in ``__init__`` and implement ``forward(x_tdf, x_dtf)``.
    """

    def __init__(self, seed: int = 0, slope: float = LEAKY_SLOPE):
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, RunningStats] = {}
        self.training = True
        self.slope = slope
        self._rng = np.random.Generator(np.random.PCG64(seed))

    # registration ------------------------------------------------------------

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def add_conv(self, prefix: str, c_in: int, c_out: int, k: int, bias: bool = False) -> None:
        self._param(f"{prefix}.weight", uniform_init(self._rng, (c_out, c_in, k, k), c_in * k * k))
        if bias:
            self._param(f"{prefix}.bias", np.zeros(c_out))

    def add_bn(self, prefix: str, channels: int, sites: tuple[str, ...] = ("",)) -> None:
        self._param(f"{prefix}.gamma", np.ones(channels))
        self._param(f"{prefix}.beta", np.zeros(channels))
        for site in sites:
            self.stats[prefix + site] = RunningStats()

    def add_fc(self, prefix: str, d_in: int, d_out: int) -> None:
        self._param(f"{prefix}.weight", uniform_init(self._rng, (d_in, d_out), d_in))
        self._param(f"{prefix}.bias", np.zeros(d_out))

    def add_conv_bn(self, block: str, layer: str, c_in: int, c_out: int, k: int, sites: tuple[str, ...] = ("",)) -> None:
        self.add_conv(f"{block}.conv{layer}", c_in, c_out, k)
        self.add_bn(f"{block}.bn{layer}", c_out, sites)

    # application -------------------------------------------------------------

    def conv_bn_act(
        self,
        x: Tensor,
        block: str,
        layer: str = "",
        site: str = "",
        params: Mapping[str, Tensor] | None = None,
    ) -> Tensor:
        """Same-padded conv -> batch norm -> leaky ReLU."""
        p = self.params if params is None else params
        weight = p[f"{block}.conv{layer}.weight"]
        k = weight.shape[2]
        y = conv2d(x, weight, None, stride=1, padding=k // 2)
        y = batchnorm(
            y,
            p[f"{block}.bn{layer}.gamma"],
            p[f"{block}.bn{layer}.beta"],
            self.stats[f"{block}.bn{layer}{site}"],
            self.training,
        )
        return leaky_relu(y, self.slope)

    def train(self) -> "Module":
        self.training = True
        return self

    def eval(self) -> "Module":
        self.training = False
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # (de)serialisation ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.params.items()}
        for name, s in self.stats.items():
            if s.initialized:
                out[f"{name}.running_mean"] = s.mean.copy()
                out[f"{name}.running_var"] = s.var.copy()
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        expected = set(self.params)
        missing = expected - set(state)
        if missing:
            raise InputError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in self.params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise InputError(f"parameter {name} has shape {value.shape}, expected {p.shape}")
            p.data = value.copy()
        for name, s in self.stats.items():
            key = f"{name}.running_mean"
            if key in state:
                s.mean = np.asarray(state[key], dtype=np.float64).copy()
                s.var = np.asarray(state[f"{name}.running_var"], dtype=np.float64).copy()
