"""Light parameter-container layer over the autodiff core.

A :class:`Module` tracks parameters (trainable ``Node`` leaves), buffers
(plain arrays such as batch-norm running statistics) and child modules,
yielding dotted names for checkpointing.  Registration happens through
attribute assignment, mirroring the conventions of the larger frameworks.
"""

from __future__ import annotations

import numpy as np

from . import nnops
from .autodiff import Node, ShapeError, parameter


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Node):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    # -- traversal -------------------------------------------------------
    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Node]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, mod in self._modules.items():
            yield from mod.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for mod in self._modules.values():
            yield from mod.modules()

    # -- state -----------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for mod in self._modules.values():
            mod.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.value for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {name: p.value for name, p in self.named_parameters()}
        own.update(dict(self.named_buffers()))
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state dict is missing entries: {missing}")
        for name, dst in own.items():
            src = np.asarray(state[name])
            if src.shape != dst.shape:
                raise ShapeError(
                    f"state entry '{name}': stored shape {src.shape} != model shape {dst.shape}")
            dst[...] = src

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list: list[Module] = []
        for mod in mods:
            self.append(mod)

    def append(self, mod: Module) -> None:
        self._modules[str(len(self._list))] = mod
        self._list.append(mod)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Conv2d(Module):
    """Convolution layer with He-normal weight initialisation."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, dilation: int = 1, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_channels * kernel * kernel))
        shape = (out_channels, in_channels, kernel, kernel)
        self.weight = parameter(rng.normal(0.0, std, shape), dtype=dtype)
        self.bias = parameter(np.zeros(out_channels), dtype=dtype) if bias else None
        self.stride = stride
        self.dilation = dilation

    def forward(self, x) -> Node:
        return nnops.conv2d(x, self.weight, self.bias,
                            stride=self.stride, dilation=self.dilation)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.gamma = parameter(np.ones(channels), dtype=dtype)
        self.beta = parameter(np.zeros(channels), dtype=dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x) -> Node:
        return nnops.batch_norm(x, self.gamma, self.beta,
                                self.running_mean, self.running_var,
                                self.training, self.momentum, self.eps)
