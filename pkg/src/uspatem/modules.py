"""Layer building blocks: parameter containers plus the standard layers
the encoder/decoder and transformer are assembled from."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Parameter, Tensor


class Module:
    """Container of parameters, buffers and submodules.

    Attribute order defines iteration order, so parameter naming is stable
    across builds. Buffers are plain numpy arrays saved in checkpoints but
    never differentiated (batch-norm running statistics).
    """

    def __init__(self):
        self.training = True

    def train(self, flag: bool = True):
        self.training = flag
        for child in self._children():
            child.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def _children(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, ModuleList):
                yield from value

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path)
            elif isinstance(value, ModuleList):
                for i, mod in enumerate(value):
                    yield from mod.named_parameters(f"{path}.{i}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for key, value in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, np.ndarray):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_buffers(path)
            elif isinstance(value, ModuleList):
                for i, mod in enumerate(value):
                    yield from mod.named_buffers(f"{path}.{i}")

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def assign_names(self, prefix: str = ""):
        """Write the full dotted path into each parameter's ``name``."""
        names = set()
        for name, p in self.named_parameters(prefix):
            if name in names:
                raise ValueError(f"duplicate parameter name {name!r}")
            names.add(name)
            p.name = name


class ModuleList(list):
    """A list of modules that participates in parameter discovery."""


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng: Rng, stride=1, padding=None, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding
        fan_in = c_in * k * k
        std = float(np.sqrt(2.0 / fan_in))
        self.weight = Parameter(rng.normal(std, (c_out, c_in, k, k), dtype=dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    __call__ = forward


class ConvTranspose2d(Module):
    """Stride-s upsampling conv; odd kernel with output_padding = stride-1
    doubles (etc.) the spatial size exactly."""

    def __init__(self, c_in, c_out, k, rng: Rng, stride=2, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = (k - 1) // 2
        self.output_padding = stride - 1
        fan_in = c_in * k * k
        std = float(np.sqrt(2.0 / fan_in))
        self.weight = Parameter(rng.normal(std, (c_in, c_out, k, k), dtype=dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(
            x, self.weight, self.bias, self.stride, self.padding,
            transposed=True, output_padding=self.output_padding,
        )

    __call__ = forward


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float32, eps=1e-5, momentum=0.9):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, eps=self.eps, momentum=self.momentum,
        )

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    __call__ = forward


class Linear(Module):
    def __init__(self, d_in, d_out, rng: Rng, std=0.02, dtype=np.float32, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = rng.trunc_normal(std, (d_in, d_out), dtype=dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias

    __call__ = forward


class ConvBNReLU(Module):
    def __init__(self, c_in, c_out, rng: Rng, stride=1, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, rng.split("conv"), stride=stride, dtype=dtype)
        self.bn = BatchNorm2d(c_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.conv(x)))

    __call__ = forward
