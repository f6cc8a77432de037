"""Shared plumbing for parameter-holding network blocks."""
from __future__ import annotations

import numpy as np

from .tensor import Parameter


class Block:
    """Base for composite blocks; walks attributes to find parameters."""

    def parameters(self):
        """Yield all parameters in deterministic construction order."""
        for value in vars(self).values():
            if isinstance(value, Parameter):
                yield value
            elif isinstance(value, Block):
                yield from value.parameters()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Parameter):
                        yield item
                    elif isinstance(item, Block):
                        yield from item.parameters()

    def param_dict(self) -> dict:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out

    def load_state(self, tensors: dict) -> None:
        """Overwrite parameter values from a name -> ndarray map."""
        from .errors import CheckpointError

        params = self.param_dict()
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        if missing or extra:
            raise CheckpointError(
                f"checkpoint does not match model (missing {missing[:3]}, unexpected {extra[:3]})")
        for name, p in params.items():
            arr = tensors[name]
            if tuple(arr.shape) != p.shape:
                raise CheckpointError(
                    f"checkpoint tensor {name!r} has shape {tuple(arr.shape)}, model expects {p.shape}")
            p.data = np.asarray(arr, dtype=p.dtype)

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.param_dict().items()}


def conv_weight(name: str, shape: tuple, rng: np.random.Generator, dtype,
                fan_in: int | None = None) -> Parameter:
    """Uniform +-sqrt(3/fan_in) weight (unit variance gain); fan_in defaults
    to the product of trailing dims."""
    if fan_in is None:
        fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(3.0 / max(fan_in, 1))
    return Parameter(name, rng.uniform(-bound, bound, size=shape).astype(dtype))


def zeros_param(name: str, shape: tuple, dtype) -> Parameter:
    return Parameter(name, np.zeros(shape, dtype=dtype))


def ones_param(name: str, shape: tuple, dtype) -> Parameter:
    return Parameter(name, np.ones(shape, dtype=dtype))
