"""Named parameter storage and initialization."""
from collections import OrderedDict

import numpy as np

from ..errors import ConfigError
from .tensor import Tensor


class ParamStore:
    """Ordered mapping from dotted path names to trainable tensors."""

    def __init__(self):
        self._params = OrderedDict()

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def add(self, name, data):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def scope(self, prefix):
        return _Scope(self, prefix)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_values(self):
        return sum(t.data.size for t in self._params.values())

    def manifest(self):
        return [{"name": n, "shape": list(t.shape)} for n, t in self._params.items()]

    def state(self):
        return OrderedDict((n, t.data.copy()) for n, t in self._params.items())

    def load_state(self, state):
        missing = set(self._params) ^ set(state)
        if missing:
            raise ConfigError(f"parameter set mismatch: {sorted(missing)[:5]}")
        for n, arr in state.items():
            if self._params[n].shape != np.shape(arr):
                raise ConfigError(f"shape mismatch for {n}: {self._params[n].shape} vs {np.shape(arr)}")
            self._params[n].data = np.array(arr, dtype=np.float64)


class _Scope:
    """Helper that prefixes names and draws initial values from one generator."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def _name(self, name):
        return f"{self.prefix}.{name}" if self.prefix else name

    def sub(self, name):
        return _Scope(self.store, self._name(name))

    def weight(self, name, shape, rng, fan_in=None):
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
        fan_in = fan_in if fan_in is not None else int(np.prod(shape[:-1]))
        bound = 1.0 / np.sqrt(fan_in)
        return self.store.add(self._name(name), rng.uniform(-bound, bound, size=shape))

    def zeros(self, name, shape):
        return self.store.add(self._name(name), np.zeros(shape))

    def ones(self, name, shape):
        return self.store.add(self._name(name), np.ones(shape))

    def table(self, name, shape, rng, std=0.01):
        return self.store.add(self._name(name), rng.normal(0.0, std, size=shape))
