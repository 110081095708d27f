"""Parameter containers and the small layer set the model is built from."""
from __future__ import annotations

import numpy as np

from . import core
from .core import BatchNormState, Tensor


class ParamStore:
    """Named parameters plus non-trainable buffers (batch-norm statistics).

    Names follow the dotted checkpoint key schema, e.g. ``enc.l1.agg.fc1.W``.
    """

    def __init__(self, rng=None):
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def bn_state(self, name, width):
        state = BatchNormState(width)
        self.bn_states[name] = state
        return state

    def glorot(self, name, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-limit, limit, size=(fan_in, fan_out)))

    def zeros(self, name, *shape):
        return self.add(name, np.zeros(shape))

    def buffers(self):
        """Flattened buffer arrays keyed like parameters."""
        out = {}
        for name, st in self.bn_states.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_buffers(self, arrays):
        for name, st in self.bn_states.items():
            st.running_mean = np.asarray(arrays[f"{name}.running_mean"], dtype=core.default_dtype())
            st.running_var = np.asarray(arrays[f"{name}.running_var"], dtype=core.default_dtype())

    def __len__(self):
        return len(self.params)

    def n_values(self):
        return sum(p.data.size for p in self.params.values())


class Linear:
    def __init__(self, store, name, fan_in, fan_out, bias=True):
        self.W = store.glorot(f"{name}.W", fan_in, fan_out)
        self.b = store.zeros(f"{name}.b", fan_out) if bias else None
        self.fan_in, self.fan_out = fan_in, fan_out

    def __call__(self, x):
        return core.linear(x, self.W, self.b)


class BatchNorm:
    def __init__(self, store, name, width):
        self.gamma = store.add(f"{name}.gamma", np.ones(width))
        self.beta = store.add(f"{name}.beta", np.zeros(width))
        self.state = store.bn_state(name, width)

    def __call__(self, x, training):
        return core.batch_norm(x, self.gamma, self.beta, self.state, training)


class MLP:
    """Stack of linear layers with leaky ReLU between them.

    ``out_act`` is applied after the final layer ("leaky", "tanh" or None).
    ``norm`` inserts batch norm before each hidden activation.
    """

    def __init__(self, store, name, widths, out_act=None, norm=False):
        self.layers = [Linear(store, f"{name}.fc{i + 1}", a, b)
                       for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]
        self.norms = ([BatchNorm(store, f"{name}.bn{i + 1}", w) for i, w in enumerate(widths[1:-1])]
                      if norm else None)
        self.out_act = out_act

    def __call__(self, x, training=False):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                if self.norms is not None:
                    x = self.norms[i](x, training)
                x = core.leaky_relu(x)
        if self.out_act == "leaky":
            x = core.leaky_relu(x)
        elif self.out_act == "tanh":
            x = core.tanh(x)
        return x
