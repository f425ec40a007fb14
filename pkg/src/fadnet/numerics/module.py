"""Parameter containers with stable hierarchical names."""
from collections import OrderedDict

import numpy as np

from .tensor import Parameter


class Module:
    """Holds :class:`Parameter` attributes, fixed buffers and child modules."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
            value.name = key
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, key, value):
        value = np.asarray(value)
        self._buffers[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix=""):
        for k, p in self._params.items():
            yield prefix + k, p
        for k, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{k}.")

    def named_buffers(self, prefix=""):
        for k, b in self._buffers.items():
            yield prefix + k, b
        for k, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self):
        """Ordered name -> array mapping of parameters then buffers."""
        out = OrderedDict((n, p.data) for n, p in self.named_parameters())
        out.update((n, b) for n, b in self.named_buffers())
        return out

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        extra = [k for k in state if k not in own]
        if missing or extra:
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in state.items():
            if tuple(np.shape(arr)) != own[name].shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {np.shape(arr)}, "
                                 f"model {own[name].shape}")
        self._assign(state, "")

    def _assign(self, state, prefix):
        for k, p in self._params.items():
            p.data = np.array(state[prefix + k], dtype=p.data.dtype)
            p.zero_grad()
        for k in list(self._buffers):
            arr = np.array(state[prefix + k], dtype=self._buffers[k].dtype)
            self.register_buffer(k, arr)
        for k, child in self._children.items():
            child._assign(state, f"{prefix}{k}.")

    def astype(self, dtype):
        """Cast every parameter and floating buffer in place; returns self."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        for k, b in list(self._buffers.items()):
            if np.issubdtype(b.dtype, np.floating):
                self.register_buffer(k, b.astype(dtype))
        for child in self._children.values():
            child.astype(dtype)
        return self


def he_normal(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
