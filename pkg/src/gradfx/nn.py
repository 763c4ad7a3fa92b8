"""Neural building blocks on top of the tape: linear, conv, LSTM, MLP.

Parameter containers walk their attributes in definition order, so
named_parameters / state_dict ordering is deterministic for a given
architecture. Weights initialize uniform in +/- sqrt(1/fan_in).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data.astype(dtype or T.default_dtype()), requires_grad=True)


class Module:
    """Base class: parameter discovery, mode flags, checkpoint dicts."""

    training: bool = True

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix=full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(prefix=f"{full}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{full}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def named_buffers(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if name.startswith("_buf_"):
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_buffers(prefix=full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_buffers(prefix=f"{full}.{i}."))
        return out

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = np.array(buf)
        return state

    def load_state_dict(self, state: dict) -> None:
        """Assign saved arrays into existing tensors (object identity kept)."""
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, arr in state.items():
            if name in params:
                p = params[name]
                if tuple(arr.shape) != tuple(p.data.shape):
                    raise ValueError(f"shape mismatch for {name}: "
                                     f"{arr.shape} vs {p.data.shape}")
                p.data = np.asarray(arr, dtype=p.data.dtype)
            elif name in buffers:
                self._assign_buffer(name, arr)
            else:
                raise KeyError(f"unknown parameter {name}")
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state dict missing parameters: {sorted(missing)}")

    def _assign_buffer(self, dotted: str, arr) -> None:
        obj = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part.isdigit():
                obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
            else:
                obj = getattr(obj, part)
        cur = getattr(obj, parts[-1])
        setattr(obj, parts[-1], np.asarray(arr, dtype=np.asarray(cur).dtype))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Affine map. Weight stored [in, out] so x @ w works without transpose."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.w = _uniform(rng, (in_features, out_features), in_features)
        self.b = Tensor(np.zeros(out_features, dtype=T.default_dtype()),
                        requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        if self.b is not None:
            y = T.add(y, self.b)
        return y

    def zero_(self, bias_value: float = 0.0):
        """Zero the weight; set all biases to bias_value. For identity heads."""
        self.w.data = np.zeros_like(self.w.data)
        if self.b is not None:
            self.b.data = np.full_like(self.b.data, bias_value)
        return self


class Conv1d(Module):
    """Causal dilated conv over [C_in, T] -> [C_out, T], stride 1."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, dilation: int = 1, bias: bool = True):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.w = _uniform(rng, (out_channels, in_channels, kernel_size),
                          in_channels * kernel_size)
        self.b = Tensor(np.zeros(out_channels, dtype=T.default_dtype()),
                        requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b, dilation=self.dilation)


class LSTMCell(Module):
    """Single-step LSTM, gates ordered (input, forget, cell, output).

    Forget-gate bias starts at 1.0 so early training does not flush state.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        self.w_x = _uniform(rng, (input_size, 4 * h), input_size)
        self.w_h = _uniform(rng, (h, 4 * h), h)
        b = np.zeros(4 * h, dtype=T.default_dtype())
        b[h:2 * h] = 1.0
        self.b = Tensor(b, requires_grad=True)

    def zero_state(self, dtype=None):
        dtype = dtype or T.default_dtype()
        z = np.zeros(self.hidden_size, dtype=dtype)
        return (Tensor(z), Tensor(z.copy()))

    def forward(self, x: Tensor, state):
        h, c = state
        z = T.add(T.add(T.matmul(x, self.w_x), T.matmul(h, self.w_h)), self.b)
        hs = self.hidden_size
        i = T.sigmoid(z[0:hs])
        f = T.sigmoid(z[hs:2 * hs])
        g = T.tanh(z[2 * hs:3 * hs])
        o = T.sigmoid(z[3 * hs:4 * hs])
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, (h_new, c_new)


class LSTM(Module):
    """Runs an LSTMCell across [T, in] -> [T, hidden] with explicit state.

    The input projection for all timesteps is batched into one matmul; the
    recurrence itself is sequential. When nothing is being traced and no
    state tensors carry grads, a pure-numpy loop is used instead (same
    math, covered by an equivalence test).
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.cell = LSTMCell(input_size, hidden_size, rng)

    @property
    def hidden_size(self):
        return self.cell.hidden_size

    def zero_state(self, dtype=None):
        return self.cell.zero_state(dtype)

    def forward(self, x: Tensor, state=None):
        if state is None:
            state = self.zero_state(dtype=x.data.dtype)
        if T.active_tape() is None:
            return self._forward_numpy(x, state)
        cell = self.cell
        hs = cell.hidden_size
        xz = T.add(T.matmul(x, cell.w_x), cell.b)  # [T, 4H]
        h, c = state
        outs = []
        for t in range(x.data.shape[0]):
            z = T.add(xz[t], T.matmul(h, cell.w_h))
            i = T.sigmoid(z[0:hs])
            f = T.sigmoid(z[hs:2 * hs])
            g = T.tanh(z[2 * hs:3 * hs])
            o = T.sigmoid(z[3 * hs:4 * hs])
            c = T.add(T.mul(f, c), T.mul(i, g))
            h = T.mul(o, T.tanh(c))
            outs.append(T.reshape(h, (1, hs)))
        y = T.concat(outs, axis=0) if len(outs) > 1 else outs[0]
        return y, (h, c)

    def _forward_numpy(self, x: Tensor, state):
        cell = self.cell
        hs = cell.hidden_size
        xd = x.data
        w_x, w_h, b = cell.w_x.data, cell.w_h.data, cell.b.data
        xz = xd @ w_x + b
        h, c = state[0].data.copy(), state[1].data.copy()
        out = np.empty((xd.shape[0], hs), dtype=xd.dtype)
        for t in range(xd.shape[0]):
            z = xz[t] + h @ w_h
            i = _sigmoid_np(z[0:hs])
            f = _sigmoid_np(z[hs:2 * hs])
            g = np.tanh(z[2 * hs:3 * hs])
            o = _sigmoid_np(z[3 * hs:4 * hs])
            c = f * c + i * g
            h = o * np.tanh(c)
            out[t] = h
        return Tensor(out), (Tensor(h), Tensor(c))


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLP(Module):
    """Stack of Linear layers; tanh between layers by default.

    out_activation: None | 'sigmoid' | 'tanh'.
    """

    def __init__(self, sizes, rng: np.random.Generator, out_activation=None,
                 hidden_activation: str = "tanh"):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Linear(sizes[i], sizes[i + 1], rng)
                       for i in range(len(sizes) - 1)]
        self.out_activation = out_activation
        self.hidden_activation = hidden_activation

    def forward(self, x: Tensor) -> Tensor:
        act = {"tanh": T.tanh, "sigmoid": T.sigmoid, "sine": T.sin}[self.hidden_activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        x = self.layers[-1](x)
        if self.out_activation == "sigmoid":
            x = T.sigmoid(x)
        elif self.out_activation == "tanh":
            x = T.tanh(x)
        return x


class SirenMLP(Module):
    """MLP with sine activations; first layer pre-activation scaled by w0.

    Matches the shape of the stored tanh surrogate weights, so the prefit
    JSON can be loaded directly.
    """

    def __init__(self, sizes, rng: np.random.Generator, w0: float = 30.0):
        self.layers = [Linear(sizes[i], sizes[i + 1], rng)
                       for i in range(len(sizes) - 1)]
        self.w0 = w0

    def forward(self, x: Tensor) -> Tensor:
        for idx, layer in enumerate(self.layers[:-1]):
            z = layer(x)
            if idx == 0:
                z = T.mul(z, Tensor(np.asarray(self.w0, dtype=z.data.dtype)))
            x = T.sin(z)
        return self.layers[-1](x)


class BatchNorm1d(Module):
    """Channel-wise normalization over the time axis of [C, T].

    Training uses current statistics and updates running averages; eval
    uses the running averages.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        dt = T.default_dtype()
        self.gamma = Tensor(np.ones((channels, 1), dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros((channels, 1), dtype=dt), requires_grad=True)
        self._buf_running_mean = np.zeros((channels, 1), dtype=dt)
        self._buf_running_var = np.ones((channels, 1), dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            mu = T.mean_(x, axis=1, keepdims=True)
            xc = T.sub(x, mu)
            var = T.mean_(T.mul(xc, xc), axis=1, keepdims=True)
            m = self.momentum
            self._buf_running_mean = (1 - m) * self._buf_running_mean + m * mu.data
            self._buf_running_var = (1 - m) * self._buf_running_var + m * var.data
            inv = T.div(Tensor(np.asarray(1.0, dtype=x.data.dtype)),
                        T.sqrt(T.add(var, Tensor(np.asarray(self.eps, dtype=x.data.dtype)))))
            xn = T.mul(xc, inv)
        else:
            mu = Tensor(self._buf_running_mean.astype(x.data.dtype))
            std = Tensor(np.sqrt(self._buf_running_var + self.eps).astype(x.data.dtype))
            xn = T.div(T.sub(x, mu), std)
        return T.add(T.mul(xn, self.gamma), self.beta)
