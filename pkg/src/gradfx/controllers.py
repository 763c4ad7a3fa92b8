"""Controllers: map nothing/controls/signal to normalized [0,1] parameters.

Five kinds. Static ones emit one value per controlled parameter; dynamic
ones emit one value per control block (non-overlapping block means of
the signal, default 128 samples, zero-padded final block) through an
LSTM whose hidden size equals the number of controlled parameters.

Every controller shares one call shape so chains can thread them
uniformly:  controller(x, c, state) -> (ControlOutput, new_state).
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


class ControlOutput:
    """values: [num_params] (static) or [num_blocks, num_params] (dynamic)."""

    def __init__(self, values, block_size=None):
        self.values = values
        self.block_size = block_size

    @property
    def is_dynamic(self):
        return self.values is not None and self.values.data.ndim == 2


def num_blocks(signal_len: int, block_size: int) -> int:
    return -(-signal_len // block_size)


class Controller(nn.Module):
    num_params: int = 0
    needs_signal = False

    def __call__(self, x=None, c=None, state=None):
        return self.forward(x=x, c=c, state=state)


class DummyController(Controller):
    """Placeholder for processors with no controlled parameters."""

    num_params = 0

    def forward(self, x=None, c=None, state=None):
        return ControlOutput(None), None


class StaticController(Controller):
    """g = sigmoid(b) with trainable b; starts at 0.5 (b = 0)."""

    def __init__(self, num_params: int):
        self.num_params = num_params
        self.b = Tensor(np.zeros(num_params, dtype=T.default_dtype()),
                        requires_grad=True)

    def forward(self, x=None, c=None, state=None):
        return ControlOutput(T.sigmoid(self.b)), None


class StaticCondController(Controller):
    """g = sigmoid(MLP(c)); tanh hidden layers."""

    def __init__(self, num_controls: int, num_params: int, rng: np.random.Generator,
                 layers: int = 3, hidden: int = 16):
        self.num_params = num_params
        self.num_controls = num_controls
        sizes = [num_controls] + [hidden] * (layers - 1) + [num_params]
        self.net = nn.MLP(sizes, rng, out_activation="sigmoid")

    def forward(self, x=None, c=None, state=None):
        if c is None or c.data.shape[-1] != self.num_controls:
            got = None if c is None else c.data.shape[-1]
            raise ValueError(f"expected {self.num_controls} controls, got {got}")
        return ControlOutput(self.net(c)), None


class DynamicController(Controller):
    """Signal-driven: block means -> LSTM (hidden = num params) -> sigmoid."""

    needs_signal = True

    def __init__(self, num_params: int, rng: np.random.Generator,
                 block_size: int = 128, input_dim: int = 1):
        self.num_params = num_params
        self.block_size = block_size
        self.lstm = nn.LSTM(input_dim, num_params, rng)

    def zero_state(self, dtype=None):
        return self.lstm.zero_state(dtype)

    def _features(self, x: Tensor, c=None) -> Tensor:
        nb = num_blocks(x.data.shape[-1], self.block_size)
        xb = T.reshape(T.blockmean1d(x, self.block_size), (nb, 1))
        if c is None:
            return xb
        return T.concat([xb, T.repeat_new_axis(c, nb, axis=0)], axis=1)

    def forward(self, x=None, c=None, state=None):
        if x is None:
            raise ValueError("dynamic controller needs the signal")
        feats = self._features(x)
        hs, state = self.lstm(feats, state)
        return ControlOutput(T.sigmoid(hs), self.block_size), state


class DynamicCondController(DynamicController):
    """Like DynamicController with controls appended to each block feature."""

    def __init__(self, num_params: int, num_controls: int, rng: np.random.Generator,
                 block_size: int = 128):
        super().__init__(num_params, rng, block_size, input_dim=1 + num_controls)
        self.num_controls = num_controls

    def forward(self, x=None, c=None, state=None):
        if x is None:
            raise ValueError("dynamic controller needs the signal")
        if c is None or c.data.shape[-1] != self.num_controls:
            got = None if c is None else c.data.shape[-1]
            raise ValueError(f"expected {self.num_controls} controls, got {got}")
        feats = self._features(x, c)
        hs, state = self.lstm(feats, state)
        return ControlOutput(T.sigmoid(hs), self.block_size), state


CONTROLLER_KINDS = {
    "dummy": DummyController,
    "static": StaticController,
    "static_cond": StaticCondController,
    "dynamic": DynamicController,
    "dynamic_cond": DynamicCondController,
}
