"""Model assembly.

Black boxes: a recurrent model (LSTM -> linear -> tanh) and two causal
convolutional models (TCN with plain blocks, GCN with gated blocks),
each optionally conditioned on a control vector. Gray boxes: ordered
chains of DSP processors, each stage driven by a controller that emits
its normalized parameters.

Every model exposes forward(x, c, state) -> (y, state) over 1-D float
signals so the training loop does not care which family it holds.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from . import conditioning as cond
from . import controllers as ctrl
from . import nn
from . import processors as proc
from . import tensor as T
from .tensor import Tensor

COND_MODES = ("none", "film", "tfilm", "ttfilm", "tvfilm")


def receptive_field(blocks: int, kernel: int, growth: int) -> int:
    """Past samples influencing one output sample of a dilated conv stack."""
    if blocks < 1 or kernel < 1 or growth < 1:
        raise ValueError("blocks, kernel and growth must all be >= 1")
    return 1 + (kernel - 1) * sum(growth ** i for i in range(blocks))


# -- recurrent ---------------------------------------------------------------

class LSTMModel(nn.Module):
    """Single LSTM layer, linear projection, tanh. No residual path.

    cond_mode "concat" appends the control vector to every input sample;
    "tvcond" appends a learned time-varying sequence derived from the
    input signal and controls.
    """

    def __init__(self, num_controls: int = 0, hidden: int = 32,
                 cond_mode: str = "none", rng: np.random.Generator | None = None,
                 block_size: int = 128, tvcond_latent: int = 16):
        if cond_mode not in ("none", "concat", "tvcond"):
            raise ValueError(f"unknown cond_mode {cond_mode!r}")
        if cond_mode != "none" and num_controls < 1:
            raise ValueError("conditioned model needs num_controls >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        self.cond_mode = cond_mode
        self.num_controls = num_controls
        input_dim = 1
        if cond_mode == "concat":
            input_dim += num_controls
        elif cond_mode == "tvcond":
            self.generator = cond.TVCond(num_controls, rng, block_size,
                                         tvcond_latent)
            input_dim += tvcond_latent
        self.lstm = nn.LSTM(input_dim, hidden, rng)
        self.out = nn.Linear(hidden, 1, rng)

    def zero_state(self):
        return (None, None)

    def forward(self, x: Tensor, c: Tensor | None = None, state=None):
        lstm_state, gen_state = state if state is not None else (None, None)
        n = x.data.shape[-1]
        feats = T.reshape(x, (n, 1))
        if self.cond_mode == "concat":
            if c is None:
                raise ValueError("cond_mode 'concat' requires controls")
            feats = T.concat([feats, T.repeat_new_axis(c, n, axis=0)], axis=1)
        elif self.cond_mode == "tvcond":
            z, gen_state = self.generator.generate(x, c, gen_state)
            feats = T.concat([feats, z], axis=1)
        hs, lstm_state = self.lstm(feats, lstm_state)
        y = T.reshape(self.out(hs), (n,))
        return T.tanh(y), (lstm_state, gen_state)


# -- convolutional -----------------------------------------------------------

class TCNConfig:
    """Shape of a dilated conv stack: blocks, kernel, growth, channels."""

    def __init__(self, blocks: int = 5, kernel: int = 7,
                 dilation_growth: int = 4, channels: int = 16,
                 cond: str = "none", batchnorm: bool = False):
        if blocks < 1 or kernel < 1 or dilation_growth < 1:
            raise ValueError("blocks, kernel, dilation_growth must be >= 1")
        if channels < 1:
            raise ValueError("channels must be >= 1")
        if cond not in COND_MODES:
            raise ValueError(f"cond must be one of {COND_MODES}")
        self.blocks = blocks
        self.kernel = kernel
        self.dilation_growth = dilation_growth
        self.channels = channels
        self.cond = cond
        self.batchnorm = batchnorm

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.blocks, self.kernel, self.dilation_growth)

    def to_dict(self) -> dict:
        return {"blocks": self.blocks, "kernel": self.kernel,
                "dilation_growth": self.dilation_growth,
                "channels": self.channels, "cond": self.cond,
                "batchnorm": self.batchnorm}

    @classmethod
    def from_dict(cls, d: dict) -> "TCNConfig":
        return cls(**d)


def _make_conditioner(mode: str, num_controls: int, channels: int,
                      net_blocks: int, rng) -> nn.Module | None:
    if mode == "none":
        return None
    if mode == "film":
        return cond.FiLM(num_controls, channels, net_blocks, rng)
    if mode == "tfilm":
        return cond.TFiLM(num_controls, channels, net_blocks, rng)
    if mode == "ttfilm":
        return cond.TTFiLM(num_controls, channels, net_blocks, rng)
    if mode == "tvfilm":
        return cond.TVFiLM(num_controls, channels, net_blocks, rng)
    raise ValueError(f"unknown conditioning mode {mode!r}")


class _ConvStack(nn.Module):
    """Shared plumbing for TCN and GCN: conv list, conditioner, mixer."""

    def __init__(self, cfg: TCNConfig, num_controls: int, rng, gate: bool):
        if cfg.cond != "none" and num_controls < 1 and cfg.cond != "tvfilm":
            # tvfilm can run on the signal alone; the others need controls
            raise ValueError(f"cond={cfg.cond!r} needs num_controls >= 1")
        self.cfg = cfg
        self.num_controls = num_controls
        ch = cfg.channels
        out_mult = 2 if gate else 1
        self.convs = []
        in_ch = 1
        for i in range(cfg.blocks):
            dil = cfg.dilation_growth ** i
            self.convs.append(nn.Conv1d(in_ch, ch * out_mult, cfg.kernel,
                                        rng, dilation=dil))
            in_ch = ch
        # shortcut only where channel counts differ (the input block)
        self.shortcut = nn.Conv1d(1, ch, 1, rng)
        self.norms = ([nn.BatchNorm1d(ch * out_mult) for _ in range(cfg.blocks)]
                      if cfg.batchnorm else None)
        self.conditioner = _make_conditioner(cfg.cond, num_controls, ch,
                                             cfg.blocks, rng)

    def zero_state(self):
        if self.cfg.cond in ("tfilm", "ttfilm"):
            return self.conditioner.zero_state()
        if self.cfg.cond == "tvfilm":
            return self.conditioner.zero_state()
        return None

    def _prepare_cond(self, x, c, state):
        """Per-call conditioning context: static latent or latent sequence."""
        if self.cfg.cond == "film":
            return self.conditioner.latent(c), state
        if self.cfg.cond == "tvfilm":
            z, state = self.conditioner.latents(x, c, state)
            return z, state
        if self.cfg.cond in ("tfilm", "ttfilm") and state is None:
            return None, self.conditioner.zero_state()
        return None, state

    def _modulate(self, k, h, c, z, state):
        if self.cfg.cond == "none":
            return h, state
        if self.cfg.cond == "film":
            return self.conditioner.modulate(k, h, z), state
        if self.cfg.cond == "tvfilm":
            return self.conditioner.modulate(k, h, z), state
        h, state[k] = self.conditioner.modulate(k, h, c, state[k])
        return h, state


class TCN(nn.Module):
    """Causal dilated conv stack with residual blocks and a 1x1 mixer."""

    def __init__(self, cfg: TCNConfig, num_controls: int = 0,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.stack = _ConvStack(cfg, num_controls, rng, gate=False)
        self.mixer = nn.Conv1d(cfg.channels, 1, 1, rng)

    @property
    def cfg(self):
        return self.stack.cfg

    def zero_state(self):
        return self.stack.zero_state()

    def forward(self, x: Tensor, c: Tensor | None = None, state=None):
        s = self.stack
        n = x.data.shape[-1]
        h = T.reshape(x, (1, n))
        z, state = s._prepare_cond(x, c, state)
        for k, conv in enumerate(s.convs):
            residual = s.shortcut(h) if k == 0 else h
            h = conv(h)
            if s.norms is not None:
                h = s.norms[k](h)
            h, state = s._modulate(k, h, c, z, state)
            h = T.add(T.tanh(h), residual)
        y = self.mixer(h)
        return T.reshape(y, (n,)), state


class GCN(nn.Module):
    """Gated conv stack: tanh/sigmoid branches, skip outputs into a mixer."""

    def __init__(self, cfg: TCNConfig, num_controls: int = 0,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.stack = _ConvStack(cfg, num_controls, rng, gate=True)
        self.mixer = nn.Conv1d(cfg.channels * cfg.blocks, 1, 1, rng)

    @property
    def cfg(self):
        return self.stack.cfg

    def zero_state(self):
        return self.stack.zero_state()

    def forward(self, x: Tensor, c: Tensor | None = None, state=None):
        s = self.stack
        ch = s.cfg.channels
        n = x.data.shape[-1]
        h = T.reshape(x, (1, n))
        z, state = s._prepare_cond(x, c, state)
        skips = []
        for k, conv in enumerate(s.convs):
            residual = s.shortcut(h) if k == 0 else h
            hc = conv(h)
            if s.norms is not None:
                hc = s.norms[k](hc)
            gated = T.mul(T.tanh(hc[0:ch]), T.sigmoid(hc[ch:2 * ch]))
            gated, state = s._modulate(k, gated, c, z, state)
            skips.append(gated)
            h = T.add(gated, residual)
        y = self.mixer(T.concat(skips, axis=0))
        return T.reshape(y, (n,)), state


# -- gray box ----------------------------------------------------------------

class StageSpec:
    """One chain stage: a processor kind plus the controller that drives it."""

    def __init__(self, processor: str, controller: str = "static",
                 processor_opts: dict | None = None,
                 controller_opts: dict | None = None):
        if processor not in proc.PROCESSOR_KINDS:
            raise ValueError(f"unknown processor kind {processor!r}")
        if controller not in ctrl.CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {controller!r}")
        self.processor = processor
        self.controller = controller
        self.processor_opts = dict(processor_opts or {})
        self.controller_opts = dict(controller_opts or {})

    def to_dict(self) -> dict:
        return {"processor": self.processor, "controller": self.controller,
                "processor_opts": self.processor_opts,
                "controller_opts": self.controller_opts}

    @classmethod
    def from_dict(cls, d: dict) -> "StageSpec":
        return cls(d["processor"], d.get("controller", "static"),
                   d.get("processor_opts"), d.get("controller_opts"))


class GrayBoxSpec:
    """Ordered processor chain description."""

    def __init__(self, stages, sample_rate: float = 48000.0,
                 num_controls: int = 0, block_size: int = 128):
        if not stages:
            raise ValueError("a chain needs at least one stage")
        self.stages = [s if isinstance(s, StageSpec) else StageSpec.from_dict(s)
                       for s in stages]
        self.sample_rate = float(sample_rate)
        self.num_controls = num_controls
        self.block_size = block_size

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages],
                "sample_rate": self.sample_rate,
                "num_controls": self.num_controls,
                "block_size": self.block_size}

    @classmethod
    def from_dict(cls, d: dict) -> "GrayBoxSpec":
        return cls(d["stages"], d.get("sample_rate", 48000.0),
                   d.get("num_controls", 0), d.get("block_size", 128))


def _build_processor(st: StageSpec, spec: GrayBoxSpec, rng) -> proc.Processor:
    kind = st.processor
    opts = dict(st.processor_opts)
    cls = proc.PROCESSOR_KINDS[kind]
    if kind in ("parametric_eq", "shelving_eq"):
        return cls(spec.sample_rate, **opts)
    if kind == "fir":
        return cls(rng, **opts)
    return cls(**opts)


def _build_controller(st: StageSpec, p: proc.Processor, spec: GrayBoxSpec,
                      rng) -> ctrl.Controller:
    kind = st.controller
    opts = dict(st.controller_opts)
    if p.num_params == 0:
        if kind != "dummy":
            raise ValueError(f"{p.name} has no controlled parameters; "
                             f"use the dummy controller")
        return ctrl.DummyController()
    if kind == "dummy":
        raise ValueError(f"{p.name} has {p.num_params} controlled parameters; "
                         f"a dummy controller cannot drive it")
    if kind == "static":
        return ctrl.StaticController(p.num_params)
    if kind == "static_cond":
        return ctrl.StaticCondController(spec.num_controls, p.num_params,
                                         rng, **opts)
    if kind == "dynamic":
        return ctrl.DynamicController(p.num_params, rng,
                                      block_size=spec.block_size, **opts)
    return ctrl.DynamicCondController(p.num_params, spec.num_controls, rng,
                                      block_size=spec.block_size, **opts)


class GrayBoxChain(nn.Module):
    """Processors applied in order, each fed by its controller's output."""

    def __init__(self, spec: GrayBoxSpec, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.spec = spec
        self.processors = []
        self.controllers = []
        for st in spec.stages:
            p = _build_processor(st, spec, rng)
            k = _build_controller(st, p, spec, rng)
            if k.num_params != p.num_params:
                raise ValueError(f"controller emits {k.num_params} values, "
                                 f"{p.name} needs {p.num_params}")
            self.processors.append(p)
            self.controllers.append(k)

    @property
    def num_controlled_params(self) -> int:
        return sum(p.num_params for p in self.processors)

    def zero_state(self):
        return [None] * len(self.processors)

    def forward(self, x: Tensor, c: Tensor | None = None, state=None):
        states = list(state) if state is not None else self.zero_state()
        h = x
        for i, (p, k) in enumerate(zip(self.processors, self.controllers)):
            out, states[i] = k(x=h, c=c, state=states[i])
            h = p.apply(h, out.values, block_size=out.block_size)
        return h, states


# -- tagged union + factory --------------------------------------------------

class ModelSpec:
    """Exactly one model variant plus the audio rate it runs at."""

    KINDS = ("lstm", "tcn", "gcn", "graybox")

    def __init__(self, sample_rate: float = 48000.0, num_controls: int = 0,
                 lstm: dict | None = None, tcn: TCNConfig | dict | None = None,
                 gcn: TCNConfig | dict | None = None,
                 graybox: GrayBoxSpec | dict | None = None):
        given = {"lstm": lstm, "tcn": tcn, "gcn": gcn, "graybox": graybox}
        chosen = [k for k, v in given.items() if v is not None]
        if len(chosen) != 1:
            raise ValueError(f"exactly one model variant required, got {chosen}")
        self.kind = chosen[0]
        self.sample_rate = float(sample_rate)
        self.num_controls = num_controls
        v = given[self.kind]
        if self.kind in ("tcn", "gcn"):
            self.config = v if isinstance(v, TCNConfig) else TCNConfig.from_dict(v)
        elif self.kind == "graybox":
            if isinstance(v, dict):
                v.setdefault("sample_rate", sample_rate)
                v.setdefault("num_controls", num_controls)
                v = GrayBoxSpec.from_dict(v)
            self.config = v
        else:
            self.config = dict(v)

    def to_dict(self) -> dict:
        if self.kind == "lstm":
            cfg = dict(self.config)
        else:
            cfg = self.config.to_dict()
        return {"kind": self.kind, "sample_rate": self.sample_rate,
                "num_controls": self.num_controls, self.kind: cfg}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        kind = d["kind"]
        if kind not in cls.KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        return cls(sample_rate=d.get("sample_rate", 48000.0),
                   num_controls=d.get("num_controls", 0),
                   **{kind: d[kind]})

    def build(self, rng: np.random.Generator | None = None) -> nn.Module:
        rng = rng if rng is not None else np.random.default_rng()
        if self.kind == "lstm":
            return LSTMModel(num_controls=self.num_controls, rng=rng,
                             **self.config)
        if self.kind == "tcn":
            return TCN(self.config, self.num_controls, rng)
        if self.kind == "gcn":
            return GCN(self.config, self.num_controls, rng)
        return GrayBoxChain(self.config, rng)


def build_model(spec: ModelSpec | dict,
                rng: np.random.Generator | None = None) -> nn.Module:
    if isinstance(spec, dict):
        spec = ModelSpec.from_dict(spec)
    return spec.build(rng)


def param_count(model: nn.Module) -> int:
    return model.param_count()


# -- checkpoints -------------------------------------------------------------

def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": str(a.dtype), "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    a = np.frombuffer(raw, dtype=np.dtype(d["dtype"]))
    return a.reshape(d["shape"]).copy()


def save_checkpoint(path, model: nn.Module, spec: ModelSpec,
                    extra: dict | None = None) -> None:
    """JSON checkpoint: spec + raw parameter bytes. Bit-exact round trip."""
    payload = {
        "spec": spec.to_dict(),
        "state": {k: _encode_array(v) for k, v in model.state_dict().items()},
    }
    if extra:
        payload["extra"] = extra
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path, rng: np.random.Generator | None = None):
    """Returns (model, spec, extra). Parameters match the saved bytes."""
    with open(path) as f:
        payload = json.load(f)
    spec = ModelSpec.from_dict(payload["spec"])
    model = spec.build(rng if rng is not None else np.random.default_rng(0))
    state = {k: _decode_array(v) for k, v in payload["state"].items()}
    model.load_state_dict(state)
    return model, spec, payload.get("extra")
