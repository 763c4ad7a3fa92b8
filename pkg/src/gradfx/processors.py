"""Differentiable audio processors: basic ops, biquad EQs, nonlinearities.

Filters are second-order sections from the Bristow-Johnson cookbook,
applied with the frequency-sampling method: multiply the zero-padded
input spectrum by the cascade response and inverse-transform. That makes
the whole filter differentiable in (f0, gain, Q) through the coefficient
formulas, at the cost of approximating the IIR tail; the FFT-size rule
below keeps that approximation inside the advertised tolerance.

Controlled processors expose `num_params` physical parameters, each with
a ParamRange mapping a controller's [0,1] output to physical units.
"""

from __future__ import annotations

import json
import math
import warnings
from importlib import resources

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

LN10 = math.log(10.0)


def _const(value, dtype) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=T.default_dtype()))


# ---------------------------------------------------------------------------
# parameter ranges

class ParamRange:
    """Maps normalized [0,1] controls to a physical range.

    linear: min + u*(max-min); logarithmic: min*(max/min)^u.
    """

    def __init__(self, lo: float, hi: float, scale: str = "linear"):
        if not lo < hi:
            raise ValueError(f"ParamRange needs min < max, got [{lo}, {hi}]")
        if scale not in ("linear", "logarithmic"):
            raise ValueError(f"unknown scale {scale!r}")
        if scale == "logarithmic" and lo <= 0:
            raise ValueError("logarithmic range requires min > 0")
        self.lo = float(lo)
        self.hi = float(hi)
        self.scale = scale

    def denormalize(self, u):
        u = _as_tensor(u)
        if np.any(u.data < 0.0) or np.any(u.data > 1.0):
            warnings.warn("control value outside [0,1]; clamping", RuntimeWarning)
            u = T.clip(u, 0.0, 1.0)
        dt = u.data.dtype
        if self.scale == "linear":
            return T.add(_const(self.lo, dt), T.mul(u, _const(self.hi - self.lo, dt)))
        return T.mul(_const(self.lo, dt),
                     T.exp(T.mul(u, _const(math.log(self.hi / self.lo), dt))))

    def __repr__(self):
        return f"ParamRange({self.lo}, {self.hi}, {self.scale!r})"


def denormalize(u, r: ParamRange):
    return r.denormalize(u)


def freq_range(fs: float) -> ParamRange:
    return ParamRange(20.0, 0.95 * fs / 2.0, "logarithmic")


def filter_gain_range() -> ParamRange:
    return ParamRange(-24.0, 24.0, "linear")


def q_range() -> ParamRange:
    return ParamRange(0.3, 10.0, "logarithmic")


def chain_gain_range() -> ParamRange:
    return ParamRange(-40.0, 40.0, "linear")


def offset_range() -> ParamRange:
    return ParamRange(-1.0, 1.0, "linear")


# ---------------------------------------------------------------------------
# biquad sections

class FilterParams:
    """One filter's physical parameters. Values may be floats or Tensors."""

    KINDS = ("lowpass", "highpass", "lowshelf", "highshelf", "peak")

    def __init__(self, kind: str, f0, q, gain_db=None, fs: float = 48000.0):
        if kind not in self.KINDS:
            raise ValueError(f"unknown filter kind {kind!r}")
        if kind in ("lowshelf", "highshelf", "peak") and gain_db is None:
            raise ValueError(f"{kind} requires gain_db")
        self.kind = kind
        self.f0 = f0
        self.q = q
        self.gain_db = gain_db
        self.fs = float(fs)


class BiquadSection:
    """Six coefficient tensors; scalar or per-block [nb]."""

    def __init__(self, b0, b1, b2, a0, a1, a2):
        self.b0, self.b1, self.b2 = b0, b1, b2
        self.a0, self.a1, self.a2 = a0, a1, a2

    @property
    def num_blocks(self):
        n = self.b0.data.ndim
        return None if n == 0 else self.b0.data.shape[0]

    def coeff_arrays(self):
        return (self.b0.data, self.b1.data, self.b2.data,
                self.a0.data, self.a1.data, self.a2.data)


def biquad_coefficients(p: FilterParams) -> BiquadSection:
    """Cookbook coefficients for one second-order section.

    Differentiable w.r.t. f0 / gain_db / Q when those are tensors.
    """
    f0 = _as_tensor(p.f0)
    q = _as_tensor(p.q)
    fs = p.fs
    if np.any(f0.data <= 0.0) or np.any(f0.data >= fs / 2.0):
        raise ValueError(f"filter frequency must lie in (0, fs/2), got {f0.data}")
    if np.any(q.data <= 0.0):
        raise ValueError("Q must be positive")
    dt = f0.data.dtype

    w0 = T.mul(f0, _const(2.0 * math.pi / fs, dt))
    cosw = T.cos(w0)
    sinw = T.sin(w0)
    alpha = T.div(sinw, T.mul(q, _const(2.0, dt)))
    one = _const(1.0, dt)
    two = _const(2.0, dt)

    if p.kind == "lowpass":
        omc = T.sub(one, cosw)                      # 1 - cos
        b0 = T.div(omc, two)
        return BiquadSection(b0, omc, b0,
                             T.add(one, alpha), T.mul(_const(-2.0, dt), cosw),
                             T.sub(one, alpha))
    if p.kind == "highpass":
        opc = T.add(one, cosw)                      # 1 + cos
        b0 = T.div(opc, two)
        return BiquadSection(b0, T.neg(opc), b0,
                             T.add(one, alpha), T.mul(_const(-2.0, dt), cosw),
                             T.sub(one, alpha))

    gain = _as_tensor(p.gain_db)
    A = T.exp(T.mul(gain, _const(LN10 / 40.0, dt)))
    if p.kind == "peak":
        aA = T.mul(alpha, A)
        adA = T.div(alpha, A)
        m2c = T.mul(_const(-2.0, dt), cosw)
        return BiquadSection(T.add(one, aA), m2c, T.sub(one, aA),
                             T.add(one, adA), m2c, T.sub(one, adA))

    # shelves
    ap1 = T.add(A, one)
    am1 = T.sub(A, one)
    s = T.mul(T.mul(two, T.sqrt(A)), alpha)         # 2*sqrt(A)*alpha
    ap1c = T.mul(ap1, cosw)
    am1c = T.mul(am1, cosw)
    if p.kind == "lowshelf":
        b0 = T.mul(A, T.add(T.sub(ap1, am1c), s))
        b1 = T.mul(T.mul(two, A), T.sub(am1, ap1c))
        b2 = T.mul(A, T.sub(T.sub(ap1, am1c), s))
        a0 = T.add(T.add(ap1, am1c), s)
        a1 = T.mul(_const(-2.0, dt), T.add(am1, ap1c))
        a2 = T.sub(T.add(ap1, am1c), s)
    else:  # highshelf
        b0 = T.mul(A, T.add(T.add(ap1, am1c), s))
        b1 = T.mul(T.mul(_const(-2.0, dt), A), T.add(am1, ap1c))
        b2 = T.mul(A, T.sub(T.add(ap1, am1c), s))
        a0 = T.add(T.sub(ap1, am1c), s)
        a1 = T.mul(two, T.sub(am1, ap1c))
        a2 = T.sub(T.sub(ap1, am1c), s)
    return BiquadSection(b0, b1, b2, a0, a1, a2)


def frequency_response(sections, freqs, fs: float) -> np.ndarray:
    """Cascade response H(e^{jw}) at the given frequencies (numpy, complex).

    Static sections only; this is the analysis-side view of the filter,
    separate from the differentiable signal path.
    """
    if not sections:
        raise ValueError("need at least one section")
    freqs = np.asarray(freqs, dtype=np.float64)
    z1 = np.exp(-1j * 2.0 * np.pi * freqs / fs)
    z2 = z1 * z1
    h = np.ones_like(z1)
    for s in sections:
        if s.num_blocks is not None:
            raise ValueError("frequency_response expects static sections")
        b0, b1, b2, a0, a1, a2 = (float(c) for c in s.coeff_arrays())
        h = h * (b0 + b1 * z1 + b2 * z2) / (a0 + a1 * z1 + a2 * z2)
    return h


def fft_size_for(n: int) -> int:
    """Smallest power of two >= 8*n (bounds the truncated-tail error)."""
    return 1 << max(int(math.ceil(math.log2(8 * n))), 0)


def _stack2(re: Tensor, im: Tensor) -> Tensor:
    return T.concat([T.reshape(re, (1,) + re.shape), T.reshape(im, (1,) + im.shape)], axis=0)


def cascade_response_bins(sections, nfft: int) -> Tensor:
    """Differentiable cascade response at the rfft bin frequencies.

    Returns [2, F] for static sections, [2, nb, F] when any section is
    per-block.
    """
    nf = nfft // 2 + 1
    omega = 2.0 * np.pi * np.arange(nf) / nfft
    dt = sections[0].b0.data.dtype
    c1 = Tensor(np.cos(omega).astype(dt))
    s1 = Tensor(np.sin(omega).astype(dt))
    c2 = Tensor(np.cos(2 * omega).astype(dt))
    s2 = Tensor(np.sin(2 * omega).astype(dt))

    hr, hi = None, None
    for s in sections:
        coeffs = [s.b0, s.b1, s.b2, s.a0, s.a1, s.a2]
        if s.num_blocks is not None:
            coeffs = [T.reshape(c, (c.shape[0], 1)) for c in coeffs]
        b0, b1, b2, a0, a1, a2 = coeffs
        # H_k(e^{jw}) with z^-1 = e^{-jw}
        nr = T.add(b0, T.add(T.mul(b1, c1), T.mul(b2, c2)))
        ni = T.neg(T.add(T.mul(b1, s1), T.mul(b2, s2)))
        dr = T.add(a0, T.add(T.mul(a1, c1), T.mul(a2, c2)))
        di = T.neg(T.add(T.mul(a1, s1), T.mul(a2, s2)))
        mag2 = T.add(T.mul(dr, dr), T.mul(di, di))
        sr = T.div(T.add(T.mul(nr, dr), T.mul(ni, di)), mag2)
        si = T.div(T.sub(T.mul(ni, dr), T.mul(nr, di)), mag2)
        if hr is None:
            hr, hi = sr, si
        else:
            hr, hi = (T.sub(T.mul(hr, sr), T.mul(hi, si)),
                      T.add(T.mul(hr, si), T.mul(hi, sr)))
    return _stack2(hr, hi)


def apply_filter(x: Tensor, sections, fft_size: int) -> Tensor:
    """Frequency-sampling filter: irfft(rfft(x) * H), cropped to len(x)."""
    n = x.data.shape[-1]
    if x.data.ndim != 1:
        raise ValueError("apply_filter expects a 1-D signal")
    if fft_size < n:
        raise ValueError(f"fft_size {fft_size} shorter than signal {n}")
    if fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    X = T.rfft(x, n=fft_size)
    H = cascade_response_bins(sections, fft_size)
    y = T.irfft(T.complex_mul(X, H), fft_size)
    return y[0:n]


def apply_filter_blocks(x: Tensor, sections, block_size: int) -> Tensor:
    """Per-block frequency sampling for time-varying coefficients.

    Block b of the signal is filtered with block b's coefficients; blocks
    are processed independently (no tail carry), consistent with
    coefficients held constant within a block. With block_size == len(x)
    this reduces to the static path exactly.
    """
    n = x.data.shape[-1]
    nb = -(-n // block_size)
    for s in sections:
        if s.num_blocks is not None and s.num_blocks != nb:
            raise ValueError(f"section has {s.num_blocks} blocks, signal needs {nb}")
    nfft = fft_size_for(block_size)
    xb = T.reshape(T.pad_end(x, nb * block_size), (nb, block_size))
    X = T.rfft(xb, n=nfft)
    H = cascade_response_bins(sections, nfft)
    yb = T.irfft(T.complex_mul(X, H), nfft)
    y = T.reshape(yb[:, 0:block_size], (nb * block_size,))
    return y[0:n]


def _col(params: Tensor, i: int) -> Tensor:
    return params[i] if params.data.ndim == 1 else params[:, i]


def _eq_sections(params, layout, fs):
    """Build sections from (kind, has_gain) layout over grouped params."""
    if isinstance(params, Tensor):
        expected = sum(3 if has_gain else 2 for _, has_gain in layout)
        if params.data.shape[-1] != expected:
            raise ValueError(f"expected {expected} parameters, got {params.data.shape[-1]}")
        cols = [_col(params, i) for i in range(params.data.shape[-1])]
    else:
        cols = list(params)
        expected = sum(3 if has_gain else 2 for _, has_gain in layout)
        if len(cols) != expected:
            raise ValueError(f"expected {expected} parameters, got {len(cols)}")
    sections = []
    i = 0
    for kind, has_gain in layout:
        if has_gain:
            f0, g, q = cols[i], cols[i + 1], cols[i + 2]
            i += 3
            sections.append(biquad_coefficients(FilterParams(kind, f0, q, gain_db=g, fs=fs)))
        else:
            f0, q = cols[i], cols[i + 1]
            i += 2
            sections.append(biquad_coefficients(FilterParams(kind, f0, q, fs=fs)))
    return sections


PARAMETRIC_EQ_LAYOUT = (("lowshelf", True), ("peak", True), ("peak", True),
                        ("peak", True), ("highshelf", True))
SHELVING_EQ_LAYOUT = (("highpass", False), ("lowshelf", True),
                      ("highshelf", True), ("lowpass", False))


def parametric_eq(x: Tensor, params, fs: float, fft_size: int | None = None,
                  block_size: int | None = None) -> Tensor:
    """Low shelf + three peaks + high shelf, one cascade application.

    params: 15 values ordered (f0, gain_dB, Q) per section, as a [15]
    tensor, a [nb, 15] tensor (per-block), or a sequence of 15 tensors.
    """
    sections = _eq_sections(params, PARAMETRIC_EQ_LAYOUT, fs)
    if any(s.num_blocks is not None for s in sections):
        if block_size is None:
            raise ValueError("per-block parameters require block_size")
        return apply_filter_blocks(x, sections, block_size)
    return apply_filter(x, sections, fft_size or fft_size_for(x.data.shape[-1]))


def shelving_eq(x: Tensor, params, fs: float, fft_size: int | None = None,
                block_size: int | None = None) -> Tensor:
    """Highpass + low shelf + high shelf + lowpass; 10 parameters.

    Order: hp(f0,Q), ls(f0,gain,Q), hs(f0,gain,Q), lp(f0,Q).
    """
    sections = _eq_sections(params, SHELVING_EQ_LAYOUT, fs)
    if any(s.num_blocks is not None for s in sections):
        if block_size is None:
            raise ValueError("per-block parameters require block_size")
        return apply_filter_blocks(x, sections, block_size)
    return apply_filter(x, sections, fft_size or fft_size_for(x.data.shape[-1]))


# ---------------------------------------------------------------------------
# basic operators

def _expand_param(param: Tensor, n: int, block_size: int | None) -> Tensor:
    """Scalar stays scalar; per-sample passes through; per-block is held."""
    if param.data.ndim == 0 or param.data.size == 1:
        return param if param.data.ndim == 0 else param[0]
    if param.data.shape[-1] == n:
        return param
    if block_size is None:
        raise ValueError("per-block parameter requires block_size")
    nb = -(-n // block_size)
    if param.data.shape[-1] != nb:
        raise ValueError(f"parameter has {param.data.shape[-1]} blocks, signal needs {nb}")
    return T.upsample1d(param, block_size)[0:n]


def apply_basic(x: Tensor, kind: str, param=None, block_size: int | None = None) -> Tensor:
    """y = -x | x * 10^(gain_dB/20) | x + offset, with per-block broadcast."""
    if kind == "phase_inv":
        return T.neg(x)
    if param is None:
        raise ValueError(f"{kind} requires a parameter")
    param = _as_tensor(param)
    p = _expand_param(param, x.data.shape[-1], block_size)
    if kind == "gain":
        amp = T.exp(T.mul(p, _const(LN10 / 20.0, p.data.dtype)))
        return T.mul(x, amp)
    if kind == "dc_offset":
        return T.add(x, p)
    raise ValueError(f"unknown basic op {kind!r}")


# ---------------------------------------------------------------------------
# nonlinearities and FIR

def fir_apply(x: Tensor, taps: Tensor) -> Tensor:
    """Causal FIR: y[n] = sum_i taps[i] * x[n-i]."""
    k = taps.data.shape[0]
    n = x.data.shape[-1]
    w = T.reshape(taps[::-1], (1, 1, k))
    y = T.conv1d(T.reshape(x, (1, n)), w)
    return T.reshape(y, (n,))


def rational_eval(x: Tensor, num: Tensor, den: Tensor) -> Tensor:
    """R(x) = (a0 + a1 x + ... + a6 x^6) / (1 + b1 x + ... + b5 x^5).

    num holds a0..a6, den holds b1..b5; Horner evaluation.
    """
    n = num[6]
    for i in range(5, -1, -1):
        n = T.add(T.mul(n, x), num[i])
    d = den[4]
    for i in range(3, -1, -1):
        d = T.add(T.mul(d, x), den[i])
    d = T.add(T.mul(d, x), _const(1.0, x.data.dtype))
    return T.div(n, d)


def _load_prefit(name: str) -> dict:
    path = resources.files("gradfx").joinpath(f"prefit/{name}")
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# processor classes (controller-facing)

class Processor(nn.Module):
    """A stage in a chain: `num_params` controlled values in [0,1].

    apply(x, g01, block_size): g01 is [num_params] (static) or
    [nb, num_params] (per-block), or None when num_params == 0.
    """

    name = "processor"
    num_params = 0
    ranges: list = []

    def apply(self, x: Tensor, g01=None, block_size: int | None = None) -> Tensor:
        raise NotImplementedError

    def _phys(self, g01: Tensor):
        """Denormalize each control column to physical units."""
        if g01.data.shape[-1] != self.num_params:
            raise ValueError(f"{self.name} expects {self.num_params} controls, "
                             f"got {g01.data.shape[-1]}")
        return [self.ranges[i].denormalize(_col(g01, i)) for i in range(self.num_params)]


class PhaseInvert(Processor):
    name = "phase_inv"

    def apply(self, x, g01=None, block_size=None):
        return T.neg(x)


class Gain(Processor):
    name = "gain"
    num_params = 1

    def __init__(self, ranges=None):
        self.ranges = ranges or [chain_gain_range()]

    def apply(self, x, g01=None, block_size=None):
        (g_db,) = self._phys(g01)
        return apply_basic(x, "gain", g_db, block_size=block_size)


class DCOffset(Processor):
    name = "dc_offset"
    num_params = 1

    def __init__(self, ranges=None):
        self.ranges = ranges or [offset_range()]

    def apply(self, x, g01=None, block_size=None):
        (off,) = self._phys(g01)
        return apply_basic(x, "dc_offset", off, block_size=block_size)


class ParametricEQ(Processor):
    """5-section EQ; 15 controlled params, (f0, gain, Q) per section."""

    name = "parametric_eq"
    num_params = 15

    def __init__(self, fs: float, ranges=None):
        self.fs = float(fs)
        if ranges is None:
            ranges = []
            for _kind, _ in PARAMETRIC_EQ_LAYOUT:
                ranges += [freq_range(fs), filter_gain_range(), q_range()]
        self.ranges = ranges

    def apply(self, x, g01=None, block_size=None):
        phys = self._phys(g01)
        return parametric_eq(x, phys, self.fs, block_size=block_size)

    def sections(self, g01=None):
        return _eq_sections(self._phys(g01), PARAMETRIC_EQ_LAYOUT, self.fs)


class ShelvingEQ(Processor):
    """hp + low shelf + high shelf + lp; 10 controlled params."""

    name = "shelving_eq"
    num_params = 10

    def __init__(self, fs: float, ranges=None):
        self.fs = float(fs)
        if ranges is None:
            ranges = []
            for _kind, has_gain in SHELVING_EQ_LAYOUT:
                if has_gain:
                    ranges += [freq_range(fs), filter_gain_range(), q_range()]
                else:
                    ranges += [freq_range(fs), q_range()]
        self.ranges = ranges

    def apply(self, x, g01=None, block_size=None):
        phys = self._phys(g01)
        return shelving_eq(x, phys, self.fs, block_size=block_size)

    def sections(self, g01=None):
        return _eq_sections(self._phys(g01), SHELVING_EQ_LAYOUT, self.fs)


class FIRSiren(Processor):
    """Static FIR whose taps come from a sine-activation net.

    The net maps tap position, normalized to [-1,1], to the tap value;
    its weights are the trainable state.
    """

    name = "fir"

    def __init__(self, rng: np.random.Generator, num_taps: int = 64,
                 width: int = 32, depth: int = 2, w0: float = 30.0):
        self.num_taps = num_taps
        self.net = nn.SirenMLP([1] + [width] * depth + [1], rng, w0=w0)
        self._buf_positions = np.linspace(-1.0, 1.0, num_taps,
                                          dtype=T.default_dtype())[:, None]

    def taps(self) -> Tensor:
        out = self.net(Tensor(self._buf_positions))
        return T.reshape(out, (self.num_taps,))

    def apply(self, x, g01=None, block_size=None):
        return fir_apply(x, self.taps())


class TanhNL(Processor):
    name = "tanh"

    def apply(self, x, g01=None, block_size=None):
        return T.tanh(x)


class RationalNL(Processor):
    """Trainable order-[6,5] rational nonlinearity, tanh at init.

    Input is clamped to [-8,8]: the committed fit guarantees the
    denominator stays positive there, so no epsilon is added to it.
    """

    name = "rational"

    def __init__(self, coeffs: dict | None = None):
        if coeffs is None:
            coeffs = _load_prefit("rational_tanh.json")
        dt = T.default_dtype()
        self.num = Tensor(np.asarray(coeffs["numerator"], dtype=dt), requires_grad=True)
        self.den = Tensor(np.asarray(coeffs["denominator"], dtype=dt), requires_grad=True)

    def apply(self, x, g01=None, block_size=None):
        return rational_eval(T.clip(x, -8.0, 8.0), self.num, self.den)


class MLPNL(Processor):
    """Sine-activation MLP nonlinearity, pre-fit to tanh.

    Input is clamped to the fit domain [-4,4]; outside it a sinusoidal
    net extrapolates wildly.
    """

    name = "mlp"

    def __init__(self, weights: dict | None = None):
        if weights is None:
            weights = _load_prefit("mlp_tanh.json")
        rng = np.random.default_rng(0)  # immediately overwritten
        self.net = nn.SirenMLP(weights["sizes"], rng, w0=weights["w0"])
        dt = T.default_dtype()
        for layer, saved in zip(self.net.layers, weights["layers"]):
            layer.w.data = np.asarray(saved["w"], dtype=dt)
            layer.b.data = np.asarray(saved["b"], dtype=dt)

    def apply(self, x, g01=None, block_size=None):
        n = x.data.shape[-1]
        xc = T.clip(x, -4.0, 4.0)
        y = self.net(T.reshape(xc, (n, 1)))
        return T.reshape(y, (n,))


PROCESSOR_KINDS = {
    "phase_inv": PhaseInvert,
    "gain": Gain,
    "dc_offset": DCOffset,
    "parametric_eq": ParametricEQ,
    "shelving_eq": ShelvingEQ,
    "fir": FIRSiren,
    "tanh": TanhNL,
    "rational": RationalNL,
    "mlp": MLPNL,
}
