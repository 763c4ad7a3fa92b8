"""Response measurement: stepped sines, amplitude curves, time traces.

The stepped-sine analyzer drives a model with one sinusoid per grid
frequency and reads magnitude and phase off the final segment of the
render, so transients and recurrent warm-up never contaminate the
estimate. Curves can be written to CSV or a small self-contained SVG.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class SweepConfig:
    """Grid and render settings for the stepped-sine measurement."""

    def __init__(self, fs: float = 48000.0, f1: float = 10.0,
                 f2: float | None = None, steps: int = 50, T: float = 5.0,
                 amplitude: float = 0.1, warmup: float = 1.0):
        self.fs = float(fs)
        self.f1 = float(f1)
        self.f2 = float(f2) if f2 is not None else 0.45 * self.fs
        self.steps = int(steps)
        self.T = float(T)
        self.amplitude = float(amplitude)
        self.warmup = float(warmup)
        if not (0 < self.f1 < self.f2 < self.fs / 2):
            raise ValueError("need 0 < f1 < f2 < fs/2")
        if self.steps < 2:
            raise ValueError("need at least 2 frequency steps")
        if self.T * self.fs < 2 * self.tail_length:
            raise ValueError("render shorter than twice the analysis tail")

    @property
    def tail_length(self) -> int:
        """Final-segment length in samples: T * floor(fs / f1), as printed."""
        return int(self.T * math.floor(self.fs / self.f1))

    @property
    def frequencies(self) -> np.ndarray:
        return np.geomspace(self.f1, self.f2, self.steps)


class ResponseCurve:
    """Magnitude/phase response on a fixed frequency grid."""

    columns = ("freq_hz", "mag_db", "phase_rad")

    def __init__(self, freqs, magnitude_db, phase_rad):
        self.freqs = np.asarray(freqs, dtype=np.float64)
        self.magnitude_db = np.asarray(magnitude_db, dtype=np.float64)
        self.phase_rad = np.asarray(phase_rad, dtype=np.float64)
        if not (len(self.freqs) == len(self.magnitude_db) == len(self.phase_rad)):
            raise ValueError("curve columns must have equal lengths")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    def rows(self):
        return np.stack([self.freqs, self.magnitude_db, self.phase_rad], axis=1)


class AmplitudeCurve:
    """Memoryless transfer curve y = f(x) with a tanh reference."""

    columns = ("input", "output", "reference")

    def __init__(self, x, y, reference):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.reference = np.asarray(reference, dtype=np.float64)

    def rows(self):
        return np.stack([self.x, self.y, self.reference], axis=1)


class TimeTrace:
    """Input signal alongside a stage's parameter trajectory over time."""

    def __init__(self, x, params, names):
        self.x = np.asarray(x, dtype=np.float64)
        self.params = np.asarray(params, dtype=np.float64)
        self.names = list(names)
        self.columns = ("input",) + tuple(self.names)

    def rows(self):
        return np.concatenate([self.x[:, None], self.params], axis=1)


def _project(signal: np.ndarray, freq: float, fs: float) -> complex:
    """Single-bin Fourier projection over whole periods of `freq`."""
    n = len(signal)
    periods = int(math.floor(n * freq / fs))
    if periods < 1:
        raise ValueError(f"tail holds no full period of {freq} Hz")
    span = min(n, int(round(periods * fs / freq)))
    seg = signal[-span:].astype(np.float64)
    t = np.arange(span, dtype=np.float64) / fs
    basis = np.exp(-2j * np.pi * freq * t)
    return 2.0 * np.dot(seg, basis) / span


def stepped_sine_response(model, cfg: SweepConfig,
                          c: Tensor | None = None) -> ResponseCurve:
    """Measure magnitude/phase at exponentially spaced frequencies."""
    tail = cfg.tail_length
    n_meas = int(round(cfg.T * cfg.fs))
    if tail > n_meas:
        raise ValueError(f"analysis tail {tail} exceeds rendered "
                         f"length {n_meas}")
    n_warm = int(round(cfg.warmup * cfg.fs))
    dt = T.default_dtype()
    mags = np.empty(cfg.steps)
    phases = np.empty(cfg.steps)
    for i, f in enumerate(cfg.frequencies):
        t_all = np.arange(n_warm + n_meas, dtype=np.float64) / cfg.fs
        x_all = cfg.amplitude * np.sin(2 * np.pi * f * t_all)
        state = None
        if n_warm:
            # settle recurrent state on the same tone, phase-continuous
            _, state = model.forward(Tensor(x_all[:n_warm].astype(dt)), c,
                                     state)
        y, _ = model.forward(Tensor(x_all[n_warm:].astype(dt)), c, state)
        zx = _project(x_all[n_warm:][-tail:], f, cfg.fs)
        zy = _project(np.asarray(y.data, dtype=np.float64)[-tail:], f, cfg.fs)
        h = zy / zx
        mags[i] = 20.0 * np.log10(abs(h))
        phases[i] = np.angle(h)
    return ResponseCurve(cfg.frequencies, mags, np.unwrap(phases))


def amplitude_response(processor, points: int = 200,
                       lo: float = -1.0, hi: float = 1.0) -> AmplitudeCurve:
    """Static transfer curve of a memoryless stage, with tanh alongside."""
    grid = np.linspace(lo, hi, points)
    y = processor.apply(Tensor(grid.astype(T.default_dtype())))
    return AmplitudeCurve(grid, np.asarray(y.data, dtype=np.float64),
                          np.tanh(grid))


def time_trace(processor, controller, x, c: Tensor | None = None,
               state=None) -> TimeTrace:
    """Block-rate parameter trajectory of a dynamic stage, sample-aligned."""
    x = np.asarray(x)
    out, _ = controller(x=Tensor(x.astype(T.default_dtype())), c=c,
                        state=state)
    if not out.is_dynamic:
        raise ValueError("stage parameters are static; read them from the "
                         "controller directly instead of tracing")
    vals = np.asarray(out.values.data, dtype=np.float64)  # [nb, P]
    phys = np.empty_like(vals)
    for j in range(vals.shape[1]):
        phys[:, j] = processor.ranges[j].denormalize(
            Tensor(vals[:, j])).data
    held = np.repeat(phys, out.block_size, axis=0)[:len(x)]
    names = [f"param_{j}" for j in range(vals.shape[1])]
    return TimeTrace(x, held, names)


# -- emission ----------------------------------------------------------------

def _emit_csv(obj, path) -> None:
    rows = obj.rows()
    with open(path, "w") as f:
        f.write(",".join(obj.columns) + "\n")
        for row in rows:
            f.write(",".join(f"{v:.12g}" for v in row) + "\n")


def _polyline(xs, ys, x0, x1, y0, y1, width, height, pad=50):
    """Map data into SVG viewport coordinates (y axis points down)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    sx = (width - 2 * pad) / (x1 - x0) if x1 > x0 else 1.0
    sy = (height - 2 * pad) / (y1 - y0) if y1 > y0 else 1.0
    px = pad + (xs - x0) * sx
    py = height - pad - (ys - y0) * sy
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))


def _emit_svg(obj, path) -> None:
    w, h = 800, 480
    if isinstance(obj, ResponseCurve):
        xs = np.log10(obj.freqs)
        series = [("#d62728", obj.magnitude_db, "mag (dB)"),
                  ("#1f77b4", obj.phase_rad, "phase (rad)")]
        xlabel = "log10 frequency (Hz)"
    elif isinstance(obj, AmplitudeCurve):
        xs = obj.x
        series = [("#d62728", obj.y, "output"),
                  ("#999999", obj.reference, "tanh")]
        xlabel = "input"
    else:
        xs = np.arange(len(obj.x), dtype=np.float64)
        series = [("#999999", obj.x, "input")]
        for j in range(obj.params.shape[1]):
            series.append(("#d62728", obj.params[:, j], obj.names[j]))
        xlabel = "sample"
    x0, x1 = float(xs.min()), float(xs.max())
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" '
             f'height="{h}" viewBox="0 0 {w} {h}">',
             f'<rect x="50" y="50" width="{w - 100}" height="{h - 100}" '
             f'fill="none" stroke="#333"/>']
    for k, (color, ys, label) in enumerate(series):
        y0, y1 = float(np.min(ys)), float(np.max(ys))
        if y1 - y0 < 1e-12:
            y0, y1 = y0 - 1.0, y1 + 1.0
        pts = _polyline(xs, ys, x0, x1, y0, y1, w, h)
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{60 + 140 * k}" y="30" fill="{color}" '
                     f'font-size="14">{label}</text>')
    parts.append(f'<text x="{w // 2}" y="{h - 15}" fill="#333" '
                 f'font-size="14" text-anchor="middle">{xlabel}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))


def emit_plot_data(obj, path, format: str = "csv") -> None:
    if format == "csv":
        _emit_csv(obj, path)
    elif format == "svg":
        _emit_svg(obj, path)
    else:
        raise ValueError(f"unknown plot format {format!r}")
