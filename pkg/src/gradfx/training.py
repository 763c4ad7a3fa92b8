"""Optimization loop: Adam, plain and truncated-BPTT steps, evaluation.

Batch order is a pure function of (seed, step index), never of loop
history, so a run resumed from a checkpoint sees exactly the data the
uninterrupted run would have seen.
"""

from __future__ import annotations

import json
import time

import numpy as np

from . import losses as L
from . import models as M
from . import tensor as T
from .tensor import Tape, Tensor


class TrainConfig:
    def __init__(self, max_steps: int = 15000, batch_size: int = 1,
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, w_l1: float = 1.0, w_mrstft: float = 1.0,
                 mrstft_resolutions=L.MRSTFTConfig.DEFAULT,
                 tbptt: bool = False, chunk_len: int = 2048,
                 warmup_len: int = 1000, validate_every: int = 500,
                 seed: int = 0, stop_metric: str | None = None,
                 stop_value: float | None = None):
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if tbptt and chunk_len < 1:
            raise ValueError("chunk_len must be >= 1 when tbptt is enabled")
        if (stop_metric is None) != (stop_value is None):
            raise ValueError("stop_metric and stop_value go together")
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weights = L.LossWeights(w_l1, w_mrstft)
        self.mrstft_cfg = L.MRSTFTConfig(mrstft_resolutions)
        self.tbptt = tbptt
        self.chunk_len = chunk_len
        self.warmup_len = warmup_len
        self.validate_every = validate_every
        self.seed = seed
        self.stop_metric = stop_metric
        self.stop_value = stop_value


class Adam:
    """Standard Adam with bias correction. Skips non-finite steps whole."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.skipped = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> bool:
        """Apply one update. Returns False (and counts) on non-finite grads."""
        gs = []
        for p in self.params:
            g = grads.get(p)
            gs.append(np.zeros_like(p.data) if g is None else g.data)
        if not all(np.all(np.isfinite(g)) for g in gs):
            self.skipped += 1
            return False
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_dict(self) -> dict:
        return {"t": self.t, "skipped": self.skipped,
                "m": [a.copy() for a in self.m],
                "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ValueError("optimizer state does not match parameter list")
        self.t = int(state["t"])
        self.skipped = int(state["skipped"])
        self.m = [np.asarray(a).copy() for a in state["m"]]
        self.v = [np.asarray(a).copy() for a in state["v"]]


def detach_state(s):
    """Copy a nested state structure out of the tape."""
    if s is None:
        return None
    if isinstance(s, Tensor):
        return Tensor(s.data.copy())
    if isinstance(s, tuple):
        return tuple(detach_state(v) for v in s)
    if isinstance(s, list):
        return [detach_state(v) for v in s]
    return s


def _seg_tensors(seg):
    x = Tensor(np.asarray(seg.x, dtype=T.default_dtype()))
    y = np.asarray(seg.y, dtype=np.float64)
    c = None
    if getattr(seg, "controls", None) is not None and len(seg.controls):
        c = Tensor(np.asarray(seg.controls, dtype=T.default_dtype()))
    return x, y, c


class _Zero:
    def item(self):
        return 0.0


def _loss_parts(y, y_hat, cfg: TrainConfig):
    """(tot, l1, mrstft) with zero-weight terms skipped entirely."""
    dt = y_hat.data.dtype
    yt = Tensor(np.asarray(y, dtype=dt))
    w = cfg.weights
    part_l1 = L.l1(yt, y_hat) if w.w_l1 > 0 else _Zero()
    part_mr = L.mrstft(yt, y_hat, cfg.mrstft_cfg) if w.w_mrstft > 0 \
        else _Zero()
    tot = None
    for part, weight in ((part_l1, w.w_l1), (part_mr, w.w_mrstft)):
        if weight <= 0:
            continue
        term = T.mul(part, Tensor(np.asarray(weight, dtype=dt)))
        tot = term if tot is None else T.add(tot, term)
    return tot, part_l1, part_mr


def train_step(model, batch, optimizer: Adam, cfg: TrainConfig) -> dict:
    """One forward/backward/update over a batch of segments."""
    if not batch:
        raise ValueError("empty batch")
    model.train()
    with Tape() as tape:
        tot = None
        l1_val = 0.0
        mr_val = 0.0
        for seg in batch:
            x, y, c = _seg_tensors(seg)
            y_hat, _ = model.forward(x, c, None)
            t, p1, p2 = _loss_parts(y, y_hat, cfg)
            l1_val += p1.item()
            mr_val += p2.item()
            tot = t if tot is None else T.add(tot, t)
        if len(batch) > 1:
            tot = T.mul(tot, Tensor(np.asarray(1.0 / len(batch),
                                               dtype=tot.data.dtype)))
        loss_val = tot.item()
        applied = False
        if np.isfinite(loss_val):
            grads = tape.backward(tot)
            applied = optimizer.step(grads)
        else:
            optimizer.skipped += 1
    return {"loss_tot": loss_val, "loss_l1": l1_val / len(batch),
            "loss_mrstft": mr_val / len(batch), "applied": applied}


def tbptt_train_step(model, seg, optimizer: Adam, cfg: TrainConfig) -> dict:
    """Chunked recurrent training: warm up without gradient, then update
    once per chunk with the carried state detached from the tape."""
    x_all = np.asarray(seg.x)
    y_all = np.asarray(seg.y)
    n = len(x_all)
    if cfg.chunk_len > n:
        raise ValueError(f"chunk_len {cfg.chunk_len} exceeds sequence "
                         f"length {n}")
    model.train()
    c = None
    if getattr(seg, "controls", None) is not None and len(seg.controls):
        c = Tensor(np.asarray(seg.controls, dtype=T.default_dtype()))
    state = None
    if cfg.warmup_len:
        warm = Tensor(np.asarray(x_all[:cfg.warmup_len],
                                 dtype=T.default_dtype()))
        _, state = model.forward(warm, c, None)  # no tape: nothing recorded
        state = detach_state(state)
    tots = []
    l1s = []
    mrs = []
    updates = 0
    start = cfg.warmup_len
    while start + cfg.chunk_len <= n:
        xc = Tensor(np.asarray(x_all[start:start + cfg.chunk_len],
                               dtype=T.default_dtype()))
        yc = y_all[start:start + cfg.chunk_len]
        with Tape() as tape:
            y_hat, new_state = model.forward(xc, c, state)
            tot, p1, p2 = _loss_parts(yc, y_hat, cfg)
            loss_val = tot.item()
            if np.isfinite(loss_val):
                grads = tape.backward(tot)
                if optimizer.step(grads):
                    updates += 1
            else:
                optimizer.skipped += 1
        state = detach_state(new_state)
        tots.append(loss_val)
        l1s.append(p1.item())
        mrs.append(p2.item())
        start += cfg.chunk_len
    if not tots:
        raise ValueError("warmup consumed the whole sequence")
    return {"loss_tot": float(np.mean(tots)), "loss_l1": float(np.mean(l1s)),
            "loss_mrstft": float(np.mean(mrs)), "updates": updates}


# -- evaluation --------------------------------------------------------------

EVAL_COLUMNS = ("tot", "l1", "mrstft", "esr", "dc", "mae", "mse", "mape")


def evaluate(model, segments, weights: L.LossWeights | None = None,
             mrstft_cfg: L.MRSTFTConfig | None = None) -> dict:
    """Mean metrics over segments; tot = w_l1*l1 + w_mrstft*mrstft."""
    if not segments:
        raise ValueError("cannot evaluate on an empty segment list")
    w = weights or L.LossWeights()
    model.eval()
    sums = {k: 0.0 for k in EVAL_COLUMNS}
    for seg in segments:
        x, y, c = _seg_tensors(seg)
        y_hat, _ = model.forward(x, c, None)
        yt = Tensor(np.asarray(y, dtype=y_hat.data.dtype))
        row = {
            "l1": L.l1(yt, y_hat).item(),
            "mrstft": L.mrstft(yt, y_hat, mrstft_cfg).item(),
            "esr": L.esr(yt, y_hat).item(),
            "dc": L.dc_loss(yt, y_hat).item(),
            "mae": L.mae(yt, y_hat).item(),
            "mse": L.mse(yt, y_hat).item(),
            "mape": L.mape(yt, y_hat).item(),
        }
        row["tot"] = w.w_l1 * row["l1"] + w.w_mrstft * row["mrstft"]
        for k in EVAL_COLUMNS:
            sums[k] += row[k]
    model.train()
    return {k: sums[k] / len(segments) for k in EVAL_COLUMNS}


def format_table(metrics: dict) -> str:
    """Tot / L1 / MR-STFT columns first, the rest after."""
    head = f"{'Tot':>10} {'L1':>10} {'MR-STFT':>10} {'ESR':>10} {'DC':>10}"
    row = (f"{metrics['tot']:>10.4f} {metrics['l1']:>10.4f} "
           f"{metrics['mrstft']:>10.4f} {metrics['esr']:>10.4f} "
           f"{metrics['dc']:>10.4f}")
    return head + "\n" + row


# -- logging -----------------------------------------------------------------

class RunLog:
    """Per-step loss rows plus periodic validation metrics, CSV-friendly."""

    COLUMNS = ("step", "loss_tot", "loss_l1", "loss_mrstft", "skipped",
               "wall_clock", "val_tot", "val_l1", "val_mrstft", "val_esr",
               "val_dc", "val_mae", "val_mse", "val_mape")

    def __init__(self):
        self.rows = []

    def add(self, step: int, losses: dict, skipped: int,
            wall_clock: float, val: dict | None = None) -> None:
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError("step indices must increase")
        row = {"step": step, "loss_tot": losses["loss_tot"],
               "loss_l1": losses["loss_l1"],
               "loss_mrstft": losses["loss_mrstft"],
               "skipped": skipped, "wall_clock": wall_clock}
        if val is not None:
            for k in EVAL_COLUMNS:
                row[f"val_{k}"] = val[k]
        self.rows.append(row)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(",".join(self.COLUMNS) + "\n")
            for row in self.rows:
                cells = []
                for col in self.COLUMNS:
                    v = row.get(col)
                    if v is None:
                        cells.append("")
                    elif col in ("step", "skipped"):
                        cells.append(str(int(v)))
                    else:
                        cells.append(f"{v:.10g}")
                f.write(",".join(cells) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        log = cls()
        with open(path) as f:
            header = f.readline().strip().split(",")
            if tuple(header) != cls.COLUMNS:
                raise ValueError("unrecognized log header")
            for line in f:
                cells = line.strip().split(",")
                row = {}
                for col, cell in zip(cls.COLUMNS, cells):
                    if cell == "":
                        continue
                    row[col] = int(cell) if col in ("step", "skipped") \
                        else float(cell)
                log.rows.append(row)
        return log

    def matches(self, other: "RunLog", ignore=("wall_clock",)) -> bool:
        """Exact equality of all logged values outside `ignore` columns."""
        if len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            keys = (set(a) | set(b)) - set(ignore)
            for k in keys:
                if a.get(k) != b.get(k):
                    return False
        return True


# -- training loop -----------------------------------------------------------

def batch_indices(seed: int, step: int, n: int, batch_size: int) -> list:
    """Deterministic batch: depends only on (seed, step), never on history."""
    rng = np.random.default_rng([seed, step])
    return rng.integers(0, n, size=batch_size).tolist()


def save_training_checkpoint(path, model, spec, optimizer: Adam,
                             step: int) -> None:
    extra = {"step": step,
             "optimizer": {
                 "t": optimizer.t, "skipped": optimizer.skipped,
                 "m": [M._encode_array(a) for a in optimizer.m],
                 "v": [M._encode_array(a) for a in optimizer.v]}}
    M.save_checkpoint(path, model, spec, extra=extra)


def restore_training(path, cfg: TrainConfig,
                     rng: np.random.Generator | None = None):
    """Returns (model, spec, optimizer, step) rebuilt from a checkpoint."""
    try:
        model, spec, extra = M.load_checkpoint(path, rng)
    except (json.JSONDecodeError, KeyError, OSError) as e:
        raise ValueError(f"corrupt or unreadable checkpoint {path}: {e}") from e
    optimizer = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    step = 0
    if extra and "optimizer" in extra:
        ost = extra["optimizer"]
        optimizer.load_state_dict({
            "t": ost["t"], "skipped": ost["skipped"],
            "m": [M._decode_array(a) for a in ost["m"]],
            "v": [M._decode_array(a) for a in ost["v"]]})
        step = int(extra.get("step", 0))
    return model, spec, optimizer, step


def fit(model, spec, train_segments, cfg: TrainConfig,
        val_segments=None, log_path=None, checkpoint_path=None,
        optimizer: Adam | None = None, start_step: int = 0) -> RunLog:
    """Train for cfg.max_steps, validating and checkpointing periodically.

    The best checkpoint (by validation tot loss) is kept when both
    val_segments and checkpoint_path are given.
    """
    if not train_segments:
        raise ValueError("no training segments")
    optimizer = optimizer or Adam(model.parameters(), cfg.lr, cfg.beta1,
                                  cfg.beta2, cfg.eps)
    log = RunLog()
    best = np.inf
    t0 = time.monotonic()
    n = len(train_segments)
    for step in range(start_step + 1, cfg.max_steps + 1):
        idx = batch_indices(cfg.seed, step, n, cfg.batch_size)
        if cfg.tbptt:
            losses = tbptt_train_step(model, train_segments[idx[0]],
                                      optimizer, cfg)
        else:
            losses = train_step(model, [train_segments[i] for i in idx],
                                optimizer, cfg)
        val = None
        stop = False
        if val_segments and (step % cfg.validate_every == 0
                             or step == cfg.max_steps):
            val = evaluate(model, val_segments, cfg.weights, cfg.mrstft_cfg)
            if checkpoint_path and val["tot"] < best:
                best = val["tot"]
                save_training_checkpoint(checkpoint_path, model, spec,
                                         optimizer, step)
            if (cfg.stop_metric is not None
                    and val[cfg.stop_metric] <= cfg.stop_value):
                stop = True
        log.add(step, losses, optimizer.skipped, time.monotonic() - t0, val)
        if stop:
            break
    if log_path:
        log.to_csv(log_path)
    return log
